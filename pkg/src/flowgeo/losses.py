"""Loss functionals over grids: photometric (SSIM + L1), geometric depth
consistency, flow-divergence / depth-gradient correlation, rigid/optical
flow co-adjustment, the edge-aware smoothness baseline, and depth metrics.

Every loss is a masked mean over valid pixels with deterministic summation
order. The cores are written against the autodiff tape so the same
expressions serve forward evaluation and exact differentiation; the public
wrappers accept the typed grid values and return plain records.

Relative-error denominators are guarded (the printed formulas are not):
EPS_DIV for depth, EPS_DPC for the differential fields, EPS_FLOW for flow
magnitudes. Guard-dominated pixel fractions are reported as diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DegenerateTranslationError, DimensionError, NoValidPixelsError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    FlowField,
    Image,
    RigidMotion,
    ScalarField,
    interior_mask,
    pixel_grid,
)
from .triangulate import TriangulationResult

ALPHA_DEFAULT = 0.85  # SSIM weight in the photometric loss
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
EPS_DIV = 1e-6  # depth denominator guard
EPS_DPC = 1e-4  # |C^D| guard for flat-depth pixels
EPS_FLOW = 1e-3  # flow-magnitude guard (pixels)
EPS_T3 = 1e-6  # minimum forward translation for the divergence relation
EPS_GEO = 1e-6  # |D - t3| masking threshold
IDENTITY_FIELD_DIVERGENCE = 4.0  # div of the pixel-identity field, unnormalized stencil


@dataclass(frozen=True)
class LossValue:
    """A reported loss: non-negative scalar plus the pixel count it
    averaged over; guard_fraction is the share of valid pixels whose
    denominator guard dominated."""

    value: float
    valid_pixel_count: int
    guard_fraction: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("loss value is not finite")
        if self.valid_pixel_count <= 0:
            raise NoValidPixelsError("a reported loss needs at least one valid pixel")


@dataclass(frozen=True)
class DifferentialFields:
    """Paired scalar fields built from flow divergence (c_f) and depth
    gradient (c_d), plus the q offset field they share."""

    c_f: ScalarField
    c_d: ScalarField
    q: np.ndarray
    validity: np.ndarray


def _require_mask(mask, label):
    if not mask.any():
        raise NoValidPixelsError(f"{label}: empty valid set")
    return mask


# ---------------------------------------------------------------------------
# tape cores (accept Var or ndarray; return Var)


def ssim_core(a, b):
    """Per-pixel SSIM with 3x3 zero-padded mean-pool statistics."""
    mu_a = ad.box3(a)
    mu_b = ad.box3(b)
    var_a = ad.box3(ad.mul(a, a)) - ad.mul(mu_a, mu_a)
    var_b = ad.box3(ad.mul(b, b)) - ad.mul(mu_b, mu_b)
    cov = ad.box3(ad.mul(a, b)) - ad.mul(mu_a, mu_b)
    num = (2.0 * ad.mul(mu_a, mu_b) + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (ad.mul(mu_a, mu_a) + ad.mul(mu_b, mu_b) + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return ad.div(num, den)


def _per_channel(values, fn):
    """Apply fn per channel and average; values may be HxW or HxWxC Vars."""
    shape = np.shape(values.value if isinstance(values, ad.Var) else values)
    if len(shape) == 2:
        return fn(values)
    channels = shape[2]
    acc = None
    for c in range(channels):
        term = fn(ad.take_channel(ad.as_var(values), c))
        acc = term if acc is None else acc + term
    return acc * (1.0 / channels)


def photometric_core(i_t, i_warped, mask, alpha=ALPHA_DEFAULT):
    """alpha (1 - SSIM)/2 + (1 - alpha) |i_t - i_warped|, channel-averaged,
    masked mean. i_t is treated as the reference (constant or Var alike)."""
    i_t = ad.as_var(i_t)
    i_warped = ad.as_var(i_warped)

    def one_channel_pair(ch_t, ch_w):
        s = ssim_core(ch_w, ch_t)
        return alpha * 0.5 * (1.0 - s) + (1.0 - alpha) * ad.absolute(ch_t - ch_w)

    shape = np.shape(i_t.value)
    if len(shape) == 2:
        per_pixel = one_channel_pair(i_t, i_warped)
    else:
        acc = None
        for c in range(shape[2]):
            term = one_channel_pair(ad.take_channel(i_t, c), ad.take_channel(i_warped, c))
            acc = term if acc is None else acc + term
        per_pixel = acc * (1.0 / shape[2])
    return ad.masked_mean(per_pixel, mask)


def cgdc_core(d_g_values, d_c, mask):
    """Masked mean of |D_g - D_c| / D_c (denominator guarded)."""
    rel = ad.div(ad.absolute(ad.sub(d_g_values, d_c)), ad.maximum(ad.as_var(d_c), EPS_DIV))
    return ad.masked_mean(rel, mask)


def differential_fields_core(
    camera: CameraIntrinsics,
    t_ego,
    d_c,
    f_tra_u,
    f_tra_v,
    depth_gradient=None,
):
    """C^F and C^D as tape nodes.

    t_ego is the (t1, t2, t3) source-to-target translation (scalars or
    Vars); f_tra the translational flow components. If `depth_gradient`
    (analytic dD/du, dD/dv) is given it is scaled x2 into the unnormalized
    stencil convention; otherwise the discrete stencil of d_c is used.
    """
    t1, t2, t3 = (ad.as_var(t) for t in t_ego)
    d_c = ad.as_var(d_c)
    H, W = np.shape(d_c.value)
    u, v = pixel_grid(H, W)

    q_u = ad.sub(u - camera.cx, ad.mul(camera.fx, ad.div(t1, t3)))
    q_v = ad.sub(v - camera.cy, ad.mul(camera.fy, ad.div(t2, t3)))

    div_f = ad.axis_diff(f_tra_u, axis=1) + ad.axis_diff(f_tra_v, axis=0)
    shifted = ad.sub(d_c, t3)
    c_f = ad.mul(ad.div(shifted, t3), div_f) - IDENTITY_FIELD_DIVERGENCE

    if depth_gradient is None:
        g_u = ad.axis_diff(d_c, axis=1)
        g_v = ad.axis_diff(d_c, axis=0)
    else:
        g_u = ad.as_var(2.0 * depth_gradient[..., 0])
        g_v = ad.as_var(2.0 * depth_gradient[..., 1])
    c_d = ad.div(-(ad.mul(q_u, g_u) + ad.mul(q_v, g_v)), shifted)
    return c_f, c_d, q_u, q_v, shifted


def dpc_core(c_f, c_d, mask):
    """Masked mean of |C^D - C^F| / (|C^D| + EPS_DPC)."""
    rel = ad.div(ad.absolute(ad.sub(c_d, c_f)), ad.absolute(c_d) + EPS_DPC)
    return ad.masked_mean(rel, mask)


def bsca_core(f_r_u, f_r_v, f_o_u, f_o_v, mask):
    """Masked mean of ||F_r - F_o||_1 / (||F_o||_1 + EPS_FLOW)."""
    n_diff = ad.absolute(ad.sub(f_r_u, f_o_u)) + ad.absolute(ad.sub(f_r_v, f_o_v))
    n_o = ad.absolute(ad.as_var(f_o_u)) + ad.absolute(ad.as_var(f_o_v))
    return ad.masked_mean(ad.div(n_diff, n_o + EPS_FLOW), mask)


def smoothness_core(d, image_values):
    """Edge-aware smoothness on mean-normalized depth with forward
    differences: sum over axes of mean(|diff d*| exp(-|diff I|))."""
    d = ad.as_var(d)
    H, W = np.shape(d.value)
    img = np.asarray(image_values, dtype=float)
    if img.ndim == 3:
        img = img.mean(axis=2)
    d_star = ad.div(d, ad.total(d) * (1.0 / (H * W)))
    du = ad.absolute(ad.forward_diff(d_star, axis=1))
    dv = ad.absolute(ad.forward_diff(d_star, axis=0))
    wu = np.exp(-np.abs(np.diff(img, axis=1)))
    wv = np.exp(-np.abs(np.diff(img, axis=0)))
    term_u = ad.masked_mean(ad.mul(du, wu), np.ones(wu.shape, bool))
    term_v = ad.masked_mean(ad.mul(dv, wv), np.ones(wv.shape, bool))
    return term_u + term_v


# ---------------------------------------------------------------------------
# public wrappers


def ssim(a: Image, b: Image) -> ScalarField:
    """Channel-averaged per-pixel SSIM map; values lie in [-1, 1]."""
    if a.values.shape != b.values.shape:
        raise DimensionError("ssim inputs must share a shape")
    if a.values.ndim == 2:
        out = ssim_core(a.values, b.values).value
    else:
        out = np.mean(
            [ssim_core(a.values[..., c], b.values[..., c]).value for c in range(a.values.shape[2])],
            axis=0,
        )
    return ScalarField(out)


def photometric_loss(i_t: Image, i_warped: Image, mask=None, alpha: float = ALPHA_DEFAULT) -> LossValue:
    if i_t.values.shape != i_warped.values.shape:
        raise DimensionError("photometric inputs must share a shape")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    m = np.ones(i_t.shape, bool) if mask is None else np.asarray(mask, bool)
    _require_mask(m, "photometric_loss")
    value = photometric_core(i_t.values, i_warped.values, m, alpha).value
    return LossValue(float(value), int(m.sum()))


def cgdc_loss(d_g: TriangulationResult, d_c: DepthMap) -> LossValue:
    mask = d_g.validity & d_c.mask
    _require_mask(mask, "cgdc_loss")
    value = cgdc_core(d_g.depth_g.values, d_c.values, mask).value
    guard = float((d_c.values[mask] < EPS_DIV).mean())
    return LossValue(float(value), int(mask.sum()), guard)


def differential_fields(
    camera: CameraIntrinsics,
    motion: RigidMotion,
    d_c: DepthMap,
    f_tra: FlowField,
    depth_gradient: np.ndarray | None = None,
    eps_t3: float = EPS_T3,
    eps_geo: float = EPS_GEO,
) -> DifferentialFields:
    """Build the paired differential fields.

    `motion` carries the source-to-target ego translation (t1, t2, t3)
    that parameterizes the flow/depth relation; `f_tra` is the
    translational flow. Validity excludes the image border (central
    stencils only) and pixels with |D - t3| < eps_geo.
    """
    t = motion.translation
    if abs(t[2]) <= eps_t3:
        raise DegenerateTranslationError(
            f"|t3| = {abs(t[2]):.3g} is too small for the divergence relation"
        )
    if d_c.shape != f_tra.shape:
        raise DimensionError("depth and flow shapes do not match")
    H, W = d_c.shape
    c_f, c_d, q_u, q_v, shifted = differential_fields_core(
        camera,
        (t[0], t[1], t[2]),
        d_c.values,
        f_tra.values[..., 0],
        f_tra.values[..., 1],
        depth_gradient,
    )
    validity = (
        interior_mask(H, W)
        & (np.abs(shifted.value) >= eps_geo)
        & f_tra.mask
        & d_c.mask
    )
    q = np.stack([q_u.value, q_v.value], axis=-1)
    return DifferentialFields(
        c_f=ScalarField(c_f.value, validity),
        c_d=ScalarField(c_d.value, validity),
        q=q,
        validity=validity,
    )


def dpc_loss(fields: DifferentialFields) -> LossValue:
    mask = _require_mask(fields.validity, "dpc_loss")
    value = dpc_core(fields.c_f.values, fields.c_d.values, mask).value
    guard = float((np.abs(fields.c_d.values[mask]) < EPS_DPC).mean())
    return LossValue(float(value), int(mask.sum()), guard)


def bsca_loss(f_r: FlowField, f_o: FlowField) -> LossValue:
    if f_r.shape != f_o.shape:
        raise DimensionError("flow shapes do not match")
    mask = _require_mask(f_r.mask & f_o.mask, "bsca_loss")
    value = bsca_core(
        f_r.values[..., 0], f_r.values[..., 1], f_o.values[..., 0], f_o.values[..., 1], mask
    ).value
    n_o = np.abs(f_o.values[..., 0]) + np.abs(f_o.values[..., 1])
    guard = float((n_o[mask] < EPS_FLOW).mean())
    return LossValue(float(value), int(mask.sum()), guard)


def edge_aware_smoothness(d: DepthMap, i: Image) -> LossValue:
    if d.shape != i.shape:
        raise DimensionError("depth and image shapes do not match")
    value = smoothness_core(d.values, i.values).value
    return LossValue(float(value), int(d.values.size))


# ---------------------------------------------------------------------------
# depth metrics


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
            "rmse": self.rmse,
            "rmse_log": self.rmse_log,
            "delta1": self.delta1,
            "delta2": self.delta2,
            "delta3": self.delta3,
        }


def depth_metrics(d_pred: DepthMap, d_gt: DepthMap, mask=None) -> DepthMetrics:
    """Standard depth error/accuracy scalars over the valid set."""
    if d_pred.shape != d_gt.shape:
        raise DimensionError("depth shapes do not match")
    m = d_pred.mask & d_gt.mask
    if mask is not None:
        m = m & np.asarray(mask, bool)
    _require_mask(m, "depth_metrics")
    p = d_pred.values[m]
    g = d_gt.values[m]
    err = p - g
    ratio = np.maximum(p / g, g / p)
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err**2 / g)),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        delta3=float(np.mean(ratio < 1.25**3)),
    )
