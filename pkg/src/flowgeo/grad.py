"""Exact derivatives of every loss with respect to per-pixel depth, the
6-DoF pose, and the dense flow prior, plus a central-difference checker.

The pose enters as `TwistParams` on the *warp* motion (axis-angle rotation
plus translation); graphs that need the source-to-target translation (the
divergence/depth relation) compute it on tape as -R^T t, so pose gradients
include that dependency. Geometric depth is differentiable in pose and
flow by default; `stop_gradient_geo=True` freezes it.

Masks (behind-camera, out-of-image, degeneracy) are treated as constants
of each forward pass; the checker detects coordinates whose perturbation
flips a mask and excludes them from the pass/fail verdict, reporting the
count instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import NoValidPixelsError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    FlowField,
    Image,
    TwistParams,
    interior_mask,
    pixel_grid,
)
from .losses import (
    ALPHA_DEFAULT,
    EPS_GEO,
    bsca_core,
    cgdc_core,
    differential_fields_core,
    dpc_core,
    photometric_core,
    smoothness_core,
)
from .triangulate import DEGENERATE_DENOMINATOR_EPS

LOSS_IDS = ("photometric", "cgdc", "dpc", "bsca", "smoothness")
Z_EPS = 1e-9


@dataclass(frozen=True)
class LossInputs:
    """Everything a loss graph can consume; unused fields may stay None."""

    camera: CameraIntrinsics
    twist: TwistParams
    depth: DepthMap
    flow: FlowField | None = None
    image_t: Image | None = None
    image_s: Image | None = None
    alpha: float = ALPHA_DEFAULT

    @classmethod
    def from_bundle(cls, bundle, depth: DepthMap | None = None) -> "LossInputs":
        return cls(
            camera=bundle.camera,
            twist=TwistParams.from_motion(bundle.motion),
            depth=bundle.depth_gt if depth is None else depth,
            flow=bundle.flow_gt,
            image_t=bundle.image_t,
            image_s=bundle.image_s,
        )


@dataclass(frozen=True)
class LossGradient:
    value: float
    d_depth: np.ndarray | None = None
    d_twist: np.ndarray | None = None
    d_flow: np.ndarray | None = None


# ---------------------------------------------------------------------------
# tape geometry


def rotation_entries(w1, w2, w3):
    """Rodrigues formula as tape scalars; returns a 3x3 nested list.
    Series branch keeps the graph smooth through zero rotation."""
    s = w1 * w1 + w2 * w2 + w3 * w3
    if float(s.value if isinstance(s, ad.Var) else s) > 1e-6:
        theta = ad.sqrt(s)
        a = ad.div(ad.sin(theta), theta)
        b = ad.div(1.0 - ad.cos(theta), s)
    else:
        s2 = s * s
        a = 1.0 - s * (1.0 / 6.0) + s2 * (1.0 / 120.0) - s2 * s * (1.0 / 5040.0)
        b = 0.5 - s * (1.0 / 24.0) + s2 * (1.0 / 720.0) - s2 * s * (1.0 / 40320.0)
    k = {
        (0, 1): -w3, (0, 2): w2,
        (1, 0): w3, (1, 2): -w1,
        (2, 0): -w2, (2, 1): w1,
    }
    w = (w1, w2, w3)
    rows = []
    for i in range(3):
        row = []
        for j in range(3):
            entry = ad.mul(b, ad.mul(w[i], w[j]))
            if i == j:
                entry = entry + 1.0 - ad.mul(b, s)
            else:
                entry = entry + ad.mul(a, k[(i, j)])
            row.append(entry)
        rows.append(row)
    return rows


def _transform(R, t, x0, x1, x2):
    out = []
    for i in range(3):
        out.append(ad.mul(R[i][0], x0) + ad.mul(R[i][1], x1) + ad.mul(R[i][2], x2) + t[i])
    return out


def rigid_flow_graph(camera, R, t, depth_var, height, width):
    """Rigid flow as tape nodes; returns (f_u, f_v, valid mask const)."""
    u, v = pixel_grid(height, width)
    xn = (u - camera.cx) / camera.fx
    yn = (v - camera.cy) / camera.fy
    y0, y1, y2 = _transform(R, t, ad.mul(depth_var, xn), ad.mul(depth_var, yn), depth_var)
    mask = np.asarray(y2.value) > Z_EPS
    f_u = ad.mul(camera.fx, ad.div(y0, y2)) + camera.cx - u
    f_v = ad.mul(camera.fy, ad.div(y1, y2)) + camera.cy - v
    return f_u, f_v, mask


def rotational_flow_graph(camera, R, height, width):
    u, v = pixel_grid(height, width)
    xn = (u - camera.cx) / camera.fx
    yn = (v - camera.cy) / camera.fy
    ones = np.ones_like(xn)
    zero = (0.0, 0.0, 0.0)
    y0, y1, y2 = _transform(R, zero, ad.as_var(xn), ad.as_var(yn), ad.as_var(ones))
    mask = np.asarray(y2.value) > Z_EPS
    f_u = ad.mul(camera.fx, ad.div(y0, y2)) + camera.cx - u
    f_v = ad.mul(camera.fy, ad.div(y1, y2)) + camera.cy - v
    return f_u, f_v, mask


def triangulate_graph(camera, R, t, f_u, f_v, flow_mask, stop_gradient=False,
                      eps_denominator=DEGENERATE_DENOMINATOR_EPS):
    """Geometric depth as a tape node; returns (depth, validity const)."""
    H, W = np.shape(ad.as_var(f_u).value)
    u, v = pixel_grid(H, W)
    xn = (u - camera.cx) / camera.fx
    yn = (v - camera.cy) / camera.fy
    ps0 = ad.div(ad.as_var(f_u), camera.fx) + xn
    ps1 = ad.div(ad.as_var(f_v), camera.fy) + yn
    rdot = [ad.mul(R[i][0], xn) + ad.mul(R[i][1], yn) + R[i][2] for i in range(3)]
    num = (t[0] - ad.mul(ps0, t[2])) + (t[1] - ad.mul(ps1, t[2]))
    den = (ad.mul(ps0, rdot[2]) - rdot[0]) + (ad.mul(ps1, rdot[2]) - rdot[1])
    depth = ad.div(num, den)
    validity = (
        (np.abs(den.value) >= eps_denominator)
        & (np.asarray(depth.value) > 0)
        & flow_mask
    )
    if stop_gradient:
        depth = ad.Var(np.where(validity, depth.value, 1.0))
    return depth, validity


def inverse_translation(R, t):
    """Source-to-target translation of the warp motion: -R^T t, on tape."""
    out = []
    for i in range(3):
        out.append(-(ad.mul(R[0][i], t[0]) + ad.mul(R[1][i], t[1]) + ad.mul(R[2][i], t[2])))
    return out


# ---------------------------------------------------------------------------
# loss graph assembly


def _leaves(inputs: LossInputs, overrides: dict):
    depth_values = overrides.get("depth", inputs.depth.values)
    twist_values = overrides.get("twist", inputs.twist.values)
    d = ad.Var(np.asarray(depth_values, dtype=float))
    xi = [ad.Var(float(x)) for x in np.asarray(twist_values, dtype=float)]
    leaves = {"depth": d, "twist": xi}
    if inputs.flow is not None:
        flow_values = overrides.get("flow", inputs.flow.values)
        leaves["flow"] = (
            ad.Var(np.asarray(flow_values[..., 0], dtype=float)),
            ad.Var(np.asarray(flow_values[..., 1], dtype=float)),
        )
    return leaves


def build_loss(loss_id, inputs: LossInputs, overrides: dict | None = None,
               stop_gradient_geo: bool = False):
    """Assemble the graph for one loss.

    Returns (loss Var, leaves dict, mask ndarray). `loss_id` may also be a
    callable (leaves, inputs) -> (Var, mask) for custom functionals.
    """
    overrides = overrides or {}
    leaves = _leaves(inputs, overrides)
    if callable(loss_id):
        loss, mask = loss_id(leaves, inputs)
        return loss, leaves, mask

    camera = inputs.camera
    H, W = inputs.depth.shape
    xi = leaves["twist"]
    R = rotation_entries(xi[0], xi[1], xi[2])
    t = (xi[3], xi[4], xi[5])
    d = leaves["depth"]

    if loss_id == "photometric":
        if inputs.image_t is None or inputs.image_s is None:
            raise ValueError("photometric loss needs both images")
        f_u, f_v, flow_ok = rigid_flow_graph(camera, R, t, d, H, W)
        u, v = pixel_grid(H, W)
        warped, inside = ad.bilinear(inputs.image_s.values, f_u + u, f_v + v)
        mask = flow_ok & inside & inputs.depth.mask
        if not mask.any():
            raise NoValidPixelsError("photometric: warp produced no valid pixels")
        loss = photometric_core(inputs.image_t.values, warped, mask, inputs.alpha)
        return loss, leaves, mask

    if loss_id == "cgdc":
        if inputs.flow is None:
            raise ValueError("cgdc loss needs the flow prior")
        f_u, f_v = leaves["flow"]
        d_g, validity = triangulate_graph(
            camera, R, t, f_u, f_v, inputs.flow.mask, stop_gradient=stop_gradient_geo
        )
        mask = validity & inputs.depth.mask
        if not mask.any():
            raise NoValidPixelsError("cgdc: no valid triangulated pixels")
        loss = cgdc_core(d_g, d, mask)
        return loss, leaves, mask

    if loss_id == "dpc":
        if inputs.flow is None:
            raise ValueError("dpc loss needs the flow prior")
        f_u, f_v = leaves["flow"]
        r_u, r_v, _ = rotational_flow_graph(camera, R, H, W)
        t_ego = inverse_translation(R, t)
        c_f, c_d, _, _, shifted = differential_fields_core(
            camera, t_ego, d, ad.sub(f_u, r_u), ad.sub(f_v, r_v)
        )
        mask = (
            interior_mask(H, W)
            & (np.abs(shifted.value) >= EPS_GEO)
            & inputs.flow.mask
            & inputs.depth.mask
        )
        if not mask.any():
            raise NoValidPixelsError("dpc: no valid pixels")
        loss = dpc_core(c_f, c_d, mask)
        return loss, leaves, mask

    if loss_id == "bsca":
        if inputs.flow is None:
            raise ValueError("bsca loss needs the flow prior")
        f_u, f_v = leaves["flow"]
        r_u, r_v, flow_ok = rigid_flow_graph(camera, R, t, d, H, W)
        mask = flow_ok & inputs.flow.mask & inputs.depth.mask
        if not mask.any():
            raise NoValidPixelsError("bsca: no valid pixels")
        loss = bsca_core(r_u, r_v, f_u, f_v, mask)
        return loss, leaves, mask

    if loss_id == "smoothness":
        if inputs.image_t is None:
            raise ValueError("smoothness loss needs the target image")
        loss = smoothness_core(d, inputs.image_t.values)
        return loss, leaves, np.ones((H, W), bool)

    raise ValueError(f"unknown loss id {loss_id!r}")


def _grad_or_zero(var):
    if var.grad is None:  # leaf unreachable from this loss: derivative is 0
        return np.zeros(np.shape(var.value)) if np.shape(var.value) else 0.0
    return var.grad


def loss_gradient(loss_id, inputs: LossInputs, targets=("depth", "twist"),
                  stop_gradient_geo: bool = False) -> LossGradient:
    """Exact derivative of the masked-mean loss for the requested targets."""
    loss, leaves, _ = build_loss(loss_id, inputs, stop_gradient_geo=stop_gradient_geo)
    ad.backward(loss)
    d_depth = d_twist = d_flow = None
    if "depth" in targets:
        d_depth = np.asarray(_grad_or_zero(leaves["depth"]), dtype=float)
    if "twist" in targets:
        d_twist = np.array([float(_grad_or_zero(x)) for x in leaves["twist"]])
    if "flow" in targets:
        if "flow" not in leaves:
            raise ValueError("no flow input to differentiate")
        f_u, f_v = leaves["flow"]
        d_flow = np.stack(
            [np.asarray(_grad_or_zero(f_u)), np.asarray(_grad_or_zero(f_v))], axis=-1
        )
    return LossGradient(float(loss.value), d_depth, d_twist, d_flow)


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass(frozen=True)
class CheckRow:
    target: str
    coordinate: str
    analytic: float
    numeric: float
    rel_error: float
    mask_flipped: bool
    excluded: str = ""  # "", "mask-flip", or "fd-floor"


@dataclass(frozen=True)
class GradCheckReport:
    rows: tuple
    max_rel_error: float
    flipped_count: int
    passed: bool

    def to_csv_rows(self):
        return [
            {
                "target": r.target,
                "coordinate": r.coordinate,
                "analytic": r.analytic,
                "numeric": r.numeric,
                "rel_error": r.rel_error,
                "mask_flipped": int(r.mask_flipped),
                "excluded": r.excluded,
            }
            for r in self.rows
        ]


def _rel_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def finite_difference_check(
    loss_id,
    inputs: LossInputs,
    targets=("depth", "twist"),
    step: float = 1e-6,
    depth_samples: int = 64,
    flow_samples: int = 32,
    tolerance: float = 1e-5,
    seed: int = 0,
    stop_gradient_geo: bool = False,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Checks all 6 twist coordinates and `depth_samples` random valid depth
    pixels (plus flow coordinates when requested). Two kinds of coordinate
    are excluded from the verdict but counted in the report: those whose
    perturbation flips a validity mask, and those whose sensitivity is so
    small that the central difference sits at the rounding floor of the
    loss (|gradient| * step below a few dozen ulps of the loss value).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    loss, leaves, base_mask = build_loss(loss_id, inputs, stop_gradient_geo=stop_gradient_geo)
    ad.backward(loss)

    def value_and_mask(overrides):
        var, _, mask = build_loss(loss_id, inputs, overrides, stop_gradient_geo)
        return float(var.value), mask

    rows = []
    rng = np.random.default_rng(seed)
    eps = np.finfo(float).eps

    def check(target, coordinate, analytic, plus_overrides, minus_overrides):
        f_plus, m_plus = value_and_mask(plus_overrides)
        f_minus, m_minus = value_and_mask(minus_overrides)
        flipped = not (np.array_equal(m_plus, base_mask) and np.array_equal(m_minus, base_mask))
        numeric = (f_plus - f_minus) / (2.0 * step)
        excluded = ""
        if flipped:
            excluded = "mask-flip"
        else:
            # the loss evaluates with ~O(100 ulp) rounding noise; if that
            # noise exceeds `tolerance` of the difference being measured,
            # this coordinate cannot be certified by central differences
            noise = 256.0 * eps * max(abs(f_plus), abs(f_minus), 1e-3)
            if abs(f_plus - f_minus) * tolerance < noise:
                excluded = "fd-floor"
        rows.append(
            CheckRow(target, coordinate, float(analytic), numeric,
                     _rel_error(analytic, numeric), flipped, excluded)
        )

    if "twist" in targets:
        base = inputs.twist.values
        for i in range(6):
            plus = base.copy()
            minus = base.copy()
            plus[i] += step
            minus[i] -= step
            check("twist", f"xi[{i}]", float(_grad_or_zero(leaves["twist"][i])),
                  {"twist": plus}, {"twist": minus})

    if "depth" in targets:
        ok = np.argwhere(base_mask)
        if len(ok) == 0:
            raise NoValidPixelsError("no valid pixels to sample")
        picks = ok[rng.choice(len(ok), size=min(depth_samples, len(ok)), replace=False)]
        grad = np.asarray(_grad_or_zero(leaves["depth"]))
        for vy, vx in picks:
            plus = inputs.depth.values.copy()
            minus = inputs.depth.values.copy()
            plus[vy, vx] += step
            minus[vy, vx] -= step
            check("depth", f"pixel({vx},{vy})", float(grad[vy, vx]),
                  {"depth": plus}, {"depth": minus})

    if "flow" in targets and inputs.flow is not None:
        ok = np.argwhere(base_mask)
        picks = ok[rng.choice(len(ok), size=min(flow_samples, len(ok)), replace=False)]
        f_u, f_v = leaves["flow"]
        grads = (np.asarray(_grad_or_zero(f_u)), np.asarray(_grad_or_zero(f_v)))
        for vy, vx in picks:
            axis = int(rng.integers(0, 2))
            plus = inputs.flow.values.copy()
            minus = inputs.flow.values.copy()
            plus[vy, vx, axis] += step
            minus[vy, vx, axis] -= step
            check("flow", f"pixel({vx},{vy})[{'uv'[axis]}]",
                  float(grads[axis][vy, vx]), {"flow": plus}, {"flow": minus})

    live = [r.rel_error for r in rows if not r.excluded]
    max_rel = max(live) if live else 0.0
    flipped = sum(r.mask_flipped for r in rows)
    return GradCheckReport(tuple(rows), max_rel, flipped, max_rel < tolerance)
