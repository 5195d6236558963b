"""Synthetic scenes with analytically known depth, exact flow, and
closed-form spatial derivatives.

A scene is parameterized by the *ego-motion* (source-to-target sense; its
inverse is the warp motion that generates flow, see `geometry`). The
affine-inverse-shift family makes 1/(D - t3_ego) affine in pixel
coordinates, so the ground-truth flow is quadratic per axis and the
central divergence stencil is exact on it — a zero-tolerance oracle for
the flow-divergence / depth-gradient identity.

Images are rendered by evaluating one continuous texture: the source image
samples it on the source grid, the target image samples it at the exact
continuous correspondences, so the pair is photometrically consistent by
construction (up to bilinear resampling of the smooth texture).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSceneError
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    FlowField,
    Image,
    RigidMotion,
    ScalarField,
    pixel_grid,
    rigid_flow,
)

FAMILIES = ("affine-inverse-shift", "fronto-plane", "step-edge", "sphere-bump")


@dataclass(frozen=True)
class TextureSpec:
    """Sum of sinusoids with incommensurate frequencies on the source
    image plane; amplitudes of zero give a texture-free (constant) scene."""

    base: float = 0.5
    amplitudes: tuple = (0.15, 0.10, 0.06)
    frequencies_u: tuple = (0.059, 0.127, -0.173)
    frequencies_v: tuple = (0.083, -0.101, 0.149)
    phases: tuple = (0.3, 1.1, 2.2)

    def __post_init__(self):
        lens = {len(self.amplitudes), len(self.frequencies_u), len(self.frequencies_v), len(self.phases)}
        if len(lens) != 1:
            raise InvalidSceneError("texture parameter lists must share one length")
        lo = self.base - sum(abs(a) for a in self.amplitudes)
        hi = self.base + sum(abs(a) for a in self.amplitudes)
        if lo < 0.0 or hi > 1.0:
            raise InvalidSceneError("texture range leaves [0, 1]")

    def sample(self, x, y):
        out = np.full(np.broadcast(x, y).shape, self.base, dtype=float)
        for a, fu, fv, ph in zip(self.amplitudes, self.frequencies_u, self.frequencies_v, self.phases):
            out += a * np.sin(fu * np.asarray(x) + fv * np.asarray(y) + ph)
        return out


@dataclass(frozen=True)
class DynamicObjectSpec:
    """A pixel region whose surface translates independently between frames."""

    shape: str = "rect"  # "rect" | "ellipse"
    center: tuple = (48.0, 36.0)
    half_size: tuple = (12.0, 9.0)
    translation: tuple = (0.2, 0.0, 0.0)

    def region_mask(self, height, width):
        if self.shape not in ("rect", "ellipse"):
            raise InvalidSceneError(f"unknown dynamic region shape {self.shape!r}")
        cu, cv = self.center
        ru, rv = self.half_size
        if cu - ru < 1 or cv - rv < 1 or cu + ru > width - 2 or cv + rv > height - 2:
            raise InvalidSceneError("dynamic region must be strictly inside the image interior")
        u, v = pixel_grid(height, width)
        if self.shape == "rect":
            return (np.abs(u - cu) <= ru) & (np.abs(v - cv) <= rv)
        return ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0


@dataclass(frozen=True)
class SceneSpec:
    family: str
    depth: float = 5.0  # fronto-plane value; base depth for step/bump
    a: float = 0.2  # affine-inverse-shift: 1/(D - t3_ego) = a + b u + c v
    b: float = 0.0
    c: float = 0.0
    depth_far: float = 8.0  # step-edge far side (u >= edge_u)
    edge_u: float = 48.0
    bump_center: tuple = (48.0, 36.0)
    bump_radius: float = 20.0
    bump_amplitude: float = -1.0  # negative bumps toward the camera
    texture: TextureSpec = TextureSpec()
    dynamic: DynamicObjectSpec | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidSceneError(f"unknown scene family {self.family!r}")


def depth_field(spec: SceneSpec, ego_t3: float, height: int, width: int) -> np.ndarray:
    """Ground-truth depth grid of a family, anchored at the ego-motion t3
    for the affine-inverse-shift family."""
    u, v = pixel_grid(height, width)
    if spec.family == "fronto-plane":
        d = np.full((height, width), float(spec.depth))
    elif spec.family == "affine-inverse-shift":
        g = spec.a + spec.b * u + spec.c * v
        if not (g > 0).all():
            raise InvalidSceneError("affine-inverse-shift requires a + b u + c v > 0 on the grid")
        d = ego_t3 + 1.0 / g
    elif spec.family == "step-edge":
        d = np.where(u < spec.edge_u, float(spec.depth), float(spec.depth_far))
    else:  # sphere-bump
        cu, cv = spec.bump_center
        s = ((u - cu) ** 2 + (v - cv) ** 2) / spec.bump_radius**2
        d = spec.depth + spec.bump_amplitude * np.where(s < 1.0, (1.0 - s) ** 2, 0.0)
    if not (d > 0).all():
        raise InvalidSceneError("scene depth must be positive everywhere")
    return d


def analytic_depth_gradient(spec: SceneSpec, pixel) -> np.ndarray:
    """Closed-form (dD/du, dD/dv) of the family at the given pixel(s);
    the step edge reports 0 (the discontinuity carries no finite slope)."""
    p = np.asarray(pixel, dtype=float)
    u, v = p[..., 0], p[..., 1]
    gu = np.zeros_like(u)
    gv = np.zeros_like(v)
    if spec.family == "affine-inverse-shift":
        g = spec.a + spec.b * u + spec.c * v
        gu = -spec.b / g**2
        gv = -spec.c / g**2
    elif spec.family == "sphere-bump":
        cu, cv = spec.bump_center
        s = ((u - cu) ** 2 + (v - cv) ** 2) / spec.bump_radius**2
        inside = s < 1.0
        coef = -4.0 * spec.bump_amplitude * (1.0 - s) / spec.bump_radius**2
        gu = np.where(inside, coef * (u - cu), 0.0)
        gv = np.where(inside, coef * (v - cv), 0.0)
    return np.stack([gu, gv], axis=-1)


@dataclass(frozen=True)
class SceneBundle:
    """Ground-truth package for one synthetic frame pair.

    `motion` is the warp motion consumed by rigid flow and triangulation;
    `ego_motion` is its inverse (source-to-target), the translation the
    divergence/depth-gradient relations are parameterized by.
    """

    camera: CameraIntrinsics
    motion: RigidMotion
    ego_motion: RigidMotion
    spec: SceneSpec
    depth_gt: DepthMap
    flow_gt: FlowField
    image_t: Image
    image_s: Image
    analytic_depth_gradient: np.ndarray
    analytic_flow_divergence: ScalarField | None
    dynamic_mask: np.ndarray

    @property
    def shape(self):
        return self.depth_gt.shape

    @property
    def static_mask(self) -> np.ndarray:
        return ~self.dynamic_mask


def _analytic_divergence_r_identity(camera, warp_t, depth, depth_grad, u, v):
    """Continuous divergence of F = (K t - t3 (p - po)) / (D + t3) for an
    identity-rotation warp translation t (any t3, including 0)."""
    t1, t2, t3 = warp_t
    denom = depth + t3
    nu = camera.fx * t1 - t3 * (u - camera.cx)
    nv = camera.fy * t2 - t3 * (v - camera.cy)
    return (-2.0 * t3) / denom - (nu * depth_grad[..., 0] + nv * depth_grad[..., 1]) / denom**2


def synthesize(
    spec: SceneSpec,
    camera: CameraIntrinsics,
    ego_motion: RigidMotion,
    height: int,
    width: int,
) -> SceneBundle:
    """Build the full ground-truth bundle for a scene specification."""
    warp_motion = ego_motion.inverse()
    depth = DepthMap(depth_field(spec, ego_motion.translation[2], height, width))
    u, v = pixel_grid(height, width)

    flow = rigid_flow(camera, warp_motion, depth)
    flow_values = flow.values.copy()
    flow_mask = flow.mask.copy()

    dynamic_mask = np.zeros((height, width), bool)
    if spec.dynamic is not None:
        dynamic_mask = spec.dynamic.region_mask(height, width)
        delta = np.asarray(spec.dynamic.translation, dtype=float)
        d = depth.values
        X = np.stack(
            [d * (u - camera.cx) / camera.fx, d * (v - camera.cy) / camera.fy, d], axis=-1
        )
        Xs = warp_motion.apply(X + delta)
        z = Xs[..., 2]
        ok = z > 1e-9
        safe_z = np.where(ok, z, 1.0)
        du = camera.fx * Xs[..., 0] / safe_z + camera.cx - u
        dv = camera.fy * Xs[..., 1] / safe_z + camera.cy - v
        flow_values[dynamic_mask, 0] = du[dynamic_mask]
        flow_values[dynamic_mask, 1] = dv[dynamic_mask]
        flow_mask[dynamic_mask] &= ok[dynamic_mask]
    flow_gt = FlowField(flow_values, flow_mask)

    image_s = Image(np.clip(spec.texture.sample(u, v), 0.0, 1.0))
    target_vals = spec.texture.sample(u + flow_values[..., 0], v + flow_values[..., 1])
    image_t = Image(np.clip(target_vals, 0.0, 1.0))

    grad = analytic_depth_gradient(spec, np.stack([u, v], axis=-1))

    div = None
    if np.abs(ego_motion.rotation - np.eye(3)).max() < 1e-14:
        warp_t = warp_motion.translation
        values = _analytic_divergence_r_identity(camera, warp_t, depth.values, grad, u, v)
        if spec.dynamic is not None:
            delta = np.asarray(spec.dynamic.translation, dtype=float)
            dyn = _analytic_divergence_r_identity(
                camera, warp_t + delta, depth.values, grad, u, v
            )
            values = np.where(dynamic_mask, dyn, values)
        div = ScalarField(values, flow_mask.copy())

    return SceneBundle(
        camera=camera,
        motion=warp_motion,
        ego_motion=ego_motion,
        spec=spec,
        depth_gt=depth,
        flow_gt=flow_gt,
        image_t=image_t,
        image_s=image_s,
        analytic_depth_gradient=grad,
        analytic_flow_divergence=div,
        dynamic_mask=dynamic_mask,
    )


# ---------------------------------------------------------------------------
# flat key=value scene files


def _fmt(value):
    if isinstance(value, (tuple, list, np.ndarray)):
        return ",".join(repr(float(x)) for x in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x != "")


def write_scene_file(path, spec: SceneSpec, camera: CameraIntrinsics | None = None,
                     ego_motion: RigidMotion | None = None) -> None:
    """Serialize a scene (plus optional camera/ego-motion) one key per line."""
    lines = [f"family={spec.family}"]
    for key in ("depth", "a", "b", "c", "depth_far", "edge_u", "bump_radius", "bump_amplitude"):
        lines.append(f"{key}={_fmt(getattr(spec, key))}")
    lines.append(f"bump_center={_fmt(spec.bump_center)}")
    t = spec.texture
    lines.append(f"texture_base={_fmt(t.base)}")
    lines.append(f"texture_amplitudes={_fmt(t.amplitudes)}")
    lines.append(f"texture_frequencies_u={_fmt(t.frequencies_u)}")
    lines.append(f"texture_frequencies_v={_fmt(t.frequencies_v)}")
    lines.append(f"texture_phases={_fmt(t.phases)}")
    if spec.dynamic is not None:
        d = spec.dynamic
        lines.append(f"dynamic_shape={d.shape}")
        lines.append(f"dynamic_center={_fmt(d.center)}")
        lines.append(f"dynamic_half_size={_fmt(d.half_size)}")
        lines.append(f"dynamic_translation={_fmt(d.translation)}")
    if camera is not None:
        for key in ("fx", "fy", "cx", "cy"):
            lines.append(f"{key}={_fmt(getattr(camera, key))}")
    if ego_motion is not None:
        from .geometry import axis_angle_from_rotation

        lines.append(f"ego_rotation={_fmt(axis_angle_from_rotation(ego_motion.rotation))}")
        lines.append(f"ego_translation={_fmt(ego_motion.translation)}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_scene_file(path):
    """Parse a key=value scene file.

    Returns (SceneSpec, CameraIntrinsics or None, RigidMotion or None).
    """
    kv = {}
    with open(path, "r", encoding="ascii") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise InvalidSceneError(f"scene file line is not key=value: {line!r}")
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
    if "family" not in kv:
        raise InvalidSceneError("scene file is missing the family key")

    tex_kwargs = {}
    if "texture_base" in kv:
        tex_kwargs["base"] = float(kv["texture_base"])
    for name, key in (
        ("amplitudes", "texture_amplitudes"),
        ("frequencies_u", "texture_frequencies_u"),
        ("frequencies_v", "texture_frequencies_v"),
        ("phases", "texture_phases"),
    ):
        if key in kv:
            tex_kwargs[name] = _floats(kv[key])
    texture = TextureSpec(**tex_kwargs) if tex_kwargs else TextureSpec()

    dynamic = None
    if "dynamic_shape" in kv or "dynamic_translation" in kv:
        dynamic = DynamicObjectSpec(
            shape=kv.get("dynamic_shape", "rect"),
            center=_floats(kv.get("dynamic_center", "48,36")),
            half_size=_floats(kv.get("dynamic_half_size", "12,9")),
            translation=_floats(kv.get("dynamic_translation", "0.2,0,0")),
        )

    spec_kwargs = {"family": kv["family"], "texture": texture, "dynamic": dynamic}
    for key in ("depth", "a", "b", "c", "depth_far", "edge_u", "bump_radius", "bump_amplitude"):
        if key in kv:
            spec_kwargs[key] = float(kv[key])
    if "bump_center" in kv:
        spec_kwargs["bump_center"] = _floats(kv["bump_center"])
    spec = SceneSpec(**spec_kwargs)

    camera = None
    if all(k in kv for k in ("fx", "fy", "cx", "cy")):
        camera = CameraIntrinsics(float(kv["fx"]), float(kv["fy"]), float(kv["cx"]), float(kv["cy"]))

    ego = None
    if "ego_translation" in kv:
        from .geometry import rotation_from_axis_angle

        w = _floats(kv.get("ego_rotation", "0,0,0"))
        ego = RigidMotion(rotation_from_axis_angle(w), np.asarray(_floats(kv["ego_translation"])))
    return spec, camera, ego
