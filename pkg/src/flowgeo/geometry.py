"""Pinhole camera model, rigid motion, and dense flow-field primitives.

Conventions used throughout the package:

* pixels are (u, v) with u the column and v the row; grids are stored as
  numpy arrays indexed [v, u] (row-major), dtype float64;
* a flow field maps target pixels to source pixels: the correspondence of
  p is p + F(p);
* the motion handed to `rigid_flow` / triangulation is the *warp* motion:
  it maps target-view points into the source view, p_s = proj(K (R X + t)).
  The source-to-target ego-motion is its inverse (see `RigidMotion.inverse`);
* the discrete divergence and grid gradient are *unnormalized* central
  differences (twice the analytic operator); border pixels use one-sided
  differences scaled by 2 so that linear fields are handled consistently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCameraError, DimensionError, InvalidDepthError

ORTHONORMALITY_TOL = 1e-12
Z_EPS = 1e-9


# ---------------------------------------------------------------------------
# camera and motion


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics with zero skew."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


def rotation_from_axis_angle(w) -> np.ndarray:
    """Rodrigues formula. Valid for any axis-angle vector; the small-angle
    branch switches to series coefficients below 1e-8 radians."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    wx, wy, wz = w
    K = np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])
    if theta < 1e-8:
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def axis_angle_from_rotation(R) -> np.ndarray:
    """Inverse of `rotation_from_axis_angle` for angles below pi."""
    R = np.asarray(R, dtype=float)
    cos_theta = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return 0.5 * vee * (1.0 + theta**2 / 6.0)
    if theta < 2.8:
        return vee * (theta / (2.0 * np.sin(theta)))
    # near pi the vee/(2 sin) form loses ~1/sin(theta) digits; extract the
    # quaternion through its largest vector component instead (every other
    # component comes out of a division by it, so nothing amplifies noise)
    d = np.diag(R)
    i = int(np.argmax(d))
    j, k = (i + 1) % 3, (i + 2) % 3
    q = np.zeros(3)
    q[i] = 0.5 * np.sqrt(max(1.0 + d[i] - d[j] - d[k], 1e-30))
    q[j] = (R[j, i] + R[i, j]) / (4.0 * q[i])
    q[k] = (R[k, i] + R[i, k]) / (4.0 * q[i])
    q_w = (R[k, j] - R[j, k]) / (4.0 * q[i])
    if q_w < 0:  # keep the angle in [0, pi]
        q, q_w = -q, -q_w
    norm = np.linalg.norm(q)
    return q / norm * (2.0 * np.arctan2(norm, q_w))


@dataclass(frozen=True)
class RigidMotion:
    """SE(3) element: x -> rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.abs(R @ R.T - np.eye(3)).max() > ORTHONORMALITY_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ORTHONORMALITY_TOL:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_parts(cls, axis_angle, translation) -> "RigidMotion":
        return cls(rotation_from_axis_angle(axis_angle), np.asarray(translation, float))

    def inverse(self) -> "RigidMotion":
        return RigidMotion(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class TwistParams:
    """Differentiable pose coordinates: 3 axis-angle rotation parameters
    followed by the 3 translation components."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(6)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_motion(cls, motion: RigidMotion) -> "TwistParams":
        return cls(np.concatenate([axis_angle_from_rotation(motion.rotation), motion.translation]))

    def to_motion(self) -> RigidMotion:
        return RigidMotion(rotation_from_axis_angle(self.values[:3]), self.values[3:])


# ---------------------------------------------------------------------------
# grid value types


def _as_grid(values, name, depth_axes=2):
    v = np.asarray(values, dtype=float)
    if v.ndim != depth_axes:
        raise DimensionError(f"{name} must be a {depth_axes}-d array, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class DepthMap:
    """H x W per-pixel depth in scene units; strictly positive where valid."""

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        v = _as_grid(self.values, "depth")
        m = np.ones(v.shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if m.shape != v.shape:
            raise DimensionError("depth mask shape mismatch")
        if not np.isfinite(v).all():
            raise InvalidDepthError("depth contains non-finite values")
        if not (v[m] > 0).all():
            raise InvalidDepthError("depth must be strictly positive where valid")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class FlowField:
    """H x W grid of (u, v) displacements in pixels."""

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[2] != 2:
            raise DimensionError(f"flow must have shape (H, W, 2), got {v.shape}")
        m = np.ones(v.shape[:2], bool) if self.mask is None else np.asarray(self.mask, bool)
        if m.shape != v.shape[:2]:
            raise DimensionError("flow mask shape mismatch")
        if not np.isfinite(v[m]).all():
            raise ValueError("flow contains non-finite values on valid pixels")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)

    @property
    def shape(self):
        return self.values.shape[:2]


@dataclass(frozen=True)
class Image:
    """H x W (x C) intensities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim not in (2, 3) or (v.ndim == 3 and v.shape[2] not in (1, 3)):
            raise DimensionError(f"image must be HxW or HxWx{{1,3}}, got {v.shape}")
        if not np.isfinite(v).all() or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("image intensities must be finite and in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape[:2]


@dataclass(frozen=True)
class ScalarField:
    """H x W grid of scalars, finite where the validity mask is true."""

    values: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        v = _as_grid(self.values, "scalar field")
        m = np.ones(v.shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if m.shape != v.shape:
            raise DimensionError("scalar field mask shape mismatch")
        if not np.isfinite(v[m]).all():
            raise ValueError("scalar field has non-finite valid values")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "mask", m)


def pixel_grid(height: int, width: int):
    """(u, v) coordinate grids of shape (H, W)."""
    u, v = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    return u, v


# ---------------------------------------------------------------------------
# projections


def project(camera: CameraIntrinsics, point) -> np.ndarray:
    """Project a 3-D camera-frame point to a pixel. Raises for z <= 0."""
    X = np.asarray(point, dtype=float)
    if X.shape[-1] != 3:
        raise DimensionError("point must be a 3-vector")
    z = X[..., 2]
    if np.any(z <= 0):
        raise BehindCameraError("point has non-positive depth")
    return np.stack(
        [camera.fx * X[..., 0] / z + camera.cx, camera.fy * X[..., 1] / z + camera.cy],
        axis=-1,
    )


def backproject(camera: CameraIntrinsics, pixel, depth) -> np.ndarray:
    """Lift a pixel at the given depth to a 3-D camera-frame point."""
    if np.any(np.asarray(depth) <= 0) or not np.all(np.isfinite(depth)):
        raise InvalidDepthError("depth must be positive and finite")
    p = np.asarray(pixel, dtype=float)
    d = np.asarray(depth, dtype=float)
    return np.stack(
        [
            d * (p[..., 0] - camera.cx) / camera.fx,
            d * (p[..., 1] - camera.cy) / camera.fy,
            d * np.ones_like(p[..., 0]),
        ],
        axis=-1,
    )


def _flow_from_points(camera, points, height, width, u, v):
    """Flow = projection of transformed points minus the pixel grid; pixels
    whose transformed depth is non-positive are masked, not raised."""
    z = points[..., 2]
    valid = z > Z_EPS
    safe_z = np.where(valid, z, 1.0)
    us = camera.fx * points[..., 0] / safe_z + camera.cx
    vs = camera.fy * points[..., 1] / safe_z + camera.cy
    flow = np.stack([us - u, vs - v], axis=-1)
    flow[~valid] = 0.0
    return FlowField(flow, valid)


def rigid_flow(camera: CameraIntrinsics, motion: RigidMotion, depth: DepthMap) -> FlowField:
    """Apparent motion of a static scene under the warp motion:
    F(p) = proj(K (R backproject(p, D(p)) + t)) - p."""
    H, W = depth.shape
    if (motion.rotation == np.eye(3)).all() and (motion.translation == 0).all():
        # identity motion has identically zero flow; skip the reprojection
        # chain so no rounding wobble leaks in
        return FlowField(np.zeros((H, W, 2)), depth.mask.copy())
    u, v = pixel_grid(H, W)
    d = depth.values
    X = np.stack(
        [d * (u - camera.cx) / camera.fx, d * (v - camera.cy) / camera.fy, d], axis=-1
    )
    Xs = motion.apply(X)
    out = _flow_from_points(camera, Xs, H, W, u, v)
    if not depth.mask.all():
        return FlowField(out.values, out.mask & depth.mask)
    return out


def rotational_flow(camera: CameraIntrinsics, rotation, height: int, width: int) -> FlowField:
    """Depth-independent flow of a pure rotation:
    F(p) = proj(K R K^-1 p~) - p. The homogeneous scale cancels depth."""
    R = np.asarray(rotation, dtype=float).reshape(3, 3)
    if (R == np.eye(3)).all():
        return FlowField(np.zeros((height, width, 2)))
    u, v = pixel_grid(height, width)
    rays = np.stack(
        [(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy, np.ones_like(u)], axis=-1
    )
    return _flow_from_points(camera, rays @ R.T, height, width, u, v)


def translational_flow(flow_o: FlowField, flow_rot: FlowField) -> FlowField:
    """Pointwise removal of the rotational component: F_tra = F_o - F_rot."""
    if flow_o.shape != flow_rot.shape:
        raise DimensionError("flow shapes do not match")
    return FlowField(flow_o.values - flow_rot.values, flow_o.mask & flow_rot.mask)


# ---------------------------------------------------------------------------
# grid differential operators (unnormalized convention)


def _axis_diff(values: np.ndarray, axis: int) -> np.ndarray:
    """Unnormalized difference along an axis: interior x[i+1] - x[i-1],
    borders 2 * one-sided. Equals 2 * np.gradient for unit spacing."""
    return 2.0 * np.gradient(values, axis=axis)


def divergence(flow: FlowField) -> ScalarField:
    """Discrete flow divergence,
    div F(u, v) = -F_u(u-1, v) + F_u(u+1, v) + F_v(u, v+1) - F_v(u, v-1),
    i.e. twice the analytic divergence; border pixels use one-sided
    differences scaled by 2."""
    H, W = flow.shape
    if H < 3 or W < 3:
        raise DimensionError("divergence needs at least a 3x3 grid")
    return ScalarField(
        _axis_diff(flow.values[..., 0], axis=1) + _axis_diff(flow.values[..., 1], axis=0),
        flow.mask.copy(),
    )


def grid_gradient(values: np.ndarray) -> np.ndarray:
    """Per-pixel (d/du, d/dv) in the same unnormalized convention as
    `divergence`; returns shape (H, W, 2)."""
    v = _as_grid(values, "field")
    if v.shape[0] < 3 or v.shape[1] < 3:
        raise DimensionError("gradient needs at least a 3x3 grid")
    return np.stack([_axis_diff(v, axis=1), _axis_diff(v, axis=0)], axis=-1)


def interior_mask(height: int, width: int) -> np.ndarray:
    """True away from the 1-pixel border (where central stencils apply)."""
    m = np.zeros((height, width), bool)
    m[1:-1, 1:-1] = True
    return m


# ---------------------------------------------------------------------------
# bilinear warping


def bilinear_sample(values: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    """Sample `values` (H x W or H x W x C) at continuous (xs, ys).

    Returns (sampled, inside) where `inside` marks sample points within the
    image rectangle [0, W-1] x [0, H-1]; outside samples are clamped for
    indexing and should be discarded via the mask.
    """
    H, W = values.shape[:2]
    inside = (xs >= 0.0) & (xs <= W - 1.0) & (ys >= 0.0) & (ys <= H - 1.0)
    x = np.clip(xs, 0.0, W - 1.0)
    y = np.clip(ys, 0.0, H - 1.0)
    x0 = np.clip(np.floor(x).astype(int), 0, W - 2) if W > 1 else np.zeros_like(x, int)
    y0 = np.clip(np.floor(y).astype(int), 0, H - 2) if H > 1 else np.zeros_like(y, int)
    wx = x - x0
    wy = y - y0
    if values.ndim == 3:
        wx = wx[..., None]
        wy = wy[..., None]
    v00 = values[y0, x0]
    v01 = values[y0, x0 + 1]
    v10 = values[y0 + 1, x0]
    v11 = values[y0 + 1, x0 + 1]
    top = v00 * (1.0 - wx) + v01 * wx
    bottom = v10 * (1.0 - wx) + v11 * wx
    return top * (1.0 - wy) + bottom * wy, inside


def warp(source: Image, flow: FlowField):
    """Inverse-warp the source image through the flow: the output at p is
    the bilinear sample of `source` at p + F(p).

    Returns (Image, mask); the mask is false where the sample point leaves
    the image rectangle or the flow itself is invalid.
    """
    H, W = source.shape
    if flow.shape != (H, W):
        raise DimensionError("flow and image shapes do not match")
    u, v = pixel_grid(H, W)
    sampled, inside = bilinear_sample(
        source.values, u + flow.values[..., 0], v + flow.values[..., 1]
    )
    return Image(np.clip(sampled, 0.0, 1.0)), inside & flow.mask
