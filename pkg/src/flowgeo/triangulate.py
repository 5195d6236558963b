"""Closed-form per-pixel depth from dense correspondences and a warp motion.

Given a flow field F (target -> source) and the warp motion (R, t), each
pixel's depth follows from the two normalized image axes:

    d = sum_i (t_i - s_i t_3) / sum_i (s_i r_3.x - r_i.x),   i in {1, 2}

with x = K^-1 p~ the normalized target ray and s = K^-1 (p~ + [F; 0]) the
normalized source ray. The two axes are combined as a single ratio (sum of
numerators over sum of denominators). Degenerate pixels are masked with a
per-pixel code, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import CameraIntrinsics, DepthMap, FlowField, RigidMotion, pixel_grid

DEGENERATE_DENOMINATOR_EPS = 1e-8


class Degeneracy(IntEnum):
    OK = 0
    NEAR_ZERO_DENOMINATOR = 1
    NEGATIVE_DEPTH = 2
    MASKED_FLOW = 3


@dataclass(frozen=True)
class TriangulationResult:
    depth_g: DepthMap
    validity: np.ndarray
    degeneracy: np.ndarray  # uint8 grid of Degeneracy codes

    @property
    def valid_fraction(self) -> float:
        return float(self.validity.mean())


def normalized_correspondences(camera: CameraIntrinsics, pixel, flow):
    """Normalized camera coordinates of a pixel and of its correspondence:
    (K^-1 p~, K^-1 (p~ + [flow; 0])); both have third component 1."""
    p = np.asarray(pixel, dtype=float)
    f = np.asarray(flow, dtype=float)
    ones = np.ones_like(p[..., 0])
    p_t = np.stack(
        [(p[..., 0] - camera.cx) / camera.fx, (p[..., 1] - camera.cy) / camera.fy, ones],
        axis=-1,
    )
    p_s = np.stack(
        [
            (p[..., 0] + f[..., 0] - camera.cx) / camera.fx,
            (p[..., 1] + f[..., 1] - camera.cy) / camera.fy,
            ones,
        ],
        axis=-1,
    )
    return p_t, p_s


def triangulate_depth(
    camera: CameraIntrinsics,
    motion: RigidMotion,
    flow: FlowField,
    eps_denominator: float = DEGENERATE_DENOMINATOR_EPS,
) -> TriangulationResult:
    """Triangulate a depth map from flow under the warp motion.

    Pixels with |denominator| < eps_denominator (no parallax), negative
    solutions, or invalid flow are masked with their degeneracy code.
    """
    H, W = flow.shape
    u, v = pixel_grid(H, W)
    grid = np.stack([u, v], axis=-1)
    p_t, p_s = normalized_correspondences(camera, grid, flow.values)

    R = motion.rotation
    t = motion.translation
    r_dot = p_t @ R.T  # r_dot[..., i] = r_i . p_t
    numerator = (t[0] - p_s[..., 0] * t[2]) + (t[1] - p_s[..., 1] * t[2])
    denominator = (p_s[..., 0] * r_dot[..., 2] - r_dot[..., 0]) + (
        p_s[..., 1] * r_dot[..., 2] - r_dot[..., 1]
    )

    codes = np.zeros((H, W), dtype=np.uint8)
    codes[~flow.mask] = Degeneracy.MASKED_FLOW
    small = (np.abs(denominator) < eps_denominator) & flow.mask
    codes[small] = Degeneracy.NEAR_ZERO_DENOMINATOR

    safe = np.where(np.abs(denominator) < eps_denominator, 1.0, denominator)
    depth = numerator / safe
    negative = (depth <= 0) & flow.mask & ~small
    codes[negative] = Degeneracy.NEGATIVE_DEPTH

    validity = codes == Degeneracy.OK
    depth = np.where(validity, depth, 1.0)
    return TriangulationResult(DepthMap(depth, validity), validity, codes)
