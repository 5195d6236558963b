import numpy as np
import pytest

from flowgeo.geometry import CameraIntrinsics, RigidMotion, rotation_from_axis_angle
from flowgeo.scene import DynamicObjectSpec, SceneSpec, TextureSpec, synthesize


@pytest.fixture(scope="session")
def camera():
    return CameraIntrinsics(fx=100.0, fy=98.0, cx=48.0, cy=36.0)


@pytest.fixture(scope="session")
def affine_bundle(camera):
    """Static affine-inverse-shift scene, identity rotation, generic
    forward+lateral ego translation; the workhorse oracle scene."""
    spec = SceneSpec("affine-inverse-shift", a=0.21, b=1.3e-3, c=0.9e-3)
    ego = RigidMotion(np.eye(3), [0.31, 0.02, 0.42])
    return synthesize(spec, camera, ego, 72, 96)


@pytest.fixture(scope="session")
def small_bundle():
    """16x12 scene with generic rotation and lateral-dominant translation
    (keeps triangulation denominators and C^D bounded away from zero),
    sharp texture for measurable photometric gradients."""
    camera = CameraIntrinsics(fx=40.0, fy=38.0, cx=8.0, cy=6.0)
    ego = RigidMotion(rotation_from_axis_angle([0.011, -0.017, 0.013]), [0.31, 0.05, 0.1])
    texture = TextureSpec(
        amplitudes=(0.16, 0.13, 0.09),
        frequencies_u=(0.41, 0.67, -0.93),
        frequencies_v=(0.53, -0.71, 0.89),
        phases=(0.3, 1.1, 2.2),
    )
    spec = SceneSpec("affine-inverse-shift", a=0.22, b=2.3e-3, c=1.7e-3, texture=texture)
    return synthesize(spec, camera, ego, 12, 16)


@pytest.fixture(scope="session")
def dynamic_bundle(camera):
    """Scene with a translating patch whose flow delta is transverse to
    the epipolar direction (the recoverable case for co-adjustment)."""
    dyn = DynamicObjectSpec(
        shape="rect", center=(30.0, 26.0), half_size=(10.0, 8.0), translation=(0.0, 0.2, 0.0)
    )
    spec = SceneSpec("affine-inverse-shift", a=0.21, b=1.3e-3, c=0.9e-3, dynamic=dyn)
    ego = RigidMotion(np.eye(3), [0.31, 0.02, 0.42])
    return synthesize(spec, camera, ego, 72, 96)


def random_scene(seed, height=72, width=96, max_angle_deg=5.0, t_range=(0.1, 1.0)):
    """Random generic static scene for round-trip properties."""
    rng = np.random.default_rng(seed)
    camera = CameraIntrinsics(
        fx=float(rng.uniform(80, 130)),
        fy=float(rng.uniform(80, 130)),
        cx=width / 2 + float(rng.uniform(-3, 3)),
        cy=height / 2 + float(rng.uniform(-3, 3)),
    )
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = np.deg2rad(rng.uniform(0.5, max_angle_deg))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    norm = rng.uniform(*t_range)
    ego = RigidMotion(rotation_from_axis_angle(axis * angle), direction * norm)
    spec = SceneSpec(
        "affine-inverse-shift",
        a=float(rng.uniform(0.2, 0.28)),
        b=float(rng.uniform(-6e-4, 6e-4)),
        c=float(rng.uniform(-6e-4, 6e-4)),
    )
    return synthesize(spec, camera, ego, height, width)
