import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from liftseg import CameraView
from liftseg.fusion import ParameterBundle

settings.register_profile(
    "liftseg",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("liftseg")


@pytest.fixture
def rng():
    return np.random.default_rng(20240911)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation via QR with a sign fix."""
    a = rng.standard_normal((3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def make_view(width=64, height=48, fx=100.0, fy=100.0, cx=None, cy=None,
              rotation=None, translation=(0.0, 0.0, 0.0), depth=None) -> CameraView:
    cx = (width - 1) / 2.0 if cx is None else cx
    cy = (height - 1) / 2.0 if cy is None else cy
    k = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    ext = np.eye(4)
    if rotation is not None:
        ext[:3, :3] = rotation
    ext[:3, 3] = translation
    if depth is None:
        depth = np.zeros((height, width))
    return CameraView(intrinsics=k, extrinsics=ext, depth=depth,
                      width=width, height=height)


def identity_view(width=8, height=8, depth=None) -> CameraView:
    return make_view(width=width, height=height, fx=1.0, fy=1.0, cx=0.0, cy=0.0,
                     depth=depth)


def small_bundle(input_dim=6, dim=8, heads=2, layers=2, seed=3):
    return ParameterBundle.seeded(input_dim, dim, heads, layers, seed)
