import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from egomap.geometry import CameraIntrinsics, GridSpec
from egomap.volume import FeatureVolume

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def intr():
    return CameraIntrinsics.from_fov(60.0, 64, 64)


def gaussian_blob(grid, center_idx=None, sigma=4.0, channels=1):
    """Smooth blob in index space, replicated over ``channels`` with distinct scales."""
    if center_idx is None:
        center_idx = [(n - 1) / 2.0 for n in grid.shape]
    ii, jj, kk = np.meshgrid(*(np.arange(n, dtype=float) for n in grid.shape), indexing="ij")
    r2 = (ii - center_idx[0]) ** 2 + (jj - center_idx[1]) ** 2 + (kk - center_idx[2]) ** 2
    base = np.exp(-r2 / (2 * sigma**2))
    return FeatureVolume(grid, np.stack([base * (1 + 0.5 * c) for c in range(channels)], axis=-1))


def interior(shape, margin=8):
    return tuple(slice(margin, n - margin) for n in shape)
