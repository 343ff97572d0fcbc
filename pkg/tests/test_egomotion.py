import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gaussian_blob, interior
from egomap.egomotion import (
    RotationDistribution,
    RotationStackSpec,
    angular_errors,
    estimate_egomotion,
    orient_first_view,
    score_rotations,
    stabilize,
)
from egomap.errors import DegenerateMatch
from egomap.geometry import GridSpec, index_to_metric, metric_to_index
from egomap.volume import FeatureVolume, add_volumes, rotate_volume

# a stack that contains the identity, for synthetic volume tests
LEVEL_STACK = RotationStackSpec(elevations_deg=(-40.0, -20.0, 0.0, 20.0, 40.0))
grid = GridSpec()


def _two_blobs(g=grid):
    a = gaussian_blob(g, center_idx=(12.0, 18.0, 14.0), sigma=3.0, channels=2)
    b = gaussian_blob(g, center_idx=(20.0, 13.0, 19.0), sigma=2.5, channels=2).scaled(0.6)
    return add_volumes(a, b)


def _corr(a, b):
    x, y = a.data.ravel(), b.data.ravel()
    return float(x @ y) / (np.linalg.norm(x) * np.linalg.norm(y) + 1e-12)


def test_stack_defaults_and_order():
    spec = RotationStackSpec()
    cands = spec.candidates()
    assert len(cands) == 18 * 3
    assert cands[:2] == [(0.0, 20.0), (20.0, 20.0)]
    assert cands[18] == (0.0, 40.0)
    with pytest.raises(ValueError):
        RotationStackSpec(azimuths_deg=())


def test_distribution_validation():
    with pytest.raises(ValueError):
        RotationDistribution(np.array([0.5, 0.6]), [(0, 0), (20, 0)])
    with pytest.raises(ValueError):
        RotationDistribution(np.array([1.0]), [(0, 0), (20, 0)])


def test_self_match_peaks_at_identity():
    m = _two_blobs()
    dist = score_rotations(m, m, LEVEL_STACK)
    assert dist.argmax() == (0.0, 0.0)
    assert abs(dist.probs.sum() - 1) < 1e-6


def test_rotated_memory_matches_brute_force():
    m = _two_blobs()
    v = rotate_volume(m, 40.0, 0.0)
    dist = score_rotations(v, m, LEVEL_STACK)
    brute = [_corr(m, stabilize(v, r)) for r in LEVEL_STACK.candidates()]
    best = LEVEL_STACK.candidates()[int(np.argmax(brute))]
    assert dist.argmax() == best == (40.0, 0.0)


def test_symmetric_memory_gives_flat_distribution():
    m = gaussian_blob(grid, sigma=4.0)
    dist = score_rotations(m, m)
    assert dist.probs.max() - dist.probs.min() < 0.02


def test_zero_volumes_are_degenerate():
    m = _two_blobs()
    zero = FeatureVolume.zeros(grid, 2)
    with pytest.raises(DegenerateMatch):
        score_rotations(m, zero)
    with pytest.raises(DegenerateMatch):
        score_rotations(zero, m)
    with pytest.raises(ValueError):
        score_rotations(m, m, temperature=0.0)


@lru_cache(maxsize=None)
def _rotated_pair(r):
    m = _two_blobs()
    v = rotate_volume(m, *r)
    return v, m, score_rotations(v, m).argmax()


@settings(max_examples=10)
@given(st.floats(0.01, 100), st.floats(0.01, 100))
def test_argmax_invariant_to_scaling(alpha, beta):
    v, m, base = _rotated_pair((20.0, 20.0))
    assert score_rotations(v.scaled(alpha), m.scaled(beta)).argmax() == base


@settings(max_examples=10)
@given(st.floats(0.005, 5.0))
def test_temperature_keeps_argmax(tau):
    v, m, base = _rotated_pair((60.0, 40.0))
    assert score_rotations(v, m, temperature=tau).argmax() == base


def test_scores_identical_across_thread_counts(monkeypatch):
    m = _two_blobs()
    v = rotate_volume(m, 20.0, 40.0)
    monkeypatch.setenv("EGOMAP_THREADS", "1")
    one = score_rotations(v, m).probs
    monkeypatch.setenv("EGOMAP_THREADS", "8")
    many = score_rotations(v, m).probs
    assert one.tobytes() == many.tobytes()


# -- collapsing the distribution ---------------------------------------------------------------


def _dist(weights):
    cands = list(weights)
    return RotationDistribution(np.array([weights[c] for c in cands]), cands)


def test_estimate_examples():
    assert estimate_egomotion(_dist({(20.0, 40.0): 1.0, (40.0, 40.0): 0.0})) == (20.0, 40.0)
    az, _ = estimate_egomotion(_dist({(350.0, 20.0): 0.5, (10.0, 20.0): 0.5}))
    assert az == pytest.approx(0.0, abs=1e-9)
    _, el = estimate_egomotion(_dist({(0.0, 20.0): 0.75, (0.0, 40.0): 0.25}))
    assert el == pytest.approx(25.0)


def test_estimate_argmax_mode():
    d = _dist({(340.0, 20.0): 0.6, (20.0, 60.0): 0.4})
    assert estimate_egomotion(d, argmax=True) == (-20.0, 20.0)


def test_angular_errors_wrap():
    assert angular_errors((179.0, 20.0), (-179.0, 25.0)) == pytest.approx((2.0, 5.0))


# -- stabilization -------------------------------------------------------------------------------


def test_stabilize_identity():
    m = _two_blobs()
    assert stabilize(m, (0, 0)) is m


@pytest.mark.parametrize("r", [(40.0, 0.0), (-60.0, 20.0), (100.0, 40.0), (20.0, 60.0)])
def test_stabilize_undoes_rotation(r):
    m = gaussian_blob(grid, center_idx=(17.0, 14.0, 15.5), sigma=4.0)
    back = stabilize(rotate_volume(m, *r), r)
    assert np.abs(back.data - m.data)[interior(grid.shape)].max() < 0.05


@pytest.mark.parametrize("r", [(20.0, 20.0), (-40.0, 40.0), (160.0, 60.0)])
def test_stabilize_with_estimate_realigns(r):
    m = _two_blobs()
    v = rotate_volume(m, *r)
    est = estimate_egomotion(score_rotations(v, m))
    assert _corr(m, stabilize(v, est)) >= 0.98


def test_orient_level_view_is_identity():
    m = _two_blobs()
    np.testing.assert_array_equal(orient_first_view(m, 0.0).data, m.data)


def test_orient_moves_spike_by_negative_pitch():
    data = np.zeros(grid.shape + (1,))
    data[16, 10, 20] = 1.0
    out = orient_first_view(FeatureVolume(grid, data), 20.0).data[..., 0]
    x, y, z = index_to_metric(grid, [16, 10, 20])
    a = math.radians(-20.0)
    # pitch about the horizontal axis through the grid center
    target = metric_to_index(grid, [x, math.cos(a) * y - math.sin(a) * z, math.sin(a) * y + math.cos(a) * z])
    idx = np.argwhere(out > 0)
    com = (idx * out[tuple(idx.T)][:, None]).sum(axis=0) / out.sum()
    np.testing.assert_allclose(com, target, atol=0.25)


def test_orient_round_trip():
    m = gaussian_blob(grid, center_idx=(15.0, 17.0, 16.0), sigma=4.0)
    back = rotate_volume(orient_first_view(m, 40.0), 0.0, 40.0)
    assert np.abs(back.data - m.data)[interior(grid.shape)].max() < 0.05


@pytest.mark.slow
def test_recovery_on_blob_scenes():
    """100 blob scenes related by a known candidate rotation, exact bin recovery."""
    rng = np.random.default_rng(7)
    cands = RotationStackSpec().candidates()
    hits = 0
    for _ in range(100):
        centers = rng.uniform(9, 22, size=(3, 3))
        m = gaussian_blob(grid, centers[0], 2.5)
        for c in centers[1:]:
            m = add_volumes(m, gaussian_blob(grid, c, rng.uniform(1.5, 3.0)))
        r = cands[rng.integers(len(cands))]
        est = estimate_egomotion(score_rotations(rotate_volume(m, *r), m), argmax=True)
        err = angular_errors(est, r)
        hits += err[0] <= 10 and err[1] <= 10
    assert hits >= 95
