"""Egomotion by matching against a discrete stack of rotations, and stabilization.

Rotations are relative (azimuth, elevation) pairs ``r`` that map the memory
frame to the current camera frame: a volume seen from the current camera is
``rotate_volume(memory, *r)``. Stabilizing undoes exactly that resampling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMatch
from .geometry import view_rotation, wrap_degrees
from .volume import resample, rotate_volume

DEFAULT_TEMPERATURE = 0.05
_EPS = 1e-12


def thread_count():
    """Worker count from ``EGOMAP_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("EGOMAP_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class RotationStackSpec:
    azimuths_deg: tuple = field(default_factory=lambda: tuple(float(a) for a in range(0, 360, 20)))
    elevations_deg: tuple = (20.0, 40.0, 60.0)

    def __post_init__(self):
        if not self.azimuths_deg or not self.elevations_deg:
            raise ValueError("rotation stack needs at least one azimuth and one elevation")

    def candidates(self):
        """Candidate (az, el) pairs, elevation-major then azimuth."""
        return [(float(a), float(e)) for e in self.elevations_deg for a in self.azimuths_deg]


@dataclass(frozen=True, eq=False)
class RotationDistribution:
    probs: np.ndarray
    candidates: list

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(self.candidates),):
            raise ValueError("one probability per candidate required")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    def argmax(self):
        return self.candidates[int(np.argmax(self.probs))]


def stabilize(v, r):
    """Bring a current-frame volume into the memory frame given its relative rotation ``r``."""
    az, el = r
    if az == 0 and el == 0:
        return v
    return resample(v, view_rotation(az, el))


def orient_first_view(v, absolute_elevation_deg):
    """Level the first view so the memory is parallel to the ground plane."""
    return rotate_volume(v, 0.0, -absolute_elevation_deg)


def _norm(vol):
    return math.sqrt(float(np.sum(vol.data.ravel() ** 2)))


def correlation_scores(v, memory, spec):
    """Normalized correlation of the memory with ``v`` stabilized by each candidate."""
    m_norm = _norm(memory)
    if m_norm == 0.0:
        raise DegenerateMatch("memory volume is all zero")
    if _norm(v) == 0.0:
        raise DegenerateMatch("input volume is all zero")
    m_flat = memory.data.ravel()

    def score(r):
        vr = stabilize(v, r)
        num = float(np.sum(m_flat * vr.data.ravel()))
        return num / (m_norm * _norm(vr) + _EPS)

    cands = spec.candidates()
    workers = thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(score, cands))
    else:
        scores = [score(r) for r in cands]
    return np.array(scores)


def score_rotations(v, memory, spec=None, temperature=DEFAULT_TEMPERATURE):
    """Softmax over candidate rotations of normalized correlation / temperature."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    spec = spec or RotationStackSpec()
    logits = correlation_scores(v, memory, spec) / temperature
    logits -= logits.max()
    p = np.exp(logits)
    return RotationDistribution(p / p.sum(), spec.candidates())


def estimate_egomotion(dist, argmax=False):
    """Collapse a distribution to one (az, el): circular mean azimuth, mean elevation."""
    if argmax:
        az, el = dist.argmax()
        return wrap_degrees(az), float(el)
    cands = np.asarray(dist.candidates, dtype=float)
    rad = np.radians(cands[:, 0])
    az = math.degrees(math.atan2(float(dist.probs @ np.sin(rad)), float(dist.probs @ np.cos(rad))))
    el = float(dist.probs @ cands[:, 1])
    return wrap_degrees(round(az, 9)), el


def angular_errors(estimate, truth):
    """Absolute (azimuth, elevation) errors in degrees, azimuth wrapped."""
    return abs(wrap_degrees(estimate[0] - truth[0])), abs(estimate[1] - truth[1])
