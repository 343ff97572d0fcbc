"""Recurrent fusion of stabilized views into the scene memory."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .egomotion import (
    DEFAULT_TEMPERATURE,
    RotationStackSpec,
    estimate_egomotion,
    orient_first_view,
    score_rotations,
    stabilize,
)
from .errors import FormatError, ShapeError
from .formats import decode_grnv, encode_grnv
from .geometry import Pose, relative_rotation
from .unprojection import unproject_frame
from .volume import N_CHANNELS, FeatureVolume, _check_same, conv3d

GATES = ("z", "r", "h")


def init_memory(grid, channels=N_CHANNELS):
    return FeatureVolume.zeros(grid, channels)


def update_average(running, v, t):
    """Incremental mean after the ``t``-th view (``running`` holds the first t-1)."""
    _check_same(running, v)
    if t < 1:
        raise ValueError("view index starts at 1")
    return FeatureVolume(running.grid, running.data + (v.data - running.data) / t)


@dataclass(frozen=True, eq=False)
class GruWeights:
    """Input kernels ``w``, state kernels ``u`` and biases ``b`` per gate (z, r, h)."""

    w: dict
    u: dict
    b: dict

    def __post_init__(self):
        c = self.channels
        k = self.kernel_size
        for g in GATES:
            for kern in (self.w[g], self.u[g]):
                if kern.shape != (k, k, k, c, c):
                    raise ShapeError(f"gate {g}: kernel shape {kern.shape}, expected {(k, k, k, c, c)}")
            if self.b[g].shape != (c,):
                raise ShapeError(f"gate {g}: bias shape {self.b[g].shape}")

    @property
    def channels(self):
        return self.b["z"].shape[0]

    @property
    def kernel_size(self):
        return self.w["z"].shape[0]

    @classmethod
    def zeros(cls, channels=N_CHANNELS, k=3):
        kz = lambda: np.zeros((k, k, k, channels, channels))  # noqa: E731
        return cls({g: kz() for g in GATES}, {g: kz() for g in GATES}, {g: np.zeros(channels) for g in GATES})

    @classmethod
    def random(cls, channels=N_CHANNELS, k=3, seed=0):
        """Uniform[-0.1, 0.1] parameters from a seeded generator."""
        rng = np.random.default_rng(seed)
        shape = (k, k, k, channels, channels)
        w, u, b = {}, {}, {}
        for g in GATES:
            w[g] = rng.uniform(-0.1, 0.1, shape)
            u[g] = rng.uniform(-0.1, 0.1, shape)
            b[g] = rng.uniform(-0.1, 0.1, channels)
        return cls(w, u, b)

    def flatten(self):
        parts = []
        for g in GATES:
            parts += [self.w[g].ravel(), self.u[g].ravel(), self.b[g]]
        return np.concatenate(parts)

    def to_grnv(self):
        """Pack into a GRNV container with header (n_params, k, channels, 1)."""
        return _pack_weights(self.flatten(), self.kernel_size, self.channels)

    @classmethod
    def from_grnv(cls, buf):
        arr = decode_grnv(buf)
        n, k, c, one = arr.shape
        expected = 6 * k**3 * c * c + 3 * c
        if one != 1 or n != expected:
            raise FormatError(f"GRU weight container header {arr.shape} is inconsistent", offset=8)
        flat = arr[:, 0, 0, 0]
        w, u, b = {}, {}, {}
        shape = (k, k, k, c, c)
        step = k**3 * c * c
        pos = 0
        for g in GATES:
            w[g] = flat[pos : pos + step].reshape(shape)
            pos += step
            u[g] = flat[pos : pos + step].reshape(shape)
            pos += step
            b[g] = flat[pos : pos + c].copy()
            pos += c
        return cls(w, u, b)


def _pack_weights(flat, k, c):
    # w = parameter count, h = kernel size, d = channels, c = 1; only the (i, 0, 0, 0) column is used
    arr = np.zeros((flat.size, k, c, 1))
    arr[:, 0, 0, 0] = flat
    return encode_grnv(arr)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def update_gru(m, v, w):
    """One convolutional GRU step with the memory as hidden state."""
    _check_same(m, v)
    if w.channels != m.channels:
        raise ShapeError(f"weights have {w.channels} channels, memory has {m.channels}")
    zero = np.zeros(w.channels)

    def gate(g, state):
        return conv3d(v, w.w[g], w.b[g]).data + conv3d(state, w.u[g], zero).data

    z = _sigmoid(gate("z", m))
    r = _sigmoid(gate("r", m))
    h_tilde = np.tanh(gate("h", FeatureVolume(m.grid, r * m.data)))
    return FeatureVolume(m.grid, (1.0 - z) * m.data + z * h_tilde)


@dataclass(frozen=True)
class Frame:
    image: np.ndarray
    depth: np.ndarray
    pose: Pose


@dataclass
class MapConfig:
    rotation_stack: RotationStackSpec = field(default_factory=RotationStackSpec)
    temperature: float = DEFAULT_TEMPERATURE
    argmax: bool = False
    gru_weights: GruWeights = None
    gru_seed: int = 0


def reference_pose(first):
    """Memory frame: the first view's azimuth, leveled to zero elevation."""
    return Pose(first.azimuth_deg, 0.0, first.radius)


def integrate_views(frames, intr, grid, mode="average", egomotion="given", config=None, log=None):
    """Fuse a frame sequence into the memory and return the final memory volume.

    ``egomotion`` selects between the known relative rotation of each pose and
    the rotation estimated against the memory built so far. If ``log`` is a
    list, one record per frame is appended to it.
    """
    if not frames:
        raise ValueError("need at least one frame")
    if mode not in ("average", "gru"):
        raise ValueError(f"unknown fusion mode {mode!r}")
    if egomotion not in ("given", "estimated"):
        raise ValueError(f"unknown egomotion source {egomotion!r}")
    config = config or MapConfig()
    weights = config.gru_weights
    if mode == "gru" and weights is None:
        weights = GruWeights.random(N_CHANNELS, seed=config.gru_seed)
    ref = reference_pose(frames[0].pose)
    memory = init_memory(grid)
    for t, frame in enumerate(frames, start=1):
        if not np.isclose(frame.pose.radius, grid.center_distance):
            raise ValueError(
                f"frame {t}: camera radius {frame.pose.radius} differs from grid distance {grid.center_distance}"
            )
        v = unproject_frame(frame.image, frame.depth, intr, grid)
        given = relative_rotation(frame.pose, ref)
        record = {"step": t, "given": [given[0], given[1]], "estimated": None}
        if t == 1:
            aligned = orient_first_view(v, frame.pose.elevation_deg)
            used = given
        else:
            if egomotion == "estimated":
                dist = score_rotations(v, memory, config.rotation_stack, config.temperature)
                used = estimate_egomotion(dist, argmax=config.argmax)
                record["estimated"] = [used[0], used[1]]
            else:
                used = given
            aligned = stabilize(v, used)
        record["used"] = [used[0], used[1]]
        if mode == "average":
            memory = update_average(memory, aligned, t)
        else:
            memory = update_gru(memory, aligned, weights)
        if log is not None:
            log.append(record)
    return memory
