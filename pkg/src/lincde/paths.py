"""Piecewise-linear paths on uniform grids over [0, 1].

Every driver in the library is stored as its samples on a uniform grid and
interpreted as the piecewise-linear interpolant.  This keeps every
Riemann-Stieltjes integral downstream segment-exact (the integrands are
polynomials on each segment).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

_MAGIC = b"SSMPATH1"


class DomainError(ValueError):
    """Raised when an argument is outside the documented domain."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``num_steps`` segments covering [0, 1]."""

    num_steps: int
    timestamps: np.ndarray = field(compare=False, default=None)

    def __post_init__(self):
        if self.num_steps < 1:
            raise DomainError(f"num_steps must be >= 1, got {self.num_steps}")
        ts = self.timestamps
        if ts is None:
            ts = np.linspace(0.0, 1.0, self.num_steps + 1)
            object.__setattr__(self, "timestamps", ts)
        else:
            ts = np.asarray(ts, dtype=np.float64)
            if ts.shape != (self.num_steps + 1,):
                raise DomainError("timestamps length must be num_steps + 1")
            if ts[0] != 0.0 or ts[-1] != 1.0:
                raise DomainError("grid must span [0, 1] exactly")
            spacing = np.diff(ts)
            if np.any(spacing <= 0):
                raise DomainError("timestamps must be strictly increasing")
            h = 1.0 / self.num_steps
            if np.max(np.abs(spacing - h)) > 1e-12 * max(1.0, h):
                raise DomainError("grid spacing must be uniform")
            object.__setattr__(self, "timestamps", ts)

    @property
    def spacing(self) -> float:
        return 1.0 / self.num_steps

    def index_of(self, t: float, *, snap: bool = False) -> int:
        """Grid index of timestamp ``t``; optionally snap to the nearest node."""
        if t < 0.0 or t > 1.0:
            raise DomainError(f"t={t} outside [0, 1]")
        k = t * self.num_steps
        kr = int(round(k))
        if not snap and abs(k - kr) > 1e-9 * self.num_steps:
            raise DomainError(f"t={t} is not grid-aligned")
        return min(max(kr, 0), self.num_steps)


@dataclass(frozen=True)
class Path:
    """Piecewise-linear d-channel path, basepointed at the origin.

    ``values`` has shape (L + 1, d); ``values[0]`` must be zero unless the
    path was built with ``basepointed=False`` (used internally for pointwise
    nonlinearities whose output need not vanish at t = 0).
    """

    grid: Grid
    values: np.ndarray
    basepointed: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != self.grid.num_steps + 1:
            raise DomainError(
                f"values must have shape (L+1, d), got {v.shape} for L={self.grid.num_steps}"
            )
        if not np.all(np.isfinite(v)):
            raise DomainError("path values must be finite")
        if self.basepointed and np.any(v[0] != 0.0):
            raise DomainError("path must start at the origin")
        object.__setattr__(self, "values", v)

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    @property
    def num_steps(self) -> int:
        return self.grid.num_steps

    def increments(self) -> np.ndarray:
        """Per-segment increments, shape (L, d)."""
        return np.diff(self.values, axis=0)

    def slopes(self) -> np.ndarray:
        """Per-segment derivatives, shape (L, d)."""
        return self.increments() * self.grid.num_steps


def from_values(values: np.ndarray, *, basepointed: bool = True) -> Path:
    values = np.asarray(values, dtype=np.float64)
    return Path(Grid(values.shape[0] - 1), values, basepointed=basepointed)


def zero_path(num_steps: int, num_channels: int) -> Path:
    return from_values(np.zeros((num_steps + 1, num_channels)))


def identity_path(num_steps: int) -> Path:
    """The 1-channel path t -> t."""
    return from_values(np.linspace(0.0, 1.0, num_steps + 1)[:, None])


def eval_at(p: Path, t: float) -> np.ndarray:
    """Value of the interpolant at ``t`` (exact at grid nodes)."""
    if t < 0.0 or t > 1.0:
        raise DomainError(f"t={t} outside [0, 1]")
    x = t * p.num_steps
    k = min(int(np.floor(x)), p.num_steps - 1)
    frac = x - k
    return (1.0 - frac) * p.values[k] + frac * p.values[k + 1]


def restrict(p: Path, s: float, t: float) -> Path:
    """Sub-interval restriction: zero before s, rebased on [s, t], frozen after.

    ``s`` and ``t`` are snapped to the nearest grid node; the result lives on
    the same grid and satisfies Sig(p)_{s,t} = Sig(restrict(p, s, t))_{0,1}.
    """
    if s > t:
        raise DomainError(f"need s <= t, got s={s}, t={t}")
    ks = p.grid.index_of(s, snap=True)
    kt = p.grid.index_of(t, snap=True)
    v = p.values
    out = np.empty_like(v)
    out[:ks] = 0.0
    out[ks : kt + 1] = v[ks : kt + 1] - v[ks]
    out[kt + 1 :] = v[kt] - v[ks]
    return Path(p.grid, out)


def time_augment(p: Path, with_t2: bool = False) -> Path:
    """Prepend a time channel t (and t^2 when requested), sampled on the grid."""
    ts = p.grid.timestamps[:, None]
    cols = [ts, ts**2] if with_t2 else [ts]
    return Path(p.grid, np.hstack(cols + [p.values]), basepointed=p.basepointed)


def one_variation(p: Path) -> float:
    """1-variation norm: sum of segment increment L1 norms."""
    return float(np.sum(np.abs(p.increments())))


def concat(p: Path, q: Path) -> Path:
    """Chain the increments of p then q on a fresh uniform grid.

    Both halves are linearly reparametrized in time; signatures are
    invariant under this, so Chen's identity holds exactly.
    """
    if p.num_channels != q.num_channels:
        raise DomainError(
            f"channel mismatch: {p.num_channels} vs {q.num_channels}"
        )
    inc = np.vstack([p.increments(), q.increments()])
    values = np.vstack([np.zeros((1, p.num_channels)), np.cumsum(inc, axis=0)])
    return from_values(values)


def reverse(p: Path) -> Path:
    """Time reversal t -> p(1 - t) - p(1), rebased to start at the origin."""
    return Path(p.grid, p.values[::-1] - p.values[-1])


def to_json(p: Path) -> str:
    return json.dumps(
        {
            "grid_steps": p.num_steps,
            "channels": p.num_channels,
            "values": p.values.ravel().tolist(),
        }
    )


def path_from_json(text: str) -> Path:
    obj = json.loads(text)
    values = np.asarray(obj["values"], dtype=np.float64).reshape(
        obj["grid_steps"] + 1, obj["channels"]
    )
    return from_values(values)


def to_binary(p: Path) -> bytes:
    header = _MAGIC + struct.pack("<II", p.num_steps, p.num_channels)
    return header + p.values.astype("<f8").tobytes()


def path_from_binary(data: bytes) -> Path:
    if data[:8] != _MAGIC:
        raise DomainError("bad magic in binary path")
    steps, channels = struct.unpack("<II", data[8:16])
    values = np.frombuffer(data[16:], dtype="<f8").reshape(steps + 1, channels)
    return from_values(values.copy())
