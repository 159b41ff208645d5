"""Synthetic area/volume prediction datasets.

Each sample path has iid standard-normal increments rounded to the nearest
integer, accumulated over 100 uniform steps and rescaled so every value of
every sample lies in [-1, 1].  The target is the level-2 area coefficient
(2 channels) or the level-3 volume coefficient (3 channels) of the
normalized path.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .paths import DomainError
from .signature import batch_signature, word_index

_MAGIC = b"SSMDATA1"


@dataclass(frozen=True)
class DatasetSpec:
    num_samples: int
    d: int
    num_steps: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise DomainError(f"channel count must be 2 or 3, got {self.d}")
        if self.num_samples < 1 or self.num_steps < 1:
            raise DomainError("sizes must be positive")

    @property
    def target_word(self):
        return tuple(range(1, self.d + 1))


@dataclass(frozen=True)
class Dataset:
    spec: DatasetSpec
    values: np.ndarray  # (n, L+1, d) normalized paths
    targets: np.ndarray  # (n,)
    int_increments: np.ndarray  # (n, L, d) pre-normalization integer steps
    scale: float  # values = scale * cumsum(int_increments)


def gen_dataset(spec: DatasetSpec) -> Dataset:
    rng = np.random.Generator(np.random.Philox(key=int(spec.seed)))
    raw = rng.normal(size=(spec.num_samples, spec.num_steps, spec.d))
    ints = np.rint(raw).astype(np.int64)
    walks = np.concatenate(
        [np.zeros((spec.num_samples, 1, spec.d)), np.cumsum(ints, axis=1)], axis=1
    )
    peak = np.max(np.abs(walks))
    # pure scaling (no shift) keeps the basepoint at the origin
    scale = 1.0 / peak if peak > 0 else 1.0
    values = walks * scale
    depth = spec.d
    sig = batch_signature(values, depth)
    targets = sig[:, word_index(spec.target_word, spec.d)]
    return Dataset(spec, values, targets, ints, scale)


def save_dataset(ds: Dataset, path: str) -> None:
    """Deterministic on-disk format: identical spec gives identical bytes."""
    meta = json.dumps(
        {
            "num_samples": ds.spec.num_samples,
            "d": ds.spec.d,
            "num_steps": ds.spec.num_steps,
            "seed": ds.spec.seed,
            "scale": ds.scale,
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)
        fh.write(ds.values.astype("<f8").tobytes())
        fh.write(ds.targets.astype("<f8").tobytes())
        fh.write(ds.int_increments.astype("<i8").tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise DomainError("bad magic in dataset file")
        (mlen,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(mlen))
        spec = DatasetSpec(
            num_samples=meta["num_samples"],
            d=meta["d"],
            num_steps=meta["num_steps"],
            seed=meta["seed"],
        )
        n, L, d = spec.num_samples, spec.num_steps, spec.d
        values = np.frombuffer(fh.read(8 * n * (L + 1) * d), dtype="<f8").reshape(
            n, L + 1, d
        )
        targets = np.frombuffer(fh.read(8 * n), dtype="<f8")
        ints = np.frombuffer(fh.read(8 * n * L * d), dtype="<i8").reshape(n, L, d)
    return Dataset(spec, values.copy(), targets.copy(), ints.copy(), meta["scale"])
