"""Synthetic group-skewed classification data and mini-batch samplers.

The generator is a low-dimensional analogue of a colour/grayscale skewed
image benchmark. Every sample is drawn around its class mean; the group-0
("colour") rendering keeps the vector as is, while the group-1
("grayscale") rendering collapses it to its coordinate mean repeated ``d``
times plus a small fixed offset. Class means are laid out so most of the
class signal lies along the all-ones direction, which the collapse keeps,
and a smaller "chroma" part lies orthogonal to it, which the collapse
discards.

Randomness: numpy ``default_rng`` (PCG64) seeded through
``SeedSequence([seed, stream])`` with stream 0 for geometry, 1 for the
training split and 2 for the test split.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Union

import numpy as np

from .errors import ConfigurationError, FormatError, ParameterError

N_GROUPS = 2

_MAGIC = b"FDDS"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIIQQd")  # magic, version, M, |A|, d, N, seed, skew


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


@dataclass(frozen=True)
class SynthConfig:
    n_classes: int = 4
    dim: int = 20
    n_per_class: int = 2000
    skew: float = 0.8
    class_sep: float = 3.0
    noise_std: float = 1.0
    seed: int = 0
    chroma: float = 0.3
    offset_norm: float = 0.1

    def __post_init__(self):
        if self.n_classes < 2 or self.n_classes % 2:
            raise ParameterError("n_classes must be even and at least 2")
        if self.dim < 2:
            raise ParameterError("dim must be at least 2")
        if self.n_per_class < 1:
            raise ParameterError("n_per_class must be positive")
        if not 0.5 <= self.skew <= 1.0:
            raise ParameterError(f"skew must lie in [0.5, 1], got {self.skew}")
        if not (self.class_sep > 0 and self.noise_std > 0):
            raise ParameterError("class_sep and noise_std must be positive")
        if self.chroma < 0 or self.offset_norm < 0:
            raise ParameterError("chroma and offset_norm must be non-negative")
        if self.seed < 0:
            raise ParameterError("seed must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    a: np.ndarray
    n_classes: int
    n_groups: int = N_GROUPS
    seed: int = 0
    skew: float = 0.5

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.a = np.asarray(self.a, dtype=np.int64)
        if self.X.ndim != 2 or not len(self.X) == len(self.y) == len(self.a):
            raise ParameterError("X, y and a must describe the same number of rows")

    def __len__(self):
        return len(self.y)

    @property
    def dim(self):
        return self.X.shape[1]

    def counts(self) -> np.ndarray:
        """|A|×M matrix of sample counts per (group, class)."""
        out = np.zeros((self.n_groups, self.n_classes), dtype=np.int64)
        np.add.at(out, (self.a, self.y), 1)
        return out

    def subset(self, index) -> "LabeledDataset":
        return LabeledDataset(self.X[index], self.y[index], self.a[index], self.n_classes,
                              self.n_groups, self.seed, self.skew)

    # -- serialization --------------------------------------------------

    def _row_dtype(self):
        return np.dtype([("x", "<f8", (self.dim,)), ("y", "<i4"), ("a", "<i4")])

    def save(self, path) -> None:
        rows = np.empty(len(self), dtype=self._row_dtype())
        rows["x"] = self.X
        rows["y"] = self.y
        rows["a"] = self.a
        header = _HEADER.pack(_MAGIC, _VERSION, self.n_classes, self.n_groups, self.dim,
                              len(self), self.seed, self.skew)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(rows.tobytes())

    @classmethod
    def load(cls, path) -> "LabeledDataset":
        raw = Path(path).read_bytes()
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, m, n_groups, d, n, seed, skew = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise FormatError(f"{path}: not a dataset file")
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported dataset version {version}")
        dtype = np.dtype([("x", "<f8", (d,)), ("y", "<i4"), ("a", "<i4")])
        if len(raw) != _HEADER.size + n * dtype.itemsize:
            raise FormatError(f"{path}: payload size does not match header")
        rows = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size, count=n)
        return cls(rows["x"].copy(), rows["y"].astype(np.int64), rows["a"].astype(np.int64),
                   int(m), int(n_groups), int(seed), float(skew))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"f{k}" for k in range(self.dim)] + ["y", "a"])
            for x, y, a in zip(self.X, self.y, self.a):
                writer.writerow([repr(float(v)) for v in x] + [int(y), int(a)])


# -- generation -----------------------------------------------------------


def class_geometry(config: SynthConfig):
    """Class means (M×d) and the group-1 offset vector.

    Means sit on evenly spaced luminance levels (spacing ``class_sep``,
    randomly permuted across classes) plus an orthogonal chroma part of
    norm ``chroma * class_sep``; pairwise distances are therefore at least
    ``class_sep``.
    """
    rng = _rng(config.seed, 0)
    m, d = config.n_classes, config.dim
    ones = np.full(d, 1.0 / math.sqrt(d))
    levels = config.class_sep * (np.arange(m) - (m - 1) / 2.0)
    levels = levels[rng.permutation(m)]
    chroma = rng.standard_normal((m, d))
    chroma -= np.outer(chroma @ ones, ones)
    chroma *= (config.chroma * config.class_sep) / np.linalg.norm(chroma, axis=1, keepdims=True)
    means = np.outer(levels, ones) + chroma
    offset = rng.standard_normal(d)
    offset *= config.offset_norm / np.linalg.norm(offset)
    return means, offset


def render(x: np.ndarray, group: int, offset: np.ndarray) -> np.ndarray:
    """Group rendering of base samples (rows of ``x``)."""
    if group == 0:
        return x.copy()
    return np.repeat(x.mean(axis=1, keepdims=True), x.shape[1], axis=1) + offset


def majority_group(y: int, n_classes: int) -> int:
    return 1 if y < n_classes // 2 else 0


def generate_skewed(config: SynthConfig) -> LabeledDataset:
    """Training split with exactly ⌊skew·n⌋ majority-group samples per class."""
    means, offset = class_geometry(config)
    rng = _rng(config.seed, 1)
    n = config.n_per_class
    n_major = int(math.floor(config.skew * n + 1e-9))
    xs, ys, groups = [], [], []
    for y in range(config.n_classes):
        base = means[y] + config.noise_std * rng.standard_normal((n, config.dim))
        major = majority_group(y, config.n_classes)
        a = np.where(np.arange(n) < n_major, major, 1 - major)
        rows = np.empty_like(base)
        for g in (0, 1):
            sel = a == g
            rows[sel] = render(base[sel], g, offset)
        xs.append(rows)
        ys.append(np.full(n, y))
        groups.append(a)
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(groups),
                          config.n_classes, N_GROUPS, config.seed, config.skew)


def make_balanced_test(config: SynthConfig, n_test_per_class: int) -> LabeledDataset:
    """Balanced test split: each base sample appears once per group, adjacently."""
    if n_test_per_class < 1:
        raise ParameterError("n_test_per_class must be positive")
    means, offset = class_geometry(config)
    rng = _rng(config.seed, 2)
    d = config.dim
    xs, ys, groups = [], [], []
    for y in range(config.n_classes):
        base = means[y] + config.noise_std * rng.standard_normal((n_test_per_class, d))
        pair = np.empty((2 * n_test_per_class, d))
        pair[0::2] = render(base, 0, offset)
        pair[1::2] = render(base, 1, offset)
        xs.append(pair)
        ys.append(np.full(2 * n_test_per_class, y))
        groups.append(np.tile([0, 1], n_test_per_class))
    return LabeledDataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(groups),
                          config.n_classes, N_GROUPS, config.seed, 0.5)


# -- samplers -------------------------------------------------------------


def pair_quotas(n_groups: int, n_classes: int, batch_size: int) -> dict:
    """Per-(a, y) counts for one stratified batch.

    Every pair gets ⌊B / (|A|·M)⌋; the remainder goes one each to the first
    pairs in lexicographic (a, y) order.
    """
    keys = [(a, y) for a in range(n_groups) for y in range(n_classes)]
    base, extra = divmod(batch_size, len(keys))
    return {k: base + (1 if i < extra else 0) for i, k in enumerate(keys)}


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return _rng(seed, 3)


def stratified_batches(dataset: LabeledDataset, batch_size: int,
                       seed: Union[int, np.random.Generator]) -> List[np.ndarray]:
    """One epoch of ⌈N / B⌉ batches with equal per-pair quotas, with replacement."""
    if batch_size < 1:
        raise ParameterError("batch_size must be positive")
    rng = _as_rng(seed)
    pools = {}
    for a in range(dataset.n_groups):
        for y in range(dataset.n_classes):
            idx = np.flatnonzero((dataset.a == a) & (dataset.y == y))
            if idx.size == 0:
                raise ConfigurationError(f"no samples for group {a}, class {y}")
            pools[(a, y)] = idx
    quotas = pair_quotas(dataset.n_groups, dataset.n_classes, batch_size)
    n_batches = -(-len(dataset) // batch_size)
    batches = []
    for _ in range(n_batches):
        parts = [pools[k][rng.integers(0, len(pools[k]), size=q)] for k, q in quotas.items() if q]
        batches.append(np.concatenate(parts))
    return batches


def plain_batches(n: int, batch_size: int,
                  seed: Union[int, np.random.Generator]) -> List[np.ndarray]:
    """Shuffled epoch without replacement; the last batch may be short."""
    rng = _as_rng(seed)
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]

