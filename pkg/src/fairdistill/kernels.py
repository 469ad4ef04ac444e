"""Gaussian RBF kernels, bandwidth selection and squared-MMD losses."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Hashable, Mapping, Optional, Tuple

import numpy as np

from . import tensor as tg
from .errors import ConfigurationError, DomainError, ParameterError, ShapeError
from .tensor import Tensor

PER_PAIR = "per_pair_mean_sqdist"
FIXED = "fixed_global"


@dataclass(frozen=True)
class MmdConfig:
    """How the RBF bandwidth σ² is chosen for each MMD term.

    ``per_pair_mean_sqdist`` recomputes σ² from the two samples of every term
    on every call; ``fixed_global`` uses ``sigma2`` everywhere, which puts all
    terms in one RKHS.
    """

    bandwidth_mode: str = PER_PAIR
    sigma2: Optional[float] = None
    sigma_floor: float = 1e-6

    def __post_init__(self):
        if self.bandwidth_mode not in (PER_PAIR, FIXED):
            raise ParameterError(f"unknown bandwidth_mode {self.bandwidth_mode!r}")
        if not self.sigma_floor > 0:
            raise ParameterError("sigma_floor must be positive")
        if self.bandwidth_mode == FIXED and not (self.sigma2 is not None and self.sigma2 > 0):
            raise ParameterError("fixed_global bandwidth needs sigma2 > 0")

    @classmethod
    def fixed(cls, sigma2: float) -> "MmdConfig":
        return cls(bandwidth_mode=FIXED, sigma2=float(sigma2))

    def to_dict(self):
        return {"bandwidth_mode": self.bandwidth_mode, "sigma2": self.sigma2,
                "sigma_floor": self.sigma_floor}


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=tg.DTYPE)


def rbf_kernel_matrix(x, y, sigma2: float) -> Tensor:
    """``exp(-‖x_i − y_j‖² / (2σ²))`` for all row pairs."""
    if not sigma2 > 0:
        raise ParameterError(f"sigma2 must be positive, got {sigma2}")
    return tg.exp(tg.pairwise_sqdist(x, y) * (-0.5 / sigma2))


def bandwidth_mean_sqdist(x, y, sigma_floor: float = 1e-6) -> float:
    """Mean squared distance over distinct pairs of the pooled sample.

    Operates on values only; the result is a constant for differentiation.
    """
    z = np.concatenate([_values(x), _values(y)], axis=0)
    n = len(z)
    if n < 2:
        return sigma_floor
    sq = (z * z).sum(axis=1)
    # sum_{i,j} ‖z_i − z_j‖² = 2n Σ‖z_i‖² − 2‖Σ z_i‖²
    total = 2.0 * n * sq.sum() - 2.0 * np.dot(z.sum(axis=0), z.sum(axis=0))
    value = total / (n * (n - 1))
    return float(value) if value >= sigma_floor else sigma_floor


def mmd2_biased(x, y, sigma2: float) -> Tensor:
    """Biased (V-statistic) squared MMD, self-pairs included.

    Equals ``‖mean φ(x) − mean φ(y)‖²`` in the RKHS of the RBF kernel.
    """
    x, y = tg.as_tensor(x), tg.as_tensor(y)
    if len(x) < 1 or len(y) < 1:
        raise DomainError("mmd2_biased needs non-empty samples")
    if x.shape[1] != y.shape[1]:
        raise ShapeError(f"feature dims differ: {x.shape[1]} vs {y.shape[1]}")
    kxx = rbf_kernel_matrix(x, x, sigma2).mean()
    kyy = rbf_kernel_matrix(y, y, sigma2).mean()
    kxy = rbf_kernel_matrix(x, y, sigma2).mean()
    return kxx + kyy - kxy * 2.0


def term_bandwidth(config: MmdConfig, x, y) -> float:
    if config.bandwidth_mode == FIXED:
        return config.sigma2
    return bandwidth_mean_sqdist(x, y, config.sigma_floor)


class GroupedFeatures(Mapping):
    """Feature rows partitioned by ``(group, class)`` cell.

    Cells with no rows are simply absent.
    """

    def __init__(self, cells: Mapping[Tuple[int, int], object]):
        dims = set()
        self._cells: Dict[Tuple[int, int], Tensor] = {}
        for key, feats in sorted(cells.items()):
            feats = tg.as_tensor(feats)
            if feats.data.ndim != 2 or len(feats) < 1:
                raise ShapeError(f"cell {key} must be a non-empty N×d matrix")
            dims.add(feats.shape[1])
            self._cells[tuple(key)] = feats
        if len(dims) > 1:
            raise ShapeError(f"cells disagree on feature dimension: {sorted(dims)}")

    @classmethod
    def partition(cls, features, labels, groups) -> "GroupedFeatures":
        features = tg.as_tensor(features)
        labels = np.asarray(labels)
        groups = np.asarray(groups)
        cells = {}
        for a in np.unique(groups):
            for y in np.unique(labels):
                idx = np.flatnonzero((groups == a) & (labels == y))
                if idx.size:
                    cells[(int(a), int(y))] = tg.take_rows(features, idx)
        return cls(cells)

    def __getitem__(self, key):
        return self._cells[key]

    def __iter__(self):
        return iter(self._cells)

    def __len__(self):
        return len(self._cells)

    def classes(self):
        return sorted({y for _, y in self._cells})


def pair_bandwidths(teacher_pools: Mapping[Hashable, object], student: GroupedFeatures,
                    config: MmdConfig) -> Dict[Tuple[int, int], float]:
    """σ² used for each ``(a, y)`` term of :func:`mfd_regularizer`."""
    out = {}
    for (a, y), feats in student.items():
        if y not in teacher_pools:
            raise ConfigurationError(f"no teacher features for class {y}")
        out[(a, y)] = term_bandwidth(config, teacher_pools[y], feats)
    return out


def mfd_regularizer(teacher_pools: Mapping[Hashable, object], student: GroupedFeatures,
                    config: MmdConfig, bandwidths: Optional[Mapping] = None) -> Tensor:
    """Sum over present ``(a, y)`` cells of MMD²(teacher class-y pool, student cell).

    Teacher pools are used as constants. ``bandwidths`` overrides the
    per-term σ² (used to freeze them for finite-difference checks).
    """
    if bandwidths is None:
        bandwidths = pair_bandwidths(teacher_pools, student, config)
    total = Tensor(0.0)
    for (a, y), feats in student.items():
        if y not in teacher_pools:
            raise ConfigurationError(f"no teacher features for class {y}")
        pool = _values(teacher_pools[y])
        total = total + mmd2_biased(pool, feats, bandwidths[(a, y)])
    return total
