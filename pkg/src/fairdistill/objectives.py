"""Training objectives: cross-entropy, MFD and its ablations, HKD, FitNet.

All objectives take a batch, student parameters (tensors) and, where
needed, teacher parameters. Teacher outputs are always computed as
constants, so no gradient ever reaches the teacher.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import tensor as tg
from .errors import ConfigurationError, ParameterError
from .kernels import GroupedFeatures, MmdConfig, mfd_regularizer, mmd2_biased, term_bandwidth
from .model import mlp_forward

CE = "CE"
MFD = "MFD"
MFD_K = "MFD_K"
MFD_F = "MFD_F"
HKD = "HKD"
FITNET = "FITNET"
METHODS = (CE, MFD, MFD_K, MFD_F, HKD, FITNET)
TEACHER_METHODS = frozenset({MFD, MFD_K, HKD, FITNET})


@dataclass(frozen=True)
class ObjectiveConfig:
    method: str = CE
    lam: float = 0.0
    temperature: float = 1.0
    kd_weight: float = 0.5
    feature_weight: float = 1.0
    mmd: MmdConfig = field(default_factory=MmdConfig)

    def __post_init__(self):
        method = self.method.upper().replace("-", "_")
        if method not in METHODS:
            raise ParameterError(f"unknown method {self.method!r}; choose from {METHODS}")
        object.__setattr__(self, "method", method)
        if self.lam < 0:
            raise ParameterError("lambda must be non-negative")
        if self.temperature < 1:
            raise ParameterError("temperature must be at least 1")
        if not 0 <= self.kd_weight <= 1:
            raise ParameterError("kd_weight must lie in [0, 1]")
        if self.feature_weight < 0:
            raise ParameterError("feature_weight must be non-negative")

    @property
    def needs_teacher(self) -> bool:
        return self.method in TEACHER_METHODS

    @property
    def tag(self) -> str:
        return self.method.replace("_", "-")

    def to_dict(self):
        return {"method": self.method, "lam": self.lam, "temperature": self.temperature,
                "kd_weight": self.kd_weight, "feature_weight": self.feature_weight,
                "mmd": self.mmd.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveConfig":
        d = dict(d)
        if "mmd" in d:
            d["mmd"] = MmdConfig(**d["mmd"])
        return cls(**d)

    def with_(self, **changes) -> "ObjectiveConfig":
        return replace(self, **changes)


class Batch(NamedTuple):
    X: np.ndarray
    y: np.ndarray
    a: np.ndarray


def _teacher_outputs(teacher_params, X):
    if teacher_params is None:
        raise ConfigurationError("this objective needs a teacher")
    feats, logits = mlp_forward(teacher_params, X)
    return feats.detach(), logits.detach()


def class_pools(features: np.ndarray, labels: np.ndarray) -> dict:
    return {int(y): features[labels == y] for y in np.unique(labels)}


def objective_ce(student_logits, labels) -> tg.Tensor:
    return tg.softmax_cross_entropy(student_logits, labels)


def objective_mfd(batch: Batch, teacher_params, student_params, config: ObjectiveConfig):
    """CE + (λ/2)·Σ_y Σ_a MMD²(teacher class-y pool, student (a, y) cell)."""
    feats, logits = mlp_forward(student_params, batch.X)
    loss = objective_ce(logits, batch.y)
    if config.lam == 0:
        return loss
    t_feats, _ = _teacher_outputs(teacher_params, batch.X)
    pools = class_pools(t_feats.data, batch.y)
    cells = GroupedFeatures.partition(feats, batch.y, batch.a)
    return loss + mfd_regularizer(pools, cells, config.mmd) * (config.lam / 2.0)


def objective_mfd_k(batch: Batch, teacher_params, student_params, config: ObjectiveConfig):
    """CE + (λ/2)·MMD²(all teacher features, all student features)."""
    feats, logits = mlp_forward(student_params, batch.X)
    loss = objective_ce(logits, batch.y)
    if config.lam == 0:
        return loss
    t_feats, _ = _teacher_outputs(teacher_params, batch.X)
    sigma2 = term_bandwidth(config.mmd, t_feats.data, feats.data)
    return loss + mmd2_biased(t_feats, feats, sigma2) * (config.lam / 2.0)


def objective_mfd_f(batch: Batch, student_params, config: ObjectiveConfig,
                    frozen_pools=None):
    """CE + (λ/2)·Σ_y Σ_a MMD²(student class-y pool, student (a, y) cell).

    The class pool is a constant; gradients come only from the cell side.
    ``frozen_pools`` substitutes fixed pools, which turns the stop-gradient
    into an ordinary function for finite-difference checks.
    """
    feats, logits = mlp_forward(student_params, batch.X)
    loss = objective_ce(logits, batch.y)
    if config.lam == 0:
        return loss
    pools = frozen_pools if frozen_pools is not None else class_pools(feats.data.copy(), batch.y)
    cells = GroupedFeatures.partition(feats, batch.y, batch.a)
    return loss + mfd_regularizer(pools, cells, config.mmd) * (config.lam / 2.0)


def kl_soft_targets(teacher_logits, student_logits, temperature: float) -> tg.Tensor:
    """Batch mean of KL(softmax(t/T) ‖ softmax(s/T)) with the teacher side constant."""
    t = np.asarray(teacher_logits.data if isinstance(teacher_logits, tg.Tensor)
                   else teacher_logits, dtype=np.float64) / temperature
    log_pt = tg.log_softmax(t).data
    p_t = np.exp(log_pt)
    log_ps = tg.log_softmax(tg.as_tensor(student_logits) * (1.0 / temperature))
    n = len(t)
    entropy_term = float((p_t * log_pt).sum()) / n
    return (log_ps * p_t).sum() * (-1.0 / n) + entropy_term


def objective_hkd(batch: Batch, teacher_params, student_params, config: ObjectiveConfig,
                  _outputs=None):
    """(1 − α)·CE + α·T²·KL(softened teacher ‖ softened student)."""
    feats, logits = _outputs or mlp_forward(student_params, batch.X)
    ce = objective_ce(logits, batch.y)
    alpha, temp = config.kd_weight, config.temperature
    if alpha == 0:
        return ce
    _, t_logits = _teacher_outputs(teacher_params, batch.X)
    kl = kl_soft_targets(t_logits, logits, temp)
    return ce * (1.0 - alpha) + kl * (alpha * temp * temp)


def feature_l2(teacher_features, student_features) -> tg.Tensor:
    """(1/N)·Σ_i ‖f_t(x_i) − f_s(x_i)‖²."""
    t = tg.as_tensor(teacher_features)
    s = tg.as_tensor(student_features)
    if t.shape[1] != s.shape[1]:
        raise ConfigurationError(
            f"teacher/student feature widths differ: {t.shape[1]} vs {s.shape[1]}")
    diff = s - t
    return (diff * diff).sum() * (1.0 / len(s))


def objective_fitnet(batch: Batch, teacher_params, student_params, config: ObjectiveConfig):
    """One-stage FitNet: HKD loss plus squared-L2 penultimate feature matching."""
    feats, logits = mlp_forward(student_params, batch.X)
    loss = objective_hkd(batch, teacher_params, student_params, config, _outputs=(feats, logits))
    if config.feature_weight == 0:
        return loss
    t_feats, _ = _teacher_outputs(teacher_params, batch.X)
    return loss + feature_l2(t_feats, feats) * config.feature_weight


def objective_loss(config: ObjectiveConfig, batch: Batch, student_params: Sequence,
                   teacher_params: Optional[Sequence] = None) -> tg.Tensor:
    """Dispatch on ``config.method``."""
    if config.needs_teacher and teacher_params is None:
        raise ConfigurationError(f"{config.tag} needs a teacher")
    if config.method == CE:
        _, logits = mlp_forward(student_params, batch.X)
        return objective_ce(logits, batch.y)
    if config.method == MFD:
        return objective_mfd(batch, teacher_params, student_params, config)
    if config.method == MFD_K:
        return objective_mfd_k(batch, teacher_params, student_params, config)
    if config.method == MFD_F:
        return objective_mfd_f(batch, student_params, config)
    if config.method == HKD:
        return objective_hkd(batch, teacher_params, student_params, config)
    return objective_fitnet(batch, teacher_params, student_params, config)
