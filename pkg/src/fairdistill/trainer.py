"""Training loop: Adam, plateau learning-rate decay, evaluation, multi-seed runs."""

from __future__ import annotations

import csv
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from . import tensor as tg
from .data import LabeledDataset, plain_batches, stratified_batches
from .errors import ConfigurationError, ParameterError, TrainingError
from .fairness import DeoReport, deo_report
from .model import MlpSpec, ModelCheckpoint, init_params, predict_logits
from .objectives import Batch, ObjectiveConfig, objective_loss

log = logging.getLogger(__name__)

PLAIN = "plain"
STRATIFIED = "stratified"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr: float = 1e-3
    plateau_patience: int = 10
    decay_factor: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    sampler: str = PLAIN
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ParameterError("epochs must be at least 1")
        if self.lr < 0:
            raise ParameterError("lr must be non-negative")
        if not self.decay_factor > 1:
            raise ParameterError("decay_factor must exceed 1")
        if self.batch_size < 1 or self.plateau_patience < 1:
            raise ParameterError("batch_size and plateau_patience must be positive")
        if self.sampler not in (PLAIN, STRATIFIED):
            raise ParameterError(f"sampler must be {PLAIN!r} or {STRATIFIED!r}")

    def to_dict(self):
        d = asdict(self)
        d["objective"] = self.objective.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "objective" in d:
            d["objective"] = ObjectiveConfig.from_dict(d["objective"])
        return cls(**d)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class PlateauSchedule:
    """Divide the learning rate when the monitored loss stops decreasing.

    Any strict decrease counts as improvement. After ``patience``
    consecutive epochs without one, the rate is divided by ``factor`` and
    the counter restarts.
    """

    def __init__(self, lr: float, patience: int = 10, factor: float = 10.0):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.bad_epochs = 0
        self.n_decays = 0

    def step(self, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr /= self.factor
            self.n_decays += 1
            self.bad_epochs = 0
            return True
        return False


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_loss: float
    test_acc: float
    deo_a: float
    deo_m: float
    lr: float


HISTORY_COLUMNS = ("epoch", "train_loss", "test_loss", "test_acc", "deo_a", "deo_m", "lr")


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord):
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(HISTORY_COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])


def _test_metrics(params, testset: LabeledDataset):
    logits = predict_logits(params, testset.X)
    loss = tg.softmax_cross_entropy(logits, testset.y).item()
    report = deo_report(logits.argmax(axis=1), testset.y, testset.a,
                        testset.n_classes, testset.n_groups)
    return loss, report


def train(dataset: LabeledDataset, testset: LabeledDataset, spec: MlpSpec, config: TrainConfig,
          teacher: Optional[ModelCheckpoint] = None, metadata: Optional[dict] = None):
    """Train a student from scratch; returns ``(checkpoint, history)``.

    The checkpoint holds the final-epoch weights. With ``lr = 0`` the
    parameters never move.
    """
    objective = config.objective
    if objective.needs_teacher and teacher is None:
        raise ConfigurationError(f"method {objective.tag} needs a teacher checkpoint")
    if not objective.needs_teacher and teacher is not None:
        raise ConfigurationError(f"method {objective.tag} does not use a teacher")
    if teacher is not None and teacher.spec != spec:
        raise ConfigurationError("teacher and student must share one architecture")
    if dataset.dim != spec.d_in or testset.dim != spec.d_in:
        raise ConfigurationError("dataset dimension does not match the model input")

    params = init_params(spec, config.seed)
    teacher_params = teacher.float_params() if teacher is not None else None
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.adam_eps)
    schedule = PlateauSchedule(config.lr, config.plateau_patience, config.decay_factor)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(config.seed), 11])))
    history = TrainHistory()

    for epoch in range(1, config.epochs + 1):
        if config.sampler == STRATIFIED:
            batches = stratified_batches(dataset, config.batch_size, rng)
        else:
            batches = plain_batches(len(dataset), config.batch_size, rng)
        opt.lr = schedule.lr
        losses = []
        for step, idx in enumerate(batches):
            batch = Batch(dataset.X[idx], dataset.y[idx], dataset.a[idx])
            leaves = [tg.Tensor(p, requires_grad=True) for p in params]
            loss = objective_loss(objective, batch, leaves, teacher_params)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError("non-finite training loss", epoch=epoch, step=step)
            opt.step(tg.backward_pass(loss, leaves))
            losses.append(value)
        test_loss, report = _test_metrics(params, testset)
        history.append(EpochRecord(epoch, float(np.mean(losses)), test_loss, report.overall_acc,
                                   report.deo_a, report.deo_m, schedule.lr))
        if schedule.step(test_loss):
            log.info("epoch %d: lr decayed to %g", epoch, schedule.lr)

    meta = {"seed": config.seed, "method": objective.tag, "lambda": objective.lam,
            "epoch": config.epochs}
    meta.update(metadata or {})
    return ModelCheckpoint(spec, params, meta), history


def evaluate(checkpoint: Union[ModelCheckpoint, Sequence[np.ndarray]], testset: LabeledDataset):
    """Argmax predictions on ``testset``; returns ``(overall accuracy, DeoReport)``."""
    params = checkpoint.float_params() if isinstance(checkpoint, ModelCheckpoint) else checkpoint
    preds = predict_logits(params, testset.X).argmax(axis=1)
    report = deo_report(preds, testset.y, testset.a, testset.n_classes, testset.n_groups)
    return report.overall_acc, report


@dataclass
class SeedSummary:
    """Per-seed metrics plus mean and sample standard deviation."""

    seeds: List[int]
    reports: List[DeoReport]
    checkpoints: List[ModelCheckpoint] = field(default_factory=list, repr=False)

    def values(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports])

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name)))

    def std(self, name: str) -> float:
        v = self.values(name)
        return float(statistics.stdev(v.tolist())) if len(v) > 1 else 0.0

    def summary(self) -> dict:
        out = {"n_seeds": len(self.seeds)}
        for name, key in (("overall_acc", "acc"), ("deo_a", "deo_a"), ("deo_m", "deo_m")):
            out[f"{key}_mean"] = self.mean(name)
            out[f"{key}_std"] = self.std(name)
        return out


TeacherSource = Union[None, ModelCheckpoint, Sequence[ModelCheckpoint],
                      Callable[[int], ModelCheckpoint]]


def _teacher_for(teachers: TeacherSource, i: int, seed: int):
    if teachers is None or isinstance(teachers, ModelCheckpoint):
        return teachers
    if callable(teachers):
        return teachers(seed)
    return teachers[i]


def multi_seed_run(dataset: LabeledDataset, testset: LabeledDataset, spec: MlpSpec,
                   config: TrainConfig, k_seeds: int = 4, teachers: TeacherSource = None,
                   seeds: Optional[Sequence[int]] = None) -> SeedSummary:
    """Train with seeds ``config.seed + 0..k-1`` (or ``seeds``) and summarise."""
    if seeds is None:
        if k_seeds < 2:
            raise ParameterError("k_seeds must be at least 2")
        seeds = [config.seed + i for i in range(k_seeds)]
    reports, ckpts = [], []
    for i, seed in enumerate(seeds):
        ckpt, _ = train(dataset, testset, spec, config.with_(seed=seed),
                        _teacher_for(teachers, i, seed))
        reports.append(evaluate(ckpt, testset)[1])
        ckpts.append(ckpt)
    return SeedSummary(list(seeds), reports, ckpts)
