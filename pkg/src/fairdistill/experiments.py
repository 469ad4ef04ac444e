"""Experiment configuration and the two end-to-end pipelines.

* :func:`run_comparison` trains CE teachers, tunes the MFD weight over a
  grid, then trains the MFD-K / MFD-F ablations (and optional baselines) on
  the same data, one teacher per training seed.
* :func:`run_skew_sweep` trains teachers at several training skews and
  distils an MFD student from each on data fixed at the student skew.

Every random draw derives from ``ExperimentConfig.seed``: it seeds the data
generator, and training seed ``i`` is ``seed + i``.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import spearmanr

from .data import LabeledDataset, SynthConfig, generate_skewed, make_balanced_test
from .errors import ConfigurationError, ParameterError
from .kernels import MmdConfig
from .model import MlpSpec
from .objectives import CE, FITNET, HKD, MFD, MFD_F, MFD_K, ObjectiveConfig
from .report import ComparisonTable, ResultRow
from .trainer import PLAIN, STRATIFIED, SeedSummary, TrainConfig, multi_seed_run

log = logging.getLogger(__name__)

BASELINES = ("HKD", "FITNET", "SS")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    n_test_per_class: int = 500
    hidden: Tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)
    mmd: MmdConfig = field(default_factory=MmdConfig)
    k_seeds: int = 4
    lambdas: Tuple[float, ...] = (1.0, 3.0, 10.0)
    acc_tolerance: float = 0.01
    baselines: Tuple[str, ...] = ()
    temperature: float = 4.0
    kd_weight: float = 0.5
    skews: Tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9, 0.95)
    student_skew: float = 0.8
    sweep_lambda: float = 3.0

    def __post_init__(self):
        if self.k_seeds < 2:
            raise ParameterError("k_seeds must be at least 2")
        if not self.lambdas or min(self.lambdas) < 0:
            raise ParameterError("lambdas must be a non-empty list of non-negative values")
        for s in tuple(self.skews) + (self.student_skew,):
            if not 0.5 <= s <= 1.0:
                raise ParameterError(f"skew {s} outside [0.5, 1.0]")
        bad = set(b.upper() for b in self.baselines) - set(BASELINES)
        if bad:
            raise ParameterError(f"unknown baselines {sorted(bad)}; choose from {BASELINES}")
        # the root seed drives the data generator
        object.__setattr__(self, "synth", replace(self.synth, seed=self.seed))
        object.__setattr__(self, "train", replace(self.train, seed=self.seed))
        for name in ("hidden", "lambdas", "skews", "baselines"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def spec(self) -> MlpSpec:
        return MlpSpec((self.synth.dim,) + self.hidden + (self.synth.n_classes,))

    def objective(self, method: str, lam: float = 0.0) -> ObjectiveConfig:
        return ObjectiveConfig(method, lam=lam, temperature=self.temperature,
                               kd_weight=self.kd_weight, mmd=self.mmd)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["synth"] = {k: v for k, v in asdict(self.synth).items() if k != "seed"}
        d["train"] = {k: v for k, v in self.train.to_dict().items() if k not in ("objective", "seed")}
        d["mmd"] = self.mmd.to_dict()
        for k in ("hidden", "lambdas", "skews", "baselines"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Strict parse: unknown keys at any level raise ``ConfigurationError``."""
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        d = dict(d)
        _reject_unknown(d, {f.name for f in fields(cls)}, "config")
        try:
            if "synth" in d:
                _reject_unknown(d["synth"], {f.name for f in fields(SynthConfig)} - {"seed"}, "synth")
                d["synth"] = SynthConfig(**d["synth"])
            if "train" in d:
                allowed = {f.name for f in fields(TrainConfig)} - {"objective", "seed"}
                _reject_unknown(d["train"], allowed, "train")
                d["train"] = TrainConfig(**d["train"])
            if "mmd" in d:
                _reject_unknown(d["mmd"], {f.name for f in fields(MmdConfig)}, "mmd")
                d["mmd"] = MmdConfig(**d["mmd"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def make_data(cfg: ExperimentConfig, skew: Optional[float] = None
              ) -> Tuple[LabeledDataset, LabeledDataset]:
    synth = cfg.synth if skew is None else replace(cfg.synth, skew=skew)
    return generate_skewed(synth), make_balanced_test(synth, cfg.n_test_per_class)


def _num(v) -> str:
    return repr(float(v))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- comparison pipeline -------------------------------------------------------


@dataclass
class ComparisonResult:
    seed: int
    summaries: Dict[str, SeedSummary]
    lam_grid: Dict[float, SeedSummary]
    chosen_lambda: float

    def rows(self) -> List[ResultRow]:
        return [ResultRow.from_summary(tag, s.summary()) for tag, s in self.summaries.items()]

    def table(self) -> ComparisonTable:
        return ComparisonTable.build(self.rows())


def select_lambda(grid: Dict[float, SeedSummary], teacher: SeedSummary, acc_tolerance: float) -> float:
    """Smallest mean DEO_M among weights whose accuracy stays within tolerance.

    Falls back to the most accurate weight when none qualifies; ties go to
    the smaller weight.
    """
    floor = teacher.mean("overall_acc") - acc_tolerance
    ok = [lam for lam in sorted(grid) if grid[lam].mean("overall_acc") >= floor]
    if ok:
        return min(ok, key=lambda lam: (grid[lam].mean("deo_m"), lam))
    return max(sorted(grid), key=lambda lam: grid[lam].mean("overall_acc"))


def run_comparison(cfg: ExperimentConfig, out_dir=None, figures: bool = True) -> ComparisonResult:
    train_set, test_set = make_data(cfg)
    spec = cfg.spec
    base = cfg.train
    k = cfg.k_seeds

    def run(method, lam=0.0, sampler=PLAIN, teachers=None):
        tc = base.with_(objective=cfg.objective(method, lam), sampler=sampler)
        log.info("training %s (lambda=%g, sampler=%s) x%d", method, lam, sampler, k)
        return multi_seed_run(train_set, test_set, spec, tc, k, teachers)

    teacher = run(CE)
    teachers = teacher.checkpoints
    summaries = {"teacher": teacher}
    grid = {lam: run(MFD, lam, STRATIFIED, teachers) for lam in cfg.lambdas}
    lam = select_lambda(grid, teacher, cfg.acc_tolerance)
    summaries["MFD"] = grid[lam]
    summaries["MFD-K"] = run(MFD_K, lam, PLAIN, teachers)
    summaries["MFD-F"] = run(MFD_F, lam, STRATIFIED)
    for b in (b.upper() for b in cfg.baselines):
        if b == "SS":
            summaries["SS"] = run(CE, 0.0, STRATIFIED)
        elif b == "HKD":
            summaries["HKD"] = run(HKD, 0.0, PLAIN, teachers)
        elif b == "FITNET":
            summaries["FitNet"] = run(FITNET, 0.0, PLAIN, teachers)

    result = ComparisonResult(cfg.seed, summaries, grid, lam)
    if out_dir is not None:
        write_comparison(result, cfg, out_dir, figures)
    return result


def write_comparison(result: ComparisonResult, cfg: ExperimentConfig, out_dir, figures=True):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for tag, s in result.summaries.items():
        for seed, r in zip(s.seeds, s.reports):
            rows.append([tag, seed, _num(r.overall_acc), _num(r.deo_a), _num(r.deo_m)])
    for lam, s in sorted(result.lam_grid.items()):
        for seed, r in zip(s.seeds, s.reports):
            rows.append([f"MFD[lambda={lam:g}]", seed, _num(r.overall_acc), _num(r.deo_a), _num(r.deo_m)])
    _write_csv(out / "metrics.csv", ["method", "seed", "acc", "deo_a", "deo_m"], rows)

    summary_rows = []
    for tag, s in result.summaries.items():
        sm = s.summary()
        summary_rows.append([tag, sm["n_seeds"]] + [_num(sm[f"{m}_{x}"]) for m in ("acc", "deo_a", "deo_m")
                                                     for x in ("mean", "std")])
    _write_csv(out / "summary.csv", ["method", "n_seeds", "acc_mean", "acc_std", "deo_a_mean",
                                     "deo_a_std", "deo_m_mean", "deo_m_std"], summary_rows)
    _write_json(out / "results.json", {
        "root_seed": cfg.seed,
        "config": cfg.to_dict(),
        "chosen_lambda": result.chosen_lambda,
        "lambda_grid": {f"{lam:g}": s.summary() for lam, s in sorted(result.lam_grid.items())},
        "rows": [dict(method=tag, **s.summary()) for tag, s in result.summaries.items()],
    })
    table = result.table()
    (out / "report.txt").write_text(f"# root seed {cfg.seed}\n" + table.to_text(), encoding="utf-8")
    table.to_csv(out / "report.csv")
    if figures:
        from .plotting import plot_method_bars
        plot_method_bars([table.teacher] + table.rows, out / "methods.png")


# -- skew sweep ---------------------------------------------------------------


SWEEP_COLUMNS = ("root_seed", "skew", "model", "seed", "acc", "deo_a", "deo_m")


@dataclass
class SweepResult:
    seed: int
    records: List[dict]

    def mean_by_skew(self, model: str, metric: str = "deo_m") -> Tuple[np.ndarray, np.ndarray]:
        skews = sorted({r["skew"] for r in self.records if r["model"] == model})
        means = [np.mean([r[metric] for r in self.records if r["model"] == model and r["skew"] == s])
                 for s in skews]
        return np.array(skews), np.array(means)

    def stats(self) -> dict:
        ts, tm = self.mean_by_skew("teacher")
        ss, sm = self.mean_by_skew("student")
        rho = float(spearmanr(ts, tm)[0]) if len(ts) > 1 else float("nan")
        t_range = float(tm.max() - tm.min())
        s_range = float(sm.max() - sm.min())
        return {"teacher_spearman": rho, "teacher_deo_m_range": t_range,
                "student_deo_m_range": s_range,
                "range_ratio": s_range / t_range if t_range > 0 else float("inf"),
                "teacher_deo_m_by_skew": dict(zip(map(str, ts), map(float, tm))),
                "student_deo_m_by_skew": dict(zip(map(str, ss), map(float, sm)))}


def run_skew_sweep(cfg: ExperimentConfig, out_dir=None, figures: bool = True) -> SweepResult:
    spec = cfg.spec
    k = cfg.k_seeds
    student_train, test_set = make_data(cfg, cfg.student_skew)
    teacher_cfg = cfg.train.with_(objective=cfg.objective(CE), sampler=PLAIN)
    student_cfg = cfg.train.with_(objective=cfg.objective(MFD, cfg.sweep_lambda), sampler=STRATIFIED)
    records = []
    for rho in cfg.skews:
        teacher_train, _ = make_data(cfg, rho)
        log.info("sweep: skew %g", rho)
        teachers = multi_seed_run(teacher_train, test_set, spec, teacher_cfg, k)
        students = multi_seed_run(student_train, test_set, spec, student_cfg, k, teachers.checkpoints)
        for model, summ in (("teacher", teachers), ("student", students)):
            for seed, r in zip(summ.seeds, summ.reports):
                records.append({"root_seed": cfg.seed, "skew": float(rho), "model": model, "seed": seed,
                                "acc": r.overall_acc, "deo_a": r.deo_a, "deo_m": r.deo_m})
    result = SweepResult(cfg.seed, records)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "sweep.csv", SWEEP_COLUMNS,
                   [[r["root_seed"], _num(r["skew"]), r["model"], r["seed"], _num(r["acc"]),
                     _num(r["deo_a"]), _num(r["deo_m"])] for r in records])
        _write_json(out / "sweep_summary.json", dict(root_seed=cfg.seed, **result.stats()))
        if figures:
            from .plotting import plot_skew_sweep
            plot_skew_sweep(records, out / "sweep.png")
    return result
