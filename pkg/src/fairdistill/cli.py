"""``fairdistill`` command line.

Every command reads an optional strict JSON config (``--config``), applies
flag overrides on top (flag > file > default) and writes its artifacts into
``--out``. Artifacts carry the root seed and are byte-identical across
reruns; wall-clock timestamps only go to the ``run.log`` sidecar.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .data import LabeledDataset
from .errors import ConfigurationError, FairDistillError
from .experiments import (ExperimentConfig, _write_json, make_data, run_comparison,
                          run_skew_sweep)
from .kernels import MmdConfig
from .model import ModelCheckpoint
from .objectives import CE, MFD, MFD_F, ObjectiveConfig
from .report import ComparisonTable, load_result_rows
from .trainer import PLAIN, STRATIFIED, evaluate, train

log = logging.getLogger("fairdistill")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _setup_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("fairdistill")
    root.handlers = [h for h in root.handlers if not isinstance(h, logging.FileHandler)]
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    log.info("command %s, argv %s", args.command, sys.argv[1:])
    return out


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


def _datasets(args, cfg):
    if getattr(args, "data", None):
        d = Path(args.data)
        return LabeledDataset.load(d / "train.fdds"), LabeledDataset.load(d / "test.fdds")
    return make_data(cfg)


def _default_sampler(method: str) -> str:
    return STRATIFIED if method in (MFD, MFD_F) else PLAIN


def _metrics_doc(cfg, ckpt, report, extra=None):
    doc = {"root_seed": cfg.seed, "checkpoint": ckpt.metadata}
    doc.update({k: v for k, v in report.to_record().items()})
    doc.update(extra or {})
    return doc


def _train_and_write(args, cfg, objective, sampler, name, teacher=None):
    out = _setup_out(args)
    train_set, test_set = _datasets(args, cfg)
    tc = cfg.train.with_(objective=objective, sampler=sampler)
    ckpt, history = train(train_set, test_set, cfg.spec, tc, teacher,
                          metadata={"root_seed": cfg.seed, "sampler": sampler})
    ckpt.save(out / f"{name}.ckpt")
    history.to_csv(out / "history.csv")
    acc, report = evaluate(ckpt, test_set)
    _write_json(out / "metrics.json", _metrics_doc(cfg, ckpt, report, {
        "method": "teacher" if name == "teacher" else objective.tag,
        "n_seeds": 1, "acc_mean": acc, "deo_a_mean": report.deo_a, "deo_m_mean": report.deo_m,
        "train_config": tc.to_dict()}))
    if not args.no_figures:
        from .plotting import plot_history
        plot_history(history, out / "history.png")
    print(f"{name}: {len(history)} epochs, acc={acc:.4f} deo_a={report.deo_a:.4f} "
          f"deo_m={report.deo_m:.4f} -> {out / (name + '.ckpt')}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = load_config(args)
    out = _setup_out(args)
    train_set, test_set = make_data(cfg)
    for name, ds in (("train", train_set), ("test", test_set)):
        ds.save(out / f"{name}.fdds")
        ds.to_csv(out / f"{name}.csv")
    counts = train_set.counts()
    _write_json(out / "dataset.json", {"root_seed": cfg.seed, "synth": cfg.to_dict()["synth"],
                                       "train_counts": counts.tolist(),
                                       "test_counts": test_set.counts().tolist()})
    print("train counts (rows: group, columns: class)")
    for a, row in enumerate(counts):
        print(f"  group {a}: " + " ".join(f"{int(c):6d}" for c in row))
    return EXIT_OK


def cmd_train_teacher(args) -> int:
    cfg = load_config(args)
    if args.method and ObjectiveConfig(args.method).method != CE:
        raise UsageError("train-teacher only supports method CE")
    return _train_and_write(args, cfg, cfg.objective(CE), PLAIN, "teacher")


def cmd_distill(args) -> int:
    cfg = load_config(args)
    method = args.method or MFD
    lam = args.lam if args.lam is not None else cfg.sweep_lambda
    objective = cfg.objective(method, lam)
    teacher = None
    if objective.needs_teacher:
        if not args.teacher:
            raise UsageError(f"method {objective.tag} needs --teacher")
        teacher = ModelCheckpoint.load(args.teacher)
    elif args.teacher:
        log.info("method %s ignores --teacher", objective.tag)
    sampler = args.sampler or _default_sampler(objective.method)
    return _train_and_write(args, cfg, objective, sampler, "student", teacher)


def cmd_eval(args) -> int:
    cfg = load_config(args)
    out = _setup_out(args)
    ckpt = ModelCheckpoint.load(args.checkpoint)
    _, test_set = _datasets(args, cfg)
    acc, report = evaluate(ckpt, test_set)
    doc = _metrics_doc(cfg, ckpt, report, {"method": ckpt.metadata.get("method", "model"),
                                           "acc_mean": acc, "deo_a_mean": report.deo_a,
                                           "deo_m_mean": report.deo_m, "n_seeds": 1})
    _write_json(out / "eval.json", doc)
    print(f"acc={acc:.4f} deo_a={report.deo_a:.4f} deo_m={report.deo_m:.4f}")
    return EXIT_OK


def cmd_sweep_skew(args) -> int:
    cfg = load_config(args)
    if args.skews:
        cfg = cfg.with_(skews=tuple(args.skews))
    if args.lam is not None:
        cfg = cfg.with_(sweep_lambda=args.lam)
    out = _setup_out(args)
    result = run_skew_sweep(cfg, out, figures=not args.no_figures)
    stats = result.stats()
    print(f"teacher DEO_M Spearman vs skew: {stats['teacher_spearman']:.3f}")
    print(f"DEO_M range teacher {stats['teacher_deo_m_range']:.4f}, "
          f"student {stats['student_deo_m_range']:.4f}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = load_config(args)
    if args.lam is not None:
        cfg = cfg.with_(lambdas=(args.lam,))
    out = _setup_out(args)
    result = run_comparison(cfg, out, figures=not args.no_figures)
    print((out / "report.txt").read_text(encoding="utf-8"), end="")
    print(f"selected lambda: {result.chosen_lambda:g}")
    return EXIT_OK


def _negated_exponent_kernel(sqdist, sigma2):
    import numpy as np
    return np.exp(sqdist / (2.0 * sigma2))


def cmd_verify(args) -> int:
    from .verify import gaussian_kernel, grad_battery, run_lemma_trials
    cfg = load_config(args)
    out = _setup_out(args)
    sigma2 = cfg.mmd.sigma2 if cfg.mmd.sigma2 else 1.0
    kernel = _negated_exponent_kernel if args.inject_fault else gaussian_kernel
    lemmas = run_lemma_trials(args.trials, cfg.seed, MmdConfig.fixed(sigma2), kernel)
    grads = grad_battery(args.grad_instances, cfg.seed) if args.grad_instances > 0 else None
    doc = {"root_seed": cfg.seed, "lemmas": lemmas, "gradients": grads}
    doc["lemmas"].pop("seconds", None)
    if grads:
        grads.pop("seconds", None)
    _write_json(out / "verify.json", doc)
    ok = lemmas["status"] == "ok" and (grads is None or grads["passed"])
    for key in ("lemma1", "lemma2"):
        s = lemmas[key]
        print(f"{key}: {s['trials']} trials, min slack {s['min_slack']:.3e}, "
              f"violations {s['violations']}")
    if grads:
        bad = [c["name"] for c in grads["checks"] if not c["passed"]]
        print(f"gradient checks: {len(grads['checks']) - len(bad)}/{len(grads['checks'])} passed"
              + (f" (failed: {', '.join(bad)})" if bad else ""))
    print("verify: OK" if ok else "verify: FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_report(args) -> int:
    out = _setup_out(args)
    rows = load_result_rows(args.results)
    try:
        table = ComparisonTable.build(rows)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    text = table.to_text()
    (out / "report.txt").write_text(text, encoding="utf-8")
    table.to_csv(out / "report.csv")
    if not args.no_figures:
        from .plotting import plot_method_bars
        plot_method_bars([table.teacher] + table.rows, out / "methods.png")
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="strict JSON experiment config")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    common.add_argument("--no-figures", action="store_true", help="skip matplotlib figures")

    train_opts = argparse.ArgumentParser(add_help=False)
    train_opts.add_argument("--method", help="objective: CE, MFD, MFD-K, MFD-F, HKD, FITNET")
    train_opts.add_argument("--lambda", dest="lam", type=float, help="MFD regularization weight")
    train_opts.add_argument("--data", metavar="DIR", help="read train/test .fdds files from DIR")

    parser = argparse.ArgumentParser(prog="fairdistill",
                                     description="Fairness-aware feature distillation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write the skewed train / balanced test sets")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-teacher", parents=[common, train_opts], help="train a CE teacher")
    p.set_defaults(func=cmd_train_teacher)

    p = sub.add_parser("distill", parents=[common, train_opts], help="train a student")
    p.add_argument("--teacher", metavar="PATH", help="teacher checkpoint")
    p.add_argument("--sampler", choices=(PLAIN, STRATIFIED), help="override the mini-batch sampler")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test set")
    p.add_argument("checkpoint", help="checkpoint path")
    p.add_argument("--data", metavar="DIR", help="read test.fdds from DIR")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-skew", parents=[common], help="teacher skew sweep with MFD students")
    p.add_argument("--skews", type=float, nargs="+", help="teacher training skews in [0.5, 1]")
    p.add_argument("--lambda", dest="lam", type=float, help="MFD weight for the students")
    p.set_defaults(func=cmd_sweep_skew)

    p = sub.add_parser("compare", parents=[common], help="teacher vs MFD and ablations, multi-seed")
    p.add_argument("--lambda", dest="lam", type=float, help="fix the MFD weight instead of the grid")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify", parents=[common], help="MMD inequality trials and gradient checks")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--grad-instances", type=int, default=20)
    p.add_argument("--inject-fault", action="store_true",
                   help="self-test: use a corrupted kernel, which must be reported as failing")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", parents=[common], help="comparison table from result files")
    p.add_argument("results", nargs="+", help="summary CSV / metrics JSON files (one must be the teacher)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except FairDistillError as exc:
        print(f"fairdistill: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
