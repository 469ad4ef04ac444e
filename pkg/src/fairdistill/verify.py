"""Runtime checks of the two MMD inequalities behind the MFD regularizer,
plus a finite-difference battery over every differentiable loss.

Inequality 1 (distillation): the p(a, y)-weighted sum of squared MMDs between
the class-y teacher mixture and each student cell bounds the squared MMD
between the full teacher and student mixtures.

Inequality 2 (fairness): for each class, the sum over groups of squared
MMDs to the teacher class embedding bounds ``1/(2|A|)`` times the sum of
squared MMDs between all ordered pairs of student group embeddings.

Both hold exactly for the biased estimator because it is the squared RKHS
distance between empirical mean embeddings, provided every term uses the
same kernel. Embeddings are represented as weight vectors over the pooled
sample, so each squared distance is a quadratic form ``wᵀKw``.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from . import tensor as tg
from .errors import DomainError, ParameterError
from .kernels import FIXED, GroupedFeatures, MmdConfig, mfd_regularizer, mmd2_biased, pair_bandwidths
from .model import MlpSpec, init_params, mlp_forward
from .objectives import (CE, FITNET, HKD, MFD, MFD_F, MFD_K, Batch, ObjectiveConfig,
                         class_pools, objective_loss, objective_mfd_f)

LEMMA_TOL = 1e-9
GRAD_TOL = 1e-4

Cell = Tuple[int, int]
KernelFn = Callable[[np.ndarray, float], np.ndarray]


def gaussian_kernel(sqdist: np.ndarray, sigma2: float) -> np.ndarray:
    return np.exp(-sqdist / (2.0 * sigma2))


@dataclass
class LemmaCheckResult:
    lhs: float
    rhs: float
    tol: float = LEMMA_TOL

    @property
    def slack(self) -> float:
        return self.lhs - self.rhs

    @property
    def holds(self) -> bool:
        return self.slack >= -self.tol

    @property
    def equality(self) -> bool:
        return abs(self.slack) <= self.tol


def _gram(points: np.ndarray, sigma2: float, kernel: KernelFn) -> np.ndarray:
    sq = (points * points).sum(axis=1)
    d = np.maximum(sq[:, None] + sq[None, :] - 2.0 * points @ points.T, 0.0)
    np.fill_diagonal(d, 0.0)
    return kernel(d, sigma2)


class _Embeddings:
    """Mean embeddings of named samples as weight vectors over one pooled sample."""

    def __init__(self, samples: Mapping, sigma2: float, kernel: KernelFn):
        self.slices = {}
        chunks, start = [], 0
        for key, pts in samples.items():
            pts = np.asarray(pts, dtype=np.float64)
            if pts.ndim != 2 or len(pts) == 0:
                raise DomainError(f"sample {key!r} is empty")
            self.slices[key] = slice(start, start + len(pts))
            chunks.append(pts)
            start += len(pts)
        self.n = start
        self.K = _gram(np.concatenate(chunks), sigma2, kernel)

    def mean(self, key) -> np.ndarray:
        w = np.zeros(self.n)
        s = self.slices[key]
        w[s] = 1.0 / (s.stop - s.start)
        return w

    def sqnorm(self, w: np.ndarray) -> float:
        return float(w @ self.K @ w)


def _normalise_weights(cells, weights) -> Dict[Cell, float]:
    if weights is None:
        return {c: 1.0 / len(cells) for c in cells}
    weights = {tuple(k): float(v) for k, v in weights.items()}
    if set(weights) != set(cells):
        raise ParameterError("weights must cover exactly the given cells")
    if min(weights.values()) < 0 or abs(sum(weights.values()) - 1.0) > 1e-12:
        raise ParameterError("weights must be non-negative and sum to 1")
    return weights


def check_lemma1(teacher: Mapping[Cell, np.ndarray], student: Mapping[Cell, np.ndarray],
                 weights: Optional[Mapping[Cell, float]], sigma2: float,
                 kernel: KernelFn = gaussian_kernel, tol: float = LEMMA_TOL) -> LemmaCheckResult:
    """Weighted per-cell MMD² to the class mixture vs. MMD² of full mixtures."""
    cells = sorted(teacher)
    if sorted(student) != cells:
        raise ParameterError("teacher and student must have the same cells")
    p = _normalise_weights(cells, weights)
    samples = {("T",) + c: teacher[c] for c in cells}
    samples.update({("S",) + c: student[c] for c in cells})
    emb = _Embeddings(samples, sigma2, kernel)

    classes = sorted({y for _, y in cells})
    p_y = {y: sum(p[c] for c in cells if c[1] == y) for y in classes}
    class_mix = {}
    for y in classes:
        w = np.zeros(emb.n)
        if p_y[y] > 0:
            for c in cells:
                if c[1] == y:
                    w += (p[c] / p_y[y]) * emb.mean(("T",) + c)
        class_mix[y] = w

    lhs = sum(p[c] * emb.sqnorm(class_mix[c[1]] - emb.mean(("S",) + c)) for c in cells if p[c] > 0)
    diff = sum(p[c] * (emb.mean(("T",) + c) - emb.mean(("S",) + c)) for c in cells)
    return LemmaCheckResult(float(lhs), emb.sqnorm(diff), tol)


def check_lemma2(teacher_class: np.ndarray, student_groups: Sequence[np.ndarray], sigma2: float,
                 kernel: KernelFn = gaussian_kernel, tol: float = LEMMA_TOL) -> LemmaCheckResult:
    """Σ_a MMD²(teacher, S_a) vs. (1 / 2|A|)·Σ_{a,a'} MMD²(S_a, S_a')."""
    if len(student_groups) < 1:
        raise DomainError("need at least one student group")
    samples = {"T": teacher_class}
    samples.update({a: s for a, s in enumerate(student_groups)})
    emb = _Embeddings(samples, sigma2, kernel)
    groups = range(len(student_groups))
    t = emb.mean("T")
    lhs = sum(emb.sqnorm(t - emb.mean(a)) for a in groups)
    rhs = sum(emb.sqnorm(emb.mean(a) - emb.mean(b)) for a in groups for b in groups)
    return LemmaCheckResult(float(lhs), float(rhs) / (2 * len(student_groups)), tol)


# -- independent oracles ---------------------------------------------------
# Block inner products <μ_A, μ_B> = mean k(A, B), with distances from scipy.


def _block_inner(blocks: Mapping, sigma2: float, kernel: KernelFn):
    keys = list(blocks)
    pts = np.concatenate([np.asarray(blocks[k], dtype=np.float64) for k in keys])
    bounds, start = {}, 0
    for k in keys:
        bounds[k] = (start, start + len(blocks[k]))
        start += len(blocks[k])
    K = kernel(cdist(pts, pts, "sqeuclidean"), sigma2)
    inner = {}
    for i, ka in enumerate(keys):
        a0, a1 = bounds[ka]
        for kb in keys[i:]:
            b0, b1 = bounds[kb]
            inner[ka, kb] = inner[kb, ka] = float(K[a0:a1, b0:b1].mean())
    return inner


def _mix_sqnorm(inner, terms):
    """‖Σ c_i μ_i‖² for ``terms = [(coef, key), ...]``."""
    return sum(ci * cj * inner[ki, kj] for ci, ki in terms for cj, kj in terms)


def lemma1_block_oracle(teacher, student, weights, sigma2, kernel: KernelFn = gaussian_kernel):
    cells = sorted(teacher)
    p = _normalise_weights(cells, weights)
    blocks = {("T",) + c: teacher[c] for c in cells}
    blocks.update({("S",) + c: student[c] for c in cells})
    inner = _block_inner(blocks, sigma2, kernel)
    lhs = 0.0
    for c in cells:
        y = c[1]
        same = [d for d in cells if d[1] == y]
        py = sum(p[d] for d in same)
        if p[c] == 0:
            continue
        terms = [(p[d] / py, ("T",) + d) for d in same] + [(-1.0, ("S",) + c)]
        lhs += p[c] * _mix_sqnorm(inner, terms)
    terms = [(p[c], ("T",) + c) for c in cells] + [(-p[c], ("S",) + c) for c in cells]
    return lhs, _mix_sqnorm(inner, terms)


def lemma2_block_oracle(teacher_class, student_groups, sigma2, kernel: KernelFn = gaussian_kernel):
    blocks = {"T": teacher_class}
    blocks.update({a: s for a, s in enumerate(student_groups)})
    inner = _block_inner(blocks, sigma2, kernel)
    n = len(student_groups)
    lhs = sum(_mix_sqnorm(inner, [(1.0, "T"), (-1.0, a)]) for a in range(n))
    rhs = sum(_mix_sqnorm(inner, [(1.0, a), (-1.0, b)]) for a in range(n) for b in range(n))
    return lhs, rhs / (2 * n)


# -- randomized trial runner ------------------------------------------------


def _random_cells(rng, n_groups, n_classes, dim, scale=1.0):
    out = {}
    for a in range(n_groups):
        for y in range(n_classes):
            n = int(rng.integers(3, 11))
            shift = rng.normal(size=dim)
            out[(a, y)] = shift + scale * rng.normal(size=(n, dim))
    return out


def _summary(slacks, oracle_diffs, n_violations, tol):
    slacks = np.asarray(slacks)
    return {
        "trials": int(len(slacks)),
        "min_slack": float(slacks.min()) if len(slacks) else None,
        "mean_slack": float(slacks.mean()) if len(slacks) else None,
        "violations": int(n_violations),
        "tolerance": tol,
        "max_oracle_abs_diff": float(max(oracle_diffs)) if oracle_diffs else None,
    }


def run_lemma_trials(n_trials: int = 1000, seed: int = 0, mmd: Optional[MmdConfig] = None,
                     kernel: KernelFn = gaussian_kernel, oracle: bool = True) -> dict:
    """Randomized checks of both inequalities under one shared bandwidth.

    Instances have 2-4 groups, 2-5 classes, 3-10 points per cell and
    dimension 1-8. A per-pair bandwidth config puts the terms in different
    RKHSs, where the inequalities are not theorems; the report then says
    ``not_applicable`` and runs nothing.
    """
    mmd = mmd if mmd is not None else MmdConfig.fixed(1.0)
    if mmd.bandwidth_mode != FIXED:
        return {"status": "not_applicable",
                "reason": "inequalities need one shared bandwidth (fixed_global mode)"}
    sigma2 = mmd.sigma2
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    s1, s2, o1, o2 = [], [], [], []
    v1 = v2 = 0
    eq_slacks = []
    for _ in range(n_trials):
        n_groups = int(rng.integers(2, 5))
        n_classes = int(rng.integers(2, 6))
        dim = int(rng.integers(1, 9))
        teacher = _random_cells(rng, n_groups, n_classes, dim)
        student = _random_cells(rng, n_groups, n_classes, dim)
        logits = rng.normal(size=n_groups * n_classes)
        w = np.exp(logits) / np.exp(logits).sum()
        cells = sorted(teacher)
        weights = {c: float(wi) for c, wi in zip(cells, w)}
        weights[cells[-1]] = 1.0 - sum(weights[c] for c in cells[:-1])

        r1 = check_lemma1(teacher, student, weights, sigma2, kernel)
        s1.append(r1.slack)
        v1 += not r1.holds
        if oracle:
            lhs, rhs = lemma1_block_oracle(teacher, student, weights, sigma2, kernel)
            o1.append(max(abs(lhs - r1.lhs), abs(rhs - r1.rhs)))

        y = int(rng.integers(n_classes))
        groups = [student[(a, y)] for a in range(n_groups)]
        teacher_class = np.concatenate([teacher[(a, y)] for a in range(n_groups)])
        r2 = check_lemma2(teacher_class, groups, sigma2, kernel)
        s2.append(r2.slack)
        v2 += not r2.holds
        if oracle:
            lhs, rhs = lemma2_block_oracle(teacher_class, groups, sigma2, kernel)
            o2.append(max(abs(lhs - r2.lhs), abs(rhs - r2.rhs)))

        # equality case: teacher pool is the union of equal-size group samples
        n_pts = int(rng.integers(3, 11))
        eq_groups = [rng.normal(size=(n_pts, dim)) + rng.normal(size=dim) for _ in range(n_groups)]
        eq = check_lemma2(np.concatenate(eq_groups), eq_groups, sigma2, kernel)
        eq_slacks.append(abs(eq.slack))

    lemma2 = _summary(s2, o2, v2, LEMMA_TOL)
    lemma2["equality_max_abs_slack"] = float(max(eq_slacks)) if eq_slacks else None
    lemma2["equality_holds"] = bool(eq_slacks) and max(eq_slacks) <= LEMMA_TOL
    report = {
        "status": "ok" if v1 == 0 and v2 == 0 and lemma2["equality_holds"] else "violations",
        "sigma2": sigma2,
        "seed": seed,
        "lemma1": _summary(s1, o1, v1, LEMMA_TOL),
        "lemma2": lemma2,
        "seconds": time.perf_counter() - start,
        "note": ("The biased MMD² estimate equals the squared RKHS distance between empirical "
                 "mean embeddings, so the population inequalities apply to it exactly when "
                 "all terms share one kernel."),
    }
    return report


# -- gradient battery -------------------------------------------------------


@dataclass
class GradCheck:
    name: str
    instances: int
    max_rel_err: float
    passed: bool
    note: str = ""


def _check(name, instances, analytic_and_numeric, note="") -> GradCheck:
    errs = [tg.relative_error(a, n) for a, n in analytic_and_numeric]
    worst = max(errs)
    return GradCheck(name, instances, worst, worst < GRAD_TOL, note)


def _grad_of(fn, arrays):
    leaves = [tg.Tensor(np.array(a), requires_grad=True) for a in arrays]
    return tg.backward_pass(fn(leaves), leaves)


def _value_of(fn):
    return lambda arrays: fn([tg.Tensor(a) for a in arrays]).item()


def _pair(fn, arrays, eps=1e-5):
    return _grad_of(fn, arrays), tg.finite_diff_grad(_value_of(fn), arrays, eps)


def _random_batch(rng, n_groups=2, n_classes=3, dim=4):
    # Unequal cell sizes: with equal sizes the gradient through the class
    # pool cancels exactly, and the stop-gradient check would see nothing.
    ys, as_ = [], []
    for y in range(n_classes):
        for a in range(n_groups):
            n = int(rng.integers(1, 5))
            ys += [y] * n
            as_ += [a] * n
    X = rng.normal(size=(len(ys), dim))
    return Batch(X, np.array(ys), np.array(as_))


def grad_battery(n_instances: int = 20, seed: int = 0) -> dict:
    """Finite-difference checks (64-bit, eps = 1e-5, rel. error < 1e-4)."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    checks = []
    R = range(n_instances)

    def weighted(op):
        def build():
            w = rng.normal(size=(4, 5))
            return lambda t: (op(t[0], t[1]) * w).sum()
        return build

    pairs = []
    for _ in R:
        fn = weighted(tg.pairwise_sqdist)()
        pairs.append(_pair(fn, [rng.normal(size=(4, 3)), rng.normal(size=(5, 3))]))
    checks.append(_check("pairwise_sqdist", n_instances, pairs))

    pairs = []
    for _ in R:
        labels = rng.integers(0, 3, size=6)
        pairs.append(_pair(lambda t: tg.softmax_cross_entropy(t[0], labels),
                           [rng.normal(size=(6, 3)) * 2]))
    checks.append(_check("softmax_cross_entropy", n_instances, pairs))

    pairs = []
    for _ in R:
        s2 = float(rng.uniform(0.5, 3.0))
        pairs.append(_pair(lambda t: mmd2_biased(t[0], t[1], s2),
                           [rng.normal(size=(4, 3)), rng.normal(size=(5, 3)) + 0.5]))
    checks.append(_check("mmd2_biased", n_instances, pairs))

    for mode in ("fixed_global", "per_pair_frozen"):
        pairs = []
        for _ in R:
            pools = {y: rng.normal(size=(6, 3)) for y in (0, 1)}
            feats = [rng.normal(size=(3, 3)) + 0.3 for _ in range(4)]
            keys = [(0, 0), (0, 1), (1, 0), (1, 1)]
            cfg = MmdConfig.fixed(float(rng.uniform(0.5, 3.0))) if mode == "fixed_global" else MmdConfig()
            bw = pair_bandwidths(pools, GroupedFeatures(dict(zip(keys, feats))), cfg)

            def fn(t, pools=pools, cfg=cfg, bw=bw):
                return mfd_regularizer(pools, GroupedFeatures(dict(zip(keys, t))), cfg, bw)

            pairs.append(_pair(fn, feats))
        checks.append(_check(f"mfd_regularizer[{mode}]", n_instances, pairs,
                             "per-pair bandwidths held at their base-point values"
                             if mode == "per_pair_frozen" else ""))

    spec = MlpSpec((4, 6, 5, 3))
    mmd = MmdConfig.fixed(2.0)
    objectives = [
        ObjectiveConfig(CE),
        ObjectiveConfig(MFD, lam=0.0, mmd=mmd),
        ObjectiveConfig(MFD, lam=3.0, mmd=mmd),
        ObjectiveConfig(MFD_K, lam=3.0, mmd=mmd),
        ObjectiveConfig(MFD_F, lam=3.0, mmd=mmd),
        ObjectiveConfig(HKD, temperature=3.0, kd_weight=0.5),
        ObjectiveConfig(FITNET, temperature=2.0, kd_weight=0.5),
    ]
    for cfg in objectives:
        pairs, full_errs = [], []
        for _ in R:
            batch = _random_batch(rng)
            teacher = init_params(spec, int(rng.integers(1 << 31)))
            student = [p + 0.1 * rng.normal(size=p.shape) for p in init_params(spec, int(rng.integers(1 << 31)))]
            fn = lambda t, cfg=cfg, batch=batch, teacher=teacher: objective_loss(cfg, batch, t, teacher)
            analytic = _grad_of(fn, student)
            if cfg.method == MFD_F:
                feats0, _ = mlp_forward(student, batch.X)
                pools0 = class_pools(feats0.data.copy(), batch.y)
                frozen = lambda t, cfg=cfg, batch=batch, pools0=pools0: objective_mfd_f(
                    batch, t, cfg, frozen_pools=pools0)
                numeric = tg.finite_diff_grad(_value_of(frozen), student)
                full = tg.finite_diff_grad(_value_of(fn), student)
                full_errs.append(tg.relative_error(analytic, full))
            else:
                numeric = tg.finite_diff_grad(_value_of(fn), student)
            pairs.append((analytic, numeric))
        name = f"objective[{cfg.tag}, lambda={cfg.lam:g}]" if cfg.method in (MFD, MFD_K, MFD_F) \
            else f"objective[{cfg.tag}]"
        check = _check(name, n_instances, pairs)
        if cfg.method == MFD_F:
            distinguished = min(full_errs) > 1e-3
            check.passed = check.passed and distinguished
            check.note = (f"matches the pooled-side-frozen oracle; differs from the unfrozen "
                          f"oracle by rel. error >= {min(full_errs):.3g}")
        checks.append(check)

    return {
        "passed": all(c.passed for c in checks),
        "tolerance": GRAD_TOL,
        "checks": [asdict(c) for c in checks],
        "seconds": time.perf_counter() - start,
    }
