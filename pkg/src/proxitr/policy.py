"""Weighted-classification policy learners.

Four learners produce sign-based treatment rules: the outcome learner on
(L, Z), the treatment learner on (L, W), the maximum learner (better of the
two by cross-validated value) and the doubly robust learner on L with
cross-fitting.  Each reduces to a weighted surrogate-loss classification
solved over a linear or Gaussian-kernel function class with an L2 penalty.

Sign convention: a policy decides +1 wherever its decision function is 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from .bridges import BridgePair, BridgeTuning, KernelExpansion, fit_bridges
from .data import SampleTable
from .errors import (ContractViolationError, DegenerateDataError, InvalidArgumentError,
                     NumericOverflowError)
from .kernels import KernelSpec, NystromMap, gamma_quantile_grid, hsic_bandwidth, nystrom_fit

__all__ = [
    "SurrogateLoss",
    "HINGE",
    "SMOOTHED_HINGE",
    "FoldPlan",
    "make_fold_plan",
    "LinearDecision",
    "AggregateDecision",
    "Policy",
    "PolicyTuning",
    "FitInfo",
    "fit_weighted_classifier",
    "learn_outcome",
    "learn_treatment",
    "learn_maximum",
    "dr_weights",
    "learn_dr",
    "LearnReport",
]


# ---------------------------------------------------------------------------
# surrogate losses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurrogateLoss:
    """Convex nonincreasing surrogate for the 0-1 loss."""

    kind: str

    def value(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "hinge":
            return np.maximum(1.0 - t, 0.0)
        return np.where(t < 1.0, (1.0 - t) ** 2, 0.0)

    def derivative(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.kind == "hinge":
            return np.where(t < 1.0, -1.0, 0.0)
        return np.where(t < 1.0, -2.0 * (1.0 - t), 0.0)

    @property
    def smooth(self) -> bool:
        return self.kind != "hinge"


HINGE = SurrogateLoss("hinge")
SMOOTHED_HINGE = SurrogateLoss("quadratic_smoothed_hinge")


# ---------------------------------------------------------------------------
# fold plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FoldPlan:
    """Seeded assignment of rows to folds 1..K, optionally arm-stratified."""

    assignment: np.ndarray
    n_folds: int
    seed: int

    def fold(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def complement(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != k)


def make_fold_plan(n: int, n_folds: int, seed: int = 0,
                   stratify: np.ndarray | None = None) -> FoldPlan:
    """Assign rows to folds; with ``stratify`` given, each stratum is dealt
    round-robin so every fold sees every stratum when counts allow."""
    if n_folds < 2:
        raise InvalidArgumentError("need at least 2 folds")
    if n < n_folds:
        raise DegenerateDataError(f"cannot split {n} rows into {n_folds} folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=int)
    groups = [np.arange(n)] if stratify is None else [
        np.flatnonzero(stratify == v) for v in np.unique(stratify)]
    for rows in groups:
        order = rng.permutation(rows)
        assignment[order] = (np.arange(rows.size) % n_folds) + 1
    counts = np.bincount(assignment, minlength=n_folds + 1)[1:]
    if np.any(counts == 0):
        raise DegenerateDataError("fold plan left an empty fold")
    return FoldPlan(assignment=assignment, n_folds=n_folds, seed=seed)


# ---------------------------------------------------------------------------
# decision functions and policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearDecision:
    """r(x) = x @ weights + intercept."""

    weights: np.ndarray
    intercept: float

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X @ self.weights + self.intercept


@dataclass(frozen=True)
class AggregateDecision:
    """Average of several decision functions (used by cross-fitting)."""

    components: tuple

    def __call__(self, X: np.ndarray) -> np.ndarray:
        vals = self.components[0](X)
        for c in self.components[1:]:
            vals = vals + c(X)
        return vals / len(self.components)


FEATURE_BLOCKS = {"L": ("L",), "LZ": ("L", "Z"), "LW": ("L", "W")}


@dataclass(frozen=True)
class Policy:
    """A treatment rule: feature selector + decision function + sign rule."""

    features: str
    decision: object
    input_center: np.ndarray
    input_scale: np.ndarray

    def __post_init__(self):
        if self.features not in FEATURE_BLOCKS:
            raise InvalidArgumentError(f"unknown feature selector {self.features!r}")

    def _matrix(self, L, Z=None, W=None) -> np.ndarray:
        blocks = {"L": L, "Z": Z, "W": W}
        cols = []
        for name in FEATURE_BLOCKS[self.features]:
            x = blocks[name]
            if x is None:
                raise ContractViolationError(f"policy on {self.features!r} needs block {name}")
            x = np.asarray(x, dtype=float)
            cols.append(x[:, None] if x.ndim == 1 else x)
        X = np.hstack(cols)
        return (X - self.input_center) / self.input_scale

    def decision_values(self, L, Z=None, W=None) -> np.ndarray:
        return self.decision(self._matrix(L, Z=Z, W=W))

    def decide(self, L, Z=None, W=None) -> np.ndarray:
        vals = self.decision_values(L, Z=Z, W=W)
        return np.where(vals >= 0, 1, -1)

    def decide_table(self, table: SampleTable) -> np.ndarray:
        return self.decide(table.L, Z=table.Z, W=table.W)


def policy_features(table: SampleTable, selector: str) -> np.ndarray:
    blocks = {"L": table.L, "Z": table.Z, "W": table.W}
    return np.hstack([blocks[b] for b in FEATURE_BLOCKS[selector]])


# ---------------------------------------------------------------------------
# the weighted surrogate program
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitInfo:
    iterations: int
    grad_norm: float
    converged: bool


@dataclass(frozen=True)
class PolicyTuning:
    """Penalty grid, folds and function class for the policy learners."""

    rho_grid: tuple = tuple(float(g) for g in np.logspace(-4, 1, 8))
    folds: int = 5
    function_class: str = "linear"          # "linear" | "kernel"
    loss: SurrogateLoss = SMOOTHED_HINGE
    nystrom: object = "auto"                # kernel class landmark count
    hsic_quantiles: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

    def __post_init__(self):
        if len(self.rho_grid) == 0:
            raise InvalidArgumentError("rho_grid is empty")
        if any(r <= 0 for r in self.rho_grid):
            raise InvalidArgumentError("rho values must be positive")
        if self.folds < 2:
            raise InvalidArgumentError("need at least 2 folds")
        if self.function_class not in ("linear", "kernel"):
            raise InvalidArgumentError(f"unknown function class {self.function_class!r}")


def _objective(theta, X, labels, weights, loss, rho, intercept):
    if intercept:
        w, b = theta[:-1], theta[-1]
    else:
        w, b = theta, 0.0
    f = X @ w + b
    t = labels * f
    obj = float(np.mean(weights * loss.value(t)) + rho * (w @ w))
    g_f = weights * labels * loss.derivative(t) / len(labels)
    grad_w = X.T @ g_f + 2.0 * rho * w
    if intercept:
        return obj, np.concatenate([grad_w, [g_f.sum()]])
    return obj, grad_w


def _fit_smooth(X, labels, weights, loss, rho, intercept):
    d = X.shape[1] + (1 if intercept else 0)
    res = minimize(_objective, np.zeros(d), jac=True, method="L-BFGS-B",
                   args=(X, labels, weights, loss, rho, intercept),
                   options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-14})
    obj, grad = _objective(res.x, X, labels, weights, loss, rho, intercept)
    gnorm = float(np.linalg.norm(grad)) / max(1.0, abs(obj))
    return res.x, FitInfo(iterations=int(res.nit), grad_norm=gnorm,
                          converged=bool(gnorm <= 1e-6 or res.nit >= 5000))


def _fit_hinge(X, labels, weights, rho, intercept):
    # exact hinge program via slack variables; intended for desk-scale use
    n, p = X.shape
    d = p + (1 if intercept else 0)

    def unpack(theta):
        w = theta[:p]
        b = theta[p] if intercept else 0.0
        xi = theta[d:]
        return w, b, xi

    def obj(theta):
        w, b, xi = unpack(theta)
        return float(np.mean(weights * xi) + rho * (w @ w))

    def margin(theta):
        w, b, xi = unpack(theta)
        return xi - (1.0 - labels * (X @ w + b))

    cons = [{"type": "ineq", "fun": margin},
            {"type": "ineq", "fun": lambda th: th[d:]}]
    x0 = np.zeros(d + n)
    x0[d:] = 1.0
    res = minimize(obj, x0, constraints=cons, method="SLSQP",
                   options={"maxiter": 1000, "ftol": 1e-12})
    w, b, _ = unpack(res.x)
    theta = np.concatenate([w, [b]]) if intercept else w
    return theta, FitInfo(iterations=int(res.nit), grad_norm=float("nan"),
                          converged=bool(res.success))


def fit_weighted_classifier(features: np.ndarray, labels: np.ndarray,
                            weights: np.ndarray, loss: SurrogateLoss, rho: float,
                            function_class: str = "linear",
                            nystrom_map: NystromMap | None = None):
    """Minimize mean_i w_i * phi(l_i * r(x_i)) + rho * ||r||^2.

    The linear class has an unpenalized intercept; the kernel class is the
    span of a Nystrom feature map with every coefficient penalized.
    Returns (decision_function, FitInfo).
    """
    X = np.atleast_2d(np.asarray(features, dtype=float))
    labels = np.asarray(labels, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not np.isfinite(weights).all() or np.any(weights < 0):
        raise InvalidArgumentError("weights must be finite and nonnegative")
    if rho <= 0:
        raise InvalidArgumentError("rho must be positive")
    if function_class == "kernel":
        if nystrom_map is None:
            raise InvalidArgumentError("kernel class requires a Nystrom map")
        design, intercept = nystrom_map.features(X), False
    else:
        design, intercept = X, True

    if np.all(weights == 0):
        theta = np.zeros(design.shape[1] + (1 if intercept else 0))
        info = FitInfo(iterations=0, grad_norm=0.0, converged=True)
    elif loss.smooth:
        theta, info = _fit_smooth(design, labels, weights, loss, rho, intercept)
    else:
        theta, info = _fit_hinge(design, labels, weights, rho, intercept)

    if function_class == "kernel":
        coef = nystrom_map.whitening.T @ theta
        decision = KernelExpansion(kernel=nystrom_map.kernel,
                                   centers=nystrom_map.landmarks, coefficients=coef)
    else:
        decision = LinearDecision(weights=theta[:-1], intercept=float(theta[-1]))
    return decision, info


def objective_value(decision, features, labels, weights, loss: SurrogateLoss,
                    rho: float, penalty: float | None = None) -> float:
    """Evaluate the weighted surrogate objective at a given decision."""
    f = decision(np.atleast_2d(np.asarray(features, dtype=float)))
    pen = penalty
    if pen is None:
        if isinstance(decision, LinearDecision):
            pen = float(decision.weights @ decision.weights)
        else:
            pen = float(decision.coefficients @ decision.coefficients)
    return float(np.mean(weights * loss.value(labels * f)) + rho * pen)


# ---------------------------------------------------------------------------
# learner scaffolding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearnReport:
    """Cross-validation record of a learner run."""

    learner: str
    rho_grid: tuple
    cv_values: np.ndarray
    rho_selected: float
    best_value: float
    hsic_gamma: float | None = None
    branch: str | None = None
    branch_values: dict | None = None


def _feature_transform(X: np.ndarray):
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return center, scale


def _select_rho(rho_grid, cv_values) -> int:
    # ties broken toward the smallest rho
    order = np.argsort(rho_grid, kind="stable")
    best = order[int(np.argmax(np.asarray(cv_values)[order]))]
    return int(best)


def _class_setup(X_std: np.ndarray, labels, weights, tuning: PolicyTuning, rng):
    """HSIC bandwidth + Nystrom map for the kernel class; no-op for linear."""
    if tuning.function_class != "kernel":
        return None, None
    total = float(np.sum(weights))
    if total <= 0:
        gamma = 1.0
    else:
        cands = gamma_quantile_grid(X_std, tuning.hsic_quantiles)
        gamma = hsic_bandwidth(X_std, labels, weights / total, cands)
    kernel = KernelSpec(gamma, X_std.shape[1])
    m = X_std.shape[0] if tuning.nystrom is None else tuning.nystrom
    if m == "auto":
        m = int(2 * np.ceil(np.sqrt(X_std.shape[0])))
    nys = nystrom_fit(kernel, X_std, m=min(int(m), X_std.shape[0]),
                      seed=int(rng.integers(0, 2 ** 32)))
    return gamma, nys


def _outcome_weights(bridges, table: SampleTable, y_loc, y_scale):
    delta = bridges.delta(table.W, table.L) / y_scale
    labels = np.where(delta >= 0, 1.0, -1.0)
    return np.abs(delta), labels


def _treatment_weights(bridges, table: SampleTable, y_loc, y_scale):
    q_at_a = np.where(table.A == 1, bridges.q(table.Z, 1, table.L),
                      bridges.q(table.Z, -1, table.L))
    yq = (table.Y - y_loc) / y_scale * q_at_a
    labels = table.A * np.where(yq >= 0, 1.0, -1.0)
    return np.abs(yq), labels


def _value_outcome_fold(bridges, table: SampleTable, decide, y_loc, y_scale) -> float:
    d = decide(table)
    h1 = bridges.h(table.W, 1, table.L)
    h0 = bridges.h(table.W, -1, table.L)
    return float(np.mean(np.where(d == 1, h1, h0) - y_loc) / y_scale)


def _value_treatment_fold(bridges, table: SampleTable, decide, y_loc, y_scale) -> float:
    d = decide(table)
    q_at_a = np.where(table.A == 1, bridges.q(table.Z, 1, table.L),
                      bridges.q(table.Z, -1, table.L))
    return float(np.mean((table.Y - y_loc) / y_scale * q_at_a * (d == table.A)))


def _cv_learn(data: SampleTable, bridges, tuning: PolicyTuning, seed,
              selector: str, weight_fn, value_fn, learner_name: str,
              refit_roles: tuple):
    rng = np.random.default_rng(seed)
    X = policy_features(data, selector)
    center, scale = _feature_transform(X)
    X_std = (X - center) / scale
    # classification weights and validation values work on the centered,
    # unit-scale outcome; the centering shifts every policy's treatment
    # value by the same constant, so selections are unaffected in
    # population while the finite-sample weighting matches standardized
    # inputs
    y_loc = float(data.Y.mean())
    y_scale = float(data.Y.std()) or 1.0

    weights, labels = weight_fn(bridges, data, y_loc, y_scale)
    hsic_gamma, nys = _class_setup(X_std, labels, weights, tuning, rng)

    plan = make_fold_plan(data.n, tuning.folds, seed=int(rng.integers(0, 2 ** 32)),
                          stratify=data.A)
    folds = []
    for k in range(1, tuning.folds + 1):
        tr, va = plan.complement(k), plan.fold(k)
        fold_bridges = bridges.refit(data.subset(tr), roles=refit_roles,
                                     seed=int(rng.integers(0, 2 ** 32)))
        w_k, l_k = weight_fn(fold_bridges, data.subset(tr), y_loc, y_scale)
        folds.append((tr, va, fold_bridges, w_k, l_k))

    cv = np.zeros(len(tuning.rho_grid))
    for ri, rho in enumerate(tuning.rho_grid):
        vals = []
        for tr, va, fold_bridges, w_k, l_k in folds:
            decision, _ = fit_weighted_classifier(
                X_std[tr], l_k, w_k, tuning.loss, rho,
                function_class=tuning.function_class, nystrom_map=nys)
            decide = lambda t, dec=decision: np.where(
                dec((policy_features(t, selector) - center) / scale) >= 0, 1, -1)
            vals.append(value_fn(fold_bridges, data.subset(va), decide,
                                 y_loc, y_scale))
        cv[ri] = float(np.mean(vals))

    best = _select_rho(tuning.rho_grid, cv)
    decision, _ = fit_weighted_classifier(
        X_std, labels, weights, tuning.loss, tuning.rho_grid[best],
        function_class=tuning.function_class, nystrom_map=nys)
    policy = Policy(features=selector, decision=decision,
                    input_center=center, input_scale=scale)
    report = LearnReport(learner=learner_name, rho_grid=tuple(tuning.rho_grid),
                         cv_values=cv, rho_selected=float(tuning.rho_grid[best]),
                         best_value=float(cv[best]), hsic_gamma=hsic_gamma)
    return policy, report


def learn_outcome(data: SampleTable, bridges, tuning: PolicyTuning | None = None,
                  seed=0, features: str = "LZ"):
    """Outcome proximal learner: weights |h(W,1,L) - h(W,-1,L)|, labels the
    sign of that difference, validated by the identified outcome value."""
    tuning = tuning or PolicyTuning()
    if features not in ("LZ", "L"):
        raise ContractViolationError("outcome learner reads L and optionally Z")
    return _cv_learn(data, bridges, tuning, seed, features,
                     _outcome_weights, _value_outcome_fold, "outcome", ("h",))


def learn_treatment(data: SampleTable, bridges, tuning: PolicyTuning | None = None,
                    seed=0, features: str = "LW"):
    """Treatment proximal learner: weights |Y q(Z, A, L)|, pseudo-labels
    A * sign(Y q), validated by the identified treatment value."""
    tuning = tuning or PolicyTuning()
    if features not in ("LW", "L"):
        raise ContractViolationError("treatment learner reads L and optionally W")
    return _cv_learn(data, bridges, tuning, seed, features,
                     _treatment_weights, _value_treatment_fold, "treatment", ("q",))


def learn_maximum(data: SampleTable, bridges, tuning: PolicyTuning | None = None,
                  seed=0):
    """Maximum proximal learner: the better of the outcome and treatment
    learners by averaged cross-validated value (outcome wins ties)."""
    tuning = tuning or PolicyTuning()
    p1, r1 = learn_outcome(data, bridges, tuning, seed=seed)
    p2, r2 = learn_treatment(data, bridges, tuning, seed=seed)
    branch_values = {"outcome": r1.best_value, "treatment": r2.best_value}
    if r1.best_value >= r2.best_value:
        policy, base = p1, r1
        branch = "outcome"
    else:
        policy, base = p2, r2
        branch = "treatment"
    report = replace(base, learner="maximum", branch=branch,
                     branch_values=branch_values)
    return policy, report


# ---------------------------------------------------------------------------
# doubly robust learner
# ---------------------------------------------------------------------------

def dr_weights(data: SampleTable, h_fn, q_fn):
    """Per-row doubly robust weights.

    C_a = 1(A=a) q(Z, a, L) {Y - h(W, a, L)} + h(W, a, L) for a = +1, -1.
    ``h_fn`` and ``q_fn`` are callables (block, arm, L) -> values.
    """
    out = []
    for a in (1, -1):
        h_a = np.asarray(h_fn(data.W, a, data.L), dtype=float)
        q_a = np.asarray(q_fn(data.Z, a, data.L), dtype=float)
        c = (data.A == a) * q_a * (data.Y - h_a) + h_a
        bad = np.flatnonzero(~np.isfinite(c))
        if bad.size:
            raise NumericOverflowError(
                f"non-finite doubly robust weight C_{a:+d} at row {int(bad[0])}")
        out.append(c)
    return out[0], out[1]


def _dr_expansion(L_std: np.ndarray, c_plus: np.ndarray, c_minus: np.ndarray):
    """2n-row weighted classification data of the DR surrogate program."""
    X = np.vstack([L_std, L_std])
    labels = np.concatenate([np.where(c_plus >= 0, 1.0, -1.0),
                             -np.where(c_minus >= 0, 1.0, -1.0)])
    weights = np.concatenate([np.abs(c_plus), np.abs(c_minus)])
    return X, labels, weights


def _fit_dr_program(L_std, c_plus, c_minus, tuning: PolicyTuning, rho, nys):
    X, labels, weights = _dr_expansion(L_std, c_plus, c_minus)
    # the program averages the 2n terms over n rows, so the mean over 2n
    # rows carries half the penalty scale
    return fit_weighted_classifier(X, labels, weights, tuning.loss, rho / 2.0,
                                   function_class=tuning.function_class,
                                   nystrom_map=nys)[0]


def learn_dr(data: SampleTable, tuning: PolicyTuning | None = None,
             bridge_tuning: BridgeTuning | None = None, seed=0, bridges=None):
    """Doubly robust learner with nested cross-fitting.

    The penalty is selected by nested folds: bridges on one inner fold,
    weights on the rest, decision functions aggregated across inner folds
    and validated by the doubly robust value on the outer fold.  The final
    policy averages per-fold decision functions fitted at the selected
    penalty with bridges estimated on the held-out fold.
    """
    tuning = tuning or PolicyTuning()
    if data.n < tuning.folds ** 2:
        raise DegenerateDataError(
            f"need n >= folds^2 = {tuning.folds ** 2} rows for nested folds")
    rng = np.random.default_rng(seed)
    if bridges is None:
        bridges = fit_bridges(data, bridge_tuning, seed=int(rng.integers(0, 2 ** 32)))

    X = data.L
    center, scale = _feature_transform(X)
    L_std = (X - center) / scale
    y_loc = float(data.Y.mean())
    y_scale = float(data.Y.std()) or 1.0

    def std_weights(table, pair):
        # centered, unit-scale outcome units; an affine map of the raw
        # weights that leaves the maximizing rule unchanged
        cp, cm = dr_weights(table, pair.h, pair.q)
        return (cp - y_loc) / y_scale, (cm - y_loc) / y_scale

    c_plus, c_minus = std_weights(data, bridges)
    X2, labels2, weights2 = _dr_expansion(L_std, c_plus, c_minus)
    hsic_gamma, nys = _class_setup(X2, labels2, weights2, tuning, rng)

    plan = make_fold_plan(data.n, tuning.folds, seed=int(rng.integers(0, 2 ** 32)),
                          stratify=data.A)
    K = tuning.folds

    # nested pre-computation: per (outer fold k, inner fold kappa) bridges and
    # their DR weights on the training rows and on the outer validation rows
    nested = []
    for k in range(1, K + 1):
        outer_tr, outer_va = plan.complement(k), plan.fold(k)
        inner = make_fold_plan(outer_tr.size, K, seed=int(rng.integers(0, 2 ** 32)),
                               stratify=data.A[outer_tr])
        per_kappa = []
        va_plus, va_minus = [], []
        for kappa in range(1, K + 1):
            fit_rows = outer_tr[inner.fold(kappa)]
            wt_rows = outer_tr[inner.complement(kappa)]
            if fit_rows.size == 0 or wt_rows.size == 0:
                raise DegenerateDataError("empty nested fold")
            b_kk = bridges.refit(data.subset(fit_rows),
                                 seed=int(rng.integers(0, 2 ** 32)))
            cp, cm = std_weights(data.subset(wt_rows), b_kk)
            vp, vm = std_weights(data.subset(outer_va), b_kk)
            per_kappa.append((wt_rows, cp, cm))
            va_plus.append(vp)
            va_minus.append(vm)
        cbar_plus = np.mean(va_plus, axis=0)
        cbar_minus = np.mean(va_minus, axis=0)
        nested.append((outer_va, per_kappa, cbar_plus, cbar_minus))

    cv = np.zeros(len(tuning.rho_grid))
    for ri, rho in enumerate(tuning.rho_grid):
        vals = []
        for outer_va, per_kappa, cbar_plus, cbar_minus in nested:
            parts = []
            for wt_rows, cp, cm in per_kappa:
                parts.append(_fit_dr_program(L_std[wt_rows], cp, cm, tuning, rho, nys))
            agg = AggregateDecision(components=tuple(parts))
            d_va = np.where(agg(L_std[outer_va]) >= 0, 1, -1)
            vals.append(float(np.mean(np.where(d_va == 1, cbar_plus, cbar_minus))))
        cv[ri] = float(np.mean(vals))

    best = _select_rho(tuning.rho_grid, cv)
    rho_star = float(tuning.rho_grid[best])

    components = []
    for k in range(1, K + 1):
        fold_rows, rest = plan.fold(k), plan.complement(k)
        b_k = bridges.refit(data.subset(fold_rows), seed=int(rng.integers(0, 2 ** 32)))
        cp, cm = std_weights(data.subset(rest), b_k)
        components.append(_fit_dr_program(L_std[rest], cp, cm, tuning, rho_star, nys))

    policy = Policy(features="L", decision=AggregateDecision(tuple(components)),
                    input_center=center, input_scale=scale)
    report = LearnReport(learner="dr", rho_grid=tuple(tuning.rho_grid), cv_values=cv,
                         rho_selected=rho_star, best_value=float(cv[best]),
                         hsic_gamma=hsic_gamma)
    return policy, report
