"""Closed-form min-max RKHS estimation of the two confounding bridges.

The outcome bridge h solves E(Y | Z, A, L) = E{h(W, A, L) | Z, A, L} and the
treatment bridge q solves 1/Pr(A=a | W, L) = E{q(Z, a, L) | W, A=a, L}.  Both
are fitted per arm by an adversarial (min-max) kernel program whose solution
is available in closed form from the Gram matrices:

    h:  alpha = (K_H M_h K_H + 4*l1*l2*K_H)^+ K_H M_h y,
        M_h = K_F^{1/2} (xi/n * K_F + I)^{-1} K_F^{1/2}
    q:  alpha = (Kr^T M_q Kr + 4*m1*m2*K_Q)^+ Kr^T M_q 1,
        Kr  = diag{1(A_i=a)} K_Q,
        M_q = K_G^{1/2} (zeta/n * K_G + I)^{-1} K_G^{1/2}

K_H, K_F are built on (W, L) and (Z, L) of the arm subset; K_Q, K_G on
(Z, L) and (W, L) of all rows.  Matrix square roots use the symmetric
eigendecomposition with negative eigenvalues clipped at zero.  Gram matrices
may optionally be replaced by their Nystrom approximations for speed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import SampleTable, Standardization, standardize
from .errors import DegenerateDataError, InvalidArgumentError
from .kernels import KernelSpec, NystromMap, gamma_quantile_grid, gram, median_bandwidth, nystrom_fit

__all__ = [
    "KernelExpansion",
    "BridgeTuning",
    "BridgeTuningReport",
    "BridgePair",
    "varsigma",
    "tau",
    "solve_h",
    "solve_q",
    "tune_h",
    "tune_q",
    "fit_bridges",
]


def varsigma(n: int) -> float:
    """Default inverse-bandwidth scale for the adversary penalty."""
    return 5.0 / n ** 0.4


def tau(s: float, n: int) -> float:
    """Default ridge-penalty product at grid point s and sample size n."""
    return 0.5 * s * varsigma(n) ** 4


# ---------------------------------------------------------------------------
# kernel expansions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelExpansion:
    """A function f(x) = sum_i coefficients[i] * k(centers[i], x).

    When a Nystrom map is attached the kernel is the map's approximate
    kernel phi(c)^T phi(x); evaluation then reduces to a single feature
    product.
    """

    kernel: KernelSpec
    centers: np.ndarray
    coefficients: np.ndarray
    nystrom: NystromMap | None = None
    _feature_weights: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim == 1:
            centers = centers[:, None]
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.shape != (centers.shape[0],):
            raise InvalidArgumentError(
                f"coefficient count {coef.shape} does not match centers {centers.shape[0]}")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coefficients", coef)
        if self.nystrom is not None:
            fw = self.nystrom.features(centers).T @ coef
            object.__setattr__(self, "_feature_weights", fw)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if self.nystrom is not None:
            return self.nystrom.features(X) @ self._feature_weights
        return gram(self.kernel, X, self.centers) @ self.coefficients


# ---------------------------------------------------------------------------
# closed-form solver core
# ---------------------------------------------------------------------------

def _psd_eig(K: np.ndarray):
    """Eigenpairs of a symmetric PSD matrix with negatives clipped to zero.

    All directions are kept; rank truncation happens only in the final
    pseudoinverse solve, so the exact path applies the documented
    tolerance to one spectrum.
    """
    d, v = np.linalg.eigh((K + K.T) / 2.0)
    return v, np.clip(d, 0.0, None)


def _factor_eig(phi: np.ndarray):
    """Eigenpairs of K = phi @ phi.T through the small m x m cross product."""
    g = phi.T @ phi
    d, b = np.linalg.eigh((g + g.T) / 2.0)
    tol = max(phi.shape) * np.finfo(float).eps * float(d.max(initial=0.0))
    keep = d > tol
    d, b = d[keep], b[:, keep]
    return phi @ (b / np.sqrt(d)), d


def _psd_solve(G: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Pseudoinverse solve G^+ rhs for symmetric PSD G."""
    e, q = np.linalg.eigh((G + G.T) / 2.0)
    tol = G.shape[0] * np.finfo(float).eps * max(float(e.max(initial=0.0)), 0.0)
    inv = np.where(e > tol, 1.0 / np.where(e > tol, e, 1.0), 0.0)
    return q @ (inv * (q.T @ rhs))


class _GramFactor:
    """Eigen-representation of a Gram matrix, exact or Nystrom-approximated."""

    def __init__(self, kernel: KernelSpec, X: np.ndarray, nystrom_m: int | None, rng):
        self.kernel = kernel
        self.X = X
        if nystrom_m is None:
            self.map = None
            self.phi = None
            self.V, self.d = _psd_eig(gram(kernel, X))
        else:
            seed = int(rng.integers(0, 2 ** 32)) if rng is not None else 0
            self.map = nystrom_fit(kernel, X, m=min(nystrom_m, X.shape[0]), seed=seed)
            self.phi = self.map.features(X)
            self.V, self.d = _factor_eig(self.phi)

    def expansion(self, alpha: np.ndarray) -> KernelExpansion:
        return KernelExpansion(kernel=self.kernel, centers=self.X,
                               coefficients=alpha, nystrom=self.map)

    def predictor(self, X2: np.ndarray):
        """Evaluator alpha -> expansion values at fixed rows X2; shares the
        cross-kernel work across repeated solves."""
        if self.map is not None:
            phi2 = self.map.features(X2)
            return lambda alpha: phi2 @ (self.phi.T @ alpha)
        k2 = gram(self.kernel, X2, self.X)
        return lambda alpha: k2 @ alpha


class _MinmaxProblem:
    """Shared pieces of the closed form; solve() varies only the penalty."""

    def __init__(self, out: _GramFactor, adv: _GramFactor, ratio: float,
                 target: np.ndarray, indicator: np.ndarray | None = None):
        m = adv.d / (1.0 + ratio * adv.d)
        vf = adv.V if indicator is None else indicator[:, None] * adv.V
        B = out.V.T @ vf
        self.rhs = out.d * (B @ (m * (adv.V.T @ target)))
        self.core = (out.d[:, None] * ((B * m) @ B.T)) * out.d[None, :]
        self.out = out

    def solve(self, lam4: float) -> np.ndarray:
        G = self.core + np.diag(lam4 * self.out.d)
        return self.out.V @ _psd_solve(G, self.rhs)


def _m_quadform(adv: _GramFactor, ratio: float, r: np.ndarray) -> float:
    """r^T M r with M = K^{1/2}(ratio*K + I)^{-1}K^{1/2} for the factor."""
    m = adv.d / (1.0 + ratio * adv.d)
    proj = adv.V.T @ r
    return float(proj @ (m * proj))


def _nys_size(setting, n: int) -> int | None:
    if setting is None:
        return None
    if setting == "auto":
        return min(n, int(2 * np.ceil(np.sqrt(n))))
    return min(int(setting), n)


def _h_features(table: SampleTable):
    return np.hstack([table.W, table.L]), np.hstack([table.Z, table.L])


def _q_features(table: SampleTable):
    return np.hstack([table.Z, table.L]), np.hstack([table.W, table.L])


def solve_h(data: SampleTable, kernel_h: KernelSpec, kernel_f: KernelSpec,
            xi: float, lambda_product: float, nystrom=None,
            rng=None) -> KernelExpansion:
    """Closed-form outcome-bridge fit on an arm-restricted table.

    ``data`` must contain only the rows of one treatment arm; the returned
    expansion is a function of the (W, L) features.
    """
    if data.n == 0:
        raise DegenerateDataError("empty arm subset")
    xh, xf = _h_features(data)
    out = _GramFactor(kernel_h, xh, _nys_size(nystrom, data.n), rng)
    adv = _GramFactor(kernel_f, xf, _nys_size(nystrom, data.n), rng)
    prob = _MinmaxProblem(out, adv, xi / data.n, data.Y)
    return out.expansion(prob.solve(4.0 * lambda_product))


def solve_q(data: SampleTable, arm: int, kernel_q: KernelSpec, kernel_g: KernelSpec,
            zeta: float, mu_product: float, nystrom=None,
            rng=None) -> KernelExpansion:
    """Closed-form treatment-bridge fit for one arm, using all rows.

    The returned expansion is a function of the (Z, L) features; its
    centers are all n rows.
    """
    indicator = (data.A == arm).astype(float)
    if indicator.sum() == 0:
        raise DegenerateDataError(f"arm {arm} absent from data")
    xq, xg = _q_features(data)
    out = _GramFactor(kernel_q, xq, _nys_size(nystrom, data.n), rng)
    adv = _GramFactor(kernel_g, xg, _nys_size(nystrom, data.n), rng)
    prob = _MinmaxProblem(out, adv, zeta / data.n, np.ones(data.n), indicator=indicator)
    return out.expansion(prob.solve(4.0 * mu_product))


# ---------------------------------------------------------------------------
# cross-validated tuning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BridgeTuning:
    """Grids and defaults for the bridge tuning protocol.

    ``xi`` and ``lambda_product`` default to 1/varsigma(n)^2 and tau(s, n)
    at the relevant subset sizes when left as None.  ``nystrom`` may be
    None (exact Gram matrices), "auto" (2*ceil(sqrt(n)) landmarks) or an
    integer landmark count.
    """

    s_grid: tuple = (0.02, 0.2, 2.0, 20.0)
    folds: int = 5
    gamma_quantiles: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    xi: float | None = None
    lambda_product: float | None = None
    nystrom: object = None

    def __post_init__(self):
        if self.folds < 2:
            raise InvalidArgumentError("need at least 2 folds")
        if len(self.s_grid) == 0:
            raise InvalidArgumentError("s_grid is empty")


@dataclass(frozen=True)
class BridgeTuningReport:
    """Everything needed to reproduce or refit a tuned bridge."""

    role: str                 # "h" or "q"
    arm: int
    gamma_selected: float
    gamma_grid: np.ndarray
    gamma_adversary: float
    s_selected: float
    s_grid: tuple
    loss_surface: np.ndarray  # len(gamma_grid) x len(s_grid), fold-averaged
    folds: int
    nystrom: object
    n_fit: int
    xi: float
    lambda_product: float


def _fold_ids(n: int, k: int, rng) -> np.ndarray:
    ids = np.arange(n) % k
    rng.shuffle(ids)
    return ids


def _check_folds(counts, what: str):
    if np.any(np.asarray(counts) < 2):
        raise DegenerateDataError(f"{what} has a fold with fewer than 2 observations")


def tune_h(data: SampleTable, arm: int, tuning: BridgeTuning,
           seed=0) -> tuple[KernelExpansion, BridgeTuningReport]:
    """Cross-validated outcome-bridge fit for one arm.

    Grid-searches the (W, L)-kernel bandwidth over quantiles of arm
    pairwise distances and the penalty scale s; the (Z, L)-adversary
    bandwidth is set once by the median heuristic.  The validation loss of
    a fold is r^T M_h r / n_val^2 on held-out residuals.  The final fit
    uses the argmin cell at full-arm penalty defaults.
    """
    rng = np.random.default_rng(seed)
    idx = data.arm_indices(arm)
    if idx.size < 2 * tuning.folds:
        raise DegenerateDataError(
            f"arm {arm} has {idx.size} rows; need at least {2 * tuning.folds}")
    sub = data.subset(idx)
    xh, xf = _h_features(sub)
    gamma_f = median_bandwidth(xf)
    gammas = gamma_quantile_grid(xh, tuning.gamma_quantiles)
    kernel_f = KernelSpec(gamma_f, xf.shape[1])
    ids = _fold_ids(sub.n, tuning.folds, rng)
    _check_folds(np.bincount(ids, minlength=tuning.folds), f"arm {arm}")
    loss = np.zeros((len(gammas), len(tuning.s_grid)))
    for k in range(tuning.folds):
        tr, va = ids != k, ids == k
        ntr, nva = int(tr.sum()), int(va.sum())
        m_tr = _nys_size(tuning.nystrom, ntr)
        adv = _GramFactor(kernel_f, xf[tr], m_tr, rng)
        adv_val = _GramFactor(kernel_f, xf[va], _nys_size(tuning.nystrom, nva), rng)
        xi_tr = tuning.xi if tuning.xi is not None else 1.0 / varsigma(ntr) ** 2
        xi_va = tuning.xi if tuning.xi is not None else 1.0 / varsigma(nva) ** 2
        y_tr, y_va = sub.Y[tr], sub.Y[va]
        for gi, g in enumerate(gammas):
            kernel_h = KernelSpec(g, xh.shape[1])
            out = _GramFactor(kernel_h, xh[tr], m_tr, rng)
            prob = _MinmaxProblem(out, adv, xi_tr / ntr, y_tr)
            predict = out.predictor(xh[va])
            for si, s in enumerate(tuning.s_grid):
                lam = (tuning.lambda_product if tuning.lambda_product is not None
                       else tau(s, ntr))
                alpha = prob.solve(4.0 * lam)
                r = y_va - predict(alpha)
                loss[gi, si] += _m_quadform(adv_val, xi_va / nva, r) / nva ** 2
    loss /= tuning.folds
    gi, si = np.unravel_index(int(np.argmin(loss)), loss.shape)
    g_star, s_star = float(gammas[gi]), float(tuning.s_grid[si])
    xi_full = tuning.xi if tuning.xi is not None else 1.0 / varsigma(sub.n) ** 2
    lam_full = (tuning.lambda_product if tuning.lambda_product is not None
                else tau(s_star, sub.n))
    report = BridgeTuningReport(
        role="h", arm=arm, gamma_selected=g_star, gamma_grid=gammas,
        gamma_adversary=gamma_f, s_selected=s_star, s_grid=tuple(tuning.s_grid),
        loss_surface=loss, folds=tuning.folds, nystrom=tuning.nystrom,
        n_fit=sub.n, xi=xi_full, lambda_product=lam_full)
    expansion = solve_h(sub, KernelSpec(g_star, xh.shape[1]), kernel_f,
                        xi_full, lam_full, nystrom=tuning.nystrom, rng=rng)
    return expansion, report


def tune_q(data: SampleTable, arm: int, tuning: BridgeTuning,
           seed=0) -> tuple[KernelExpansion, BridgeTuningReport]:
    """Cross-validated treatment-bridge fit for one arm.

    Mirrors the outcome tuning with held-out residuals
    r_i = 1(A_i = a) q(Z_i, a, L_i) - 1 scored through M_q, and the
    per-arm counts of each fold driving the penalty defaults.
    """
    rng = np.random.default_rng(seed)
    if not np.any(data.A == arm):
        raise DegenerateDataError(f"arm {arm} absent from data")
    xq, xg = _q_features(data)
    gamma_g = median_bandwidth(xg)
    gammas = gamma_quantile_grid(xq, tuning.gamma_quantiles, subset=data.arm_indices(arm))
    kernel_g = KernelSpec(gamma_g, xg.shape[1])
    ids = _fold_ids(data.n, tuning.folds, rng)
    in_arm = data.A == arm
    arm_counts = [int(np.sum(in_arm & (ids == k))) for k in range(tuning.folds)]
    _check_folds(arm_counts, f"arm {arm}")
    loss = np.zeros((len(gammas), len(tuning.s_grid)))
    ones = np.ones(data.n)
    for k in range(tuning.folds):
        tr, va = ids != k, ids == k
        ntr, nva = int(tr.sum()), int(va.sum())
        na_tr, na_va = int(np.sum(in_arm & tr)), int(np.sum(in_arm & va))
        ind_tr, ind_va = in_arm[tr].astype(float), in_arm[va].astype(float)
        m_tr = _nys_size(tuning.nystrom, ntr)
        adv = _GramFactor(kernel_g, xg[tr], m_tr, rng)
        adv_val = _GramFactor(kernel_g, xg[va], _nys_size(tuning.nystrom, nva), rng)
        zeta_tr = tuning.xi if tuning.xi is not None else 1.0 / varsigma(na_tr) ** 2
        zeta_va = tuning.xi if tuning.xi is not None else 1.0 / varsigma(na_va) ** 2
        for gi, g in enumerate(gammas):
            kernel_q = KernelSpec(g, xq.shape[1])
            out = _GramFactor(kernel_q, xq[tr], m_tr, rng)
            prob = _MinmaxProblem(out, adv, zeta_tr / ntr, ones[tr], indicator=ind_tr)
            predict = out.predictor(xq[va])
            for si, s in enumerate(tuning.s_grid):
                mu = (tuning.lambda_product if tuning.lambda_product is not None
                      else tau(s, na_tr))
                alpha = prob.solve(4.0 * mu)
                r = ind_va * predict(alpha) - 1.0
                loss[gi, si] += _m_quadform(adv_val, zeta_va / nva, r) / nva ** 2
    loss /= tuning.folds
    gi, si = np.unravel_index(int(np.argmin(loss)), loss.shape)
    g_star, s_star = float(gammas[gi]), float(tuning.s_grid[si])
    n_arm = int(in_arm.sum())
    zeta_full = tuning.xi if tuning.xi is not None else 1.0 / varsigma(n_arm) ** 2
    mu_full = (tuning.lambda_product if tuning.lambda_product is not None
               else tau(s_star, n_arm))
    report = BridgeTuningReport(
        role="q", arm=arm, gamma_selected=g_star, gamma_grid=gammas,
        gamma_adversary=gamma_g, s_selected=s_star, s_grid=tuple(tuning.s_grid),
        loss_surface=loss, folds=tuning.folds, nystrom=tuning.nystrom,
        n_fit=data.n, xi=zeta_full, lambda_product=mu_full)
    expansion = solve_q(data, arm, KernelSpec(g_star, xq.shape[1]), kernel_g,
                        zeta_full, mu_full, nystrom=tuning.nystrom, rng=rng)
    return expansion, report


def _refit_from_report(table: SampleTable, report: BridgeTuningReport, rng) -> KernelExpansion:
    """Refit a bridge on new rows reusing the tuned bandwidths and s."""
    if report.role == "h":
        idx = table.arm_indices(report.arm)
        if idx.size == 0:
            raise DegenerateDataError(f"arm {report.arm} absent from refit data")
        sub = table.subset(idx)
        xh, xf = _h_features(sub)
        return solve_h(sub, KernelSpec(report.gamma_selected, xh.shape[1]),
                       KernelSpec(report.gamma_adversary, xf.shape[1]),
                       xi=1.0 / varsigma(sub.n) ** 2,
                       lambda_product=tau(report.s_selected, sub.n),
                       nystrom=report.nystrom, rng=rng)
    n_arm = int(np.sum(table.A == report.arm))
    if n_arm == 0:
        raise DegenerateDataError(f"arm {report.arm} absent from refit data")
    xq, xg = _q_features(table)
    return solve_q(table, report.arm, KernelSpec(report.gamma_selected, xq.shape[1]),
                   KernelSpec(report.gamma_adversary, xg.shape[1]),
                   zeta=1.0 / varsigma(n_arm) ** 2,
                   mu_product=tau(report.s_selected, n_arm),
                   nystrom=report.nystrom, rng=rng)


# ---------------------------------------------------------------------------
# the fitted pair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BridgePair:
    """Fitted outcome and treatment bridges with their tuning records.

    Evaluation accepts raw (unstandardized) inputs: features are mapped
    through the stored standardization, and h-values are returned on the
    original outcome scale.
    """

    h_plus: KernelExpansion
    h_minus: KernelExpansion
    q_plus: KernelExpansion
    q_minus: KernelExpansion
    standardization: Standardization
    h_reports: dict
    q_reports: dict

    def _features_h(self, W, L):
        s = self.standardization
        W = np.asarray(W, dtype=float)
        L = np.asarray(L, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        if L.ndim == 1:
            L = L[:, None]
        return np.hstack([(W - s.w_mean) / s.w_scale, (L - s.l_mean) / s.l_scale])

    def _features_q(self, Z, L):
        s = self.standardization
        Z = np.asarray(Z, dtype=float)
        L = np.asarray(L, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if L.ndim == 1:
            L = L[:, None]
        return np.hstack([(Z - s.z_mean) / s.z_scale, (L - s.l_mean) / s.l_scale])

    def h(self, W, a: int, L) -> np.ndarray:
        """Outcome bridge value h(W, a, L) on the original Y scale."""
        expansion = self.h_plus if a == 1 else self.h_minus
        s = self.standardization
        return expansion(self._features_h(W, L)) * s.y_scale + s.y_mean

    def q(self, Z, a: int, L) -> np.ndarray:
        """Treatment bridge value q(Z, a, L)."""
        expansion = self.q_plus if a == 1 else self.q_minus
        return expansion(self._features_q(Z, L))

    def delta(self, W, L) -> np.ndarray:
        """h(W, +1, L) - h(W, -1, L)."""
        x = self._features_h(W, L)
        s = self.standardization
        return (self.h_plus(x) - self.h_minus(x)) * s.y_scale

    def refit(self, table: SampleTable, roles: tuple = ("h", "q"),
              seed=0) -> "BridgePair":
        """Refit bridges on (a subset of) raw rows, reusing the tuned
        bandwidths and the full-sample standardization.  ``roles`` limits
        the work to the outcome ("h") or treatment ("q") side; the other
        side keeps the existing fit."""
        rng = np.random.default_rng(seed)
        std = self._apply_standardization(table)
        fits = {("h", 1): self.h_plus, ("h", -1): self.h_minus,
                ("q", 1): self.q_plus, ("q", -1): self.q_minus}
        for arm in (1, -1):
            if "h" in roles:
                fits[("h", arm)] = _refit_from_report(std, self.h_reports[arm], rng)
            if "q" in roles:
                fits[("q", arm)] = _refit_from_report(std, self.q_reports[arm], rng)
        return BridgePair(h_plus=fits[("h", 1)], h_minus=fits[("h", -1)],
                          q_plus=fits[("q", 1)], q_minus=fits[("q", -1)],
                          standardization=self.standardization,
                          h_reports=self.h_reports, q_reports=self.q_reports)

    def _apply_standardization(self, table: SampleTable) -> SampleTable:
        s = self.standardization
        return SampleTable(
            L=(table.L - s.l_mean) / s.l_scale,
            Z=(table.Z - s.z_mean) / s.z_scale,
            W=(table.W - s.w_mean) / s.w_scale,
            A=table.A,
            Y=(table.Y - s.y_mean) / s.y_scale,
            standardization=s,
        )


def fit_bridges(data: SampleTable, tuning: BridgeTuning | None = None,
                seed=0) -> BridgePair:
    """Standardize the table once, tune all four bridge functions, and
    return the assembled pair."""
    tuning = tuning or BridgeTuning()
    std = standardize(data)
    ss = np.random.SeedSequence(seed)
    seeds = ss.spawn(4)
    h_fits, h_reports, q_fits, q_reports = {}, {}, {}, {}
    for i, arm in enumerate((1, -1)):
        h_fits[arm], h_reports[arm] = tune_h(std, arm, tuning, seed=seeds[i])
        q_fits[arm], q_reports[arm] = tune_q(std, arm, tuning, seed=seeds[2 + i])
    return BridgePair(h_plus=h_fits[1], h_minus=h_fits[-1],
                      q_plus=q_fits[1], q_minus=q_fits[-1],
                      standardization=std.standardization,
                      h_reports=h_reports, q_reports=q_reports)
