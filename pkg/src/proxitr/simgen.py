"""Synthetic-scenario generator with analytic ground truth.

Four catalog scenarios (L1, L2 with a bridge linear in L and W; N1, N2
nonlinear) share one structural model: two core covariates L, a logistic
treatment A given (U, L), a trivariate normal (Z, W, U) given (A, L) with
W independent of (A, Z) given (U, L), and an outcome built from the true
outcome bridge.  The parameterization satisfies four derived consistency
identities; both bridges, the propensities, and the in-class optimal
policies are available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SampleTable
from .errors import InvalidArgumentError

__all__ = [
    "SCENARIO_NAMES",
    "SimScenario",
    "GeneratedData",
    "OraclePolicies",
    "AnalyticBridges",
    "scenario",
    "generate",
    "noise_free_testset",
    "oracle_policies",
    "analytic_bridges",
]

SCENARIO_NAMES = ("L1", "L2", "N1", "N2")

GROUND_TRUTH_HEADER = ["U", "mu_Y", "prop_true"]


# ---------------------------------------------------------------------------
# outcome models (true bridge h0 and the W-noise loading omega)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearOutcome:
    c0: float
    c1: float
    c2: float
    c3: np.ndarray
    c4: float
    c5: np.ndarray
    omega: float

    def h0(self, W, a, Lc):
        W = np.asarray(W, dtype=float)
        on = 1.0 if a == 1 else 0.0
        return (self.c0 + self.c1 * on + self.c2 * W + Lc @ self.c3
                + on * (self.c4 * W + Lc @ self.c5))


@dataclass(frozen=True)
class NonlinearOutcome:
    c0: float
    c1_on: float          # c1(A) = c1_on * 1(A=1)
    c2: float
    c4: float
    omega: float
    name: str

    def _c3(self, Lc):
        return (Lc ** 2).sum(axis=-1)

    def _c5(self, Lc):
        if self.name == "N1":
            return np.abs(Lc[..., 0] - 1.0) - np.abs(Lc[..., 1] + 1.0)
        return -6.0 * Lc[..., 0] * Lc[..., 1]

    def _c6(self, Lc):
        if self.name == "N1":
            return np.sin(Lc[..., 0]) - 2.0 * np.cos(Lc[..., 1])
        return np.zeros(Lc.shape[:-1])

    def h0(self, W, a, Lc):
        W = np.asarray(W, dtype=float)
        on = 1.0 if a == 1 else 0.0
        return (self.c0 + self.c1_on * on + self.c2 * W + self._c3(Lc)
                + on * (self.c4 * W + self._c5(Lc) + W * self._c6(Lc)))


# ---------------------------------------------------------------------------
# the scenario record
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimScenario:
    name: str
    noise_dims: int
    seed: int
    # proxy/confounder means
    alpha0: float
    alpha_a: float
    alpha_l: np.ndarray
    mu0: float
    mu_a: float
    mu_l: np.ndarray
    kappa0: float
    kappa_a: float
    kappa_l: np.ndarray
    sigma: np.ndarray          # covariance of (Z, W, U)
    # treatment-bridge parameters
    t0: float
    tz: float
    ta: float
    tl: np.ndarray
    # derived regression of Z on (U, A, L)
    theta0: float
    theta_a: float
    theta_l: np.ndarray
    theta_u: float
    outcome: object

    @property
    def core_dims(self) -> int:
        return self.alpha_l.size

    def core(self, L) -> np.ndarray:
        L = np.asarray(L, dtype=float)
        if L.ndim == 1:
            L = L[:, None]
        return L[:, :self.core_dims]

    # -- structural pieces --------------------------------------------------

    def ew_given_ul(self, U, L) -> np.ndarray:
        """E(W | U, L), free of A and Z by construction."""
        Lc = self.core(L)
        ratio = self.sigma[1, 2] / self.sigma[2, 2]
        return (self.mu0 + Lc @ self.mu_l
                + ratio * (np.asarray(U, dtype=float) - self.kappa0 - Lc @ self.kappa_l))

    def ew_given_l(self, L) -> np.ndarray:
        """E(W | L) = mu0 + mu_l 'L + mu_a Pr(A=1 | L)."""
        Lc = self.core(L)
        return self.mu0 + Lc @ self.mu_l + self.mu_a * self.prop_marginal(L)

    def ew_given_lz(self, L, Z) -> np.ndarray:
        """E(W | L, Z) from the normal mixture over the two arms."""
        Lc = self.core(L)
        Z = np.asarray(Z, dtype=float).reshape(len(Lc))
        sz2, szw = self.sigma[0, 0], self.sigma[0, 1]
        p1 = self.prop_marginal(L)
        num = np.zeros(len(Lc))
        den = np.zeros(len(Lc))
        for a, pa in ((1, p1), (-1, 1.0 - p1)):
            on = 1.0 if a == 1 else 0.0
            mz = self.alpha0 + self.alpha_a * on + Lc @ self.alpha_l
            mw = self.mu0 + self.mu_a * on + Lc @ self.mu_l
            dens = pa * np.exp(-0.5 * (Z - mz) ** 2 / sz2)
            num += dens * (mw + (szw / sz2) * (Z - mz))
            den += dens
        return num / den

    def prop_given_ul(self, U, L) -> np.ndarray:
        """Pr(A = 1 | U, L)."""
        Lc = self.core(L)
        s2 = self._sigma2_z_given_ual()
        expo = (self.t0 + self.ta + Lc @ self.tl
                + self.tz * (self.theta0 + self.theta_a
                             + self.theta_u * np.asarray(U, dtype=float)
                             + Lc @ self.theta_l)
                + 0.5 * self.tz ** 2 * s2)
        return 1.0 / (1.0 + np.exp(expo))

    def prop_marginal(self, L) -> np.ndarray:
        """Pr(A = 1 | L) after integrating U out."""
        Lc = self.core(L)
        s2 = self._sigma2_z_given_ual()
        tzu = self.tz * self.theta_u
        const = (self.t0 + self.ta + self.tz * (self.theta0 + self.theta_a)
                 + 0.5 * self.tz ** 2 * s2
                 + tzu * (self.kappa0 + self.kappa_a)
                 + 0.5 * self.sigma[2, 2] * tzu ** 2)
        lin = self.tl + self.tz * self.theta_l + tzu * self.kappa_l
        return 1.0 / (1.0 + np.exp(const + Lc @ lin))

    def q0(self, Z, a: int, L) -> np.ndarray:
        Lc = self.core(L)
        Z = np.asarray(Z, dtype=float).reshape(len(Lc))
        on = 1.0 if a == 1 else 0.0
        return 1.0 + np.exp(a * (self.t0 + self.tz * Z + self.ta * on + Lc @ self.tl))

    def h0(self, W, a: int, L) -> np.ndarray:
        Lc = self.core(L)
        W = np.asarray(W, dtype=float).reshape(len(Lc))
        return self.outcome.h0(W, a, Lc)

    def mean_y(self, W, U, A, L) -> np.ndarray:
        """E(Y | W, U, A, Z, L): the bridge at E(W | U, L) plus the
        omega-scaled deviation of W from that mean (Z drops out)."""
        ew = self.ew_given_ul(U, L)
        out = np.empty(len(ew))
        W = np.asarray(W, dtype=float).reshape(len(ew))
        A = np.asarray(A)
        for a in (1, -1):
            m = A == a
            out[m] = self.outcome.h0(ew[m], a, self.core(L)[m]) \
                + self.outcome.omega * (W[m] - ew[m])
        return out

    def _sigma2_z_given_ual(self) -> float:
        sz2, su2, szu = self.sigma[0, 0], self.sigma[2, 2], self.sigma[0, 2]
        return sz2 * (1.0 - szu ** 2 / (sz2 * su2))

    def _sigma2_u_given_wal(self) -> float:
        sw2, su2, swu = self.sigma[1, 1], self.sigma[2, 2], self.sigma[1, 2]
        return su2 * (1.0 - swu ** 2 / (su2 * sw2))

    def constraint_residuals(self) -> dict:
        """The four consistency identities tying the parameterization
        together; all must vanish."""
        szw, szu, swu = self.sigma[0, 1], self.sigma[0, 2], self.sigma[1, 2]
        su2, sw2 = self.sigma[2, 2], self.sigma[1, 1]
        return {
            "treatment_offset": self.ta + self.tz ** 2 * self._sigma2_z_given_ual()
                                + self.tz * self.theta_a,
            "w_indep_az": szw * su2 - swu * szu,
            "w_mean_shift": self.mu_a * su2 - swu * self.kappa_a,
            "odds_ratio": -self.theta_u * self.tz * self._sigma2_u_given_wal()
                          - (self.kappa_a - swu * self.mu_a / sw2),
        }


_OUTCOMES = {
    "L1": LinearOutcome(c0=2.0, c1=0.5, c2=8.0, c3=np.array([0.25, 0.25]),
                        c4=0.25, c5=np.array([3.0, -5.0]), omega=2.0),
    "L2": LinearOutcome(c0=2.0, c1=0.5, c2=8.0, c3=np.array([0.25, 0.25]),
                        c4=0.0, c5=np.array([3.0, -5.0]), omega=2.0),
    "N1": NonlinearOutcome(c0=2.0, c1_on=2.3, c2=4.0, c4=-2.5, omega=2.0, name="N1"),
    "N2": NonlinearOutcome(c0=2.0, c1_on=0.25, c2=5.0, c4=0.0, omega=2.0, name="N2"),
}

_PROP_L_TARGET = 0.1875  # per-component L coefficient of the exponent in Pr(A=1|U,L)


def scenario(name: str, noise_dims: int = 0, seed: int = 0) -> SimScenario:
    """Build a catalog scenario and verify its consistency identities."""
    if name not in SCENARIO_NAMES:
        raise InvalidArgumentError(f"unknown scenario {name!r}; choose from {SCENARIO_NAMES}")
    if noise_dims < 0:
        raise InvalidArgumentError("noise_dims must be nonnegative")
    sigma = np.array([[1.0, 0.25, 0.5],
                      [0.25, 1.0, 0.5],
                      [0.5, 0.5, 1.0]])
    alpha_l = np.array([0.25, 0.25])
    kappa_l = np.array([0.25, 0.25])
    mu_l = np.array([0.25, 0.25])
    ratio_zu = sigma[0, 2] / sigma[2, 2]
    theta0 = 0.25 - ratio_zu * 0.25
    theta_a = 0.25 - ratio_zu * 0.25
    theta_l = alpha_l - ratio_zu * kappa_l
    theta_u = ratio_zu
    t0, tz = 0.25, -0.5
    s2_z = sigma[0, 0] * (1.0 - sigma[0, 2] ** 2 / (sigma[0, 0] * sigma[2, 2]))
    ta = -tz ** 2 * s2_z - tz * theta_a
    tl = np.full(2, _PROP_L_TARGET) - tz * theta_l
    scn = SimScenario(
        name=name, noise_dims=noise_dims, seed=seed,
        alpha0=0.25, alpha_a=0.25, alpha_l=alpha_l,
        mu0=0.25, mu_a=0.125, mu_l=mu_l,
        kappa0=0.25, kappa_a=0.25, kappa_l=kappa_l,
        sigma=sigma, t0=t0, tz=tz, ta=ta, tl=tl,
        theta0=theta0, theta_a=theta_a, theta_l=theta_l, theta_u=theta_u,
        outcome=_OUTCOMES[name],
    )
    residuals = scn.constraint_residuals()
    worst = max(abs(v) for v in residuals.values())
    if worst > 1e-10:
        raise InvalidArgumentError(f"scenario constraints violated: {residuals}")
    if np.any(np.linalg.eigvalsh(sigma) <= 0):
        raise InvalidArgumentError("proxy covariance is not positive definite")
    return scn


# ---------------------------------------------------------------------------
# data generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GeneratedData:
    """A sample plus the hidden ground-truth columns.

    Learners accept only the embedded SampleTable, so the hidden columns
    (the confounder U, the conditional outcome mean, the true propensity)
    cannot leak into estimation.
    """

    table: SampleTable
    U: np.ndarray
    mu: np.ndarray
    prop_plus: np.ndarray
    scenario: str
    seed: int
    n: int
    noise_free: bool

    def ground_truth_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(GROUND_TRUTH_HEADER) + "\n")
            for u, m, p in zip(self.U, self.mu, self.prop_plus):
                fh.write(f"{u:.17g},{m:.17g},{p:.17g}\n")

    @classmethod
    def from_csv(cls, data_path, truth_path, scenario_name: str = "",
                 seed: int = -1, noise_free: bool = False) -> "GeneratedData":
        table = SampleTable.from_csv(data_path)
        with open(truth_path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            if header != GROUND_TRUTH_HEADER:
                raise InvalidArgumentError(
                    f"ground-truth header {header!r} != {GROUND_TRUTH_HEADER!r}")
            rows = np.array([[float(v) for v in line.strip().split(",")]
                             for line in fh if line.strip()])
        if rows.shape[0] != table.n:
            raise InvalidArgumentError("ground-truth rows do not match data rows")
        return cls(table=table, U=rows[:, 0], mu=rows[:, 1], prop_plus=rows[:, 2],
                   scenario=scenario_name, seed=seed, n=table.n,
                   noise_free=noise_free)


def _streams(scn: SimScenario, test: bool):
    ss = np.random.SeedSequence(scn.seed)
    children = ss.spawn(10)
    block = children[5:] if test else children[:5]
    return [np.random.default_rng(c) for c in block]


def _generate(scn: SimScenario, n: int, noise_free: bool, test: bool) -> GeneratedData:
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng_l, rng_a, rng_zwu, rng_y, rng_noise = _streams(scn, test)
    Lc = rng_l.normal(0.25, 0.25, size=(n, scn.core_dims))
    p1 = scn.prop_marginal(Lc)
    A = np.where(rng_a.random(n) < p1, 1, -1)
    on = (A == 1).astype(float)
    means = np.column_stack([
        scn.alpha0 + scn.alpha_a * on + Lc @ scn.alpha_l,
        scn.mu0 + scn.mu_a * on + Lc @ scn.mu_l,
        scn.kappa0 + scn.kappa_a * on + Lc @ scn.kappa_l,
    ])
    chol = np.linalg.cholesky(scn.sigma)
    zwu = means + rng_zwu.standard_normal((n, 3)) @ chol.T
    Z, W, U = zwu[:, 0], zwu[:, 1], zwu[:, 2]
    mu = scn.mean_y(W, U, A, Lc)
    Y = mu if noise_free else mu + rng_y.uniform(-1.0, 1.0, size=n)
    if scn.noise_dims > 0:
        L = np.hstack([Lc, rng_noise.uniform(-1.0, 1.0, size=(n, scn.noise_dims))])
    else:
        L = Lc
    table = SampleTable(L=L, Z=Z[:, None], W=W[:, None], A=A, Y=Y)
    return GeneratedData(table=table, U=U, mu=mu, prop_plus=scn.prop_given_ul(U, L),
                         scenario=scn.name, seed=scn.seed, n=n, noise_free=noise_free)


def generate(scn: SimScenario, n: int) -> GeneratedData:
    """Draw n observations (with uniform outcome noise) from the scenario."""
    return _generate(scn, n, noise_free=False, test=False)


def noise_free_testset(scn: SimScenario, n_test: int) -> GeneratedData:
    """Draw a test set whose outcome equals the conditional mean exactly;
    uses RNG streams disjoint from generate()'s."""
    return _generate(scn, n_test, noise_free=True, test=True)


# ---------------------------------------------------------------------------
# analytic policies and bridges
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OraclePolicies:
    """Closed-form optimal rules of the scenario.

    All three are signs of the bridge contrast h0(w, +1, L) - h0(w, -1, L)
    evaluated at the conditional mean of W appropriate to each
    information set (the bridge is linear in w in every catalog scenario).
    """

    scn: SimScenario

    def _contrast_at(self, w, L) -> np.ndarray:
        Lc = self.scn.core(L)
        return self.scn.outcome.h0(w, 1, Lc) - self.scn.outcome.h0(w, -1, Lc)

    def d_star(self, L, U) -> np.ndarray:
        """Global optimum, uses the unobserved confounder."""
        vals = self._contrast_at(self.scn.ew_given_ul(U, L), L)
        return np.where(vals >= 0, 1, -1)

    def d1_star(self, L, Z) -> np.ndarray:
        """Optimum within rules of (L, Z)."""
        vals = self._contrast_at(self.scn.ew_given_lz(L, Z), L)
        return np.where(vals >= 0, 1, -1)

    def d3_star(self, L) -> np.ndarray:
        """Optimum within rules of L alone."""
        vals = self._contrast_at(self.scn.ew_given_l(L), L)
        return np.where(vals >= 0, 1, -1)


def oracle_policies(scn: SimScenario) -> OraclePolicies:
    return OraclePolicies(scn)


@dataclass(frozen=True)
class AnalyticBridges:
    """The true bridge functions packaged with the estimated-bridge
    interface, so learners and evaluators can run with truth plugged in."""

    scn: SimScenario

    def h(self, W, a: int, L) -> np.ndarray:
        return self.scn.h0(W, a, L)

    def q(self, Z, a: int, L) -> np.ndarray:
        return self.scn.q0(Z, a, L)

    def delta(self, W, L) -> np.ndarray:
        return self.h(W, 1, L) - self.h(W, -1, L)

    def refit(self, table: SampleTable, roles: tuple = ("h", "q"), seed=0):
        return self


def analytic_bridges(scn: SimScenario) -> AnalyticBridges:
    return AnalyticBridges(scn)
