"""Value estimation for a fixed policy.

Three identified estimators (outcome, treatment, doubly robust with
EIF-based standard errors) plus the simulation oracles that weight by the
generator's true propensity.  Bridge arguments are callables
``h(W, a, L)`` / ``q(Z, a, L)`` or objects exposing such methods.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import SampleTable
from .errors import ContractViolationError
from .policy import Policy, dr_weights

__all__ = [
    "Z_975",
    "ValueEstimate",
    "value_outcome",
    "value_treatment",
    "value_dr",
    "value_oracle_noise_free",
    "value_oracle_ipw",
]

Z_975 = 1.959964


@dataclass(frozen=True)
class ValueEstimate:
    """Point value of a policy with optional EIF-based uncertainty."""

    point: float
    se: float | None
    ci: tuple | None
    estimator: str
    n_used: int

    def covers(self, truth: float) -> bool:
        if self.ci is None:
            raise ContractViolationError(f"{self.estimator} estimate has no interval")
        return self.ci[0] <= truth <= self.ci[1]


def _h_callable(h):
    return h if callable(h) else h.h


def _q_callable(q):
    return q if callable(q) else q.q


def _check_features(policy: Policy, allowed: tuple, estimator: str):
    if policy.features not in allowed:
        raise ContractViolationError(
            f"{estimator} value is identified only for policies on {allowed}, "
            f"got {policy.features!r}")


def value_outcome(data: SampleTable, h, policy: Policy) -> ValueEstimate:
    """Identified value through the outcome bridge:
    mean of h(W_i, d(L_i, Z_i), L_i)."""
    _check_features(policy, ("L", "LZ"), "outcome")
    h_fn = _h_callable(h)
    d = policy.decide(data.L, Z=data.Z)
    h1 = np.asarray(h_fn(data.W, 1, data.L), dtype=float)
    h0 = np.asarray(h_fn(data.W, -1, data.L), dtype=float)
    point = float(np.mean(np.where(d == 1, h1, h0)))
    return ValueEstimate(point=point, se=None, ci=None, estimator="outcome",
                         n_used=data.n)


def value_treatment(data: SampleTable, q, policy: Policy) -> ValueEstimate:
    """Identified value through the treatment bridge:
    mean of Y_i q(Z_i, A_i, L_i) 1(d(L_i, W_i) = A_i)."""
    _check_features(policy, ("L", "LW"), "treatment")
    q_fn = _q_callable(q)
    d = policy.decide(data.L, W=data.W)
    q_at_a = np.where(data.A == 1,
                      np.asarray(q_fn(data.Z, 1, data.L), dtype=float),
                      np.asarray(q_fn(data.Z, -1, data.L), dtype=float))
    point = float(np.mean(data.Y * q_at_a * (d == data.A)))
    return ValueEstimate(point=point, se=None, ci=None, estimator="treatment",
                         n_used=data.n)


def value_dr(data: SampleTable, h, q, policy: Policy) -> ValueEstimate:
    """Doubly robust value with EIF standard error and a normal 95% CI."""
    _check_features(policy, ("L",), "doubly robust")
    c_plus, c_minus = dr_weights(data, _h_callable(h), _q_callable(q))
    d = policy.decide(data.L)
    c_d = np.where(d == 1, c_plus, c_minus)
    point = float(np.mean(c_d))
    psi = c_d - point
    se = float(np.std(psi, ddof=1) / np.sqrt(data.n))
    ci = (point - Z_975 * se, point + Z_975 * se)
    return ValueEstimate(point=point, se=se, ci=ci, estimator="doubly_robust",
                         n_used=data.n)


def _oracle_point(y, table: SampleTable, prop_plus, policy: Policy) -> float:
    d = policy.decide(table.L, Z=table.Z, W=table.W)
    p_a = np.where(table.A == 1, prop_plus, 1.0 - prop_plus)
    return float(np.mean(y * (d == table.A) / p_a))


def value_oracle_noise_free(test_data, policy: Policy) -> ValueEstimate:
    """Simulation oracle on a noise-free test set: inverse-propensity
    weighting of the true conditional means by the true propensity.

    ``test_data`` must carry the hidden ground-truth columns (``mu`` and
    ``prop_plus``); at large test sizes the point is treated as truth.
    """
    mu = getattr(test_data, "mu", None)
    prop = getattr(test_data, "prop_plus", None)
    if mu is None or prop is None:
        raise ContractViolationError("test data lacks ground-truth columns mu/prop_plus")
    point = _oracle_point(mu, test_data.table, prop, policy)
    return ValueEstimate(point=point, se=None, ci=None,
                         estimator="oracle_noise_free", n_used=test_data.table.n)


def value_oracle_ipw(test_data, policy: Policy) -> ValueEstimate:
    """Simulation oracle applied to observed (noisy) outcomes."""
    prop = getattr(test_data, "prop_plus", None)
    if prop is None:
        raise ContractViolationError("test data lacks ground-truth column prop_plus")
    point = _oracle_point(test_data.table.Y, test_data.table, prop, policy)
    return ValueEstimate(point=point, se=None, ci=None,
                         estimator="oracle_ipw", n_used=test_data.table.n)
