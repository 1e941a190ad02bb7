"""Gaussian-kernel primitives shared by the estimation modules.

Provides Gram matrices, the median and HSIC bandwidth heuristics, and
Nystrom feature maps. The kernel is k(x, y) = exp(-gamma * ||x - y||^2)
with gamma > 0, so k(x, x) = 1 and 0 < k(x, y) <= 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateDataError, InvalidArgumentError

__all__ = [
    "KernelSpec",
    "NystromMap",
    "gram",
    "median_bandwidth",
    "gamma_quantile_grid",
    "hsic_bandwidth",
    "hsic_score",
    "nystrom_fit",
]


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel k(x, y) = exp(-gamma * ||x - y||^2)."""

    gamma: float
    input_dim: int

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise InvalidArgumentError(f"gamma must be positive, got {self.gamma}")
        if self.input_dim < 1:
            raise InvalidArgumentError(f"input_dim must be >= 1, got {self.input_dim}")


def _as_2d(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def gram(kernel: KernelSpec, X: np.ndarray, X2: np.ndarray | None = None) -> np.ndarray:
    """Gram matrix K[i, j] = exp(-gamma * ||X[i] - X2[j]||^2).

    With X2 omitted the matrix is symmetric positive semidefinite up to
    roundoff.
    """
    X = _as_2d(X)
    X2 = X if X2 is None else _as_2d(X2)
    if X.shape[1] != kernel.input_dim or X2.shape[1] != kernel.input_dim:
        raise InvalidArgumentError(
            f"column counts ({X.shape[1]}, {X2.shape[1]}) do not match "
            f"kernel input_dim {kernel.input_dim}"
        )
    d2 = cdist(X, X2, "sqeuclidean")
    return np.exp(-kernel.gamma * d2)


def _pairwise_sq_dists(X: np.ndarray, subset=None) -> np.ndarray:
    X = _as_2d(X)
    if subset is not None:
        X = X[np.asarray(subset)]
    if X.shape[0] < 2:
        raise DegenerateDataError("need at least 2 rows for pairwise distances")
    return pdist(X, "sqeuclidean")


def median_bandwidth(X: np.ndarray, subset=None) -> float:
    """Median heuristic: gamma with 1/gamma = median pairwise squared distance."""
    d2 = _pairwise_sq_dists(X, subset)
    med = float(np.median(d2))
    if med <= 0:
        raise DegenerateDataError("all rows identical; median pairwise distance is 0")
    return 1.0 / med


def gamma_quantile_grid(X: np.ndarray, quantiles, subset=None) -> np.ndarray:
    """Candidate bandwidths gamma_p with 1/gamma_p = p-quantile of the
    pairwise squared distances of X (restricted to ``subset`` if given)."""
    d2 = _pairwise_sq_dists(X, subset)
    q = np.quantile(d2, np.asarray(quantiles, dtype=float))
    if np.any(q <= 0):
        raise DegenerateDataError("quantile of pairwise distances is 0; too many ties")
    return 1.0 / q


def hsic_score(X: np.ndarray, labels: np.ndarray, weights: np.ndarray, gamma: float,
               block: int = 1024) -> float:
    """Weighted empirical HSIC between features X and discrete labels.

    Computes n^-2 * trace(K_x H K_y H) with H = diag(w) - w w^T and the
    target kernel K_y(y_i, y_j) = 1(y_i = y_j) / #{y_j = y_i}.  The label
    block structure reduces the trace to per-class quadratic forms; K_x is
    streamed in row blocks so no n x n matrix is materialized.
    """
    X = _as_2d(X)
    labels = np.asarray(labels)
    w = np.asarray(weights, dtype=float)
    n = X.shape[0]
    total = 0.0
    for lab in np.unique(labels):
        mask = (labels == lab).astype(float)
        n_c = mask.sum()
        u = w * mask - w * (w @ mask)  # H @ 1_c
        quad = 0.0
        for start in range(0, n, block):
            stop = min(start + block, n)
            d2 = cdist(X[start:stop], X, "sqeuclidean")
            quad += u[start:stop] @ (np.exp(-gamma * d2) @ u)
        total += quad / n_c
    return total / n ** 2


def hsic_bandwidth(X: np.ndarray, labels: np.ndarray, weights: np.ndarray,
                   candidates) -> float:
    """Pick the candidate gamma maximizing the weighted HSIC score.

    Ties are broken toward the smaller gamma.
    """
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise InvalidArgumentError("candidate list is empty")
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (-1, 1))):
        raise InvalidArgumentError("labels must be in {-1, +1}")
    if np.unique(labels).size < 2:
        raise DegenerateDataError("one label class absent")
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.isfinite(w).all():
        raise InvalidArgumentError("weights must be finite and nonnegative")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"weights must sum to 1, got {w.sum()!r}")
    order = np.argsort(candidates, kind="stable")
    scores = np.array([hsic_score(X, labels, w, g) for g in candidates[order]])
    return float(candidates[order][int(np.argmax(scores))])


@dataclass(frozen=True)
class NystromMap:
    """Finite-dimensional feature map phi with phi(x)^T phi(y) ~= k(x, y).

    phi(x) = whitening @ k(landmarks, x); the approximation is exact when
    x and y are landmarks (up to pseudoinverse tolerance).
    """

    landmarks: np.ndarray
    whitening: np.ndarray
    kernel: KernelSpec
    landmark_index: np.ndarray = field(default=None, repr=False)

    @property
    def n_features(self) -> int:
        return self.landmarks.shape[0]

    def features(self, X: np.ndarray) -> np.ndarray:
        """Map rows of X to feature vectors, shape (n, m)."""
        return gram(self.kernel, _as_2d(X), self.landmarks) @ self.whitening.T


def nystrom_fit(kernel: KernelSpec, X: np.ndarray, m: int | None = None,
                seed: int = 0) -> NystromMap:
    """Fit a Nystrom map on m landmarks sampled uniformly without replacement.

    Defaults to m = 2 * ceil(sqrt(n)).  The whitening is the pseudoinverse
    square root of the landmark Gram matrix.
    """
    X = _as_2d(X)
    n = X.shape[0]
    if m is None:
        m = min(n, int(2 * np.ceil(np.sqrt(n))))
    if m > n:
        raise InvalidArgumentError(f"m={m} exceeds n={n}")
    if m < 1:
        raise InvalidArgumentError(f"m must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    landmarks = X[idx]
    kmm = gram(kernel, landmarks)
    d, v = np.linalg.eigh((kmm + kmm.T) / 2.0)
    tol = m * np.finfo(float).eps * max(float(d.max(initial=0.0)), 0.0)
    inv_sqrt = np.where(d > tol, 1.0 / np.sqrt(np.where(d > tol, d, 1.0)), 0.0)
    whitening = (v * inv_sqrt) @ v.T
    return NystromMap(landmarks=landmarks, whitening=whitening, kernel=kernel,
                      landmark_index=idx)
