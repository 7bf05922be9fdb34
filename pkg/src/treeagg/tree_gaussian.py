"""Tree-structured Gaussian models.

Maximum-likelihood trees (Chow-Liu via Kruskal), tree-constrained precision
matrices assembled from pairwise covariance blocks, Gaussian conditionals of
hidden given observed variables, and the per-edge log weights that turn the
tree posterior into a product over edges.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DegenerateWeightsError,
    InvalidPrecisionError,
    PerfectCorrelationError,
    SingularPrecisionError,
)
from .graphs import UnionFind
from .matrices import EmpiricalCovariance, PartitionedPrecision, check_symmetric

CORRELATION_LIMIT = 1.0 - 1e-12


def _as_cov_matrix(cov) -> np.ndarray:
    if isinstance(cov, EmpiricalCovariance):
        return cov.matrix
    return check_symmetric(np.asarray(cov, dtype=float), "covariance")


def correlation_matrix(cov) -> np.ndarray:
    s = _as_cov_matrix(cov)
    d = np.sqrt(np.diag(s))
    if np.any(d <= 0):
        raise ValueError("covariance diagonal must be strictly positive")
    rho = s / np.outer(d, d)
    np.fill_diagonal(rho, 1.0)
    return rho


def gaussian_mutual_information(cov) -> np.ndarray:
    """Pairwise Gaussian mutual information -log(1 - rho^2)/2.

    Even in rho, so negatively correlated pairs rank by dependence strength.
    Rejects |rho| at or beyond 1 (perfectly dependent variables).
    """
    rho = correlation_matrix(cov)
    off = ~np.eye(rho.shape[0], dtype=bool)
    if np.any(np.abs(rho[off]) >= CORRELATION_LIMIT):
        worst = np.abs(rho[off]).max()
        raise PerfectCorrelationError(f"|correlation| = {worst:.15g} is at/above 1")
    mi = -0.5 * np.log1p(-(rho**2), where=off, out=np.zeros_like(rho))
    np.fill_diagonal(mi, 0.0)
    return mi


def maximum_spanning_tree(
    weights: np.ndarray, forbidden: np.ndarray | None = None
) -> tuple[tuple[int, int], ...]:
    """Kruskal maximum spanning tree, ties broken by lexicographic edge order."""
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    candidates = []
    for i in range(n):
        for j in range(i + 1, n):
            if forbidden is not None and forbidden[i, j]:
                continue
            candidates.append((-w[i, j], i, j))
    candidates.sort()
    uf = UnionFind(n)
    edges = []
    for _, i, j in candidates:
        if uf.union(i, j):
            edges.append((i, j))
            if len(edges) == n - 1:
                break
    if len(edges) != n - 1:
        raise DegenerateWeightsError("allowed edges do not connect all nodes")
    return tuple(sorted(edges))


def chow_liu(cov) -> tuple[tuple[int, int], ...]:
    """Maximum-likelihood spanning tree under Gaussian mutual-information weights."""
    return maximum_spanning_tree(gaussian_mutual_information(cov))


def tree_precision_from_cov(tree_edges, cov) -> np.ndarray:
    """Precision of the tree-structured MLE matching cov on nodes and tree edges.

    Assembled as sum_i [1/S_ii] plus, per edge, the embedded inverse of the 2x2
    covariance block minus the two univariate terms.  The inverse of the result
    reproduces cov exactly on the diagonal and on every tree-edge block.
    """
    s = _as_cov_matrix(cov)
    n = s.shape[0]
    k = np.diag(1.0 / np.diag(s))
    for i, j in tree_edges:
        det = s[i, i] * s[j, j] - s[i, j] ** 2
        if det <= 1e-12 * s[i, i] * s[j, j]:
            raise PerfectCorrelationError(
                f"covariance block ({i}, {j}) is numerically singular"
            )
        k[i, i] += s[j, j] / det - 1.0 / s[i, i]
        k[j, j] += s[i, i] / det - 1.0 / s[j, j]
        k[i, j] -= s[i, j] / det
        k[j, i] = k[i, j]
    return k


def conditional_hidden_given_observed(
    precision: PartitionedPrecision, x_observed: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian conditional of the hidden block: mean -K_H^-1 K_HO x_O, precision K_H."""
    x = np.asarray(x_observed, dtype=float)
    k_hh = precision.k_hh
    if precision.n_hidden == 0:
        return np.zeros(0), k_hh.copy()
    if np.linalg.cond(k_hh) > 1e12:
        raise SingularPrecisionError("hidden-block precision is numerically singular")
    mean = -np.linalg.solve(k_hh, precision.k_ho @ x)
    return mean, k_hh.copy()


def log_marginal_tree_weight(
    precision: PartitionedPrecision,
    prior: np.ndarray,
    cov,
    n: int | None = None,
) -> np.ndarray:
    """Per-edge log gamma_ij = log(pi_ij d_ij m_ij) of the tree posterior.

    d_ij = ((K_ii K_jj - K_ij^2) / (K_ii K_jj))^(n/2) for every pair; the trace
    factor m is exp(-n K_ij S_ij) for observed pairs, exp((n/2) K_ih
    (K_HO S)_hi / K_hh) for observed-hidden pairs and 1 for hidden pairs.
    Entries with pi_ij = 0 come out as -inf.
    """
    if isinstance(cov, EmpiricalCovariance):
        sigma = cov.matrix
        n = cov.n if n is None else int(n)
    else:
        sigma = _as_cov_matrix(cov)
        if n is None:
            raise ValueError("sample count n is required with a bare covariance")
    p, r = precision.n_observed, precision.n_hidden
    size = p + r
    kmat = precision.matrix
    prior = check_symmetric(np.asarray(prior, dtype=float), "prior")
    if prior.shape[0] != size:
        raise ValueError("prior size does not match the precision")
    precision.require_positive_hidden_diagonal()

    kd = np.diag(kmat)
    active = prior > 0.0
    np.fill_diagonal(active, False)
    denom = np.outer(kd, kd)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = 1.0 - kmat**2 / denom
    if np.any(ratio[active] <= 0.0):
        raise InvalidPrecisionError(
            "K_ii K_jj - K_ij^2 <= 0 on a candidate edge; determinant factor undefined"
        )
    half_n = 0.5 * n
    log_d = np.where(active, half_n * np.log(np.where(active, ratio, 1.0)), 0.0)

    log_m = np.zeros((size, size))
    log_m[:p, :p] = -n * kmat[:p, :p] * sigma
    if r:
        cross = kmat[p:, :p] @ sigma  # (r, p): sum_k K_hk S_ki
        k_hidden_diag = kd[p:]
        log_f = half_n * kmat[:p, p:] * cross.T / k_hidden_diag[None, :]
        log_m[:p, p:] = log_f
        log_m[p:, :p] = log_f.T
    # hidden-hidden block keeps log m = 0

    with np.errstate(divide="ignore"):
        log_prior = np.where(active, np.log(np.where(active, prior, 1.0)), -np.inf)
    log_gamma = np.where(active, log_prior + log_d + log_m, -np.inf)
    np.fill_diagonal(log_gamma, -np.inf)
    return log_gamma
