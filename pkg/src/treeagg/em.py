"""EM over the two hidden layers: the latent spanning tree and the hidden signal.

The E-step computes conditional moments of the hidden block, per-edge log
weights of the tree posterior and all-edge appearance probabilities through the
Matrix-Tree kernel.  The M-step applies the closed-form off-diagonal updates
and solves the diagonal stationarity equations by safeguarded bisection, then
floors the spectrum to keep the precision positive definite.  Everything tree
related is tracked in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import initialization
from .errors import (
    DegeneratePosteriorError,
    DivergenceError,
    InvalidMomentError,
    InvalidPrecisionError,
    MStepError,
    SingularPrecisionError,
)
from .matrices import (
    EmpiricalCovariance,
    PartitionedPrecision,
    floor_spectrum,
    symmetrize,
)
from .spanning_trees import (
    _calibrate_on_support,
    _support_connected,
    edge_marginals,
    log_partition_function,
)
from .tree_gaussian import log_marginal_tree_weight

LOG_2PI = math.log(2.0 * math.pi)


def uniform_prior(n_observed: int, n_hidden: int = 0) -> np.ndarray:
    """Uniform edge prior with hidden-hidden pairs excluded (identifiability)."""
    size = n_observed + n_hidden
    prior = np.ones((size, size))
    np.fill_diagonal(prior, 0.0)
    prior[n_observed:, n_observed:] = 0.0
    return prior


def _mask_hidden_pairs(prior: np.ndarray, n_observed: int) -> np.ndarray:
    prior = np.asarray(prior, dtype=float).copy()
    prior[n_observed:, n_observed:] = 0.0
    np.fill_diagonal(prior, 0.0)
    return prior


def conditional_moments(
    precision: PartitionedPrecision, sigma: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """E-step moments (W_HO, V_H, B_H) of the hidden block given the observed data."""
    p, r = precision.n_observed, precision.n_hidden
    if r == 0:
        empty = np.zeros((0, 0))
        return np.zeros((0, p)), empty, empty
    k_hh = precision.k_hh
    if np.linalg.cond(k_hh) > 1e12:
        raise SingularPrecisionError("hidden-block precision is numerically singular")
    m = np.linalg.solve(k_hh, precision.k_ho)  # K_H^-1 K_HO
    w_ho = m @ sigma
    v_h = symmetrize(w_ho @ m.T)
    b_h = symmetrize(np.linalg.solve(k_hh, np.eye(r)) + v_h)
    return w_ho, v_h, b_h


@dataclass(frozen=True)
class EStepState:
    """Conditional moments and tree-posterior quantities at one EM iterate."""

    w_ho: np.ndarray
    v_h: np.ndarray
    b_h: np.ndarray
    log_gamma: np.ndarray
    alpha: np.ndarray
    log_z: float
    log_z_prior: float
    prior: np.ndarray

    @property
    def log_a(self) -> np.ndarray:
        """log of A_ij = alpha_ij * Z(gamma), the unnormalized edge tree sums."""
        with np.errstate(divide="ignore"):
            return np.where(
                self.alpha > 0.0,
                np.log(np.where(self.alpha > 0.0, self.alpha, 1.0)) + self.log_z,
                -np.inf,
            )


def _materialize_weights(log_gamma: np.ndarray) -> tuple[np.ndarray, float]:
    """exp(log gamma - max), keeping underflowed candidate edges in the support.

    Edges whose relative weight underflows stay at the bottom of the
    representable range: they may still be forced into the tree, and the
    elimination kernel handles any dynamic range.
    """
    finite = np.isfinite(log_gamma)
    if not finite.any():
        raise DegeneratePosteriorError("all candidate edges have zero weight")
    shift = float(log_gamma[finite].max())
    with np.errstate(under="ignore"):
        weights = np.exp(np.where(finite, log_gamma - shift, -np.inf))
    weights[finite & (weights == 0.0)] = 1e-300
    weights[~finite] = 0.0
    np.fill_diagonal(weights, 0.0)
    if not _support_connected(weights):
        raise DegeneratePosteriorError(
            "positive-weight support is disconnected: no tree has positive posterior"
        )
    return weights, shift


def e_step(
    precision: PartitionedPrecision,
    cov: EmpiricalCovariance,
    prior: np.ndarray,
) -> EStepState:
    """Moments, log gamma, edge posteriors alpha and log partition at the current K."""
    w_ho, v_h, b_h = conditional_moments(precision, cov.matrix)
    log_gamma = log_marginal_tree_weight(precision, prior, cov)
    weights, shift = _materialize_weights(log_gamma)
    alpha = edge_marginals(weights)
    size = precision.size
    log_z = log_partition_function(weights) + (size - 1) * shift
    prior_w = _mask_hidden_pairs(prior, precision.n_observed)
    log_z_prior = log_partition_function(prior_w)
    return EStepState(w_ho, v_h, b_h, log_gamma, alpha, log_z, log_z_prior, prior_w)


def tree_entropy(state: EStepState) -> float:
    """Closed-form H(T | X_O) = log Z - sum alpha_kl log gamma_kl."""
    alpha, log_gamma = state.alpha, state.log_gamma
    iu = np.triu_indices(alpha.shape[0], k=1)
    a, g = alpha[iu], log_gamma[iu]
    contrib = np.where(a > 0.0, a * np.where(a > 0.0, g, 0.0), 0.0)
    return float(state.log_z - contrib.sum())


def joint_entropy(state: EStepState, precision: PartitionedPrecision) -> float:
    """H(T, X_H | X_O): tree entropy plus the constant hidden-signal entropy."""
    r = precision.n_hidden
    h = tree_entropy(state)
    if r == 0:
        return h
    precision.require_positive_hidden_diagonal()
    k_hidden = precision.hidden_diagonal()
    return float(h + 0.5 * r * (LOG_2PI + 1.0) - 0.5 * np.log(k_hidden).sum())


def expected_complete_loglik(
    state: EStepState, precision: PartitionedPrecision, cov: EmpiricalCovariance
) -> float:
    """E[log p(X_O, X_H, T; K) | X_O] under the E-step posterior."""
    n, p = cov.n, cov.size
    r = precision.n_hidden
    size = p + r
    kmat = precision.matrix
    kd = np.diag(kmat)
    if np.any(kd <= 0.0):
        raise InvalidPrecisionError("diagonal of K must be positive")
    sigma = cov.matrix

    iu = np.triu_indices(size, k=1)
    alpha = state.alpha[iu]
    active = alpha > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(1.0 - kmat**2 / np.outer(kd, kd))[iu]
        log_prior = np.log(state.prior)[iu]
    edge_det = float(np.where(active, alpha * np.where(active, log_ratio, 0.0), 0.0).sum())
    prior_term = float(
        np.where(active, alpha * np.where(active, log_prior, 0.0), 0.0).sum()
        - state.log_z_prior
    )

    cross = np.zeros((size, size))
    cross[:p, :p] = sigma
    if r:
        cross[:p, p:] = -state.w_ho.T
        cross[p:, :p] = -state.w_ho
    trace_edges = 2.0 * float((alpha * kmat[iu] * cross[iu]).sum())
    diag_targets = (
        np.concatenate([np.diag(sigma), np.diag(state.b_h)]) if r else np.diag(sigma)
    )
    trace_nodes = float(kd @ diag_targets)

    return (
        prior_term
        - 0.5 * n * size * LOG_2PI
        + 0.5 * n * (float(np.log(kd).sum()) + edge_det)
        - 0.5 * n * (trace_nodes + trace_edges)
    )


def observed_loglik(
    state: EStepState, precision: PartitionedPrecision, cov: EmpiricalCovariance
) -> float:
    """Observed-data log-likelihood via the EM identity.

    log p(X_O; K) = E[log p(X_O, X_H, T) | X_O; K] + H(X_H, T | X_O; K).
    For r = 0 this equals log sum_T P(T) p(X_O | T) exactly; with hidden
    nodes it is the free energy of the E-step posterior, which stays bounded
    where the raw edge-factorized evidence need not be.
    """
    r = precision.n_hidden
    value = expected_complete_loglik(state, precision, cov) + tree_entropy(state)
    if r:
        precision.require_positive_hidden_diagonal()
        k_hidden = precision.hidden_diagonal()
        value += cov.n * (
            0.5 * r * (LOG_2PI + 1.0) - 0.5 * float(np.log(k_hidden).sum())
        )
    return float(value)


def _solve_diagonal(
    k_prev: np.ndarray,
    alpha: np.ndarray,
    targets: np.ndarray,
    max_bracket: int = 200,
    bisect_iters: int = 100,
) -> np.ndarray:
    """Solve (1/x) (1 + sum_k K_ik^2 alpha_ik / (x K_kk - K_ik^2)) = t_i per node.

    This is the stationarity condition of the edge-factorized objective in
    K_ii; the leading 1/x on the sum is required for the equation to be
    dimensionally consistent and to have the pairwise Gaussian MLE as a fixed
    point.  The left side decreases strictly from +inf (at the largest pole)
    to 0, so the root is unique; all nodes are bisected simultaneously.
    """
    kd = np.diag(k_prev)
    off = k_prev - np.diag(kd)
    ksq = off**2
    mass = ksq * alpha
    pos = mass > 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        poles = np.where(pos, ksq / kd[None, :], 0.0)
    lower = poles.max(axis=1)

    def f(x: np.ndarray) -> np.ndarray:
        den = x[:, None] * kd[None, :] - ksq
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(pos, mass / np.where(pos, den, 1.0), 0.0)
        return (1.0 + terms.sum(axis=1)) / x - targets

    lo = lower + np.maximum(1e-9 * np.maximum(lower, 1.0), 1e-12)
    for _ in range(max_bracket):
        bad = f(lo) <= 0.0
        if not bad.any():
            break
        lo = np.where(bad, lower + 0.1 * (lo - lower), lo)
    else:
        raise MStepError("could not bracket the diagonal update from below")
    hi = np.maximum(2.0 / targets, 2.0 * lo)
    for _ in range(max_bracket):
        bad = f(hi) > 0.0
        if not bad.any():
            break
        hi = np.where(bad, 2.0 * hi, hi)
    else:
        raise MStepError("could not bracket the diagonal update from above")
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        above = f(mid) > 0.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return 0.5 * (lo + hi)


def _closed_form_offdiagonal(c: np.ndarray, kd: np.ndarray) -> np.ndarray:
    """K_ij = (1 - sqrt(1 + 4 c_ij^2 K_ii K_jj)) / (2 c_ij), with the c -> 0 limit."""
    d = np.outer(kd, kd)
    small = np.abs(c) < 1e-12
    safe = np.where(small, 1.0, c)
    k = (1.0 - np.sqrt(1.0 + 4.0 * c**2 * d)) / (2.0 * safe)
    return np.where(small, 0.0, k)


def m_step(
    state: EStepState,
    k_prev: PartitionedPrecision,
    cov: EmpiricalCovariance,
    eig_floor: float = 1e-6,
) -> PartitionedPrecision:
    """Closed-form off-diagonal updates plus bisection for the diagonal entries.

    All right-hand sides use the previous iterate: observed pairs see the
    empirical covariance, observed-hidden pairs the conditional cross moment
    -W_ho, and the diagonal equations match Sigma_ii (observed) or B_ii
    (hidden).  The result is floored to the positive-definite cone.
    """
    p, r = k_prev.n_observed, k_prev.n_hidden
    size = p + r
    sigma = cov.matrix
    kd = np.diag(k_prev.matrix)

    cross = np.zeros((size, size))
    cross[:p, :p] = sigma
    if r:
        cross[:p, p:] = -state.w_ho.T
        cross[p:, :p] = -state.w_ho
    new_k = _closed_form_offdiagonal(cross, kd)
    new_k[p:, p:] = 0.0
    np.fill_diagonal(new_k, 0.0)
    new_k = symmetrize(new_k)

    targets = np.empty(size)
    targets[:p] = np.diag(sigma)
    if r:
        b_diag = np.diag(state.b_h)
        if np.any(b_diag <= 0.0):
            raise InvalidMomentError("conditional second moment B_ii must be positive")
        targets[p:] = b_diag
    diag = _solve_diagonal(k_prev.matrix, state.alpha, targets)
    new_k[np.diag_indices(size)] = diag

    floored, _ = floor_spectrum(new_k, p, eig_floor)
    return PartitionedPrecision(floored, p, r)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 500
    tol: float = 1e-6
    eig_floor: float = 1e-6
    seed: int | None = None
    restarts: int = 0


@dataclass(frozen=True)
class FitResult:
    """Converged precision estimate with edge posteriors and diagnostics.

    damped_count flags the iterations where the raw simultaneous update would
    have lowered the likelihood and a reduced or partial step was taken.
    """

    precision: PartitionedPrecision
    alpha: np.ndarray
    loglik_trace: tuple[float, ...]
    loglik: float
    h_tree: float
    h_joint: float
    iterations: int
    converged: bool
    damped_count: int
    cov: EmpiricalCovariance
    prior: np.ndarray

    @property
    def n_observed(self) -> int:
        return self.precision.n_observed

    @property
    def n_hidden(self) -> int:
        return self.precision.n_hidden


def _run_em(
    cov: EmpiricalCovariance,
    prior: np.ndarray,
    k_init: PartitionedPrecision,
    opts: FitOptions,
) -> FitResult:
    """EM driver with a backtracking step size.

    The simultaneous closed-form updates solve each entry's stationarity
    condition at the previous iterate; taken jointly they can overshoot and
    lower the likelihood, so the step from K to the candidate is halved until
    the observed log-likelihood does not decrease.  A step that stalls at the
    smallest size terminates the run; the best iterate is returned either way.
    """
    p, r = k_init.n_observed, k_init.n_hidden
    size = p + r
    observed_mask = np.zeros((size, size), dtype=bool)
    observed_mask[:p, :p] = True
    # No hidden-rows-only proposal: the likelihood surface rewards saturated
    # hidden couplings (an artifact of the edge-factorized approximation), and
    # chasing that region detaches the fit from the data.  Hidden rows move
    # only as part of the full moment-based update.
    masks = [np.ones((size, size), dtype=bool), observed_mask]

    k = k_init
    state = e_step(k, cov, prior)
    ll = observed_loglik(state, k, cov)
    trace: list[float] = []
    best_ll, best_k, best_state = -np.inf, k_init, state
    damped = 0
    converged = False
    for _ in range(opts.max_iter):
        if not np.isfinite(ll):
            raise DivergenceError("observed log-likelihood is not finite")
        trace.append(ll)
        if ll > best_ll:
            best_ll, best_k, best_state = ll, k, state
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= opts.tol * (
            abs(trace[-2]) + 1e-12
        ):
            converged = True
            break
        candidate = m_step(state, k, cov, eig_floor=opts.eig_floor)
        # Accept the first (block, step size) whose trial point does not
        # lower the likelihood: the full update, then the observed block
        # alone, each with halved steps.
        accepted = None
        min_gain = opts.tol * 1e-3 * (abs(ll) + 1.0)
        for mask in masks if r else masks[:1]:
            proposal = np.where(mask, candidate.matrix, k.matrix)
            if np.array_equal(proposal, k.matrix):
                continue
            step = 1.0
            for _ in range(20):
                trial_matrix = (1.0 - step) * k.matrix + step * proposal
                trial = PartitionedPrecision(trial_matrix, p, r)
                trial_state = e_step(trial, cov, prior)
                trial_ll = observed_loglik(trial_state, trial, cov)
                if trial_ll - ll > min_gain or (
                    step == 1.0 and mask.all() and trial_ll - ll >= -1e-9
                ):
                    accepted = (trial, trial_state, trial_ll)
                    if step < 1.0 or not mask.all():
                        damped += 1
                    break
                step *= 0.5
            if accepted is not None:
                break
        if accepted is None:
            converged = True
            break
        k, state, ll = accepted

    if trace:
        k_hat, final_state, final_ll = best_k, best_state, best_ll
    else:  # max_iter == 0: report the initializer as-is
        k_hat, final_state, final_ll = k_init, state, ll
    return FitResult(
        precision=k_hat,
        alpha=final_state.alpha,
        loglik_trace=tuple(trace),
        loglik=final_ll,
        h_tree=tree_entropy(final_state),
        h_joint=joint_entropy(final_state, k_hat),
        iterations=len(trace),
        converged=converged,
        damped_count=damped,
        cov=cov,
        prior=prior,
    )


def fit(
    cov: EmpiricalCovariance,
    n_hidden: int,
    prior: np.ndarray | None = None,
    opts: FitOptions | None = None,
) -> FitResult:
    """Fit the tree-aggregation model with n_hidden latent nodes.

    Starts from the clustering/PCA initializer; optional random-tree restarts
    keep the run with the best observed log-likelihood.
    """
    opts = opts or FitOptions()
    if n_hidden < 0:
        raise ValueError("n_hidden must be nonnegative")
    p = cov.size
    if prior is None:
        prior = uniform_prior(p, n_hidden)
    else:
        prior = _mask_hidden_pairs(prior, p)
        if prior.shape[0] != p + n_hidden:
            raise ValueError("prior size does not match p + n_hidden")

    init = initialization.initial_precision_from_cov(cov, n_hidden)
    starts = [init.precision]
    if opts.restarts > 0:
        rng = np.random.default_rng(opts.seed)
        for _ in range(opts.restarts):
            starts.append(
                initialization.random_tree_precision(init.completed_cov, p, n_hidden, rng)
            )

    best: FitResult | None = None
    for k0 in starts:
        result = _run_em(cov, prior, k0, opts)
        if best is None or result.loglik > best.loglik:
            best = result
    assert best is not None
    return best


def edge_posteriors(result: FitResult, p0: float) -> np.ndarray:
    """Edge posteriors recomputed under the prior calibrated to marginal p0.

    Calibration runs on the support of the fitted prior (hidden-hidden pairs
    are structural zeros), so p0 must equal (size - 1) / #candidate edges.
    """
    prior = result.prior
    support = prior > 0.0
    np.fill_diagonal(support, False)
    calibrated = _calibrate_on_support(
        np.where(support, prior, 0.0), p0, support, tol=1e-6, max_iter=200
    )
    state = e_step(result.precision, result.cov, calibrated)
    return state.alpha
