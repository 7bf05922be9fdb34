"""Scoring inferred structures against ground truth: ROC and spurious-edge curves."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCurveError, DegenerateRocError
from .graphs import Graph
from .simulate import GroundTruth


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    power: np.ndarray
    auc: float


@dataclass(frozen=True)
class SpuriousCurve:
    thresholds: np.ndarray
    density: np.ndarray
    spurious_fraction: np.ndarray


def _pair_mask(size: int, exclude_from: int | None = None) -> np.ndarray:
    """Upper-triangle pair mask; optionally drops pairs with both ends >= exclude_from."""
    mask = np.triu(np.ones((size, size), dtype=bool), k=1)
    if exclude_from is not None:
        mask[exclude_from:, exclude_from:] = False
    return mask


def roc(
    scores: np.ndarray, truth: Graph, exclude_hidden_from: int | None = None
) -> RocCurve:
    """Threshold sweep over distinct score values with trapezoidal AUC.

    Hidden-hidden pairs can be excluded: they are structural zeros under the
    identifiability assumption, not inferred quantities.
    """
    scores = np.asarray(scores, dtype=float)
    size = truth.n_nodes
    mask = _pair_mask(size, exclude_hidden_from)
    y = truth.adjacency()[mask]
    s = scores[mask]
    n_pos = int(y.sum())
    n_neg = int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateRocError("truth has no positives or no negatives")

    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(~y_sorted)
    # keep the last index of each tie group
    last = np.nonzero(np.diff(s_sorted, append=-np.inf) != 0.0)[0]
    thresholds = np.concatenate([[np.inf], s_sorted[last]])
    power = np.concatenate([[0.0], tp[last] / n_pos])
    fpr = np.concatenate([[0.0], fp[last] / n_neg])
    return RocCurve(thresholds, fpr, power, float(np.trapezoid(power, fpr)))


def score_edges(fit, target: str = "full", two_hop: bool = False) -> np.ndarray:
    """Symmetric edge-score matrix from a fit.

    Tree-aggregation fits score by the edge posterior alpha; single-tree fits
    by |K_ij| on tree edges (floored to the smallest positive float so tree
    edges always outrank non-edges) and zero elsewhere.  The marginal target
    restricts to observed-observed pairs; with two_hop, evidence for an
    observed pair routed through a hidden node (max_h alpha_ih alpha_jh) is
    added in.
    """
    if target not in ("full", "marginal"):
        raise ValueError("target must be 'full' or 'marginal'")
    p = fit.n_observed
    if getattr(fit, "alpha", None) is not None:
        full = np.asarray(fit.alpha, dtype=float).copy()
    elif getattr(fit, "tree", None) is not None:
        full = np.zeros((p + fit.n_hidden, p + fit.n_hidden))
        kmat = np.asarray(fit.precision.matrix, dtype=float)
        for i, j in fit.tree:
            value = max(abs(kmat[i, j]), np.finfo(float).tiny)
            full[i, j] = full[j, i] = value
    else:
        raise TypeError(f"unsupported fit type {type(fit).__name__}")
    if target == "full":
        return full
    marginal = full[:p, :p].copy()
    if two_hop and full.shape[0] > p:
        cross = full[:p, p:]
        for h in range(cross.shape[1]):
            marginal = np.maximum(marginal, np.outer(cross[:, h], cross[:, h]))
        np.fill_diagonal(marginal, 0.0)
    return marginal


def align_hidden_nodes(scores: np.ndarray, truth: GroundTruth) -> np.ndarray:
    """Permute inferred hidden columns to the truth's hidden labels.

    Maximum-weight matching on attachment overlap (score mass on each true
    hidden node's neighbors), brute-forced over permutations since r is tiny.
    """
    r = truth.n_hidden
    p = truth.n_observed
    if r <= 1:
        return scores
    adj = truth.graph.adjacency()
    overlap = np.zeros((r, r))  # true slot x inferred slot
    for t in range(r):
        neighbors = adj[p + t, :p]
        for m in range(r):
            overlap[t, m] = scores[:p, p + m][neighbors].sum()
    best_perm, best_value = None, -np.inf
    for perm in itertools.permutations(range(r)):
        value = sum(overlap[t, perm[t]] for t in range(r))
        if value > best_value:
            best_value, best_perm = value, perm
    order = list(range(p)) + [p + m for m in best_perm]
    return scores[np.ix_(order, order)]


def roc_target(fit, truth: GroundTruth, target: str) -> RocCurve:
    """ROC against the full graph (hidden nodes aligned) or the marginal graph."""
    if target == "full":
        scores = align_hidden_nodes(score_edges(fit, "full"), truth)
        return roc(scores, truth.graph, exclude_hidden_from=truth.n_observed)
    if target == "marginal":
        return roc(score_edges(fit, "marginal"), truth.marginal)
    raise ValueError("target must be 'full' or 'marginal'")


def spurious_edges(truth: GroundTruth) -> tuple[tuple[int, int], ...]:
    """Marginal-graph edges whose two endpoints share a hidden neighbor in G."""
    adj = truth.graph.adjacency()
    p = truth.n_observed
    out = []
    for i, j in truth.marginal.edges:
        if any(adj[i, h] and adj[j, h] for h in truth.hidden):
            out.append((i, j))
    return tuple(out)


def spurious_curve(scores: np.ndarray, truth: GroundTruth) -> SpuriousCurve:
    """Included-spurious fraction versus inferred-graph density over a threshold sweep."""
    spurious = set(spurious_edges(truth))
    total = len(spurious)
    if total == 0:
        raise DegenerateCurveError("no spurious edges: curve undefined")
    p = truth.n_observed
    scores = np.asarray(scores, dtype=float)
    mask = _pair_mask(p)
    pairs = np.argwhere(mask)
    s = scores[mask]
    is_spurious = np.array([(i, j) in spurious for i, j in map(tuple, pairs)])

    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    included = np.cumsum(is_spurious[order])
    count = np.arange(1, len(s_sorted) + 1)
    last = np.nonzero(np.diff(s_sorted, append=-np.inf) != 0.0)[0]
    n_pairs = p * (p - 1) / 2
    return SpuriousCurve(
        thresholds=s_sorted[last],
        density=count[last] / n_pairs,
        spurious_fraction=included[last] / total,
    )


def mean_roc(curves, grid_size: int = 101) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pointwise mean and sd of ROC curves interpolated on a common FPR grid."""
    grid = np.linspace(0.0, 1.0, grid_size)
    powers = np.array(
        [np.interp(grid, curve.fpr, curve.power) for curve in curves]
    )
    return grid, powers.mean(axis=0), powers.std(axis=0)


def mean_spurious(curves, grid_size: int = 101):
    """Pointwise mean and sd of spurious curves on a common density grid."""
    grid = np.linspace(0.0, 1.0, grid_size)
    fractions = np.array(
        [
            np.interp(grid, curve.density, curve.spurious_fraction, left=0.0)
            for curve in curves
        ]
    )
    return grid, fractions.mean(axis=0), fractions.std(axis=0)
