"""Ground-truth generators: graphs, identifiable hidden sets, precisions, samples.

Hidden nodes are always relabeled last, so a GroundTruth's precision is
directly a PartitionedPrecision with observed variables 0..p-1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InfeasibleHiddenSetError, NotPositiveDefiniteError
from .graphs import Graph, random_tree_edges
from .matrices import PartitionedPrecision, symmetrize

ZERO_PATTERN_TOL = 1e-10
DIAG_MARGIN = 0.1


def gen_graph(kind: str, size: int, seed, p_edge: float = 0.1) -> Graph:
    """Uniform random labeled tree or Erdos-Renyi G(size, p_edge)."""
    if size < 2:
        raise ValueError("size must be at least 2")
    rng = np.random.default_rng(seed)
    if kind == "tree":
        return Graph(size, random_tree_edges(size, rng))
    if kind == "erdos":
        if not 0.0 < p_edge < 1.0:
            raise ValueError("p_edge must be inside (0, 1)")
        edges = [
            (i, j)
            for i in range(size)
            for j in range(i + 1, size)
            if rng.random() < p_edge
        ]
        return Graph(size, tuple(edges))
    raise ValueError(f"unknown graph kind {kind!r}")


def gen_precision(
    graph: Graph, seed, delta: float = DIAG_MARGIN, flip_prob: float = 0.5
) -> np.ndarray:
    """Signed incidence pattern with a diagonally dominant diagonal.

    Edge weights are +-1 with independent sign flips; the diagonal is the
    absolute row sum plus delta, so the smallest eigenvalue is at least delta.
    """
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    k = np.zeros((n, n))
    for i, j in graph.edges:
        sign = -1.0 if rng.random() < flip_prob else 1.0
        k[i, j] = k[j, i] = sign
    k[np.diag_indices(n)] = np.abs(k).sum(axis=1) + delta
    return k


def identifiable_hidden_sets(graph: Graph, r: int) -> list[tuple[int, ...]]:
    """All r-subsets of pairwise non-adjacent nodes with degree >= 3."""
    if r == 0:
        return [()]
    deg = graph.degrees()
    adj = graph.adjacency()
    candidates = [i for i in range(graph.n_nodes) if deg[i] >= 3]
    feasible = []
    for subset in itertools.combinations(candidates, r):
        if all(not adj[a, b] for a, b in itertools.combinations(subset, 2)):
            feasible.append(subset)
    return feasible


def choose_hidden(graph: Graph, r: int, seed) -> tuple[int, ...]:
    """Uniformly random identifiable hidden set."""
    feasible = identifiable_hidden_sets(graph, r)
    if not feasible:
        raise InfeasibleHiddenSetError(
            f"no set of {r} pairwise non-adjacent nodes with degree >= 3"
        )
    rng = np.random.default_rng(seed)
    return feasible[int(rng.integers(len(feasible)))]


def scale_and_snr(
    precision: PartitionedPrecision, epsilon: float, delta: float = DIAG_MARGIN
) -> tuple[PartitionedPrecision, float, float]:
    """Scale the hidden blocks by epsilon and measure the signal-to-noise ratio.

    SNR is computed from the scaled blocks before any repair, so it scales
    exactly as epsilon^2.  If the scaled matrix loses positive definiteness
    the diagonal is re-loaded: half the eigenvalue deficit as a uniform ridge,
    the rest on the nodes carrying the deficient eigendirections, so the
    repair does not drown the correlation structure away from the hidden
    nodes.  The largest per-entry addition is returned as diag_adjust.
    """
    p, r = precision.n_observed, precision.n_hidden
    k = precision.matrix.copy()
    k[:p, p:] *= epsilon
    k[p:, :p] *= epsilon
    k[p:, p:] *= epsilon

    if r and epsilon != 0.0:
        schur_term = k[:p, p:] @ np.linalg.solve(k[p:, p:], k[p:, :p])
        snr = float(
            np.linalg.norm(schur_term, 2) ** 2 / np.linalg.norm(k[:p, :p], 2) ** 2
        )
    else:
        snr = 0.0

    added = np.zeros(k.shape[0])
    evals = np.linalg.eigvalsh(k)
    if evals[0] < delta:
        ridge = 0.5 * (delta - evals[0])
        k += ridge * np.eye(k.shape[0])
        added += ridge
        for _ in range(100):
            evals2, vecs = np.linalg.eigh(k)
            if evals2[0] >= delta:
                break
            direction = vecs[:, 0] ** 2
            bump = (delta - evals2[0]) * direction / (direction**2).sum()
            k += np.diag(bump)
            added += bump
        else:
            rest = delta - np.linalg.eigvalsh(k)[0]
            k += rest * np.eye(k.shape[0])
            added += rest
    return PartitionedPrecision(symmetrize(k), p, r), snr, float(added.max())


def sample_and_marginalize(
    precision: PartitionedPrecision, n: int, seed
) -> tuple[np.ndarray, np.ndarray]:
    """n iid draws from N(0, K^-1); returns (full data, observed columns)."""
    try:
        chol = np.linalg.cholesky(precision.matrix)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("precision is not positive definite") from exc
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, precision.size))
    full = solve_triangular(chol.T, z.T, lower=False).T
    return full, full[:, : precision.n_observed].copy()


def marginal_precision(precision: PartitionedPrecision) -> np.ndarray:
    """Schur complement K_O - K_OH K_H^-1 K_HO of the hidden block."""
    if precision.n_hidden == 0:
        return precision.k_oo.copy()
    return symmetrize(
        precision.k_oo
        - precision.k_oh @ np.linalg.solve(precision.k_hh, precision.k_ho)
    )


def marginal_graph(
    graph: Graph, hidden, precision: PartitionedPrecision, atol: float = ZERO_PATTERN_TOL
) -> Graph:
    """Conditional-independence graph of the observed block after marginalizing."""
    k_m = marginal_precision(precision)
    p = precision.n_observed
    edges = [
        (i, j) for i in range(p) for j in range(i + 1, p) if abs(k_m[i, j]) > atol
    ]
    return Graph(p, tuple(edges))


@dataclass(frozen=True)
class GroundTruth:
    """A simulated instance; hidden nodes occupy the last r labels."""

    kind: str
    epsilon: float
    seed: int
    graph: Graph
    hidden: tuple[int, ...]
    precision: PartitionedPrecision
    marginal_precision_matrix: np.ndarray
    marginal: Graph
    snr: float
    diag_adjust: float

    @property
    def n_observed(self) -> int:
        return self.precision.n_observed

    @property
    def n_hidden(self) -> int:
        return self.precision.n_hidden

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "p": self.n_observed,
            "r": self.n_hidden,
            "snr": self.snr,
            "diag_adjust": self.diag_adjust,
            "hidden": list(self.hidden),
            "full_graph": self.graph.to_json_dict(),
            "marginal_graph": self.marginal.to_json_dict(),
            "precision": _matrix_to_json(self.precision.matrix),
            "marginal_precision": _matrix_to_json(self.marginal_precision_matrix),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "GroundTruth":
        p, r = int(obj["p"]), int(obj["r"])
        precision = PartitionedPrecision(_matrix_from_json(obj["precision"]), p, r)
        return cls(
            kind=obj["kind"],
            epsilon=float(obj["epsilon"]),
            seed=int(obj["seed"]),
            graph=Graph.from_json_dict(obj["full_graph"]),
            hidden=tuple(obj["hidden"]),
            precision=precision,
            marginal_precision_matrix=_matrix_from_json(obj["marginal_precision"]),
            marginal=Graph.from_json_dict(obj["marginal_graph"]),
            snr=float(obj["snr"]),
            diag_adjust=float(obj["diag_adjust"]),
        )


def _matrix_to_json(m: np.ndarray) -> dict:
    return {"shape": list(m.shape), "data": [float(v) for v in m.ravel()]}


def _matrix_from_json(obj: dict) -> np.ndarray:
    return np.array(obj["data"], dtype=float).reshape(obj["shape"])


def _relabel_hidden_last(graph: Graph, hidden: tuple[int, ...]) -> Graph:
    observed = [i for i in range(graph.n_nodes) if i not in set(hidden)]
    mapping = {old: new for new, old in enumerate(observed + list(hidden))}
    edges = [(mapping[i], mapping[j]) for i, j in graph.edges]
    return Graph.from_edges(graph.n_nodes, edges)


def make_ground_truth(
    kind: str,
    size: int,
    r: int,
    epsilon: float,
    seed: int,
    p_edge: float = 0.1,
    delta: float = DIAG_MARGIN,
    flip_prob: float = 0.5,
) -> GroundTruth:
    """Assemble a reproducible instance from a single master seed."""
    seq = np.random.SeedSequence(seed)
    seed_graph, seed_hidden, seed_prec = (
        int(child.generate_state(1)[0]) for child in seq.spawn(3)
    )
    graph = gen_graph(kind, size, seed_graph, p_edge=p_edge)
    hidden = choose_hidden(graph, r, seed_hidden)
    graph = _relabel_hidden_last(graph, hidden)
    p = size - r
    k_mat = gen_precision(graph, seed_prec, delta=delta, flip_prob=flip_prob)
    base = PartitionedPrecision(k_mat, p, r)
    precision, snr, diag_adjust = scale_and_snr(base, epsilon, delta=delta)
    k_m = marginal_precision(precision)
    return GroundTruth(
        kind=kind,
        epsilon=epsilon,
        seed=seed,
        graph=graph,
        hidden=tuple(range(p, size)),
        precision=precision,
        marginal_precision_matrix=k_m,
        marginal=marginal_graph(graph, tuple(range(p, size)), precision),
        snr=snr,
        diag_adjust=diag_adjust,
    )


def sample_seed(seed: int) -> int:
    """Sampling seed derived from a replicate's master seed."""
    return int(np.random.SeedSequence(seed).spawn(4)[3].generate_state(1)[0])
