"""Shared fixtures and enumeration oracles."""

import numpy as np
import pytest

from treeagg.graphs import Graph
from treeagg.matrices import EmpiricalCovariance, PartitionedPrecision
from treeagg.simulate import GroundTruth, marginal_graph, marginal_precision, scale_and_snr
from treeagg.spanning_trees import _tree_edge_array, brute_force_tree_products


def random_weight_matrix(rng, size, low=0.1, high=3.0):
    w = rng.uniform(low, high, (size, size))
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    return w


def random_spd(rng, size, strength=0.5):
    a = rng.normal(0.0, strength, (size, size))
    m = a @ a.T + size * np.eye(size)
    d = np.sqrt(np.diag(m))
    return m / np.outer(d, d)


def brute_posterior_marginals(log_gamma):
    """Edge marginals of P(T) ~ prod gamma by enumeration, any dynamic range."""
    n = log_gamma.shape[0]
    edges = _tree_edge_array(n)
    finite = np.isfinite(log_gamma)
    shift = log_gamma[finite].max()
    with np.errstate(under="ignore"):
        w = np.exp(np.where(finite, log_gamma - shift, -np.inf))
    w[~finite] = 0.0
    np.fill_diagonal(w, 0.0)
    products = w[edges[:, :, 0], edges[:, :, 1]].prod(axis=1)
    z = products.sum()
    out = np.zeros((n, n))
    np.add.at(
        out,
        (edges[:, :, 0].ravel(), edges[:, :, 1].ravel()),
        np.repeat(products, n - 1),
    )
    return (out + out.T) / z


def figure_tree_graph():
    """The worked example topology: 9 observed nodes and one degree-3 hub.

    0-based edges; node 9 is the hub h with children {5, 6, 7}.
    """
    edges = [(0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (5, 9), (6, 9), (7, 9), (7, 8)]
    return Graph.from_edges(10, edges)


def figure_ground_truth(epsilon=1.0, seed=7):
    graph = figure_tree_graph()
    rng = np.random.default_rng(seed)
    n = graph.n_nodes
    k = np.zeros((n, n))
    for i, j in graph.edges:
        sign = -1.0 if rng.random() < 0.5 else 1.0
        k[i, j] = k[j, i] = sign
    k[np.diag_indices(n)] = np.abs(k).sum(axis=1) + 0.1
    base = PartitionedPrecision(k, 9, 1)
    precision, snr, adjust = scale_and_snr(base, epsilon)
    hidden = (9,)
    return GroundTruth(
        kind="tree",
        epsilon=epsilon,
        seed=seed,
        graph=graph,
        hidden=hidden,
        precision=precision,
        marginal_precision_matrix=marginal_precision(precision),
        marginal=marginal_graph(graph, hidden, precision),
        snr=snr,
        diag_adjust=adjust,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
