import numpy as np
import pytest

from treeagg.errors import PerfectCorrelationError, SingularPrecisionError
from treeagg.matrices import EmpiricalCovariance, PartitionedPrecision
from treeagg.simulate import make_ground_truth, sample_and_marginalize, sample_seed
from treeagg.spanning_trees import brute_force_tree_products, enumerate_trees
from treeagg.tree_gaussian import (
    chow_liu,
    conditional_hidden_given_observed,
    gaussian_mutual_information,
    log_marginal_tree_weight,
    maximum_spanning_tree,
    tree_precision_from_cov,
)

from conftest import random_spd


def cov_from_corr(rho_pairs, size):
    s = np.eye(size)
    for (i, j), rho in rho_pairs.items():
        s[i, j] = s[j, i] = rho
    return s


class TestChowLiu:
    def test_diagonal_gives_star_on_first_node(self):
        tree = chow_liu(np.eye(4) * 2.0)
        assert tree == ((0, 1), (0, 2), (0, 3))

    def test_three_variable_hand_case(self):
        s = cov_from_corr({(0, 1): 0.9, (1, 2): 0.8, (0, 2): 0.72}, 3)
        tree = chow_liu(s)
        assert tree == ((0, 1), (1, 2))

    def test_recovers_generating_tree(self):
        truth = make_ground_truth("tree", size=10, r=0, epsilon=1.0, seed=11)
        data, _ = sample_and_marginalize(truth.precision, 5000, sample_seed(11))
        cov = EmpiricalCovariance.from_data(data)
        assert chow_liu(cov) == truth.graph.edges

    def test_optimal_among_all_trees(self, rng):
        for size in (4, 5, 6):
            s = random_spd(rng, size)
            mi = gaussian_mutual_information(s)
            best = max(
                enumerate_trees(size), key=lambda t: sum(mi[i, j] for i, j in t)
            )
            tree = chow_liu(s)
            total = sum(mi[i, j] for i, j in tree)
            assert total == pytest.approx(sum(mi[i, j] for i, j in best), rel=1e-12)

    def test_negative_correlation_ranked_by_strength(self):
        s = cov_from_corr({(0, 1): -0.9, (1, 2): 0.5, (0, 2): 0.1}, 3)
        assert (0, 1) in chow_liu(s)

    def test_perfect_correlation_rejected(self):
        s = cov_from_corr({(0, 1): 1.0 - 1e-14}, 3)
        with pytest.raises(PerfectCorrelationError):
            chow_liu(s)

    def test_forbidden_edges_respected(self):
        w = np.ones((4, 4))
        forbidden = np.zeros((4, 4), dtype=bool)
        forbidden[2, 3] = forbidden[3, 2] = True
        tree = maximum_spanning_tree(w, forbidden)
        assert (2, 3) not in tree


class TestTreePrecision:
    def test_identity_covariance(self):
        k = tree_precision_from_cov(((0, 1), (1, 2)), np.eye(3))
        np.testing.assert_allclose(k, np.eye(3), atol=1e-14)

    def test_two_node_inverse(self):
        rho = 0.6
        s = np.array([[1.0, rho], [rho, 1.0]])
        k = tree_precision_from_cov(((0, 1),), s)
        expected = np.array([[1.0, -rho], [-rho, 1.0]]) / (1 - rho**2)
        np.testing.assert_allclose(k, expected, atol=1e-12)

    def test_marginals_reproduced_on_tree_blocks(self, rng):
        s = random_spd(rng, 6)
        tree = chow_liu(s)
        k = tree_precision_from_cov(tree, s)
        cov = np.linalg.inv(k)
        np.testing.assert_allclose(np.diag(cov), np.diag(s), atol=1e-10)
        for i, j in tree:
            assert cov[i, j] == pytest.approx(s[i, j], abs=1e-10)

    def test_determinant_factorizes(self, rng):
        # det K_T = prod_i (1/S_ii) * prod_edges S_ii S_jj / det(block)
        s = random_spd(rng, 5)
        tree = chow_liu(s)
        k = tree_precision_from_cov(tree, s)
        expected = np.prod(1.0 / np.diag(s))
        for i, j in tree:
            det2 = s[i, i] * s[j, j] - s[i, j] ** 2
            expected *= s[i, i] * s[j, j] / det2
        assert np.linalg.det(k) == pytest.approx(expected, rel=1e-10)

    def test_trace_decomposition(self, rng):
        # tr(K_T S') with the assembled K_T equals the node + edge split of the
        # generating blocks, exact as assembled
        s = random_spd(rng, 5)
        s2 = random_spd(rng, 5)
        tree = chow_liu(s)
        k = tree_precision_from_cov(tree, s)
        total = np.trace(k @ s2)
        node = sum(s2[i, i] / s[i, i] for i in range(5))
        edge = 0.0
        for i, j in tree:
            det2 = s[i, i] * s[j, j] - s[i, j] ** 2
            block_inv = (
                np.array([[s[j, j], -s[i, j]], [-s[i, j], s[i, i]]]) / det2
            )
            sub = s2[np.ix_((i, j), (i, j))]
            edge += np.trace(block_inv @ sub) - s2[i, i] / s[i, i] - s2[j, j] / s[j, j]
        assert total == pytest.approx(node + edge, rel=1e-12)

    def test_singular_block_rejected(self):
        s = cov_from_corr({(0, 1): 1.0}, 3)
        with pytest.raises(PerfectCorrelationError):
            tree_precision_from_cov(((0, 1), (1, 2)), s)


class TestConditional:
    def test_independent_hidden(self):
        k = np.eye(4)
        k[3, 3] = 2.0
        prec = PartitionedPrecision(k, 3, 1)
        mean, cond = conditional_hidden_given_observed(prec, np.ones(3))
        np.testing.assert_allclose(mean, 0.0)
        np.testing.assert_allclose(cond, [[2.0]])

    def test_scalar_case(self):
        k = np.eye(4)
        k[3, 3] = 2.0
        k[0, 3] = k[3, 0] = 1.0
        prec = PartitionedPrecision(k, 3, 1)
        mean, _ = conditional_hidden_given_observed(prec, np.array([4.0, 0.0, 0.0]))
        assert mean[0] == pytest.approx(-2.0)

    def test_matches_schur_conditioning(self, rng):
        k = random_spd(rng, 6) * 3.0
        prec = PartitionedPrecision(k, 4, 2)
        x = rng.normal(size=4)
        mean, cond = conditional_hidden_given_observed(prec, x)
        # independent route: condition the covariance
        cov = np.linalg.inv(k)
        mean_ref = cov[4:, :4] @ np.linalg.solve(cov[:4, :4], x)
        cov_ref = cov[4:, 4:] - cov[4:, :4] @ np.linalg.solve(cov[:4, :4], cov[:4, 4:])
        np.testing.assert_allclose(mean, mean_ref, atol=1e-10)
        np.testing.assert_allclose(np.linalg.inv(cond), cov_ref, atol=1e-10)

    def test_singular_hidden_block(self):
        k = np.eye(4)
        k[2, 2] = k[3, 3] = 1.0
        k[2, 3] = k[3, 2] = 1.0  # singular hidden block
        prec = PartitionedPrecision(k, 2, 2)
        with pytest.raises(SingularPrecisionError):
            conditional_hidden_given_observed(prec, np.zeros(2))


class TestLogMarginalTreeWeight:
    def test_zero_coupling_gives_prior(self, rng):
        s = random_spd(rng, 3)
        k = np.diag([1.0, 2.0, 3.0])
        prec = PartitionedPrecision(k, 3, 0)
        prior = np.ones((3, 3)) - np.eye(3)
        lg = log_marginal_tree_weight(prec, prior, s, n=7)
        iu = np.triu_indices(3, 1)
        np.testing.assert_allclose(lg[iu], 0.0, atol=1e-14)  # log 1

    def test_hidden_hidden_factor_is_one(self, rng):
        # with a positive prior on a hidden-hidden pair, gamma = pi * d * 1
        k = np.eye(4) * 2.0
        k[2, 3] = k[3, 2] = 0.5
        prec = PartitionedPrecision(k, 2, 2)
        prior = np.ones((4, 4)) - np.eye(4)
        s = np.eye(2)
        n = 6
        lg = log_marginal_tree_weight(prec, prior, s, n=n)
        ratio = 1.0 - 0.5**2 / 4.0
        assert lg[2, 3] == pytest.approx(0.5 * n * np.log(ratio), rel=1e-12)

    def test_matches_per_tree_factorized_evidence(self, rng):
        # sum_T prod gamma equals the per-tree product of the determinant and
        # trace edge factors, evaluated tree by tree over the 3 trees
        s = random_spd(rng, 3)
        k = random_spd(rng, 3) * 2.0
        prec = PartitionedPrecision(k, 3, 0)
        prior = np.ones((3, 3)) - np.eye(3)
        n = 4
        lg = log_marginal_tree_weight(prec, prior, s, n=n)
        w = np.exp(lg)
        w[~np.isfinite(lg)] = 0.0
        np.fill_diagonal(w, 0.0)
        lhs = brute_force_tree_products(w).sum()

        kd = np.diag(k)
        rhs = 0.0
        for tree in enumerate_trees(3):
            det_part = 1.0
            trace_part = 0.0
            for i, j in tree:
                det_part *= (kd[i] * kd[j] - k[i, j] ** 2) / (kd[i] * kd[j])
                trace_part += 2.0 * k[i, j] * s[i, j]
            rhs += det_part ** (n / 2) * np.exp(-0.5 * n * trace_part)
        assert lhs == pytest.approx(rhs, rel=1e-8)

    def test_observed_hidden_factor(self, rng):
        # f_ih = exp((n/2) K_ih (K_HO S)_hi / K_hh), on top of the d factor
        s = random_spd(rng, 3)
        k = random_spd(rng, 4) * 2.0
        prec = PartitionedPrecision(k, 3, 1)
        prior = np.ones((4, 4)) - np.eye(4)
        prior[3, 3] = 0.0
        n = 5
        lg = log_marginal_tree_weight(prec, prior, s, n=n)
        kd = np.diag(k)
        i = 1
        cross = k[3, :3] @ s[:, i]
        expected = 0.5 * n * (
            np.log(1.0 - k[i, 3] ** 2 / (kd[i] * kd[3])) + k[i, 3] * cross / kd[3]
        )
        assert lg[i, 3] == pytest.approx(expected, rel=1e-12)
