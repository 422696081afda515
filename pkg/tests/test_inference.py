"""Potential assembly, max-product decoding, and exhaustive oracles."""

import importlib
import os
import subprocess
import sys

import numpy as np
import pytest

from lccad.core import (
    ClusterModel,
    CrfWeights,
    DependencyGraph,
    HyperParams,
    LatentAssignment,
)
from lccad.inference import (
    EMPTY_CLASS_PENALTY,
    EdgePotentials,
    NodePotentials,
    build_potentials,
    exact_map,
    hinge,
    joint_feature_map,
    lbp_backend,
    lbp_map,
    log_partition_brute,
)
from lccad._lbp_ref import run_max_product as run_ref


def random_instance(rng, n, k, graph_kind="chain"):
    """Random potentials plus a small graph; N(0, 1) entries throughout."""
    if graph_kind == "chain":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif graph_kind == "star":
        edges = [(0, i) for i in range(1, n)]
    elif graph_kind == "grid23":
        n = 6
        edges = [(0, 1), (1, 2), (3, 4), (4, 5), (0, 3), (1, 4), (2, 5)]
    else:
        raise ValueError(graph_kind)
    graph = DependencyGraph(n, edges)
    node = rng.standard_normal((n, k))
    edge = rng.standard_normal((k, k))
    return graph, node, edge


class TestHinge:
    def test_values(self):
        np.testing.assert_array_equal(
            hinge(np.array([-2.0, 0.0, 3.5])), [0.0, 0.0, 3.5]
        )


class TestPotentialTables:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            NodePotentials(np.array([[np.nan, 0.0]]))
        with pytest.raises(ValueError):
            EdgePotentials(np.array([[np.inf, 0.0], [0.0, 0.0]]))


class TestBuildPotentials:
    def setup_method(self):
        self.phi = np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 4.0]])
        self.cluster = ClusterModel(
            np.array([[0.0, 0.0], [3.0, 4.0]]), [0.0, 1.0], [2, 1]
        )
        rng = np.random.default_rng(0)
        self.weights = CrfWeights(
            rng.standard_normal((2, 2)), rng.standard_normal((2, 2))
        )

    def test_theta_one_is_pure_distance(self):
        hp = HyperParams(K=2, theta=1.0)
        node, edge = build_potentials(self.phi, self.cluster, self.weights, hp)
        np.testing.assert_array_equal(edge.table, np.zeros((2, 2)))
        # node potential = -hinge(||z - c_t||^2 - t_t) / counts
        sq0 = np.array([0.0, 1.0, 25.0])
        sq1 = np.array([25.0, 20.0, 0.0])
        expected = -np.stack(
            [hinge(sq0 - 0.0) / 2.0, hinge(sq1 - 1.0) / 1.0], axis=1
        )
        np.testing.assert_allclose(node.table, expected, atol=1e-12)

    def test_theta_zero_is_pure_crf(self):
        hp = HyperParams(K=2, theta=0.0)
        node, edge = build_potentials(self.phi, self.cluster, self.weights, hp)
        np.testing.assert_allclose(node.table, self.phi @ self.weights.emis.T)
        np.testing.assert_allclose(edge.table, self.weights.trans)

    def test_mixes_linearly_in_theta(self):
        hp0 = HyperParams(K=2, theta=0.0)
        hp1 = HyperParams(K=2, theta=1.0)
        hp = HyperParams(K=2, theta=0.3)
        n0, e0 = build_potentials(self.phi, self.cluster, self.weights, hp0)
        n1, e1 = build_potentials(self.phi, self.cluster, self.weights, hp1)
        nm, em = build_potentials(self.phi, self.cluster, self.weights, hp)
        np.testing.assert_allclose(
            nm.table, 0.7 * n0.table + 0.3 * n1.table, atol=1e-12
        )
        np.testing.assert_allclose(em.table, 0.7 * e0.table, atol=1e-12)

    def test_empty_class_penalty(self):
        cluster = ClusterModel(np.zeros((2, 2)), [0.0, 0.0], [3, 0])
        hp = HyperParams(K=2, theta=1.0)
        node, _ = build_potentials(
            np.zeros((3, 2)), cluster, CrfWeights.zeros(2, 2), hp
        )
        np.testing.assert_array_equal(node.table[:, 1], -EMPTY_CLASS_PENALTY)
        np.testing.assert_array_equal(node.table[:, 0], 0.0)

    def test_counts_override_disables_penalty(self):
        cluster = ClusterModel(np.zeros((2, 2)), [0.0, 0.0], [3, 0])
        hp = HyperParams(K=2, theta=1.0, nu=0.5)
        node, _ = build_potentials(
            np.ones((3, 2)), cluster, CrfWeights.zeros(2, 2), hp,
            counts=np.full(2, 1.0 / hp.nu),
        )
        # both classes share the center, so both columns equal -theta * slack
        np.testing.assert_allclose(node.table[:, 0], node.table[:, 1])
        assert np.all(node.table > -EMPTY_CLASS_PENALTY / 2)

    def test_dimension_mismatches_raise(self):
        hp = HyperParams(K=2)
        with pytest.raises(ValueError, match="dimension"):
            build_potentials(np.zeros((3, 5)), self.cluster, self.weights, hp)
        with pytest.raises(ValueError, match="disagree on K"):
            build_potentials(
                self.phi, self.cluster, CrfWeights.zeros(3, 2), hp
            )


class TestLbpMap:
    def test_edgeless_decodes_node_argmax(self):
        graph = DependencyGraph(3, [])
        node = np.array([[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]])
        assignment, converged, iterations = lbp_map(graph, node, np.zeros((2, 2)))
        assert converged and iterations == 0
        # ties break to the lowest state
        np.testing.assert_array_equal(assignment.states, [1, 0, 0])

    def test_two_node_attractive_pair(self):
        """One edge, strong attraction: the weaker node follows the stronger.

        Node 0 prefers state 0 by 3; node 1 prefers state 1 by 1; coupling
        +5 for agreement.  Joint scores: (0,0) = 8, (1,1) = 6, disagree <= 4.
        """
        graph = DependencyGraph(2, [(0, 1)])
        node = np.array([[3.0, 0.0], [0.0, 1.0]])
        edge = np.array([[5.0, 0.0], [0.0, 5.0]])
        assignment, converged, _ = lbp_map(graph, node, edge)
        assert converged
        np.testing.assert_array_equal(assignment.states, [0, 0])

    def test_exact_on_trees(self):
        """Max-product on acyclic graphs returns an exact MAP score."""
        rng = np.random.default_rng(42)
        for trial in range(60):
            n = int(rng.integers(2, 8))
            k = int(rng.integers(2, 5))
            kind = "chain" if trial % 2 == 0 else "star"
            graph, node, edge = random_instance(rng, n, k, kind)
            got, _, _ = lbp_map(graph, node, edge)
            want, want_score = exact_map(graph, node, edge)
            got_score = score_of(graph, node, edge, got.states)
            assert got_score == pytest.approx(want_score, abs=1e-9)

    def test_normalization_invariance(self):
        rng = np.random.default_rng(7)
        graph, node, edge = random_instance(rng, 6, 3, "grid23")
        a1, _, _ = lbp_map(graph, node, edge, normalize=True)
        a2, _, _ = lbp_map(graph, node, edge, normalize=False)
        np.testing.assert_array_equal(a1.states, a2.states)

    def test_shifting_potentials_keeps_decode(self):
        """Adding a constant to all node potentials of one node cannot change
        the argmax decode."""
        rng = np.random.default_rng(8)
        graph, node, edge = random_instance(rng, 5, 3, "chain")
        a1, _, _ = lbp_map(graph, node, edge)
        node2 = node.copy()
        node2[2] += 11.5
        a2, _, _ = lbp_map(graph, node2, edge)
        np.testing.assert_array_equal(a1.states, a2.states)

    def test_return_state_exposes_messages(self):
        rng = np.random.default_rng(3)
        graph, node, edge = random_instance(rng, 4, 2, "chain")
        assignment, converged, iterations, state = lbp_map(
            graph, node, edge, return_state=True
        )
        assert state.messages.shape == (2 * graph.num_edges, 2)
        assert state.iterations == iterations
        assert state.damping == 0.5
        # normalized messages peak at zero
        np.testing.assert_allclose(
            state.messages.max(axis=1), 0.0, atol=1e-12
        )

    def test_validation_errors(self):
        graph = DependencyGraph(2, [(0, 1)])
        node = np.zeros((2, 2))
        edge = np.zeros((2, 2))
        with pytest.raises(ValueError, match="does not match graph"):
            lbp_map(graph, np.zeros((3, 2)), edge)
        with pytest.raises(ValueError, match="disagree on K"):
            lbp_map(graph, node, np.zeros((3, 3)))
        with pytest.raises(ValueError, match="non-finite"):
            lbp_map(graph, node + np.nan, edge)
        with pytest.raises(ValueError, match="damping"):
            lbp_map(graph, node, edge, damping=1.0)
        with pytest.raises(ValueError, match="max_iters"):
            lbp_map(graph, node, edge, max_iters=0)


def score_of(graph, node, edge, states):
    total = float(node[np.arange(len(states)), states].sum())
    for e1, e2 in graph.edges:
        total += float(edge[states[e1], states[e2]])
    return total


class TestExactMap:
    def test_hand_checked_two_nodes(self):
        graph = DependencyGraph(2, [(0, 1)])
        node = np.array([[1.0, 0.0], [0.0, 2.0]])
        edge = np.array([[0.0, 0.0], [0.0, 1.5]])
        assignment, best = exact_map(graph, node, edge)
        # (1, 1): 0 + 2 + 1.5 = 3.5 beats (0, 1): 1 + 2 + 0 = 3
        np.testing.assert_array_equal(assignment.states, [1, 1])
        assert best == pytest.approx(3.5)

    def test_tie_breaks_lexicographically(self):
        graph = DependencyGraph(2, [])
        node = np.zeros((2, 3))
        assignment, best = exact_map(graph, node, np.zeros((3, 3)))
        np.testing.assert_array_equal(assignment.states, [0, 0])
        assert best == 0.0

    def test_maximizes_over_random_instances(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n, k = int(rng.integers(2, 6)), int(rng.integers(2, 4))
            graph, node, edge = random_instance(rng, n, k, "chain")
            _, best = exact_map(graph, node, edge)
            for _ in range(30):
                states = rng.integers(0, k, size=n)
                assert score_of(graph, node, edge, states) <= best + 1e-12

    def test_enumeration_guard(self):
        n = 40
        graph = DependencyGraph(n, [(i, i + 1) for i in range(n - 1)])
        with pytest.raises(ValueError, match="enumeration"):
            exact_map(graph, np.zeros((n, 4)), np.zeros((4, 4)))


class TestJointFeatureMap:
    def test_counts_and_layout(self):
        phi = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
        graph = DependencyGraph(3, [(0, 1), (1, 2)])
        assignment = LatentAssignment([0, 1, 1], 2)
        psi = joint_feature_map(phi, assignment, graph)
        assert psi.shape == (2 * 2 + 2 * 2,)
        trans = psi[:4].reshape(2, 2)
        emis = psi[4:].reshape(2, 2)
        # edges (0, 1): states (0, 1); (1, 2): states (1, 1)
        np.testing.assert_array_equal(trans, [[0.0, 1.0], [0.0, 1.0]])
        np.testing.assert_array_equal(emis, [[1.0, 2.0], [8.0, 10.0]])

    def test_inner_product_matches_potential_sums_at_theta_zero(self):
        """<v, psi(X, H)> equals the total potential of H when theta = 0."""
        rng = np.random.default_rng(13)
        for _ in range(20):
            n, k, d = 6, 3, 4
            graph, _, _ = random_instance(rng, n, k, "chain")
            phi = rng.standard_normal((n, d))
            weights = CrfWeights(
                rng.standard_normal((k, k)), rng.standard_normal((k, d))
            )
            cluster = ClusterModel(
                rng.standard_normal((k, d)), np.zeros(k), [2, 2, 2]
            )
            hp = HyperParams(K=k, theta=0.0)
            node, edge = build_potentials(phi, cluster, weights, hp)
            states = rng.integers(0, k, size=n)
            assignment = LatentAssignment(states.astype(np.int32), k)
            psi = joint_feature_map(phi, assignment, graph)
            inner = float(weights.flat @ psi)
            total = score_of(graph, node.table, edge.table, states)
            assert inner == pytest.approx(total, abs=1e-10)


class TestLogPartitionBrute:
    def test_zero_weights_count_assignments(self):
        """With v = 0 every assignment scores 1, so log Z = n log K."""
        rng = np.random.default_rng(17)
        for n, k in [(1, 2), (3, 2), (5, 3), (8, 2), (6, 4)]:
            graph = DependencyGraph(
                n, [(i, i + 1) for i in range(n - 1)]
            )
            phi = rng.standard_normal((n, 3))
            logz = log_partition_brute(phi, graph, CrfWeights.zeros(k, 3))
            assert logz == pytest.approx(n * np.log(k), abs=1e-10)

    def test_against_high_precision_oracle(self):
        """Exact enumeration in mpmath arbitrary precision agrees to 1e-10."""
        mpmath = pytest.importorskip("mpmath")
        rng = np.random.default_rng(19)
        n, k, d = 5, 2, 3
        graph = DependencyGraph(n, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)])
        phi = rng.standard_normal((n, d))
        weights = CrfWeights(
            rng.standard_normal((k, k)), rng.standard_normal((k, d))
        )
        got = log_partition_brute(phi, graph, weights)

        mpmath.mp.dps = 50
        total = mpmath.mpf(0)
        emis_score = phi @ weights.emis.T
        for idx in range(k**n):
            states = [(idx // k**p) % k for p in range(n)]
            s = sum(emis_score[i, states[i]] for i in range(n))
            for e1, e2 in graph.edges:
                s += weights.trans[states[e1], states[e2]]
            total += mpmath.e ** mpmath.mpf(float(s))
        want = float(mpmath.log(total))
        assert got == pytest.approx(want, abs=1e-10)

    def test_single_node_matches_logsumexp(self):
        phi = np.array([[1.0, -2.0]])
        graph = DependencyGraph(1, [])
        weights = CrfWeights(np.zeros((2, 2)), np.array([[0.5, 0.5], [2.0, 0.0]]))
        scores = phi @ weights.emis.T
        want = float(np.log(np.exp(scores).sum()))
        assert log_partition_brute(phi, graph, weights) == pytest.approx(want)


class TestKernelParity:
    """The compiled message kernel and the reference kernel are bitwise equal."""

    def test_backend_reports_a_kernel(self):
        assert lbp_backend() in ("compiled", "python")

    def test_env_override_forces_python(self):
        env = dict(os.environ, LCCAD_PURE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, "-c",
             "from lccad.inference import lbp_backend; print(lbp_backend())"],
            capture_output=True, text=True, env=env, check=True,
        )
        assert out.stdout.strip() == "python"

    def test_bitwise_identical_runs(self):
        fast = pytest.importorskip("lccad._lbp_fast")
        rng = np.random.default_rng(23)
        for trial in range(30):
            n = int(rng.integers(2, 9))
            k = int(rng.integers(2, 5))
            kind = ("chain", "star", "grid23")[trial % 3]
            graph, node, edge = random_instance(rng, n, k, kind)
            src, dst = graph.directed_edges()
            args = (node, edge, src, dst, 100, 0.5, 1e-8, True)
            m_ref, b_ref, it_ref, conv_ref = run_ref(*args)
            m_fast, b_fast, it_fast, conv_fast = fast.run_max_product(*args)
            assert it_ref == it_fast and conv_ref == conv_fast
            np.testing.assert_array_equal(m_ref, m_fast)
            np.testing.assert_array_equal(b_ref, b_fast)

    def test_bitwise_identical_without_normalization(self):
        fast = pytest.importorskip("lccad._lbp_fast")
        rng = np.random.default_rng(29)
        graph, node, edge = random_instance(rng, 6, 3, "grid23")
        src, dst = graph.directed_edges()
        args = (node, edge, src, dst, 50, 0.3, 1e-8, False)
        m_ref, b_ref, *_ = run_ref(*args)
        m_fast, b_fast, *_ = fast.run_max_product(*args)
        np.testing.assert_array_equal(m_ref, m_fast)
        np.testing.assert_array_equal(b_ref, b_fast)
