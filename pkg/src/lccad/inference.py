"""Latent state inference: potential tables, max-product message passing,
exhaustive oracles, and the joint feature map.

The message passing inner loop runs on a compiled kernel when the
lccad._lbp_fast extension is importable and on the pure-numpy kernel in
lccad._lbp_ref otherwise; set the environment variable LCCAD_PURE_PYTHON=1
to force the fallback.  Both kernels produce bitwise identical results.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from lccad.core import ClusterModel, CrfWeights, DependencyGraph, HyperParams, LatentAssignment

__all__ = [
    "EMPTY_CLASS_PENALTY",
    "BRUTE_FORCE_LIMIT",
    "NodePotentials",
    "EdgePotentials",
    "MessageState",
    "hinge",
    "build_potentials",
    "lbp_map",
    "lbp_backend",
    "exact_map",
    "joint_feature_map",
    "log_partition_brute",
]

#: Stand-in for the hypersphere term of a class with no members (kept finite
#: so message passing stays numerically well behaved).
EMPTY_CLASS_PENALTY = 1e6

#: Largest number of assignments the exhaustive routines will enumerate.
BRUTE_FORCE_LIMIT = 10_000_000


def _select_kernel():
    if os.environ.get("LCCAD_PURE_PYTHON", "").strip() not in ("", "0"):
        from lccad._lbp_ref import run_max_product

        return run_max_product, "python"
    try:
        from lccad._lbp_fast import run_max_product

        return run_max_product, "compiled"
    except ImportError:
        from lccad._lbp_ref import run_max_product

        return run_max_product, "python"


_RUN_KERNEL, _BACKEND = _select_kernel()


def lbp_backend() -> str:
    """Name of the message passing kernel in use: "compiled" or "python"."""
    return _BACKEND


@dataclass(frozen=True, eq=False)
class NodePotentials:
    """Per-node, per-state log potentials, shape (n, K), finite."""

    table: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.table, dtype=np.float64, order="C", copy=True)
        if t.ndim != 2:
            raise ValueError(f"node potential table must be (n, K), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("node potentials contain non-finite values")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


@dataclass(frozen=True, eq=False)
class EdgePotentials:
    """State-pair log potentials shared by every edge, shape (K, K), finite.

    Entry (s1, s2) scores an edge whose stored orientation has its first
    endpoint in state s1 and its second in state s2.
    """

    table: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.table, dtype=np.float64, order="C", copy=True)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError(f"edge potential table must be (K, K), got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ValueError("edge potentials contain non-finite values")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)


@dataclass(frozen=True, eq=False)
class MessageState:
    """Final messages of a message passing run.

    messages has shape (2m, K): entry e < m is the message along the stored
    edge orientation, e + m its reversal.  When ``normalized`` is set every
    message row has max 0 (the additive constant is the negative of the
    pre-normalization row max).
    """

    messages: np.ndarray
    damping: float
    iterations: int
    normalized: bool


def hinge(x: np.ndarray) -> np.ndarray:
    """Hinge loss max(0, x), the only shipped hypersphere slack loss."""
    return np.maximum(x, 0.0)


def _table_of(obj) -> np.ndarray:
    return obj.table if hasattr(obj, "table") else np.asarray(obj, dtype=np.float64)


def build_potentials(xmapped, model: ClusterModel, weights: CrfWeights,
                     hp: HyperParams, counts=None, loss=hinge):
    """Assemble node and edge potential tables.

    Node potentials: (1 - theta) <emis_t, z_i> minus theta / (n_t nu) times
    the loss on the hypersphere slack ||c_t - z_i||^2 - t_t.  Classes with
    count zero get theta * EMPTY_CLASS_PENALTY in place of the loss term.
    Edge potentials: (1 - theta) * trans.

    ``counts`` overrides the class sizes used in the node table (the fitting
    loop passes constant 1/nu, which cancels the normalization); by default
    the model's own counts are used.
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    if phi.ndim != 2:
        raise ValueError("mapped features must be 2-D")
    centers = model.centers
    if centers.shape[1] != phi.shape[1]:
        raise ValueError("feature dimension mismatch between data and centers")
    if weights.num_states != model.num_classes:
        raise ValueError("weights and cluster model disagree on K")
    if weights.feature_dim != phi.shape[1]:
        raise ValueError("feature dimension mismatch between data and weights")
    theta, nu = hp.theta, hp.nu

    emis_score = phi @ weights.emis.T
    sq_dist = (
        (phi * phi).sum(axis=1)[:, None]
        + (centers * centers).sum(axis=1)[None, :]
        - 2.0 * phi @ centers.T
    )
    slack = loss(sq_dist - model.radii_sq[None, :])

    cnt = model.counts if counts is None else counts
    cnt = np.asarray(cnt, dtype=np.float64).reshape(-1)
    if cnt.shape[0] != model.num_classes:
        raise ValueError("counts length must equal number of classes")
    occupied = cnt > 0
    sphere_term = np.empty_like(slack)
    sphere_term[:, occupied] = slack[:, occupied] * (theta / (cnt[occupied] * nu))
    sphere_term[:, ~occupied] = theta * EMPTY_CLASS_PENALTY

    node = (1.0 - theta) * emis_score - sphere_term
    edge = (1.0 - theta) * weights.trans
    return NodePotentials(node), EdgePotentials(edge)


def lbp_map(graph: DependencyGraph, node_pot, edge_pot, max_iters: int = 100,
            damping: float = 0.5, tol: float = 1e-8, normalize: bool = True,
            return_state: bool = False):
    """Approximate MAP decoding by damped synchronous max-product.

    Messages update as M_ij(s) <- max_t [iota_ij(t, s) + theta_i(t) +
    sum_{k in N(i) minus j} M_ki(t)], all edges in parallel per sweep, damped
    by ``damping`` and shifted so each message's max is 0.  On convergence
    (max message change < tol) or after ``max_iters`` sweeps, states decode
    from the max-marginals theta_i(s) + sum_{k in N(i)} M_ki(s); ties break
    toward the lowest state index.  Isolated nodes decode from theta_i alone.

    Returns (assignment, converged, iterations); with ``return_state`` the
    MessageState is appended.
    """
    node = _table_of(node_pot)
    edge = _table_of(edge_pot)
    if node.ndim != 2 or edge.ndim != 2 or edge.shape[0] != edge.shape[1]:
        raise ValueError("potential tables have wrong shape")
    n, num_states = node.shape
    if n != graph.num_nodes:
        raise ValueError("node potential table does not match graph size")
    if edge.shape[0] != num_states:
        raise ValueError("node and edge potential tables disagree on K")
    if not (np.all(np.isfinite(node)) and np.all(np.isfinite(edge))):
        raise ValueError("potentials contain non-finite values")
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    if graph.num_edges == 0:
        messages = np.zeros((0, num_states))
        beliefs = node.copy()
        iterations, converged = 0, True
    else:
        src, dst = graph.directed_edges()
        messages, beliefs, iterations, converged = _RUN_KERNEL(
            node, edge, src, dst, int(max_iters), float(damping), float(tol),
            bool(normalize),
        )
    if normalize:
        beliefs = beliefs - beliefs.max(axis=1, keepdims=True)
    states = np.argmax(beliefs, axis=1).astype(np.int32)
    assignment = LatentAssignment(states, num_states)
    if return_state:
        state = MessageState(messages, float(damping), int(iterations), bool(normalize))
        return assignment, bool(converged), int(iterations), state
    return assignment, bool(converged), int(iterations)


def _enumeration_guard(n: int, num_states: int) -> int:
    total = num_states**n
    if total > BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"exhaustive enumeration of {num_states}^{n} assignments exceeds "
            f"the limit of {BRUTE_FORCE_LIMIT}"
        )
    return total


def _state_blocks(n: int, num_states: int, total: int, block: int = 1 << 14):
    """Yield (offset, states) blocks enumerating assignments lexicographically,
    node 0 most significant."""
    powers = num_states ** np.arange(n - 1, -1, -1, dtype=np.int64)
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total), dtype=np.int64)
        yield start, ((idx[:, None] // powers[None, :]) % num_states).astype(np.int64)


def exact_map(graph: DependencyGraph, node_pot, edge_pot):
    """Exhaustive MAP: maximizes sum_i theta_i(h_i) + sum_E iota(h_e1, h_e2).

    Refuses instances with more than BRUTE_FORCE_LIMIT assignments.  Ties
    break toward the lexicographically smallest assignment.  Returns
    (assignment, score).
    """
    node = _table_of(node_pot)
    edge = _table_of(edge_pot)
    n, num_states = node.shape
    if n != graph.num_nodes:
        raise ValueError("node potential table does not match graph size")
    total = _enumeration_guard(n, num_states)
    e1 = graph.edges[:, 0].astype(np.int64)
    e2 = graph.edges[:, 1].astype(np.int64)
    cols = np.arange(n)

    best_score = -np.inf
    best_states = None
    for _, states in _state_blocks(n, num_states, total):
        scores = node[cols, states].sum(axis=1)
        if e1.size:
            scores += edge[states[:, e1], states[:, e2]].sum(axis=1)
        j = int(np.argmax(scores))
        if scores[j] > best_score:
            best_score = float(scores[j])
            best_states = states[j]
    return LatentAssignment(best_states.astype(np.int32), num_states), best_score


def joint_feature_map(xmapped, assignment: LatentAssignment, graph: DependencyGraph):
    """Sufficient statistics psi(X, H) as one flat vector.

    Layout: K*K transition counts in row-major (s1, s2) order, each
    undirected edge counted once with its stored orientation, followed by K
    emission blocks of length D where block s sums the mapped features of
    nodes in state s.
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    states = assignment.states.astype(np.int64)
    if phi.shape[0] != len(assignment) or phi.shape[0] != graph.num_nodes:
        raise ValueError("features, assignment, and graph disagree on n")
    k = assignment.num_states
    trans = np.zeros((k, k))
    if graph.num_edges:
        e1 = graph.edges[:, 0].astype(np.int64)
        e2 = graph.edges[:, 1].astype(np.int64)
        np.add.at(trans, (states[e1], states[e2]), 1.0)
    emis = np.zeros((k, phi.shape[1]))
    np.add.at(emis, states, phi)
    return np.concatenate([trans.ravel(), emis.ravel()])


def log_partition_brute(xmapped, graph: DependencyGraph, weights: CrfWeights):
    """log Z = log sum over all assignments of exp(<v, psi(X, H)>).

    Exhaustive and numerically stabilized; guarded by BRUTE_FORCE_LIMIT.
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    n = phi.shape[0]
    if n != graph.num_nodes:
        raise ValueError("features do not match graph size")
    if weights.feature_dim != phi.shape[1]:
        raise ValueError("feature dimension mismatch between data and weights")
    num_states = weights.num_states
    total = _enumeration_guard(n, num_states)
    emis_score = phi @ weights.emis.T
    trans = weights.trans
    e1 = graph.edges[:, 0].astype(np.int64)
    e2 = graph.edges[:, 1].astype(np.int64)
    cols = np.arange(n)

    result = -np.inf
    for _, states in _state_blocks(n, num_states, total):
        scores = emis_score[cols, states].sum(axis=1)
        if e1.size:
            scores += trans[states[:, e1], states[:, e2]].sum(axis=1)
        mx = float(scores.max())
        block_lse = mx + np.log(np.exp(scores - mx).sum())
        result = np.logaddexp(result, block_lse)
    return float(result)
