"""The alternating estimator: hypersphere updates, CRF weight training by
penalized pseudo-likelihood, state inference, the fit loop, anomaly scores,
the joint objective, and model file serialization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from lccad.core import (
    AUTO,
    ClusterModel,
    CrfWeights,
    DependencyGraph,
    FeatureMatrix,
    HyperParams,
    LatentAssignment,
    validate_problem,
)
from lccad.features import FeatureMapper, IdentityMapper, median_bandwidth
from lccad.inference import (
    BRUTE_FORCE_LIMIT,
    build_potentials,
    hinge,
    joint_feature_map,
    lbp_map,
    log_partition_brute,
)

__all__ = [
    "GRAD_TOL",
    "MAX_GRAD_ITERS",
    "LccadModel",
    "FitReport",
    "ObjectiveParts",
    "update_centers",
    "pseudolikelihood",
    "update_weights",
    "resolve_gamma",
    "infer_states",
    "fit",
    "score",
    "objective",
    "save_model",
    "load_model",
]

#: Weight training stops when the gradient norm drops below this ...
GRAD_TOL = 1e-5
#: ... or after this many descent iterations.
MAX_GRAD_ITERS = 500

_GAMMA_LO = 1e-4
_GAMMA_HI = 1e4
_NORM_BAND = (0.99, 1.01)


# ---------------------------------------------------------------------------
# Hypersphere updates


def _sq_dists(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    diff = points - center
    return (diff * diff).sum(axis=1)


def _optimal_radius_sq(sq, nu: float) -> float:
    """Exact minimizer over t >= 0 of t + (1/(n nu)) sum hinge(d_i - t).

    The derivative in t is 1 - |{i: d_i > t}| / (n nu); the minimum sits at
    the ceil((1 - nu) n)-th smallest squared distance (t = 0 when nu = 1).
    """
    n = sq.shape[0]
    rank = int(np.ceil((1.0 - nu) * n))
    if rank <= 0:
        return 0.0
    return float(np.partition(sq, rank - 1)[rank - 1])


def _sphere_objective(sq, t: float, nu: float) -> float:
    return t + float(hinge(sq - t).sum()) / (sq.shape[0] * nu)


def _centroid_step(points: np.ndarray, sq: np.ndarray, t: float, nu: float,
                   tie_tol: float = 1e-9) -> np.ndarray:
    """Minimizer of the local quadratic model of the sphere objective.

    Around the current radius, points strictly outside contribute weight
    1/(n nu), points on the boundary share the remaining 1 - |outside|/(n nu)
    (the envelope subgradient of the order-statistic radius), and interior
    points contribute nothing; the weights sum to one, so the model minimizer
    is a weighted centroid.
    """
    n = sq.shape[0]
    scale = max(t, 1.0)
    outside = sq > t + tie_tol * scale
    tied = np.abs(sq - t) <= tie_tol * scale
    w = np.zeros(n)
    w[outside] = 1.0 / (n * nu)
    boundary_total = 1.0 - outside.sum() / (n * nu)
    if tied.any() and boundary_total > 0.0:
        w[tied] = boundary_total / tied.sum()
    total = w.sum()
    if total <= 0.0:
        return points.mean(axis=0)
    return (w[:, None] * points).sum(axis=0) / total


def _fit_hypersphere(points: np.ndarray, nu: float, tol: float = 1e-9,
                     max_rounds: int = 500):
    """Minimize t + (1/(n nu)) sum hinge(||c - p_i||^2 - t) over (c, t >= 0).

    The objective is jointly convex.  Alternates the exact order-statistic
    radius with a backtracked center move toward the weighted centroid that
    minimizes the local quadratic model, until the improvement falls below
    ``tol`` (relative to the objective scale).
    """
    c = points.mean(axis=0)
    sq = _sq_dists(points, c)
    t = _optimal_radius_sq(sq, nu)
    best = _sphere_objective(sq, t, nu)
    for _ in range(max_rounds):
        direction = _centroid_step(points, sq, t, nu) - c
        if float(direction @ direction) <= 0.0:
            break
        step = 1.0
        accepted = False
        while step > 1e-14:
            c_try = c + step * direction
            sq_try = _sq_dists(points, c_try)
            t_try = _optimal_radius_sq(sq_try, nu)
            val = _sphere_objective(sq_try, t_try, nu)
            if val < best:
                c, sq, t = c_try, sq_try, t_try
                improvement = best - val
                best = val
                accepted = True
                break
            step *= 0.5
        if not accepted or improvement <= tol * max(abs(best), 1.0):
            break
    return c, t


def update_centers(xmapped, assignment: LatentAssignment, hp: HyperParams) -> ClusterModel:
    """Per-class hypersphere update for a fixed assignment.

    With nu = 1 the hinge solution is the class mean with t = 0; with nu < 1
    each class solves the convex center/radius problem.  Empty classes fall
    back to the global mean with t = 0 (their zero count flags them).
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    states = assignment.states
    k = hp.K
    if assignment.num_states != k:
        raise ValueError("assignment and hyperparameters disagree on K")
    if phi.shape[0] != len(assignment):
        raise ValueError("features and assignment disagree on n")
    centers = np.empty((k, phi.shape[1]))
    radii = np.zeros(k)
    counts = np.bincount(states, minlength=k).astype(np.int64)
    global_mean = phi.mean(axis=0)
    for s in range(k):
        members = phi[states == s]
        if members.shape[0] == 0:
            centers[s] = global_mean
            continue
        if hp.nu >= 1.0:
            centers[s] = members.mean(axis=0)
        else:
            centers[s], radii[s] = _fit_hypersphere(members, hp.nu)
    return ClusterModel(centers, radii, counts)


# ---------------------------------------------------------------------------
# CRF weight training (penalized pseudo-likelihood)


def pseudolikelihood(xmapped, assignment: LatentAssignment, graph: DependencyGraph,
                     weights: CrfWeights, gamma: float):
    """Value and gradient of the penalized negative pseudo-log-likelihood.

    PL(v) = (gamma/2) ||v||^2 - sum_i log P(h_i | h_N(i), X, v), where the
    local conditional of node i scores state s with <emis_s, z_i> plus, for
    every incident edge in stored orientation (i, j): trans[s, h_j], and for
    every edge (j, i): trans[h_j, s].

    Returns (value, grad) with ``grad`` flattened in CrfWeights.flat layout.
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    states = assignment.states.astype(np.int64)
    n = phi.shape[0]
    k, d = weights.num_states, weights.feature_dim
    trans, emis = weights.trans, weights.emis

    u = phi @ emis.T
    if graph.num_edges:
        e1 = graph.edges[:, 0].astype(np.int64)
        e2 = graph.edges[:, 1].astype(np.int64)
        np.add.at(u, e1, trans[:, states[e2]].T)
        np.add.at(u, e2, trans[states[e1], :])
    lse = logsumexp(u, axis=1)
    rows = np.arange(n)
    value = 0.5 * gamma * float((trans * trans).sum() + (emis * emis).sum())
    value -= float((u[rows, states] - lse).sum())

    resid = np.exp(u - lse[:, None])
    resid[rows, states] -= 1.0
    grad_emis = resid.T @ phi + gamma * emis
    grad_trans = gamma * trans.copy()
    if graph.num_edges:
        acc1 = np.zeros((k, k))
        np.add.at(acc1, states[e2], resid[e1])
        acc2 = np.zeros((k, k))
        np.add.at(acc2, states[e1], resid[e2])
        grad_trans += acc1.T + acc2
    return value, np.concatenate([grad_trans.ravel(), grad_emis.ravel()])


def _minimize_pl(xmapped, assignment, graph, gamma: float, k: int, d: int,
                 warm_start=None) -> CrfWeights:
    """Gradient descent with backtracking line search on the PL objective."""
    x = np.zeros(k * k + k * d) if warm_start is None else warm_start.flat

    def evaluate(vec):
        return pseudolikelihood(
            xmapped, assignment, graph, CrfWeights.from_flat(vec, k, d), gamma
        )

    value, grad = evaluate(x)
    step = 1.0
    for _ in range(MAX_GRAD_ITERS):
        gnorm_sq = float(grad @ grad)
        if np.sqrt(gnorm_sq) <= GRAD_TOL:
            break
        accepted = False
        while step > 1e-20:
            x_try = x - step * grad
            v_try, g_try = evaluate(x_try)
            if v_try <= value - 1e-4 * step * gnorm_sq:
                x, value, grad = x_try, v_try, g_try
                step = min(step * 2.0, 1e6)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return CrfWeights.from_flat(x, k, d)


def update_weights(xmapped, assignment: LatentAssignment, graph: DependencyGraph,
                   hp: HyperParams, gamma=None, warm_start=None) -> CrfWeights:
    """Train CRF weights on the current assignment.

    ``gamma`` overrides hp.gamma; the sentinel "auto" triggers the bisection
    in resolve_gamma first.  ``warm_start`` (a CrfWeights) seeds the descent.
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    g = hp.gamma if gamma is None else gamma
    if g == AUTO:
        g = resolve_gamma(xmapped, assignment, graph, hp)
    k, d = hp.K, phi.shape[1]
    if assignment.num_states != k:
        raise ValueError("assignment and hyperparameters disagree on K")
    return _minimize_pl(phi, assignment, graph, float(g), k, d, warm_start)


def resolve_gamma(xmapped, assignment: LatentAssignment, graph: DependencyGraph,
                  hp: HyperParams, max_rounds: int = 60) -> float:
    """Bisection on gamma in [1e-4, 1e4] targeting a unit first-update norm.

    Searches log-space for ||v(gamma)|| in [0.99, 1.01], computed on this
    assignment's weight update.  If even the interval ends cannot bracket a
    unit norm the nearest end is returned.
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    k, d = hp.K, phi.shape[1]
    lo_band, hi_band = _NORM_BAND
    warm = None

    def norm_at(g):
        nonlocal warm
        w = _minimize_pl(phi, assignment, graph, g, k, d, warm_start=warm)
        warm = w
        return w.norm

    if norm_at(_GAMMA_LO) < lo_band:
        return _GAMMA_LO
    if norm_at(_GAMMA_HI) > hi_band:
        return _GAMMA_HI
    lo, hi = _GAMMA_LO, _GAMMA_HI
    for _ in range(max_rounds):
        mid = float(np.sqrt(lo * hi))
        nm = norm_at(mid)
        if lo_band <= nm <= hi_band:
            return mid
        if nm > hi_band:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


# ---------------------------------------------------------------------------
# Inference step and the fit loop


def infer_states(xmapped, graph: DependencyGraph, cluster: ClusterModel,
                 weights: CrfWeights, hp: HyperParams) -> LatentAssignment:
    """One inference step: build potentials and decode by max-product.

    The node potentials use constant class sizes 1/nu, which turns the
    hypersphere term into plain theta * loss(||c_t - z_i||^2 - t_t): the
    normalization-free reduced objective the alternating scheme optimizes.
    That keeps the term defined while the assignment is still unknown, scales
    it comparably to the CRF term independent of n, and makes the theta = 1
    reduction an exact nearest-center rule (see the k-means equivalence
    tests).
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    reduced = np.full(hp.K, 1.0 / hp.nu)
    node, edge = build_potentials(phi, cluster, weights, hp, counts=reduced)
    assignment, _, _ = lbp_map(graph, node, edge)
    return assignment


def _kmeans_pp_assignment(phi: np.ndarray, k: int, rng) -> LatentAssignment:
    """k-means++ seeding on mapped features; assign each row to its nearest seed."""
    n = phi.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(phi, phi[chosen[0]])
    for _ in range(1, k):
        total = float(d2.sum())
        if total > 0:
            probs = d2 / total
            chosen.append(int(rng.choice(n, p=probs)))
        else:
            chosen.append(int(rng.integers(n)))
        d2 = np.minimum(d2, _sq_dists(phi, phi[chosen[-1]]))
    seeds = phi[chosen]
    dists = (
        (phi * phi).sum(axis=1)[:, None]
        + (seeds * seeds).sum(axis=1)[None, :]
        - 2.0 * phi @ seeds.T
    )
    return LatentAssignment(np.argmin(dists, axis=1).astype(np.int32), k)


def _svdd_part(phi, cluster: ClusterModel, assignment: LatentAssignment,
               hp: HyperParams) -> float:
    """Hypersphere part of the joint objective, with this assignment's counts."""
    total = 0.0
    states = assignment.states
    for s in range(hp.K):
        members = phi[states == s]
        t = float(cluster.radii_sq[s])
        total += t
        if members.shape[0]:
            sq = _sq_dists(members, cluster.centers[s])
            total += float(hinge(sq - t).sum()) / (members.shape[0] * hp.nu)
    return total


@dataclass
class FitReport:
    """Summary of a fit: iteration count, how the loop stopped, and the final
    objective components (CRF part is the pseudo-likelihood surrogate)."""

    iterations: int
    converged: bool
    stopped_on: str
    svdd_objective: float
    crf_objective: float


@dataclass(eq=False)
class LccadModel:
    """Fitted estimator state.

    ``mapped`` caches the mapped features of the training data; it is not
    serialized, so a model loaded from disk must be re-attached to data
    before scoring (see load_model).
    """

    cluster: ClusterModel
    weights: CrfWeights
    assignment: LatentAssignment
    hp: HyperParams
    mapper: object
    gamma_: float
    sigma_: float
    trace: list = field(default_factory=list)
    mapped: np.ndarray = None

    @property
    def num_classes(self) -> int:
        return self.cluster.num_classes


def fit(X, graph: DependencyGraph, hp: HyperParams, mapper=None,
        init_assignment=None):
    """Alternating estimation of spheres, weights, and states.

    Starting from a k-means++ assignment (or ``init_assignment``) with zero
    CRF weights, each round decodes states with the previous round's
    parameters, then refits centers and weights on the decode.  Stops when
    the assignment repeats the previous round (converged), revisits an older
    assignment (cycling), or hits hp.max_outer_iters.  At theta = 1 the CRF
    block cannot influence inference, so its training is skipped and the
    weights stay zero.

    Returns (LccadModel, FitReport).
    """
    if not isinstance(X, FeatureMatrix):
        X = FeatureMatrix(X)
    report = validate_problem(X, graph, hp)
    if not report.ok:
        raise ValueError("invalid problem: " + "; ".join(report.violations))

    if mapper is None:
        sigma = hp.sigma if hp.sigma is not None else median_bandwidth(
            X.values, seed=hp.seed
        )
        mapper = FeatureMapper(X.cols, hp.rff_dim, sigma=sigma, seed=hp.seed)
    sigma_used = float(mapper.sigma) if mapper.sigma is not None else float("nan")
    phi = mapper.map_all(X)

    if init_assignment is None:
        rng = np.random.default_rng(hp.seed)
        assignment = _kmeans_pp_assignment(phi, hp.K, rng)
    else:
        assignment = init_assignment
        if not isinstance(assignment, LatentAssignment):
            assignment = LatentAssignment(np.asarray(assignment), hp.K)
        if len(assignment) != X.rows or assignment.num_states != hp.K:
            raise ValueError("init assignment does not match the problem")

    cluster = update_centers(phi, assignment, hp)
    weights = CrfWeights.zeros(hp.K, phi.shape[1])
    train_crf = hp.theta < 1.0
    gamma_value = None if hp.gamma == AUTO else float(hp.gamma)

    trace: list = []
    seen = {assignment.states.tobytes(): 0}
    stopped_on = "max_iters"
    iterations = 0
    for it in range(1, hp.max_outer_iters + 1):
        new_assignment = infer_states(phi, graph, cluster, weights, hp)
        cluster = update_centers(phi, new_assignment, hp)
        if train_crf:
            if gamma_value is None:
                gamma_value = resolve_gamma(phi, new_assignment, graph, hp)
            weights = update_weights(
                phi, new_assignment, graph, hp, gamma=gamma_value, warm_start=weights
            )
        iterations = it
        changed = int(np.count_nonzero(new_assignment.states != assignment.states))
        trace.append(
            {
                "iteration": it,
                "changed": changed,
                "svdd_objective": _svdd_part(phi, cluster, new_assignment, hp),
            }
        )
        assignment = new_assignment
        if changed == 0:
            stopped_on = "converged"
            break
        key = assignment.states.tobytes()
        if key in seen:
            stopped_on = "cycling"
            break
        seen[key] = it

    if gamma_value is None:
        gamma_value = 0.0
    crf_value, _ = pseudolikelihood(phi, assignment, graph, weights, gamma_value)
    model = LccadModel(
        cluster=cluster,
        weights=weights,
        assignment=assignment,
        hp=hp,
        mapper=mapper,
        gamma_=float(gamma_value),
        sigma_=sigma_used,
        trace=trace,
        mapped=phi,
    )
    fit_report = FitReport(
        iterations=iterations,
        converged=(stopped_on == "converged"),
        stopped_on=stopped_on,
        svdd_objective=_svdd_part(phi, cluster, assignment, hp),
        crf_objective=float(crf_value),
    )
    return model, fit_report


def score(model: LccadModel, index=None):
    """Anomaly score: squared feature-space distance to the assigned center.

    With ``index`` None returns all n scores, else the one sample's score.
    """
    if model.mapped is None:
        raise ValueError(
            "model has no attached data; fit it or pass X to load_model"
        )
    phi = model.mapped
    centers = model.cluster.centers[model.assignment.states]
    if index is None:
        diff = phi - centers
        return (diff * diff).sum(axis=1)
    i = int(index)
    diff = phi[i] - centers[i]
    return float(diff @ diff)


@dataclass(frozen=True)
class ObjectiveParts:
    """Joint objective split into its hypersphere and CRF parts.

    ``crf_exact`` marks whether the log partition function was enumerated
    exactly; on instances past the enumeration guard the penalized
    pseudo-likelihood stands in.
    """

    svdd: float
    crf: float
    total: float
    crf_exact: bool


def objective(model: LccadModel, xmapped, graph: DependencyGraph) -> ObjectiveParts:
    """Evaluate the joint objective at the model's parameters and assignment.

    total = theta * svdd + (1 - theta) * crf, where svdd sums per-class radii
    plus normalized hinge slack and crf is (gamma/2)||v||^2 - <v, psi> + log Z.
    """
    phi = np.asarray(xmapped, dtype=np.float64)
    hp = model.hp
    svdd = _svdd_part(phi, model.cluster, model.assignment, hp)
    k, n = hp.K, phi.shape[0]
    gamma = model.gamma_
    vnorm_sq = float(model.weights.flat @ model.weights.flat)
    if k**n <= BRUTE_FORCE_LIMIT:
        psi = joint_feature_map(phi, model.assignment, graph)
        crf = (
            0.5 * gamma * vnorm_sq
            - float(model.weights.flat @ psi)
            + log_partition_brute(phi, graph, model.weights)
        )
        exact = True
    else:
        crf, _ = pseudolikelihood(phi, model.assignment, graph, model.weights, gamma)
        crf = float(crf)
        exact = False
    total = hp.theta * svdd + (1.0 - hp.theta) * crf
    return ObjectiveParts(float(svdd), float(crf), float(total), exact)


# ---------------------------------------------------------------------------
# Serialization

_MAGIC = b"LCCM"
_FORMAT_VERSION = 1
_KIND_IDENTITY = 0
_KIND_RFF = 1


def save_model(model: LccadModel, path) -> None:
    """Write the model to a single self-describing little-endian binary file.

    Layout: magic, format version, then int32 fields (n, d, D, K, mapper
    kind, seed, max_outer_iters), float64 fields (sigma, theta, nu, resolved
    gamma), and the float64 payload (centers, squared radii, transition
    weights, emission weights) followed by the int32 assignment.  Round-trips
    are bit exact.
    """
    mapper = model.mapper
    if isinstance(mapper, IdentityMapper):
        kind, sigma, seed = _KIND_IDENTITY, float("nan"), 0
    elif isinstance(mapper, FeatureMapper):
        kind, sigma, seed = _KIND_RFF, float(mapper.sigma), int(mapper.seed)
    else:
        raise ValueError(f"cannot serialize mapper of type {type(mapper).__name__}")
    hp = model.hp
    n = len(model.assignment)
    d = mapper.input_dim
    dim = model.cluster.dim
    k = model.cluster.num_classes
    gamma = float(model.gamma_)

    header = _MAGIC + struct.pack("<I", _FORMAT_VERSION)
    header += struct.pack("<7i", n, d, dim, k, kind, seed, hp.max_outer_iters)
    header += struct.pack("<4d", sigma, hp.theta, hp.nu, gamma)
    payload = b"".join(
        [
            np.ascontiguousarray(model.cluster.centers, dtype="<f8").tobytes(),
            np.ascontiguousarray(model.cluster.radii_sq, dtype="<f8").tobytes(),
            np.ascontiguousarray(model.cluster.counts, dtype="<i4").tobytes(),
            np.ascontiguousarray(model.weights.trans, dtype="<f8").tobytes(),
            np.ascontiguousarray(model.weights.emis, dtype="<f8").tobytes(),
            np.ascontiguousarray(model.assignment.states, dtype="<i4").tobytes(),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header + payload)


def load_model(path, X=None) -> LccadModel:
    """Read a model file written by save_model.

    Pass ``X`` (the dataset the model was fitted on) to re-attach mapped
    features so that score() works on the loaded model.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError("not a model file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version}")
    off = 8
    n, d, dim, k, kind, seed, max_outer = struct.unpack_from("<7i", blob, off)
    off += 28
    sigma, theta, nu, gamma = struct.unpack_from("<4d", blob, off)
    off += 32

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr

    centers = take(k * dim, "<f8").reshape(k, dim)
    radii = take(k, "<f8")
    counts = take(k, "<i4").astype(np.int64)
    trans = take(k * k, "<f8").reshape(k, k)
    emis = take(k * dim, "<f8").reshape(k, dim)
    states = take(n, "<i4")
    if off != len(blob):
        raise ValueError("model file has trailing bytes")

    if kind == _KIND_IDENTITY:
        mapper = IdentityMapper(d)
        hp_sigma = None
    elif kind == _KIND_RFF:
        mapper = FeatureMapper(d, dim, sigma=sigma, seed=seed)
        hp_sigma = sigma
    else:
        raise ValueError(f"unknown mapper kind {kind}")
    hp = HyperParams(
        K=k, theta=theta, nu=nu, gamma=gamma, sigma=hp_sigma, rff_dim=dim,
        seed=seed, max_outer_iters=max_outer,
    )
    mapped = None
    if X is not None:
        mapped = mapper.map_all(X)
    return LccadModel(
        cluster=ClusterModel(centers, radii, counts),
        weights=CrfWeights(trans, emis),
        assignment=LatentAssignment(states, k),
        hp=hp,
        mapper=mapper,
        gamma_=float(gamma),
        sigma_=float(sigma),
        trace=[],
        mapped=mapped,
    )
