"""Core domain types, hyperparameters, and problem validation.

All types validate their invariants at construction time and are immutable
afterwards (arrays are stored read-only), so instances can be shared freely
between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "AUTO",
    "FeatureMatrix",
    "DependencyGraph",
    "LatentAssignment",
    "ClusterModel",
    "CrfWeights",
    "HyperParams",
    "ValidationReport",
    "hyperparam_violations",
    "validate_problem",
]

#: Sentinel for hyperparameters resolved automatically during fitting.
AUTO = "auto"

#: Largest seed that still round-trips through the 32-bit model file field.
MAX_SEED = 2**31 - 1


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Dataset of ``n`` samples by ``d`` raw input features.

    Values must be finite; the stored array is float64, C-contiguous and
    read-only.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 2:
            raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("feature matrix needs at least one row and one column")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature matrix contains non-finite values")
        object.__setattr__(self, "values", _frozen(arr))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class DependencyGraph:
    """Undirected dependency graph over sample indices.

    ``edges`` holds one row ``(e1, e2)`` per undirected edge.  The stored
    orientation is preserved: transition features and potentials index state
    pairs as ``(state of e1, state of e2)``.  Self loops and duplicate
    undirected edges are rejected.
    """

    num_nodes: int
    edges: np.ndarray

    def __post_init__(self) -> None:
        n = int(self.num_nodes)
        if n < 1:
            raise ValueError("graph needs at least one node")
        e = np.array(self.edges, dtype=np.int32, copy=True)
        if e.size == 0:
            e = e.reshape(0, 2)
        if e.ndim != 2 or e.shape[1] != 2:
            raise ValueError(f"edges must have shape (m, 2), got {e.shape}")
        if e.size:
            if e.min() < 0 or e.max() >= n:
                raise ValueError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise ValueError("self loops are not allowed")
            canon = np.sort(e, axis=1)
            if np.unique(canon, axis=0).shape[0] != e.shape[0]:
                raise ValueError("duplicate undirected edge")
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", _frozen(e))
        # Directed view: entries [0, m) keep the stored orientation,
        # [m, 2m) are the reversals; reverse of edge i is i +- m.
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        object.__setattr__(self, "_src", _frozen(np.ascontiguousarray(src, dtype=np.int32)))
        object.__setattr__(self, "_dst", _frozen(np.ascontiguousarray(dst, dtype=np.int32)))
        order = np.argsort(src, kind="stable")
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        object.__setattr__(self, "_nbr", _frozen(np.ascontiguousarray(dst[order])))
        object.__setattr__(self, "_indptr", _frozen(indptr))

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def directed_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(src, dst)`` of length ``2m``; reverse of edge ``i`` is ``i +- m``."""
        return self._src, self._dst

    def neighbors(self, i: int) -> np.ndarray:
        """Neighbors of node ``i``, each exactly once."""
        return self._nbr[self._indptr[i] : self._indptr[i + 1]]

    def degree(self, i: int) -> int:
        return int(self._indptr[i + 1] - self._indptr[i])


@dataclass(frozen=True, eq=False)
class LatentAssignment:
    """Latent class per sample: ``states[i]`` in ``{0, ..., num_states - 1}``."""

    states: np.ndarray
    num_states: int

    def __post_init__(self) -> None:
        arr = np.array(self.states, dtype=np.int32, copy=True).reshape(-1)
        k = int(self.num_states)
        if k < 1:
            raise ValueError("num_states must be >= 1")
        if arr.size < 1:
            raise ValueError("assignment must cover at least one sample")
        if arr.min() < 0 or arr.max() >= k:
            raise ValueError("state index out of range")
        object.__setattr__(self, "states", _frozen(arr))
        object.__setattr__(self, "num_states", k)

    def __len__(self) -> int:
        return self.states.shape[0]

    def same_as(self, other: "LatentAssignment") -> bool:
        return self.num_states == other.num_states and np.array_equal(
            self.states, other.states
        )


@dataclass(frozen=True, eq=False)
class ClusterModel:
    """Per-class hypersphere parameters: centers, squared radii, class sizes."""

    centers: np.ndarray
    radii_sq: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.centers, dtype=np.float64, order="C", copy=True)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError(f"centers must be (K, D), got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("centers contain non-finite values")
        r = np.array(self.radii_sq, dtype=np.float64, copy=True).reshape(-1)
        if r.shape[0] != c.shape[0]:
            raise ValueError("radii_sq length must equal number of classes")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("squared radii must be finite and >= 0")
        m = np.array(self.counts, copy=True).reshape(-1)
        if m.shape[0] != c.shape[0]:
            raise ValueError("counts length must equal number of classes")
        if np.any(m < 0) or not np.all(m == np.floor(m)):
            raise ValueError("counts must be non-negative integers")
        object.__setattr__(self, "centers", _frozen(c))
        object.__setattr__(self, "radii_sq", _frozen(r))
        object.__setattr__(self, "counts", _frozen(m.astype(np.int64)))

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True, eq=False)
class CrfWeights:
    """CRF parameter vector split into a transition block and emission block.

    ``trans[s1, s2]`` scores an edge whose stored orientation puts its first
    endpoint in state ``s1`` and second in ``s2``; ``emis[s]`` is the emission
    weight vector for state ``s``.  ``flat`` concatenates them in that order,
    matching the joint feature map layout.
    """

    trans: np.ndarray
    emis: np.ndarray

    def __post_init__(self) -> None:
        t = np.array(self.trans, dtype=np.float64, order="C", copy=True)
        e = np.array(self.emis, dtype=np.float64, order="C", copy=True)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or t.shape[0] < 1:
            raise ValueError(f"trans must be square (K, K), got {t.shape}")
        if e.ndim != 2 or e.shape[0] != t.shape[0]:
            raise ValueError(f"emis must be (K, D) with K={t.shape[0]}, got {e.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(e))):
            raise ValueError("weights contain non-finite values")
        object.__setattr__(self, "trans", _frozen(t))
        object.__setattr__(self, "emis", _frozen(e))

    @classmethod
    def zeros(cls, num_states: int, feature_dim: int) -> "CrfWeights":
        return cls(
            np.zeros((num_states, num_states)), np.zeros((num_states, feature_dim))
        )

    @classmethod
    def from_flat(cls, vec: np.ndarray, num_states: int, feature_dim: int) -> "CrfWeights":
        k, d = num_states, feature_dim
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.shape[0] != k * k + k * d:
            raise ValueError("flat weight vector has wrong length")
        return cls(vec[: k * k].reshape(k, k), vec[k * k :].reshape(k, d))

    @property
    def num_states(self) -> int:
        return self.trans.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.emis.shape[1]

    @property
    def flat(self) -> np.ndarray:
        return np.concatenate([self.trans.ravel(), self.emis.ravel()])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))


_HP_DEFAULTS: dict = {
    "theta": 0.8,
    "nu": 1.0,
    "gamma": AUTO,
    "sigma": None,
    "rff_dim": 128,
    "seed": 0,
    "max_outer_iters": 50,
}


def hyperparam_violations(values: Mapping) -> list[str]:
    """Range checks on raw hyperparameter values; returns violation messages."""
    v: list[str] = []
    get = lambda key: values.get(key, _HP_DEFAULTS.get(key))  # noqa: E731

    k = values.get("K")
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool) or k < 1:
        v.append("K must be a positive integer")
    theta = get("theta")
    if not _is_real(theta) or not 0.0 <= float(theta) <= 1.0:
        v.append("theta out of range [0, 1]")
    nu = get("nu")
    if not _is_real(nu) or not 0.0 < float(nu) <= 1.0:
        v.append("nu out of range (0, 1]")
    gamma = get("gamma")
    if gamma != AUTO and (not _is_real(gamma) or float(gamma) < 0):
        v.append("gamma must be >= 0 or 'auto'")
    sigma = get("sigma")
    if sigma is not None and (not _is_real(sigma) or not 0.0 < float(sigma) < np.inf):
        v.append("sigma must be a positive finite number")
    rff_dim = get("rff_dim")
    if not isinstance(rff_dim, (int, np.integer)) or rff_dim < 1:
        v.append("rff_dim must be >= 1")
    seed = get("seed")
    if not isinstance(seed, (int, np.integer)) or not 0 <= seed <= MAX_SEED:
        v.append(f"seed out of range [0, {MAX_SEED}]")
    iters = get("max_outer_iters")
    if not isinstance(iters, (int, np.integer)) or iters < 1:
        v.append("max_outer_iters must be >= 1")
    return v


def _is_real(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(
        x, bool
    )


@dataclass(frozen=True)
class HyperParams:
    """Estimator hyperparameters.

    K
        Number of latent classes (>= 1).
    theta
        Trade-off in [0, 1]: weight of the hypersphere part; 1 - theta weights
        the CRF part.
    nu
        Outlier fraction bound in (0, 1]; nu = 1 gives the centroid solution.
    gamma
        CRF ridge penalty >= 0, or "auto" to bisect for unit weight norm on
        the first weight update.
    sigma
        Gaussian kernel bandwidth > 0, or None to use the median heuristic.
    rff_dim
        Feature-space dimension D of the random Fourier map.
    seed
        Seed for the feature map and the initial assignment.
    max_outer_iters
        Cap on alternating optimization rounds.
    """

    K: int
    theta: float = 0.8
    nu: float = 1.0
    gamma: Union[float, str] = AUTO
    sigma: Union[float, None] = None
    rff_dim: int = 128
    seed: int = 0
    max_outer_iters: int = 50

    def __post_init__(self) -> None:
        problems = hyperparam_violations(
            {
                "K": self.K,
                "theta": self.theta,
                "nu": self.nu,
                "gamma": self.gamma,
                "sigma": self.sigma,
                "rff_dim": self.rff_dim,
                "seed": self.seed,
                "max_outer_iters": self.max_outer_iters,
            }
        )
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of problem validation: ok flag plus human-readable violations."""

    ok: bool
    violations: tuple

    def __bool__(self) -> bool:
        return self.ok


def validate_problem(X, graph, hp) -> ValidationReport:
    """Check that a dataset, graph, and hyperparameters form a solvable problem.

    ``hp`` may be a HyperParams instance (already range-checked at
    construction) or a raw mapping of values, in which case range checks are
    reported here instead of raised.
    """
    violations: list[str] = []
    if isinstance(hp, HyperParams):
        k = hp.K
    else:
        violations.extend(hyperparam_violations(hp))
        k_raw = hp.get("K", 1)
        k = int(k_raw) if isinstance(k_raw, (int, np.integer)) else 1
    n = X.rows if isinstance(X, FeatureMatrix) else np.asarray(X).shape[0]
    if graph.num_nodes != n:
        violations.append("graph/data size mismatch")
    if k > n:
        violations.append("more latent classes than samples")
    return ValidationReport(not violations, tuple(violations))
