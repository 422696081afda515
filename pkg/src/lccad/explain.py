"""Feature-wise explanations of anomaly scores.

Scores are explained against the exact Gaussian kernel density of the
assigned class in raw input space: the class outlierness is
o_k(x) = -log sum_j alpha_j K(x, x_j) over the class members x_j, and a
deep Taylor style decomposition distributes min(o_k(x), ||delta_j||^2)
over input features proportionally to each member's kernel responsibility
and squared standardized difference delta_j = (x - x_j) / sigma.

Relevance is conservative up to truncation: entries are non-negative and
sum to at most max(o_k(x), 0), with equality whenever o_k(x) does not
exceed the squared standardized distance to the nearest member.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from lccad.core import FeatureMatrix, LatentAssignment

__all__ = ["ExplainContext", "Relevance", "outlierness", "relevance", "relevance_map"]

_CONSERVATION_SLACK = 1e-9


def _as_rows(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.values
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array of samples, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class ExplainContext:
    """Per-class support sets in raw input space with log mixture weights.

    ``support[k]`` holds the raw-space members of class k, ``log_alpha[k]``
    their log weights (normalized within the class), and ``sigma`` the
    Gaussian kernel bandwidth.
    """

    support: tuple
    log_alpha: tuple
    sigma: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.sigma) or self.sigma <= 0:
            raise ValueError("sigma must be a positive finite number")
        if len(self.support) != len(self.log_alpha):
            raise ValueError("support and log_alpha must align per class")
        frozen_support = []
        frozen_alpha = []
        for pts, la in zip(self.support, self.log_alpha):
            pts = np.array(pts, dtype=np.float64, order="C", copy=True)
            la = np.array(la, dtype=np.float64, copy=True).reshape(-1)
            if pts.ndim != 2 or pts.shape[0] != la.shape[0]:
                raise ValueError("support block and its weights disagree on size")
            if pts.shape[0] and abs(float(logsumexp(la))) > 1e-8:
                raise ValueError("class weights must sum to one")
            pts.setflags(write=False)
            la.setflags(write=False)
            frozen_support.append(pts)
            frozen_alpha.append(la)
        object.__setattr__(self, "support", tuple(frozen_support))
        object.__setattr__(self, "log_alpha", tuple(frozen_alpha))
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def from_assignment(cls, X, assignment: LatentAssignment, sigma: float):
        """Uniform weights alpha_j = 1/n_k per class, the nu = 1 solution."""
        rows = _as_rows(X)
        if rows.shape[0] != len(assignment):
            raise ValueError("data and assignment disagree on n")
        support = []
        log_alpha = []
        for k in range(assignment.num_states):
            members = rows[assignment.states == k]
            support.append(members)
            log_alpha.append(
                np.full(members.shape[0], -np.log(members.shape[0]))
                if members.shape[0]
                else np.zeros(0)
            )
        return cls(tuple(support), tuple(log_alpha), float(sigma))

    @classmethod
    def from_model(cls, model, X, sigma=None):
        """Build the context for a fitted model; sigma defaults to the
        model's kernel bandwidth (explicit sigma required for identity maps)."""
        if sigma is None:
            sigma = model.mapper.sigma
        if sigma is None:
            raise ValueError(
                "mapper has no bandwidth; pass sigma explicitly for identity maps"
            )
        return cls.from_assignment(X, model.assignment, float(sigma))

    @property
    def num_classes(self) -> int:
        return len(self.support)


@dataclass(frozen=True, eq=False)
class Relevance:
    """Per-feature relevance of one sample's outlierness.

    Entries are non-negative and sum to at most max(outlierness, 0) plus a
    1e-9 slack; construction rejects anything else.
    """

    values: np.ndarray
    outlierness: float

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("relevance entries must be finite and >= 0")
        bound = max(float(self.outlierness), 0.0) + _CONSERVATION_SLACK
        if float(vals.sum()) > bound:
            raise ValueError("relevance exceeds the outlierness bound")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "outlierness", float(self.outlierness))


def _log_kernel_terms(ctx: ExplainContext, x: np.ndarray, k: int):
    members = ctx.support[k]
    if members.shape[0] == 0:
        raise ValueError(f"class {k} has no support points")
    delta = (x[None, :] - members) / ctx.sigma
    sq = delta * delta
    norms = sq.sum(axis=1)
    log_terms = ctx.log_alpha[k] - 0.5 * norms
    return sq, norms, log_terms


def outlierness(ctx: ExplainContext, x, k: int) -> float:
    """o_k(x) = -log sum_j alpha_j exp(-||x - x_j||^2 / (2 sigma^2)),
    evaluated in the log domain."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    _, _, log_terms = _log_kernel_terms(ctx, x, int(k))
    return float(-logsumexp(log_terms))


def relevance(ctx: ExplainContext, x, k: int) -> Relevance:
    """Decompose o_k(x) over input features.

    R_i = sum_j (delta_j[i]^2 / ||delta_j||^2) * r_j * min(o_k(x),
    ||delta_j||^2) with responsibilities r_j = alpha_j K_j / sum alpha K.
    Non-positive outlierness (x inside the model of normality) yields zero
    relevance, as does any member coinciding with x.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    sq, norms, log_terms = _log_kernel_terms(ctx, x, int(k))
    o = float(-logsumexp(log_terms))
    if o <= 0.0:
        return Relevance(np.zeros(x.shape[0]), o)
    resp = np.exp(log_terms - logsumexp(log_terms))
    contrib = resp * np.minimum(o, norms)
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(norms[:, None] > 0.0, sq / norms[:, None], 0.0)
    values = frac.T @ contrib
    return Relevance(values, o)


def relevance_map(model, X, grid_shape):
    """Relevance of every sample against its assigned class, on a grid.

    Returns an (height, width, d) array: channel i is the relevance of input
    feature i.  ``grid_shape`` must multiply out to n; samples are laid out
    row-major.
    """
    rows = _as_rows(X)
    n, d = rows.shape
    height, width = (int(grid_shape[0]), int(grid_shape[1]))
    if height * width != n:
        raise ValueError(f"grid shape {grid_shape} does not cover {n} samples")
    ctx = ExplainContext.from_model(model, X)
    states = model.assignment.states
    out = np.zeros((n, d))
    for k in range(ctx.num_classes):
        idx = np.flatnonzero(states == k)
        if idx.size == 0:
            continue
        members = ctx.support[k]
        la = ctx.log_alpha[k]
        delta = (rows[idx][:, None, :] - members[None, :, :]) / ctx.sigma
        sq = delta * delta
        norms = sq.sum(axis=2)
        log_terms = la[None, :] - 0.5 * norms
        lse = logsumexp(log_terms, axis=1)
        o = -lse
        resp = np.exp(log_terms - lse[:, None])
        contrib = resp * np.minimum(o[:, None], norms)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(norms[:, :, None] > 0.0, sq / norms[:, :, None], 0.0)
        vals = (frac * contrib[:, :, None]).sum(axis=1)
        vals[o <= 0.0] = 0.0
        out[idx] = vals
    return out.reshape(height, width, d)
