"""Evaluation metrics: AUROC by rank statistics and the adjusted Rand index.

Both have exact O(n^2) pair-counting oracles in the test suite; these
implementations are the O(n log n) forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from lccad.core import LatentAssignment

__all__ = ["MetricResult", "auroc", "ari", "aggregate"]


def _as_labels(x) -> np.ndarray:
    if isinstance(x, LatentAssignment):
        return x.states.astype(np.int64)
    return np.asarray(x).reshape(-1)


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank-sum statistic; ties count 1/2.

    ``labels`` are booleans (True = anomaly); both classes must be present.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if scores.shape[0] != labels.shape[0]:
        raise ValueError("scores and labels disagree on n")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    n_pos = int(labels.sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("labels contain a single class; AUROC is undefined")
    ranks = rankdata(scores, method="average")
    value = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    value = float(value)
    assert 0.0 <= value <= 1.0
    return value


def ari(a, b) -> float:
    """Adjusted Rand index between two partitions (label-permutation invariant).

    Pair-counting index corrected by its expectation under random labelings;
    degenerate pairs where the correction denominator vanishes (for example
    both partitions trivial) score 1.0 exactly when the partitions match
    pairwise and 0.0 otherwise.
    """
    a = _as_labels(a)
    b = _as_labels(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError("partitions disagree on n")
    n = a.shape[0]
    if n < 2:
        return 1.0
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    ka, kb = int(ai.max()) + 1, int(bi.max()) + 1
    contingency = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(contingency, (ai, bi), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(n)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0.0:
        return 1.0 if sum_ij == sum_a == sum_b else 0.0
    value = float((sum_ij - expected) / denom)
    assert -1.0 <= value <= 1.0 + 1e-12
    return value


@dataclass(frozen=True)
class MetricResult:
    """A named metric aggregated over seeds."""

    name: str
    value: float
    n_seeds: int
    mean: float
    std: float


def aggregate(name: str, values) -> MetricResult:
    """Aggregate per-seed metric values into a MetricResult."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size < 1:
        raise ValueError("need at least one value")
    return MetricResult(
        name=str(name),
        value=float(arr.mean()),
        n_seeds=int(arr.size),
        mean=float(arr.mean()),
        std=float(arr.std()),
    )
