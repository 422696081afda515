"""Synthetic data generators and the grid CSV loader.

gen_toy draws two Gaussian latent classes laid out contiguously on a chain
(or as half-split grid) together with ground-truth anomaly scores;
gen_grid_facies builds a two-facies channel pattern on a 4-connected grid
with planted single-feature anomalies; load_grid_csv reads user data in
row-major grid order.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from lccad.core import DependencyGraph, FeatureMatrix, LatentAssignment

__all__ = [
    "ToySpec",
    "GridSpec",
    "GroundTruth",
    "MalformedRowError",
    "RowCountError",
    "NonFiniteValueError",
    "chain_graph",
    "grid_graph",
    "gen_toy",
    "gen_grid_facies",
    "load_grid_csv",
]


class MalformedRowError(ValueError):
    """A CSV row has the wrong number of fields or an unparseable value."""


class RowCountError(ValueError):
    """The CSV has a different number of data rows than the grid needs."""


class NonFiniteValueError(ValueError):
    """The CSV contains NaN or infinite values."""


def chain_graph(n: int) -> DependencyGraph:
    """Path graph 0 - 1 - ... - (n-1)."""
    edges = np.column_stack([np.arange(n - 1), np.arange(1, n)]) if n > 1 else []
    return DependencyGraph(n, np.asarray(edges, dtype=np.int32).reshape(-1, 2))


def grid_graph(height: int, width: int) -> DependencyGraph:
    """4-connected grid, nodes numbered row-major."""
    edges = []
    for r in range(height):
        for c in range(width):
            i = r * width + c
            if c + 1 < width:
                edges.append((i, i + 1))
            if r + 1 < height:
                edges.append((i, i + width))
    return DependencyGraph(
        height * width, np.asarray(edges, dtype=np.int32).reshape(-1, 2)
    )


@dataclass(frozen=True)
class GroundTruth:
    """What a generator knows: true classes, true outlierness, anomaly labels."""

    true_states: LatentAssignment
    true_scores: np.ndarray
    anomaly_labels: np.ndarray

    def __post_init__(self) -> None:
        scores = np.array(self.true_scores, dtype=np.float64, copy=True).reshape(-1)
        labels = np.array(self.anomaly_labels, dtype=bool, copy=True).reshape(-1)
        n = len(self.true_states)
        if scores.shape[0] != n or labels.shape[0] != n:
            raise ValueError("ground truth arrays disagree on n")
        if not np.all(np.isfinite(scores)):
            raise ValueError("true scores must be finite")
        scores.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "true_scores", scores)
        object.__setattr__(self, "anomaly_labels", labels)


@dataclass(frozen=True)
class ToySpec:
    """Two Gaussian classes with contiguous context blocks.

    Class c draws x ~ mu_c + Normal(0, std_c^2 I) in d = 2; the means sit at
    (0, 0) and (delta, 0).  On the chain layout nodes [0, n_per_class) are
    class 0 and the rest class 1; the grid layout splits a near-square grid
    into a left and right half.  True outlierness is
    ||x - mu_c||^2 / (2 std_c^2); labels mark scores above the
    (1 - contamination) quantile.
    """

    n_per_class: int = 100
    delta: float = 4.0
    std1: float = 1.0
    std2: float = 1.0
    layout: str = "chain"
    contamination: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be >= 1")
        if not np.isfinite(self.delta) or self.delta < 0:
            raise ValueError("delta must be finite and >= 0")
        if self.std1 <= 0 or self.std2 <= 0:
            raise ValueError("stds must be > 0")
        if self.layout not in ("chain", "grid"):
            raise ValueError("layout must be 'chain' or 'grid'")
        if not 0.0 <= self.contamination < 1.0:
            raise ValueError("contamination out of range [0, 1)")

    @property
    def means(self) -> np.ndarray:
        return np.array([[0.0, 0.0], [self.delta, 0.0]])

    @property
    def stds(self) -> np.ndarray:
        return np.array([self.std1, self.std2])


def _toy_grid_shape(n_per_class: int) -> tuple[int, int]:
    rows = max(1, int(math.isqrt(n_per_class)))
    while n_per_class % rows:
        rows -= 1
    return rows, 2 * (n_per_class // rows)


def gen_toy(spec: ToySpec):
    """Generate (FeatureMatrix, DependencyGraph, GroundTruth) for a ToySpec.

    Deterministic given the seed, down to identical bytes.
    """
    n = 2 * spec.n_per_class
    if spec.layout == "chain":
        classes = np.repeat(np.array([0, 1], dtype=np.int32), spec.n_per_class)
        graph = chain_graph(n)
    else:
        rows, cols = _toy_grid_shape(spec.n_per_class)
        col_index = np.tile(np.arange(cols), rows)
        classes = (col_index >= cols // 2).astype(np.int32)
        graph = grid_graph(rows, cols)

    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal((n, 2))
    x = spec.means[classes] + spec.stds[classes][:, None] * noise
    diff = x - spec.means[classes]
    true_scores = (diff * diff).sum(axis=1) / (2.0 * spec.stds[classes] ** 2)
    if spec.contamination > 0:
        threshold = np.quantile(true_scores, 1.0 - spec.contamination)
        labels = true_scores > threshold
    else:
        labels = np.zeros(n, dtype=bool)
    truth = GroundTruth(LatentAssignment(classes, 2), true_scores, labels)
    return FeatureMatrix(x), graph, truth


@dataclass(frozen=True)
class GridSpec:
    """Two-facies channel pattern on a height x width grid.

    ``n_channels`` sinusoidal ribbons of width ``channel_width`` and vertical
    amplitude ``amplitude`` carve facies 1 out of a facies-0 background.
    Each cell draws d = 2 features from its facies Gaussian.
    ``n_anomalies`` cells get feature 1 shifted by ``anomaly_magnitude``
    times that facies' feature-1 std.
    """

    height: int = 20
    width: int = 30
    n_channels: int = 3
    channel_width: float = 3.0
    amplitude: float = 4.0
    mean0: tuple = (0.0, 0.0)
    mean1: tuple = (2.5, 2.5)
    std0: tuple = (1.0, 1.0)
    std1: tuple = (1.0, 1.0)
    n_anomalies: int = 15
    anomaly_magnitude: float = 3.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be >= 1")
        if self.n_channels < 0:
            raise ValueError("n_channels must be >= 0")
        if self.channel_width <= 0 or self.amplitude < 0:
            raise ValueError("channel geometry out of range")
        if len(self.mean0) != 2 or len(self.mean1) != 2:
            raise ValueError("facies means must have two features")
        if len(self.std0) != 2 or len(self.std1) != 2:
            raise ValueError("facies stds must have two features")
        if min(self.std0) <= 0 or min(self.std1) <= 0:
            raise ValueError("facies stds must be > 0")
        if self.n_anomalies < 0 or self.n_anomalies > self.height * self.width:
            raise ValueError("n_anomalies out of range")
        if self.anomaly_magnitude < 0:
            raise ValueError("anomaly_magnitude must be >= 0")

    @property
    def means(self) -> np.ndarray:
        return np.array([self.mean0, self.mean1], dtype=np.float64)

    @property
    def stds(self) -> np.ndarray:
        return np.array([self.std0, self.std1], dtype=np.float64)


def gen_grid_facies(spec: GridSpec):
    """Generate (FeatureMatrix, DependencyGraph, GroundTruth) on the grid.

    Facies geometry, features, and planted anomaly cells are all drawn from
    one seeded generator, so outputs are byte-identical across runs.
    """
    h, w = spec.height, spec.width
    n = h * w
    rng = np.random.default_rng(spec.seed)

    rows = np.arange(h, dtype=np.float64)[:, None]
    cols = np.arange(w, dtype=np.float64)[None, :]
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(spec.n_channels):
        base = rng.uniform(0.0, h)
        freq = rng.uniform(0.5, 1.5)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        center = base + spec.amplitude * np.sin(
            2.0 * np.pi * freq * cols / max(w, 1) + phase
        )
        mask |= np.abs(rows - center) <= spec.channel_width / 2.0
    facies = mask.reshape(-1).astype(np.int32)

    noise = rng.standard_normal((n, 2))
    x = spec.means[facies] + spec.stds[facies] * noise

    labels = np.zeros(n, dtype=bool)
    if spec.n_anomalies:
        chosen = rng.choice(n, size=spec.n_anomalies, replace=False)
        if spec.anomaly_magnitude > 0:
            x[chosen, 1] += spec.anomaly_magnitude * spec.stds[facies[chosen], 1]
            labels[chosen] = True

    diff = (x - spec.means[facies]) / spec.stds[facies]
    true_scores = 0.5 * (diff * diff).sum(axis=1)
    truth = GroundTruth(LatentAssignment(facies, 2), true_scores, labels)
    return FeatureMatrix(x), grid_graph(h, w), truth


def load_grid_csv(path, height: int, width: int, dims: int, header: bool = False):
    """Read an (height*width) x dims CSV in row-major grid order.

    Returns (FeatureMatrix, DependencyGraph).  Raises MalformedRowError for a
    row with the wrong field count or an unparseable token, RowCountError
    when the number of rows does not match the grid, and NonFiniteValueError
    for NaN or infinite values.
    """
    if height < 1 or width < 1 or dims < 1:
        raise ValueError("grid dimensions must be >= 1")
    values = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if header and line_no == 1:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != dims:
                raise MalformedRowError(
                    f"line {line_no}: expected {dims} fields, got {len(row)}"
                )
            try:
                values.append([float(tok) for tok in row])
            except ValueError as exc:
                raise MalformedRowError(f"line {line_no}: {exc}") from None
    expected = height * width
    if len(values) != expected:
        raise RowCountError(
            f"expected {expected} data rows for a {height}x{width} grid, "
            f"got {len(values)}"
        )
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValueError("grid data contains non-finite values")
    return FeatureMatrix(arr), grid_graph(height, width)
