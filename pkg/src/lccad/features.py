"""Maps from raw input space into the detector's feature space.

FeatureMapper draws random Fourier features whose inner products approximate
the Gaussian kernel exp(-||x - y||^2 / (2 sigma^2)); IdentityMapper passes raw
features through unchanged, which makes the hypersphere computations exact and
is what the k-means and plain-hypersphere reduction tests use.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.distance import pdist

from lccad.core import FeatureMatrix

__all__ = ["FeatureMapper", "IdentityMapper", "median_bandwidth"]


def _as_rows(X) -> np.ndarray:
    if isinstance(X, FeatureMatrix):
        return X.values
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D array of samples, got shape {arr.shape}")
    return arr


class FeatureMapper:
    """Random Fourier feature map z(x) = sqrt(2/D) * cos(W x + b).

    Rows of ``W`` are i.i.d. Normal(0, 1/sigma^2), phases ``b`` are
    Uniform[0, 2pi).  Draws are fully determined by ``seed``.

    Parameters
    ----------
    input_dim : int
        Raw feature dimension d.
    output_dim : int
        Feature-space dimension D.
    sigma : float
        Gaussian kernel bandwidth, > 0.
    seed : int
        Seed for the frequency and phase draws.
    """

    def __init__(self, input_dim: int, output_dim: int = 128, sigma: float = 1.0,
                 seed: int = 0):
        if input_dim < 1 or output_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if not np.isfinite(sigma) or sigma <= 0:
            raise ValueError("sigma must be a positive finite number")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.sigma = float(sigma)
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        freqs = rng.normal(0.0, 1.0 / self.sigma, size=(self.output_dim, self.input_dim))
        phases = rng.uniform(0.0, 2.0 * np.pi, size=self.output_dim)
        self.freqs = freqs
        self.phases = phases
        self.scale = np.sqrt(2.0 / self.output_dim)
        freqs.setflags(write=False)
        phases.setflags(write=False)

    def map(self, x) -> np.ndarray:
        """Map a single sample (d,) to feature space (D,)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.input_dim:
            raise ValueError(
                f"sample has dimension {x.shape[0]}, mapper expects {self.input_dim}"
            )
        return self.scale * np.cos(self.freqs @ x + self.phases)

    def map_all(self, X) -> np.ndarray:
        """Map all rows of an (n, d) dataset to an (n, D) array."""
        arr = _as_rows(X)
        if arr.shape[1] != self.input_dim:
            raise ValueError(
                f"samples have dimension {arr.shape[1]}, mapper expects {self.input_dim}"
            )
        return self.scale * np.cos(arr @ self.freqs.T + self.phases)


class IdentityMapper:
    """Pass-through map: feature space equals raw input space (D = d)."""

    sigma = None

    def __init__(self, input_dim: int):
        if input_dim < 1:
            raise ValueError("dimensions must be >= 1")
        self.input_dim = int(input_dim)
        self.output_dim = int(input_dim)

    def map(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.input_dim:
            raise ValueError(
                f"sample has dimension {x.shape[0]}, mapper expects {self.input_dim}"
            )
        return x.copy()

    def map_all(self, X) -> np.ndarray:
        arr = _as_rows(X)
        if arr.shape[1] != self.input_dim:
            raise ValueError(
                f"samples have dimension {arr.shape[1]}, mapper expects {self.input_dim}"
            )
        return arr.copy()


def median_bandwidth(X, max_points: int = 1000, seed: int = 0) -> float:
    """Median pairwise distance over a subsample of at most ``max_points`` rows.

    Falls back to 1.0 when the median is zero (all points identical) or when
    there are no pairs.
    """
    arr = _as_rows(X)
    n = arr.shape[0]
    if n > max_points:
        idx = np.random.default_rng(seed).choice(n, size=max_points, replace=False)
        idx.sort()
        arr = arr[idx]
    if arr.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(arr)))
    return med if med > 0 else 1.0
