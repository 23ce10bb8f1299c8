"""Discrete probability measures on R^d.

A :class:`DiscreteMeasure` is an immutable weighted point cloud. It is the
only measure representation used by the solvers and the time stepper.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (AxisOutOfRange, BadNormalization, DimensionMismatch,
                     MapProducedNonFinite, NegativeWeight)

INPUT_MASS_TOL = 1e-9
MASS_TOL = 1e-12

# candidates drawn per rejection-sampling block; fixed so that the first k
# accepted points do not depend on the requested count
_BLOCK = 256


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Weighted sum of Dirac masses ``sum_i weights[i] * delta(points[i])``.

    Use :func:`new_discrete` to build one from user data; the constructor
    assumes its arguments are already validated.
    """

    points: np.ndarray   # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        object.__setattr__(self, "points", _frozen(self.points))
        object.__setattr__(self, "weights", _frozen(self.weights))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, DiscreteMeasure):
            return NotImplemented
        return (self.points.shape == other.points.shape
                and np.array_equal(self.points, other.points)
                and np.array_equal(self.weights, other.weights))

    __hash__ = None

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def __repr__(self):
        return f"DiscreteMeasure(n={self.n}, d={self.dim})"


@dataclass(frozen=True)
class BallSpec:
    radius: float
    dimension: int

    def __post_init__(self):
        if not (np.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dimension}")


def new_discrete(points, weights) -> DiscreteMeasure:
    """Validate ``points``/``weights`` and build a measure.

    Weights whose sum is off from 1 by at most 1e-9 are renormalized;
    larger deviations raise :class:`BadNormalization`.
    """
    pts = np.asarray(points, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
        raise DimensionMismatch(f"points must be a non-empty (n, d) array, got shape {pts.shape}")
    if w.ndim != 1 or w.shape[0] != pts.shape[0]:
        raise DimensionMismatch(
            f"{pts.shape[0]} points but weights of shape {w.shape}")
    if not np.all(np.isfinite(pts)):
        raise DimensionMismatch("points contain NaN or Inf")
    if not np.all(np.isfinite(w)):
        raise BadNormalization("weights contain NaN or Inf")
    if np.any(w < 0):
        raise NegativeWeight(f"negative weight {w.min()!r}")
    total = w.sum()
    if abs(total - 1.0) > INPUT_MASS_TOL:
        raise BadNormalization(f"weights sum to {total!r}")
    if total != 1.0:
        w = w / total
    return DiscreteMeasure(pts, w)


def uniform_measure(points) -> DiscreteMeasure:
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    return new_discrete(pts, np.full(n, 1.0 / n))


def quantize_uniform_ball(spec: BallSpec, count: int, seed: int) -> DiscreteMeasure:
    """Empirical measure of ``count`` i.i.d. uniform points in a closed ball.

    Points come from rejection sampling in the bounding cube. Candidates are
    drawn in fixed-size blocks, so for a given seed the sample of size M is
    a prefix of the sample of size M' > M.
    """
    if int(count) != count or count < 1:
        raise ValueError(f"count must be a positive integer, got {count}")
    count = int(count)
    d = int(spec.dimension)
    r = float(spec.radius)
    rng = np.random.default_rng(seed)
    accepted = []
    have = 0
    while have < count:
        cand = rng.uniform(-r, r, size=(_BLOCK, d))
        keep = cand[np.einsum("ij,ij->i", cand, cand) <= r * r]
        accepted.append(keep)
        have += keep.shape[0]
    pts = np.concatenate(accepted)[:count]
    return DiscreteMeasure(pts, np.full(count, 1.0 / count))


def pushforward(m: DiscreteMeasure, fmap: Callable) -> DiscreteMeasure:
    """Image measure of ``m`` under ``fmap``; atoms are moved, never merged.

    ``fmap`` receives the whole ``(n, d)`` point array and must return an
    array of the same shape.
    """
    img = np.asarray(fmap(m.points), dtype=np.float64)
    if img.shape != m.points.shape:
        raise DimensionMismatch(
            f"map returned shape {img.shape}, expected {m.points.shape}")
    if not np.all(np.isfinite(img)):
        raise MapProducedNonFinite("pushforward map produced NaN or Inf")
    return DiscreteMeasure(img, m.weights)


def support_radius(m: DiscreteMeasure) -> float:
    return float(np.sqrt(np.einsum("ij,ij->i", m.points, m.points).max()))


def marginal_along_axis(m: DiscreteMeasure, axis: int) -> DiscreteMeasure:
    """One-dimensional marginal, sorted, with exactly-equal atoms merged."""
    if not 0 <= axis < m.dim:
        raise AxisOutOfRange(f"axis {axis} out of range for dimension {m.dim}")
    coords = m.points[:, axis]
    values, inverse = np.unique(coords, return_inverse=True)
    merged = np.zeros(values.shape[0])
    # sequential accumulation in sorted-atom order keeps the result reproducible
    order = np.lexsort((np.arange(coords.shape[0]), coords))
    for idx in order:
        merged[inverse[idx]] += m.weights[idx]
    return DiscreteMeasure(values[:, None], merged)


def translate(m: DiscreteMeasure, shift) -> DiscreteMeasure:
    c = np.asarray(shift, dtype=np.float64)
    return pushforward(m, lambda x: x + c)
