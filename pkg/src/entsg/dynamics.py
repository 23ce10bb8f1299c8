"""Entropic semi-geostrophic velocity field and explicit Euler time stepping.

For a discrete measure ``alpha`` the velocity is ``A (x - bary(x))`` where
``bary`` is the barycentric projection of the entropic plan from ``alpha``
to the fixed reference measure ``mu0``. One Euler step moves every atom
along that field:

    alpha_{k+1} = (id + tau * A grad v[alpha_k]) # alpha_k
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import entropic_ot as eot
from .errors import (MapProducedNonFinite, NonFiniteUpdate, NotConverged,
                     SupportBoundViolated, ValidationError)
from .measures import (BallSpec, DiscreteMeasure, pushforward,
                       quantize_uniform_ball, support_radius)

logger = logging.getLogger(__name__)

SKEW_TOL = 1e-14
RADIUS_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class DriftMatrix:
    matrix: np.ndarray
    is_skew: bool = field(init=False)

    def __post_init__(self):
        a = np.array(self.matrix, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError("drift", f"must be a square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("drift", "entries must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "is_skew", bool(np.all(np.abs(a + a.T) <= SKEW_TOL)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def norm(self) -> float:
        """Euclidean operator norm."""
        return float(np.linalg.norm(self.matrix, 2))

    def zero_rows(self) -> np.ndarray:
        return np.flatnonzero(np.all(self.matrix == 0.0, axis=1))

    def __eq__(self, other):
        return isinstance(other, DriftMatrix) and np.array_equal(self.matrix, other.matrix)

    __hash__ = None


def make_J() -> DriftMatrix:
    """Rotation block ``[[0, -1, 0], [1, 0, 0], [0, 0, 0]]``."""
    return DriftMatrix(np.array([[0.0, -1.0, 0.0],
                                 [1.0, 0.0, 0.0],
                                 [0.0, 0.0, 0.0]]))


@dataclass(frozen=True)
class BallSource:
    """Initial data produced by uniform quantization of a ball."""
    radius: float
    count: int
    seed: int

    def build(self, dim):
        return quantize_uniform_ball(BallSpec(self.radius, dim), self.count, self.seed)


@dataclass(frozen=True)
class TheoryBounds:
    growth: float          # C = max(1, R0) |A|
    radius_T: float        # (R0 + 1) exp(C T)
    radius_weak: float    # 2 R0 exp(|A| T)
    hessian_lip: float     # |A| (1 + 2 R0^2 / eps)
    r0: float

    @classmethod
    def compute(cls, drift: DriftMatrix, r0, epsilon, horizon):
        a = drift.norm
        c = max(1.0, r0) * a
        return cls(growth=c,
                   radius_T=(r0 + 1.0) * math.exp(c * horizon),
                   radius_weak=2.0 * r0 * math.exp(a * horizon),
                   hessian_lip=a * (1.0 + 2.0 * r0 * r0 / epsilon),
                   r0=r0)

    def radius_at(self, t):
        return (self.r0 + 1.0) * math.exp(self.growth * t)


@dataclass(frozen=True)
class SimulationConfig:
    dimension: int
    drift: DriftMatrix
    epsilon: float
    tau: float
    horizon: float
    alpha0: object          # DiscreteMeasure or a source with .build(dim)
    mu0: object
    tol: float = eot.DEFAULT_TOL
    max_iter: int = eot.DEFAULT_MAX_ITER
    warm_start: bool = True
    snapshot_stride: int = 1
    threads: int = 1

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValidationError("dimension", "must be a positive integer")
        if self.drift.dim != self.dimension:
            raise ValidationError("drift", f"must be {self.dimension}x{self.dimension}")
        for name in ("epsilon", "tau", "horizon", "tol"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val > 0):
                raise ValidationError(name, "must be a positive finite number")
        if self.max_iter < 1:
            raise ValidationError("sinkhorn.max_iter", "must be >= 1")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise ValidationError("snapshot_stride", "must be a positive integer")
        ratio = self.horizon / self.tau
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValidationError("tau", "T/tau must be integral")
        for name in ("alpha0", "mu0"):
            src = getattr(self, name)
            if isinstance(src, DiscreteMeasure) and src.dim != self.dimension:
                raise ValidationError(name, f"dimension {src.dim} != {self.dimension}")
            if not (isinstance(src, DiscreteMeasure) or hasattr(src, "build")):
                raise ValidationError(name, "must be a measure or a measure source")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.tau))

    def build_measure(self, name) -> DiscreteMeasure:
        src = getattr(self, name)
        return src if isinstance(src, DiscreteMeasure) else src.build(self.dimension)

    def r0(self, alpha0=None, mu0=None) -> float:
        radii = []
        for name, m in (("alpha0", alpha0), ("mu0", mu0)):
            src = getattr(self, name)
            if isinstance(src, BallSource):
                radii.append(src.radius)
            elif m is not None:
                radii.append(support_radius(m))
            else:
                radii.append(support_radius(self.build_measure(name)))
        return max(radii)

    def bounds(self) -> TheoryBounds:
        return TheoryBounds.compute(self.drift, self.r0(), self.epsilon, self.horizon)


@dataclass(frozen=True)
class StepDiagnostics:
    ot_eps: float
    potential_energy: float
    support_radius: float
    iterations: int


@dataclass(frozen=True, eq=False)
class Snapshot:
    step: int
    time: float
    measure: DiscreteMeasure
    diagnostics: StepDiagnostics

    def __eq__(self, other):
        return (isinstance(other, Snapshot) and self.step == other.step
                and self.time == other.time and self.measure == other.measure
                and self.diagnostics == other.diagnostics)

    __hash__ = None


@dataclass(frozen=True)
class Trajectory:
    dimension: int
    tau: float
    steps: int
    snapshot_stride: int
    snapshots: tuple

    def times(self):
        return np.array([s.time for s in self.snapshots])

    def at_time(self, t, tol=1e-9) -> Optional[Snapshot]:
        for s in self.snapshots:
            if abs(s.time - t) <= tol * max(1.0, abs(t)):
                return s
        return None

    def final(self) -> Snapshot:
        return self.snapshots[-1]


def velocity(sol: eot.SchrodingerSolution, drift: DriftMatrix, x):
    """``A grad v(x)`` at one point or a batch of points."""
    g = eot.grad_v(sol, x)
    return _apply_drift(drift, np.atleast_2d(g)).reshape(np.shape(g))


def _apply_drift(drift, g):
    # explicit sum over columns so that zero rows give exact zeros
    a = drift.matrix
    out = np.zeros_like(g)
    for r in range(a.shape[0]):
        for c in range(a.shape[1]):
            if a[r, c] != 0.0:
                out[:, r] += a[r, c] * g[:, c]
    return out


def potential_energy(m: DiscreteMeasure) -> float:
    """``int x_d dm`` (the vertical coordinate is the last one)."""
    return float(m.weights @ m.points[:, -1])


def euler_step(alpha_k: DiscreteMeasure, mu0: DiscreteMeasure, drift: DriftMatrix,
               epsilon: float, tau: float, tol: float = eot.DEFAULT_TOL,
               max_iter: int = eot.DEFAULT_MAX_ITER, init_u=None, threads: int = 1):
    """One explicit Euler step.

    Returns the pushed-forward measure, the Schrödinger solution for
    ``(alpha_k, mu0)`` and the diagnostics of ``alpha_k``. Nothing is moved
    if Sinkhorn fails to converge.
    """
    sol = eot.sinkhorn_solve(alpha_k, mu0, epsilon, tol=tol, max_iter=max_iter,
                             init_u=init_u, threads=threads)
    moving = np.setdiff1d(np.arange(drift.dim), drift.zero_rows())

    def step_map(x):
        vel = _apply_drift(drift, eot.grad_v(sol, x))
        out = x.copy()
        # rows of A that vanish leave their coordinate untouched
        out[:, moving] = x[:, moving] + tau * vel[:, moving]
        return out

    try:
        new = pushforward(alpha_k, step_map)
    except MapProducedNonFinite as exc:
        raise NonFiniteUpdate(str(exc)) from exc
    diag = StepDiagnostics(ot_eps=eot.ot_eps_value(sol),
                           potential_energy=potential_energy(alpha_k),
                           support_radius=support_radius(alpha_k),
                           iterations=sol.iterations)
    return new, sol, diag


def simulate(config: SimulationConfig, alpha0: Optional[DiscreteMeasure] = None,
             mu0: Optional[DiscreteMeasure] = None) -> Trajectory:
    """Run the Euler scheme from ``k = 0`` to ``N = T / tau``.

    Snapshots are kept every ``snapshot_stride`` steps and always at
    ``k = 0`` and ``k = N``. The final snapshot's diagnostics come from one
    extra Sinkhorn solve at ``alpha_N``.
    """
    alpha = alpha0 if alpha0 is not None else config.build_measure("alpha0")
    mu = mu0 if mu0 is not None else config.build_measure("mu0")
    bounds = TheoryBounds.compute(config.drift, config.r0(alpha, mu),
                                  config.epsilon, config.horizon)
    n_steps = config.steps
    snaps = []
    u = None
    warned = False

    def partial():
        return Trajectory(config.dimension, config.tau, n_steps,
                          config.snapshot_stride, tuple(snaps))

    for k in range(n_steps + 1):
        t = k * config.tau
        radius = support_radius(alpha)
        limit = bounds.radius_at(t) * (1.0 + RADIUS_SLACK)
        if radius > limit:
            raise SupportBoundViolated(
                f"support radius {radius:.6g} exceeds {limit:.6g} at step {k}",
                step=k, radius=radius, bound=limit, partial=partial())
        if not warned and radius > bounds.radius_weak * (1.0 + RADIUS_SLACK):
            warned = True
            logger.warning("step %d: support radius %.6g exceeds 2 R0 exp(|A| T) = %.6g",
                           k, radius, bounds.radius_weak)
        keep = k % config.snapshot_stride == 0 or k == n_steps
        try:
            if k < n_steps:
                new, sol, diag = euler_step(
                    alpha, mu, config.drift, config.epsilon, config.tau,
                    tol=config.tol, max_iter=config.max_iter,
                    init_u=u if config.warm_start else None, threads=config.threads)
            else:
                sol = eot.sinkhorn_solve(alpha, mu, config.epsilon, tol=config.tol,
                                         max_iter=config.max_iter,
                                         init_u=u if config.warm_start else None,
                                         threads=config.threads)
                diag = StepDiagnostics(eot.ot_eps_value(sol), potential_energy(alpha),
                                       radius, sol.iterations)
                new = None
        except NotConverged as exc:
            exc.step = k
            raise
        if keep:
            snaps.append(Snapshot(k, t, alpha, diag))
        u = sol.u
        if new is not None:
            alpha = new
    return partial()
