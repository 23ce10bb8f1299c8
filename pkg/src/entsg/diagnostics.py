"""Convergence, conservation and stability studies built on the solvers.

Every study returns a plain report object; nothing here raises on a
"failed" property, so the caller (tests, CLI) decides what to assert.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats

from . import entropic_ot as eot
from .dynamics import (BallSource, DriftMatrix, SimulationConfig, Trajectory,
                       potential_energy, simulate, velocity)
from .errors import InstanceTooLarge
from .exact_ot import MAX_ARCS, w2, w2_squared_exact
from .measures import DiscreteMeasure, new_discrete, support_radius

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RateFit:
    """Least-squares slope of ``log(error)`` against ``log(grid)``."""
    grid: tuple
    errors: tuple
    slope: float
    half_width: float
    degenerate: bool = False
    abscissa: Optional[tuple] = None   # x-values used in the fit if not the grid

    def as_record(self):
        return dataclasses.asdict(self)


def fit_rate(grid, errors, abscissa=None, confidence=0.95) -> RateFit:
    """Fit ``errors ~ c * x^slope`` on the points with positive x and error.

    ``x`` is ``abscissa`` if given, else ``grid``. All-zero errors give a
    degenerate report with ``slope = nan`` instead of a failed fit.
    """
    grid = tuple(float(g) for g in grid)
    errors = tuple(float(e) for e in errors)
    if len(grid) != len(errors):
        raise ValueError("grid and errors differ in length")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly decreasing")
    xs = np.asarray(abscissa if abscissa is not None else grid, dtype=np.float64)
    ys = np.asarray(errors)
    ab = tuple(float(x) for x in xs) if abscissa is not None else None
    if np.all(ys == 0.0):
        return RateFit(grid, errors, math.nan, math.nan, True, ab)
    keep = (xs > 0) & (ys > 0)
    if keep.sum() < 2:
        raise ValueError("need at least two positive points to fit a rate")
    lx, ly = np.log(xs[keep]), np.log(ys[keep])
    res = stats.linregress(lx, ly)
    dof = int(keep.sum()) - 2
    half = float(res.stderr * stats.t.ppf(0.5 + confidence / 2, dof)) if dof > 0 else math.inf
    return RateFit(grid, errors, float(res.slope), half, False, ab)


# --- trajectory comparison --------------------------------------------------

def _time_key(t):
    return round(t, 9)


def common_times(a: Trajectory, b: Trajectory):
    tb = {_time_key(s.time) for s in b.snapshots}
    return [s.time for s in a.snapshots if _time_key(s.time) in tb]


def _snapshot_at(traj, t):
    key = _time_key(t)
    for s in traj.snapshots:
        if _time_key(s.time) == key:
            return s
    raise KeyError(t)


def sinkhorn_divergence_w2(a: DiscreteMeasure, b: DiscreteMeasure, epsilon,
                           tol=eot.DEFAULT_TOL, max_iter=eot.DEFAULT_MAX_ITER):
    """Debiased entropic estimate of W2, for instances too large for the LP."""
    def val(p, q):
        return eot.ot_eps_value(eot.sinkhorn_solve(p, q, epsilon, tol, max_iter))
    s = val(a, b) - 0.5 * (val(a, a) + val(b, b))
    return math.sqrt(max(2.0 * s, 0.0))


def trajectory_distance(a: Trajectory, b: Trajectory, metric=None):
    """``sup_t W2(a_t, b_t)`` over snapshot times shared by both runs."""
    metric = metric or w2
    times = common_times(a, b)
    if not times:
        raise ValueError("trajectories share no snapshot time")
    return max(metric(_snapshot_at(a, t).measure, _snapshot_at(b, t).measure)
               for t in times)


# --- tau convergence ----------------------------------------------------------

def _with_tau(config: SimulationConfig, tau):
    return dataclasses.replace(config, tau=float(tau), snapshot_stride=1)


def tau_rate_study(config: SimulationConfig, tau_grid: Sequence[float],
                   exact: Optional[Callable[[float], DiscreteMeasure]] = None) -> RateFit:
    """Empirical order of the Euler scheme in ``tau``.

    With ``exact`` (a map from time to the true measure) every grid entry is
    compared with it. Otherwise the finest ``tau`` is the reference and the
    remaining entries are compared with that run. The initial measure is the
    same for all runs.
    """
    taus = [float(t) for t in tau_grid]
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("tau grid must be strictly decreasing")
    alpha0 = config.build_measure("alpha0")
    mu0 = config.build_measure("mu0")
    runs = [simulate(_with_tau(config, t), alpha0, mu0) for t in taus]
    if exact is not None:
        errors = [max(w2(s.measure, exact(s.time)) for s in r.snapshots) for r in runs]
        grid = taus
    else:
        ref = runs[-1]
        errors = [trajectory_distance(r, ref) for r in runs[:-1]]
        grid = taus[:-1]
    if len(grid) < 4:
        raise ValueError("a rate fit needs at least 4 compared step sizes")
    return fit_rate(grid, errors)


# --- epsilon gap --------------------------------------------------------------

@dataclass(frozen=True)
class EpsGapReport:
    eps_grid: tuple
    w2_squared: float
    transport_gap: tuple      # int |x-y|^2 dgamma_eps - W2^2
    value_gap: tuple          # OT_eps - W2^2 / 2
    nonnegative: bool
    monotone: bool
    fit: RateFit               # value_gap against eps |log eps|

    def as_record(self):
        return dataclasses.asdict(self)


def eps_gap_study(alpha: DiscreteMeasure, mu: DiscreteMeasure, eps_grid: Sequence[float],
                  tol=eot.DEFAULT_TOL, max_iter=eot.DEFAULT_MAX_ITER) -> EpsGapReport:
    """Compare entropic plans with the exact optimal plan along an eps grid.

    ``nonnegative`` and ``monotone`` allow a slack of the order of the
    Sinkhorn tolerance. The rate fit skips grid points where ``eps |log eps|``
    vanishes (``eps = 1``).
    """
    eps = [float(e) for e in eps_grid]
    if alpha.n * mu.n > MAX_ARCS:
        raise InstanceTooLarge(f"{alpha.n} x {mu.n} exceeds the exact-OT limit")
    w2sq, _ = w2_squared_exact(alpha, mu)
    tgap, vgap = [], []
    for e in eps:
        sol = eot.sinkhorn_solve(alpha, mu, e, tol, max_iter)
        tgap.append(eot.transport_cost(sol) - w2sq)
        vgap.append(eot.ot_eps_value(sol) - 0.5 * w2sq)
    r = max(support_radius(alpha), support_radius(mu))
    slack = 10.0 * tol * (1.0 + 4.0 * r * r)
    nonneg = all(g >= -slack for g in tgap)
    mono = all(b <= a + slack for a, b in zip(tgap, tgap[1:]))
    x = [e * abs(math.log(e)) for e in eps]
    clipped = [max(v, 0.0) if abs(v) > slack else 0.0 for v in vgap]
    fit = fit_rate(eps, clipped, abscissa=x)
    return EpsGapReport(tuple(eps), float(w2sq), tuple(tgap), tuple(vgap),
                        nonneg, mono, fit)


# --- energy -------------------------------------------------------------------

@dataclass(frozen=True)
class EnergyReport:
    times: tuple
    total: tuple
    kinetic: tuple
    potential: tuple
    max_drift: float

    def as_record(self):
        return dataclasses.asdict(self)


def energy_report(traj: Trajectory, mu0: DiscreteMeasure, epsilon: float,
                  tol=eot.DEFAULT_TOL, max_iter=eot.DEFAULT_MAX_ITER) -> EnergyReport:
    """Entropic total energy ``OT_eps(alpha_t, mu0) + int x_3 dalpha_t``.

    OT_eps is re-solved from scratch at every snapshot so the measurement
    does not depend on the warm-start history of the run.
    """
    kin, pot = [], []
    for s in traj.snapshots:
        sol = eot.sinkhorn_solve(s.measure, mu0, epsilon, tol, max_iter)
        kin.append(eot.ot_eps_value(sol))
        pot.append(potential_energy(s.measure))
    total = [k + p for k, p in zip(kin, pot)]
    drift = max(abs(e - total[0]) for e in total)
    return EnergyReport(tuple(s.time for s in traj.snapshots), tuple(total),
                        tuple(kin), tuple(pot), float(drift))


# --- joint eps / tau / quantization study -------------------------------------

@dataclass(frozen=True)
class ScheduleRow:
    epsilon: float
    tau: float
    count: int
    seed: int


@dataclass(frozen=True)
class JointReport:
    schedule: tuple
    distances: tuple          # d_i between rows i and i+1
    decreasing: bool
    approximate: tuple        # True where W2 was replaced by the debiased entropic estimate
    note: str = ""

    def as_record(self):
        return dataclasses.asdict(self)


def schedule_config(base: SimulationConfig, row: ScheduleRow) -> SimulationConfig:
    """Config for one schedule row; mu0 is sampled with ``seed + 1``."""
    ra = base.alpha0.radius if isinstance(base.alpha0, BallSource) else base.r0()
    rm = base.mu0.radius if isinstance(base.mu0, BallSource) else base.r0()
    return dataclasses.replace(
        base, epsilon=float(row.epsilon), tau=float(row.tau), snapshot_stride=1,
        alpha0=BallSource(ra, int(row.count), int(row.seed)),
        mu0=BallSource(rm, int(row.count), int(row.seed) + 1))


def joint_convergence_study(base: SimulationConfig, schedule: Sequence[ScheduleRow],
                            runs: Optional[list] = None) -> JointReport:
    """Sup-W2 distances between successive rows of a refinement schedule.

    Decreasing distances are Cauchy-type evidence that the discretized
    entropic trajectories approach a common limit.
    """
    rows = [r if isinstance(r, ScheduleRow) else ScheduleRow(*r) for r in schedule]
    if len(rows) < 2:
        raise ValueError("schedule needs at least two rows")
    trajs = runs if runs is not None else [simulate(schedule_config(base, r)) for r in rows]
    eps_min = min(r.epsilon for r in rows)
    dist, approx = [], []
    for (ra, ta), (rb, tb) in zip(zip(rows, trajs), zip(rows[1:], trajs[1:])):
        if ra.count * rb.count <= MAX_ARCS:
            dist.append(trajectory_distance(ta, tb))
            approx.append(False)
        else:
            metric = lambda p, q: sinkhorn_divergence_w2(p, q, eps_min, base.tol, base.max_iter)
            dist.append(trajectory_distance(ta, tb, metric))
            approx.append(True)
    note = ""
    if any(approx):
        note = (f"rows marked approximate use the debiased entropic estimate "
                f"sqrt(2 S_eps) at eps={eps_min:g} instead of exact W2")
    decreasing = all(b < a for a, b in zip(dist, dist[1:])) if len(dist) > 1 else True
    return JointReport(tuple(dataclasses.astuple(r) for r in rows), tuple(dist),
                       decreasing, tuple(approx), note)


# --- stability probes and hypothesis checks -----------------------------------

@dataclass(frozen=True)
class StabilityProbe:
    scales: tuple
    constants: tuple          # worst ratio observed at each scale

    @property
    def finite(self):
        return all(math.isfinite(c) for c in self.constants)

    def scale_ratios(self):
        c = self.constants
        return tuple(b / a for a, b in zip(c, c[1:]))


def _jitter(m: DiscreteMeasure, scale, rng):
    d = rng.normal(size=m.points.shape)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return new_discrete(m.points + scale * d, m.weights)


def potential_stability_probe(alpha: DiscreteMeasure, mu0: DiscreteMeasure, epsilon,
                              scales=(0.1, 0.05, 0.025), pairs=5, probes=None,
                              seed=0, tol=eot.DEFAULT_TOL) -> StabilityProbe:
    """``max |grad v[a1] - grad v[a2]| / W2(a1, a2)`` over a probe set.

    For each scale, ``pairs`` perturbations of ``alpha`` with atoms moved by
    exactly that distance are compared with ``alpha``.
    """
    rng = np.random.default_rng(seed)
    if probes is None:
        r = max(support_radius(alpha), support_radius(mu0))
        probes = rng.uniform(-r, r, size=(64, alpha.dim))
    base = eot.sinkhorn_solve(alpha, mu0, epsilon, tol)
    g0 = eot.grad_v(base, probes)
    consts = []
    for h in scales:
        worst = 0.0
        for _ in range(pairs):
            other = _jitter(alpha, h, rng)
            sol = eot.sinkhorn_solve(other, mu0, epsilon, tol, init_u=base.u)
            diff = np.linalg.norm(eot.grad_v(sol, probes) - g0, axis=1).max()
            worst = max(worst, diff / w2(alpha, other))
        consts.append(float(worst))
    return StabilityProbe(tuple(float(s) for s in scales), tuple(consts))


def initial_data_stability_probe(config: SimulationConfig, scales=(0.05, 0.025, 0.0125),
                                 seed=0) -> StabilityProbe:
    """``sup_k W2(alpha_k, alpha'_k) / W2(alpha_0, alpha'_0)`` for jittered initial data."""
    rng = np.random.default_rng(seed)
    alpha0 = config.build_measure("alpha0")
    mu0 = config.build_measure("mu0")
    ref = simulate(config, alpha0, mu0)
    consts = []
    for h in scales:
        other0 = _jitter(alpha0, h, rng)
        # keep the perturbed data inside the same a-priori ball
        r0 = config.r0(alpha0, mu0)
        pts = other0.points
        norms = np.linalg.norm(pts, axis=1, keepdims=True)
        pts = np.where(norms > r0, pts * (r0 / norms), pts)
        other0 = new_discrete(pts, other0.weights)
        run = simulate(config, other0, mu0)
        consts.append(trajectory_distance(ref, run) / w2(alpha0, other0))
    return StabilityProbe(tuple(float(s) for s in scales), tuple(float(c) for c in consts))


@dataclass(frozen=True)
class HypothesisCheck:
    growth_ratio: float       # max |B(x)| / (|A| (|x| + R0)), must be <= 1
    hessian_ratio: float      # max |D^2 v(x)| / (1 + 2 R0^2 / eps), must be <= 1


def check_hypotheses(sol: eot.SchrodingerSolution, drift: DriftMatrix, probes) -> HypothesisCheck:
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    r0 = support_radius(sol.mu_ref)
    a = drift.norm
    vel = np.linalg.norm(velocity(sol, drift, probes), axis=1)
    bound = a * (np.linalg.norm(probes, axis=1) + r0)
    with np.errstate(invalid="ignore", divide="ignore"):
        gr = np.where(bound > 0, vel / bound, 0.0)
    hs = eot.hess_v(sol, probes)
    hnorm = np.array([np.linalg.norm(h, 2) for h in hs])
    return HypothesisCheck(float(gr.max()),
                           float((hnorm / (1.0 + 2.0 * r0 * r0 / sol.epsilon)).max()))
