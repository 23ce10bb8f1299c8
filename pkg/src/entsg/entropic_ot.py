"""Entropic optimal transport between discrete measures.

Schrödinger potentials are computed by log-domain Sinkhorn iteration for the
quadratic cost ``c(x, y) = |x - y|^2 / 2``. The optimal entropic plan has the
Gibbs form

    gamma_ij = a_i b_j exp((u_j + v_i - c(x_i, y_j)) / eps)

with ``v`` living on the atoms of ``alpha`` and ``u`` on the atoms of ``mu``.
Both potentials extend to smooth functions on all of R^d; the extension of
``v`` gives the barycentric projection, gradient and Hessian queries used to
build the velocity field.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EpsilonNonPositive, NotConverged
from .measures import DiscreteMeasure

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 50_000

# rows per reduction block; results never depend on how blocks are
# distributed over worker threads
ROW_BLOCK = 256


@dataclass(frozen=True, eq=False)
class SchrodingerSolution:
    epsilon: float
    u: np.ndarray            # over mu's atoms
    v: np.ndarray            # over alpha's atoms
    alpha_ref: DiscreteMeasure
    mu_ref: DiscreteMeasure
    marginal_error: float
    iterations: int

    def __post_init__(self):
        for name in ("u", "v"):
            a = np.array(getattr(self, name), dtype=np.float64, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def half_sq_cost(x, y):
    """Matrix of ``|x_i - y_j|^2 / 2``."""
    diff = x[:, None, :] - y[None, :, :]
    return 0.5 * np.einsum("ijk,ijk->ij", diff, diff)


def _safe_log(w):
    with np.errstate(divide="ignore"):
        return np.log(w)


def _lse_block(z):
    mx = z.max(axis=1)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return mx + np.log(np.exp(z - mx[:, None]).sum(axis=1))


class _RowReducer:
    """Row-wise log-sum-exp in fixed row blocks, optionally threaded."""

    def __init__(self, threads=1):
        if threads is None or threads <= 0:
            threads = os.cpu_count() or 1
        self.threads = int(threads)

    def lse(self, z):
        n = z.shape[0]
        if n <= ROW_BLOCK:
            return _lse_block(z)
        starts = range(0, n, ROW_BLOCK)
        blocks = [z[s:s + ROW_BLOCK] for s in starts]
        if self.threads == 1:
            parts = [_lse_block(b) for b in blocks]
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                parts = list(pool.map(_lse_block, blocks))
        return np.concatenate(parts)


def _check_eps(epsilon):
    if not (np.isfinite(epsilon) and epsilon > 0):
        raise EpsilonNonPositive(f"epsilon must be positive, got {epsilon}")


def _gauge(u, v, b):
    c = float(np.sum(b * u))
    return u - c, v + c


def plan_marginal_error(log_plan, a, b):
    p = np.exp(log_plan)
    return float(max(np.abs(p.sum(axis=1) - a).max(),
                     np.abs(p.sum(axis=0) - b).max()))


def sinkhorn_solve(alpha: DiscreteMeasure, mu: DiscreteMeasure, epsilon: float,
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                   init_u=None, threads: int = 1) -> SchrodingerSolution:
    """Solve the Schrödinger system between ``alpha`` and ``mu``.

    Parameters
    ----------
    alpha, mu : DiscreteMeasure
        Source and target measures of the same dimension.
    epsilon : float
        Entropic regularization, must be positive.
    tol : float
        Stop once the max-norm violation of both plan marginals is <= tol.
    max_iter : int
        Maximum number of (v, u) sweeps.
    init_u : array_like, optional
        Warm start for the potential on ``mu``'s atoms.
    threads : int
        Worker threads for the row reductions (0 means all cores). The result
        is bitwise independent of this value.

    Returns
    -------
    SchrodingerSolution
        Potentials in the gauge ``sum_j mu_j u_j = 0``.

    Raises
    ------
    NotConverged
        If ``max_iter`` sweeps do not reach ``tol``; the last iterate is
        attached to the exception.
    """
    _check_eps(epsilon)
    if tol <= 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if alpha.dim != mu.dim:
        raise DimensionMismatch(f"alpha has dimension {alpha.dim}, mu has {mu.dim}")
    eps = float(epsilon)
    a, b = alpha.weights, mu.weights
    loga, logb = _safe_log(a), _safe_log(b)
    cost = half_sq_cost(alpha.points, mu.points)
    ker = -cost / eps          # (n, m)
    ker_t = np.ascontiguousarray(ker.T)
    red = _RowReducer(threads)

    def v_of(u):
        return -eps * red.lse(ker + (logb + u / eps)[None, :])

    def u_of(v):
        return -eps * red.lse(ker_t + (loga + v / eps)[None, :])

    u = np.zeros(mu.n) if init_u is None else np.array(init_u, dtype=np.float64)
    if u.shape != (mu.n,):
        raise DimensionMismatch(f"init_u has shape {u.shape}, expected ({mu.n},)")
    v = v_of(u)
    err = np.inf
    it = 0
    while it < max_iter:
        it += 1
        u = u_of(v)
        v_next = v_of(u)
        # rows of the plan built from (u, v) sum to a_i * exp((v - v_next)/eps);
        # its columns are exact by construction of u
        row = a * np.exp((v - v_next) / eps)
        err = float(np.abs(row - a).max())
        if err <= tol:
            break
        v = v_next
    u, v = _gauge(u, v, b)
    log_plan = loga[:, None] + logb[None, :] + ker + (u[None, :] + v[:, None]) / eps
    err = plan_marginal_error(log_plan, a, b)
    sol = SchrodingerSolution(eps, u, v, alpha, mu, err, it)
    if err > tol:
        raise NotConverged(
            f"Sinkhorn did not reach tol={tol:g} in {it} iterations "
            f"(marginal error {err:.3e})", marginal_error=err, iterations=it,
            solution=sol)
    logger.debug("sinkhorn: eps=%g n=%d m=%d iters=%d err=%.2e",
                 eps, alpha.n, mu.n, it, err)
    return sol


def sinkhorn_sweeps(alpha, mu, epsilon, sweeps, init_u=None):
    """Run a fixed number of sweeps with no stopping test (diagnostic use)."""
    _check_eps(epsilon)
    eps = float(epsilon)
    loga, logb = _safe_log(alpha.weights), _safe_log(mu.weights)
    ker = -half_sq_cost(alpha.points, mu.points) / eps
    u = np.zeros(mu.n) if init_u is None else np.array(init_u, dtype=np.float64)
    v = -eps * _lse_block(ker + (logb + u / eps)[None, :])
    for _ in range(sweeps):
        u = -eps * _lse_block(ker.T + (loga + v / eps)[None, :])
        v = -eps * _lse_block(ker + (logb + u / eps)[None, :])
    log_plan = loga[:, None] + logb[None, :] + ker + (u[None, :] + v[:, None]) / eps
    err = plan_marginal_error(log_plan, alpha.weights, mu.weights)
    u, v = _gauge(u, v, mu.weights)
    return SchrodingerSolution(eps, u, v, alpha, mu, err, sweeps)


def log_plan(sol: SchrodingerSolution) -> np.ndarray:
    a, b = sol.alpha_ref.weights, sol.mu_ref.weights
    cost = half_sq_cost(sol.alpha_ref.points, sol.mu_ref.points)
    return (_safe_log(a)[:, None] + _safe_log(b)[None, :]
            + (sol.u[None, :] + sol.v[:, None] - cost) / sol.epsilon)


def plan(sol: SchrodingerSolution) -> np.ndarray:
    """Dense Gibbs plan built from the potentials."""
    return np.exp(log_plan(sol))


def relative_entropy(p, q) -> float:
    """``sum p log(p / q)`` with ``0 log 0 = 0``; +inf if ``p`` is not << ``q``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.any((p > 0) & (q <= 0)):
        return float("inf")
    mask = p > 0
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def primal_objective(gamma, alpha: DiscreteMeasure, mu: DiscreteMeasure,
                     epsilon: float) -> float:
    """``1/2 int |x-y|^2 dgamma + eps H(gamma | alpha x mu)`` for a dense plan."""
    cost = half_sq_cost(alpha.points, mu.points)
    prod = np.outer(alpha.weights, mu.weights)
    return float(np.sum(cost * gamma) + epsilon * relative_entropy(gamma, prod))


def transport_cost(sol: SchrodingerSolution) -> float:
    """``int |x - y|^2 dgamma`` for the entropic plan (no factor 1/2)."""
    cost = half_sq_cost(sol.alpha_ref.points, sol.mu_ref.points)
    return float(2.0 * np.sum(cost * plan(sol)))


def ot_eps_value(sol: SchrodingerSolution) -> float:
    """Primal entropic value evaluated on the Gibbs plan."""
    lp = log_plan(sol)
    p = np.exp(lp)
    a, b = sol.alpha_ref.weights, sol.mu_ref.weights
    cost = half_sq_cost(sol.alpha_ref.points, sol.mu_ref.points)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = lp - _safe_log(a)[:, None] - _safe_log(b)[None, :]
    ent = np.where(p > 0, p * ratio, 0.0)
    return float(np.sum(cost * p) + sol.epsilon * np.sum(ent))


def dual_value(sol: SchrodingerSolution) -> float:
    """Unconstrained dual objective at ``(u, v)``.

    ``eps + <u, mu> + <v, alpha> - eps * int exp((v + u - c)/eps) d(alpha x mu)``
    """
    a, b = sol.alpha_ref.weights, sol.mu_ref.weights
    mass = float(plan(sol).sum())
    return float(sol.epsilon + np.dot(b, sol.u) + np.dot(a, sol.v)
                 - sol.epsilon * mass)


# --- queries at arbitrary points -------------------------------------------

def _as_points(x, d):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise DimensionMismatch(f"query points have dimension {x.shape[1]}, expected {d}")
    return x, single


def _logits(sol, x):
    y = sol.mu_ref.points
    return (_safe_log(sol.mu_ref.weights)[None, :]
            + (sol.u[None, :] - half_sq_cost(x, y)) / sol.epsilon)


def _softmax_rows(z):
    mx = z.max(axis=1, keepdims=True)
    e = np.exp(z - mx)
    return e / e.sum(axis=1, keepdims=True)


def _rowdot(w, y):
    # sum_j w_kj y_jl with the reduction along a contiguous last axis
    return (w[:, None, :] * np.ascontiguousarray(y.T)[None, :, :]).sum(axis=-1)


def potential_v(sol: SchrodingerSolution, x):
    """Smooth extension of ``v`` to arbitrary points (log-sum-exp form)."""
    pts, single = _as_points(x, sol.mu_ref.dim)
    val = -sol.epsilon * _lse_block(_logits(sol, pts))
    return float(val[0]) if single else val


def potential_u(sol: SchrodingerSolution, y):
    pts, single = _as_points(y, sol.alpha_ref.dim)
    z = (_safe_log(sol.alpha_ref.weights)[None, :]
         + (sol.v[None, :] - half_sq_cost(pts, sol.alpha_ref.points)) / sol.epsilon)
    val = -sol.epsilon * _lse_block(z)
    return float(val[0]) if single else val


def conditional_plan(sol: SchrodingerSolution, x):
    """Conditional law of ``y`` given ``x`` under the Gibbs plan.

    Returns a probability vector over ``mu``'s atoms (shape ``(m,)`` for one
    point, ``(k, m)`` for a batch).
    """
    pts, single = _as_points(x, sol.mu_ref.dim)
    w = _softmax_rows(_logits(sol, pts))
    return w[0] if single else w


def barycentric(sol: SchrodingerSolution, x):
    pts, single = _as_points(x, sol.mu_ref.dim)
    w = _softmax_rows(_logits(sol, pts))
    bary = _rowdot(w, sol.mu_ref.points)
    return bary[0] if single else bary


def grad_v(sol: SchrodingerSolution, x):
    pts, single = _as_points(x, sol.mu_ref.dim)
    g = pts - barycentric(sol, pts)
    return g[0] if single else g


def hess_v(sol: SchrodingerSolution, x):
    """``Id - Cov(y | x) / eps`` at one point or a batch of points."""
    pts, single = _as_points(x, sol.mu_ref.dim)
    y = sol.mu_ref.points
    w = _softmax_rows(_logits(sol, pts))
    mean = _rowdot(w, y)
    centred = y[None, :, :] - mean[:, None, :]          # (k, m, d)
    cov = np.einsum("kj,kja,kjb->kab", w, centred, centred)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    h = np.eye(pts.shape[1])[None] - cov / sol.epsilon
    return h[0] if single else h
