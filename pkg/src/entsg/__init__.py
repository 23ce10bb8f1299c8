"""Particle solver for the entropic semi-geostrophic equations.

Discrete measures are advected by the velocity ``A (x - bary(x))`` where
``bary`` is the barycentric projection of the entropic optimal plan to a
fixed reference measure, using an explicit Euler scheme.
"""

__version__ = "0.1.0"

from .dynamics import (BallSource, DriftMatrix, SimulationConfig, TheoryBounds,
                       Trajectory, euler_step, make_J, simulate, velocity)
from .entropic_ot import (SchrodingerSolution, barycentric, conditional_plan,
                          dual_value, grad_v, hess_v, ot_eps_value, sinkhorn_solve)
from .exact_ot import w2, w2_squared_exact
from .measures import (BallSpec, DiscreteMeasure, marginal_along_axis, new_discrete,
                       pushforward, quantize_uniform_ball, support_radius)

__all__ = [
    "BallSource", "BallSpec", "DiscreteMeasure", "DriftMatrix", "SchrodingerSolution",
    "SimulationConfig", "TheoryBounds", "Trajectory", "barycentric", "conditional_plan",
    "dual_value", "euler_step", "grad_v", "hess_v", "make_J", "marginal_along_axis",
    "new_discrete", "ot_eps_value", "pushforward", "quantize_uniform_ball", "simulate",
    "sinkhorn_solve", "support_radius", "velocity", "w2", "w2_squared_exact",
]
