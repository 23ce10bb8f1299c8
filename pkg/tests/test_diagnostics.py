import math

import numpy as np
import pytest

from entsg import diagnostics as dg
from entsg import entropic_ot as eot
from entsg.dynamics import BallSource, DriftMatrix, SimulationConfig, make_J, simulate
from entsg.measures import new_discrete, quantize_uniform_ball, BallSpec

J = make_J()


def small_cfg(**kw):
    base = dict(dimension=3, drift=J, epsilon=0.5, tau=0.1, horizon=0.5,
                alpha0=BallSource(1.0, 8, 0), mu0=BallSource(1.0, 8, 1))
    base.update(kw)
    return SimulationConfig(**base)


def test_fit_rate_exact_power_law():
    grid = [0.1, 0.05, 0.025, 0.0125]
    fit = dg.fit_rate(grid, [3 * g ** 1.5 for g in grid])
    assert fit.slope == pytest.approx(1.5, abs=1e-12)
    assert fit.half_width < 1e-9


def test_fit_rate_all_zero_is_degenerate():
    fit = dg.fit_rate([0.1, 0.05, 0.025, 0.0125], [0.0] * 4)
    assert fit.degenerate and math.isnan(fit.slope)


def test_fit_rate_rejects_unsorted_grid():
    with pytest.raises(ValueError):
        dg.fit_rate([0.1, 0.2, 0.05], [1, 2, 3])


def test_tau_study_zero_drift_degenerate():
    c = small_cfg(drift=DriftMatrix(np.zeros((3, 3))), horizon=0.4)
    fit = dg.tau_rate_study(c, [0.2, 0.1, 0.05, 0.025, 0.0125])
    assert fit.degenerate
    assert all(e == 0.0 for e in fit.errors)


def test_tau_study_needs_four_points():
    with pytest.raises(ValueError):
        dg.tau_rate_study(small_cfg(), [0.1, 0.05, 0.025])


def test_eps_gap_dirac_pair():
    a = new_discrete([[0.0, 0.0]], [1.0])
    b = new_discrete([[1.0, 2.0]], [1.0])
    rep = dg.eps_gap_study(a, b, [1.0, 0.1, 0.01])
    assert rep.w2_squared == pytest.approx(5.0)
    assert all(abs(g) <= 1e-12 for g in rep.transport_gap)
    assert all(abs(g) <= 1e-12 for g in rep.value_gap)
    assert rep.fit.degenerate


def test_eps_gap_identical_measures():
    m = quantize_uniform_ball(BallSpec(1.0, 2), 6, seed=4)
    rep = dg.eps_gap_study(m, m, [1.0, 0.3, 0.1], max_iter=500_000)
    assert rep.w2_squared == pytest.approx(0.0, abs=1e-14)
    assert rep.nonnegative and rep.monotone
    assert all(g > 0 for g in rep.value_gap)


def test_energy_constant_at_fixed_point():
    # alpha = mu = a single atom: nothing moves
    x = new_discrete([[0.3, 0.1, 0.7]], [1.0])
    c = SimulationConfig(3, J, 0.5, 0.1, 1.0, x, x)
    traj = simulate(c)
    rep = dg.energy_report(traj, x, 0.5)
    assert rep.max_drift == 0.0
    assert rep.potential[0] == pytest.approx(0.7)


def test_trajectory_distance_self_zero():
    t = simulate(small_cfg())
    assert dg.trajectory_distance(t, t) == pytest.approx(0.0, abs=1e-14)
    assert dg.common_times(t, t) == dg.common_times(t, t)


def test_trajectory_distance_needs_common_times():
    a = simulate(small_cfg(horizon=0.1, tau=0.1))
    b = simulate(small_cfg(horizon=0.3, tau=0.3))
    with pytest.raises(ValueError):
        dg.trajectory_distance(a, b.__class__(b.dimension, b.tau, b.steps, b.snapshot_stride,
                                              b.snapshots[1:]))


def test_joint_constant_schedule_zero():
    rows = [dg.ScheduleRow(0.5, 0.1, 8, 3)] * 3
    rep = dg.joint_convergence_study(small_cfg(), rows)
    assert rep.distances == (0.0, 0.0)
    assert not any(rep.approximate)


def test_schedule_seeds_and_prefix():
    base = small_cfg()
    c32 = dg.schedule_config(base, dg.ScheduleRow(0.5, 0.1, 32, 7))
    c64 = dg.schedule_config(base, dg.ScheduleRow(0.5, 0.1, 64, 7))
    assert c32.mu0.seed == 8
    a32, a64 = c32.build_measure("alpha0"), c64.build_measure("alpha0")
    assert np.array_equal(a32.points, a64.points[:32])


def test_sinkhorn_divergence_small_for_close_measures():
    m = quantize_uniform_ball(BallSpec(1.0, 2), 10, seed=1)
    assert dg.sinkhorn_divergence_w2(m, m, 0.1) == pytest.approx(0.0, abs=1e-6)


def test_potential_stability_probe():
    c = small_cfg()
    a, mu = c.build_measure("alpha0"), c.build_measure("mu0")
    probe = dg.potential_stability_probe(a, mu, 0.5)
    assert probe.finite
    assert all(0.25 < r < 4.0 for r in probe.scale_ratios())


def test_initial_data_stability_probe():
    probe = dg.initial_data_stability_probe(small_cfg())
    assert probe.finite
    assert all(0.25 < r < 4.0 for r in probe.scale_ratios())


def test_hypothesis_checks():
    c = small_cfg()
    sol = eot.sinkhorn_solve(c.build_measure("alpha0"), c.build_measure("mu0"), 0.5)
    probes = np.random.default_rng(0).normal(scale=2.0, size=(100, 3))
    chk = dg.check_hypotheses(sol, J, probes)
    assert chk.growth_ratio <= 1.0
    assert chk.hessian_ratio <= 1.0
