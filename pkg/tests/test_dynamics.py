import numpy as np
import pytest

from imeac.core.dynamics import (
    SimulationError,
    Stage,
    coi_aggregate,
    electrical_power,
    relative_state,
    simulate,
    steps_for,
)
from imeac.network.reduction import build_staged_network


@pytest.fixture(scope="module")
def omib_run(omib_case, omib_network):
    return simulate(omib_network, omib_case, 0.1, 0.5, 1e-3)


def test_coi_identities_hold_for_any_state():
    rng = np.random.default_rng(7)
    inertia = rng.uniform(0.01, 1.0, size=5)
    delta = rng.normal(size=5)
    omega = rng.normal(size=5)
    pm = rng.normal(size=5)
    pe = rng.normal(size=5)
    coi = coi_aggregate(delta, omega, pm, pe, inertia)
    rel = relative_state(delta, omega, pm, pe, inertia, coi)
    assert rel.theta @ inertia == pytest.approx(0.0, abs=1e-12)
    assert rel.omega_rel @ inertia == pytest.approx(0.0, abs=1e-12)
    assert rel.accel.sum() == pytest.approx(0.0, abs=1e-12)
    assert coi.power == pytest.approx(np.sum(pm - pe))


def test_trajectory_coi_residuals(omib_run):
    residuals = omib_run.coi_residuals()
    assert residuals["theta"] < 1e-9
    assert residuals["omega_rel"] < 1e-9
    assert residuals["accel"] < 1e-9


def test_relative_acceleration_matches_finite_difference(omib_run):
    # M d(omega_rel)/dt = f on the post-fault stage
    start = omib_run.clearing_index + 1
    h = omib_run.step
    column = omib_run.machine_index(1)
    omega_rel = omib_run.omega_rel[start:, column]
    slope = (omega_rel[2:] - omega_rel[:-2]) / (2 * h)
    expected = omib_run.accel[start + 1 : -1, column] / omib_run.inertia[column]
    np.testing.assert_allclose(slope, expected, rtol=1e-3, atol=1e-3)


def test_clearing_row_is_duplicated(omib_run):
    k = omib_run.clearing_index
    assert omib_run.time[k] == omib_run.time[k + 1] == pytest.approx(0.1)
    assert omib_run.stage[k] == Stage.FAULT_ON
    assert omib_run.stage[k + 1] == Stage.POST_FAULT
    np.testing.assert_array_equal(omib_run.delta[k], omib_run.delta[k + 1])
    assert omib_run.pe[k, 0] == pytest.approx(0.0, abs=1e-12)
    assert omib_run.pe[k + 1, 0] > 1.0
    assert len(omib_run) == 501
    assert omib_run.samples == 502
    assert omib_run.row_at(0.1, stage=Stage.FAULT_ON) == k
    assert omib_run.row_at(0.1) == k + 1


def test_state_snapshot_at_clearing(omib_run):
    fault_on = omib_run.state(omib_run.row_at(0.1, stage=Stage.FAULT_ON))
    post = omib_run.state(omib_run.row_at(0.1))
    assert fault_on.stage is Stage.FAULT_ON
    assert post.stage is Stage.POST_FAULT
    assert fault_on.t == post.t == pytest.approx(0.1)
    np.testing.assert_array_equal(fault_on.omega_rel, post.omega_rel)
    assert post.pe[0] > fault_on.pe[0]
    assert post.theta @ omib_run.inertia == pytest.approx(0.0, abs=1e-12)
    assert post.p_coi == pytest.approx(np.sum(omib_run.pm - post.pe))


def test_row_at_rejects_off_grid(omib_run):
    with pytest.raises(KeyError):
        omib_run.row_at(0.1005)
    with pytest.raises(KeyError):
        omib_run.row_at(0.6)


def test_fault_on_stage_is_free_acceleration(omib_case, omib_network, omib_run):
    # machine 1 carries no electrical power while the fault is on
    m1, m2 = omib_case.inertia
    k = omib_run.clearing_index
    relative = omib_run.delta[k, 0] - omib_run.delta[k, 1]
    initial = omib_network.delta0[0] - omib_network.delta0[1]
    pm1, pm2 = omib_network.pm
    expected = initial + 0.5 * (pm1 / m1 - pm2 / m2) * 0.1**2
    assert relative == pytest.approx(expected, rel=1e-9)


def test_rk4_converges_at_fourth_order(omib_case, omib_network):
    finals = []
    for h in (0.01, 0.005, 0.0025):
        traj = simulate(omib_network, omib_case, 0.1, 0.4, h)
        finals.append(traj.delta[-1, 0])
    ratio = abs(finals[0] - finals[1]) / abs(finals[1] - finals[2])
    assert 8.0 < ratio < 32.0


def test_simulation_is_deterministic(omib_case, omib_network):
    first = simulate(omib_network, omib_case, 0.05, 0.2, 1e-3)
    second = simulate(omib_network, omib_case, 0.05, 0.2, 1e-3)
    np.testing.assert_array_equal(first.delta, second.delta)
    np.testing.assert_array_equal(first.omega, second.omega)


def test_unfaulted_baseline_stays_put(omib_case):
    baseline = build_staged_network(omib_case, None)
    traj = simulate(baseline, omib_case, 0.05, 0.5, 1e-3)
    expected = np.broadcast_to(baseline.delta0, traj.delta.shape)
    np.testing.assert_allclose(traj.delta, expected, atol=1e-9)
    np.testing.assert_allclose(traj.omega, 0.0, atol=1e-9)


def test_one_step_fault(omib_case, omib_network):
    traj = simulate(omib_network, omib_case, 1e-3, 0.01, 1e-3)
    assert traj.clearing_index == 1
    assert traj.stage.tolist()[:3] == [Stage.FAULT_ON, Stage.FAULT_ON, Stage.POST_FAULT]


def test_electrical_power_accepts_stacks(omib_network):
    stack = np.stack([omib_network.delta0, omib_network.delta0 + 0.1])
    pe = electrical_power(omib_network.y_pre, omib_network.emf, stack)
    assert pe.shape == (2, 2)
    np.testing.assert_allclose(
        pe[1], electrical_power(omib_network.y_pre, omib_network.emf, stack[1])
    )


@pytest.mark.parametrize(
    "t_cl, t_end, h",
    [(0.0, 1.0, 1e-3), (1.0, 1.0, 1e-3), (0.1, 1.0, 0.0), (0.1005, 1.0, 1e-3)],
)
def test_invalid_requests(omib_case, omib_network, t_cl, t_end, h):
    with pytest.raises(SimulationError):
        simulate(omib_network, omib_case, t_cl, t_end, h)


def test_steps_for_rejects_partial_steps():
    assert steps_for(0.202, 1e-3, label="t_cl") == 202
    with pytest.raises(SimulationError, match="not a positive integer multiple"):
        steps_for(0.2025, 1e-3, label="t_cl")


def test_trajectory_arrays_are_read_only(omib_run):
    with pytest.raises(ValueError):
        omib_run.theta[0, 0] = 1.0
