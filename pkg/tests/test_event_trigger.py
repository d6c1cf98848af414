import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tlcontrol.certificates import LieDerivativeChain, zoh_tlc_row
from tlcontrol.controller import ControllerConfig, MethodSelector
from tlcontrol.dynamics import run_closed_loop
from tlcontrol.event_trigger import (StateBox, detect_exit, event_triggered_policy, robust_bounds)
from tlcontrol.scenarios import make_acc, make_robot

ACC_BOX = StateBox([24.0, 90.0], [0.5, 1.0], [0.5, 1.0])


@pytest.fixture(scope="module")
def acc():
    return make_acc()


def test_acc_robust_row(acc):
    r = robust_bounds(acc.chain("gap"), ACC_BOX, 0.1, [1.0], grid_per_dim=5)
    assert r.G == pytest.approx([-1 / 1650.0], rel=1e-12)
    # dense brute force at 50 points per dimension
    dense = min(zoh_tlc_row(acc.chain("gap"), y, 0.1).b for y in ACC_BOX.grid(50))
    assert r.h_r == pytest.approx(dense, rel=1e-3)
    assert r.h_r == pytest.approx(77.94 * 200, rel=1e-3)


def test_zero_box_reproduces_row(acc):
    box = StateBox([24.0, 90.0], [0.0, 0.0], [0.0, 0.0])
    r = robust_bounds(acc.chain("gap"), box, 0.1, [1.0])
    row = zoh_tlc_row(acc.chain("gap"), [24.0, 90.0], 0.1)
    assert np.array_equal(r.G, row.a) and r.h_r == row.b


def test_constant_input_map_independent_of_sign(acc):
    g_pos = robust_bounds(acc.chain("gap"), ACC_BOX, 0.1, [1.0]).G
    g_neg = robust_bounds(acc.chain("gap"), ACC_BOX, 0.1, [-1.0]).G
    assert np.array_equal(g_pos, g_neg)


def test_sign_selects_min_or_max():
    chain = LieDerivativeChain("lin", 1, lambda x: [x[0], 0.0], lambda x: [x[0]])
    box = StateBox([1.0], [0.5], [0.5])
    assert robust_bounds(chain, box, 0.1, [1.0]).G == pytest.approx([0.5])
    assert robust_bounds(chain, box, 0.1, [-1.0]).G == pytest.approx([1.5])
    with pytest.raises(ValueError):
        robust_bounds(chain, box, 0.1, [1.0, 1.0])


def test_detect_exit():
    assert detect_exit([24.6, 90.5], ACC_BOX)
    assert not detect_exit([24.0, 90.0], ACC_BOX)
    assert not detect_exit([24.5, 89.0], ACC_BOX)
    with pytest.raises(ValueError):
        detect_exit([24.0], ACC_BOX)


def test_box_validation_and_grid():
    with pytest.raises(ValueError):
        StateBox([0.0], [-1.0], [1.0])
    box = StateBox([0.0, 0.0], [1.0, 0.0], [1.0, 0.0])
    g = box.grid(3)
    assert g.shape == (3, 2) and np.array_equal(g[:, 0], [-1.0, 0.0, 1.0])
    with pytest.raises(ValueError):
        box.grid(1)


@settings(max_examples=40, deadline=None)
@given(st.floats(5.0, 30.0), st.floats(20.0, 120.0), st.floats(0.05, 1.0), st.floats(0.05, 2.0))
def test_enlarging_box_never_loosens(v, z, dv, dz):
    gap = make_acc().chain("gap")
    small = StateBox([v, z], [dv, dz], [dv, dz])
    big = StateBox([v, z], [2 * dv, 2 * dz], [2 * dv, 2 * dz])
    # 9 points on the doubled box contain the 5 points of the original
    r_small = robust_bounds(gap, small, 0.1, [1.0], 5)
    r_big = robust_bounds(gap, big, 0.1, [1.0], 9)
    assert r_big.h_r <= r_small.h_r
    assert np.all(r_big.G <= r_small.G)


def test_monitor_step_validation(acc):
    cfg = ControllerConfig(dt=0.1)
    with pytest.raises(ValueError):
        event_triggered_policy(acc, cfg, 0.2, ([0.5, 1.0], [0.5, 1.0]))


def test_event_policy_counts_two_qps_per_event(acc):
    cfg = ControllerConfig(dt=0.1, w=10.0, t_end=3.0)
    pol = event_triggered_policy(acc, cfg, 0.03, ([0.5, 1.0], [0.5, 1.0]), 7)
    log = run_closed_loop(acc.system, pol, 3.0, 0.03, 10, acc.x0, acc.safety_functions())
    assert log.qp_count == 2 * len(log.event_times) == 2 * len(pol.boxes)
    assert log.event_times[0] == 0.0
    # controls change only at events
    changes = [log.times[k] for k in range(1, len(log) - 1)
               if not np.array_equal(log.controls[k], log.controls[k - 1])]
    assert set(changes) <= set(log.event_times)


def test_monitored_states_stay_in_current_box():
    robot = make_robot()
    p = robot.params
    cfg = ControllerConfig(dt=p.dt, w=p.w, t_end=5.0)
    pol = event_triggered_policy(robot, cfg, p.d_t, (p.x_lower, p.x_up), p.grid_per_dim)
    log = run_closed_loop(robot.system, pol, 5.0, p.d_t, 10, robot.x0, robot.safety_functions())
    events = np.array(log.event_times)
    # the terminal sample is never handed to the policy, so it is not monitored
    for t, x in zip(log.times[:-1], log.states[:-1]):
        k = np.searchsorted(events, t + 1e-12) - 1
        if k >= 0:
            assert not detect_exit(x, pol.boxes[k])


def test_grid_only_bound_holds_at_its_own_grid():
    robot = make_robot()
    box = StateBox([18.0, 9.0, 0.4, 1.5], [0.2, 0.2, 0.1, 0.1], [0.2, 0.2, 0.1, 0.1])
    chain = robot.chain("obstacle")
    r = robust_bounds(chain, box, 0.1, [1.0, -1.0], 5, curvature=False)
    for y in box.grid(5):
        row = zoh_tlc_row(chain, y, 0.1)
        for u in ([0.0, 0.0], [0.4, 0.0], [0.0, -0.8], [0.4, -0.8]):
            assert r.G @ u + r.h_r <= row.value(u) + 1e-9


def test_curvature_allowance_covers_off_grid_points():
    robot = make_robot()
    box = StateBox([18.0, 9.0, 0.4, 1.5], [0.2, 0.2, 0.1, 0.1], [0.2, 0.2, 0.1, 0.1])
    chain = robot.chain("obstacle")
    r = robust_bounds(chain, box, 0.1, [1.0, -1.0], 5)
    plain = robust_bounds(chain, box, 0.1, [1.0, -1.0], 5, curvature=False)
    assert r.h_r < plain.h_r and r.G[0] <= plain.G[0] and r.G[1] >= plain.G[1]
    for y in box.grid(6):
        row = zoh_tlc_row(chain, y, 0.1)
        for u in ([0.0, 0.0], [0.4, 0.0], [0.0, -0.8], [0.4, -0.8]):
            assert r.G @ u + r.h_r <= row.value(u) + 1e-9


def test_curvature_allowance_vanishes_for_linear_values():
    from tlcontrol.event_trigger import curvature_allowance
    x, y = np.meshgrid(np.linspace(0, 1, 5), np.linspace(0, 2, 5), indexing="ij")
    vals = np.stack([3 * x - y, x * y], -1)
    pad = curvature_allowance(vals)
    assert pad[0] == pytest.approx(0.0, abs=1e-12)
    # x*y has no pure second derivative, the bilinear interpolant is exact
    assert pad[1] == pytest.approx(0.0, abs=1e-12)
