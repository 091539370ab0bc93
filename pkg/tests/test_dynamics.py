import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadaware.dynamics import (ControlInput, DisturbanceSpec, DivergenceError, State, VehicleParams,
                                clamp_input, derivative, rk4_flat, step, true_disturbance)
from quadaware.se3 import E3, quat_exp

P = VehicleParams()
QUIET = DisturbanceSpec(scale=0.0)


@pytest.fixture
def spinning():
    return State(np.zeros(3), np.array([0.3, -0.1, 0.2]), quat_exp([0.1, 0.2, -0.3]), np.array([0.5, -1.0, 2.0]))


def test_disturbance_at_rest_t0():
    spec = DisturbanceSpec(scale=1.7)
    f = true_disturbance(State.hover(), 0.0, spec)
    assert np.allclose(f, 1.7 * np.array([0, spec.wind_amp[1], 0, 0, 0, 0]))


def test_disturbance_zero_scale(spinning):
    for t in (0.0, 0.37, 5.0):
        assert np.array_equal(true_disturbance(spinning, t, QUIET), np.zeros(6))


@given(st.floats(0, 20), st.floats(0.1, 5))
def test_disturbance_linear_in_scale(t, scale):
    x = State(np.zeros(3), np.array([0.4, -0.2, 0.1]), np.array([1.0, 0, 0, 0]), np.array([0.3, 0.1, -0.5]))
    f1 = true_disturbance(x, t, DisturbanceSpec(scale=scale))
    f2 = true_disturbance(x, t, DisturbanceSpec(scale=2 * scale))
    assert np.allclose(f2, 2 * f1, rtol=1e-12, atol=1e-15)


def test_hover_is_equilibrium():
    d = derivative(State.hover([0, 0, -1]), ControlInput(P.m * P.g, np.zeros(3)), np.zeros(6), P)
    assert np.allclose(d, 0, atol=1e-15)


def test_free_fall_acceleration():
    d = derivative(State.hover(), ControlInput(0.0, np.zeros(3)), np.zeros(6), P)
    assert np.allclose(d[3:6], P.g * E3)


def test_axis_aligned_spin_has_no_gyroscopic_term():
    x = State(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([0, 0, 1.0]))
    tau = np.array([0.1, -0.2, 0.05])
    f = np.array([0, 0, 0, 0.01, 0.02, -0.03])
    d = derivative(x, ControlInput(0.0, tau), f, P)
    assert np.allclose(d[10:13], P.J_inv @ (tau + f[3:6]))


def test_hover_step_stationary():
    x = State.hover([0, 0, -1])
    x1 = step(x, ControlInput(P.m * P.g, np.zeros(3)), 0.0, 1e-3, QUIET, P)
    assert np.linalg.norm(x1.flat() - x.flat()) <= 1e-12


def _free_fall_error(dt, horizon=1.0):
    v0 = np.array([0.5, -0.3, 0.2])
    y = State(np.zeros(3), v0, np.array([1.0, 0, 0, 0]), np.zeros(3)).flat()
    n = int(round(horizon / dt))
    for k in range(n):
        y = rk4_flat(y, 0.0, np.zeros(3), k * dt, dt, QUIET, P)
    exact = v0 * horizon + 0.5 * P.g * horizon ** 2 * E3
    return np.linalg.norm(y[0:3] - exact)


def test_free_fall_matches_analytic():
    # RK4 is exact on quadratics, so only round-off remains
    assert _free_fall_error(0.01) < 1e-12


def _spin_error(dt, horizon=0.5):
    """Drift of the state relative to a very fine reference on a torque-free tumbling body."""
    y0 = State(np.zeros(3), np.zeros(3), quat_exp([0.2, -0.1, 0.3]), np.array([3.0, -2.0, 4.0])).flat()

    def run(h):
        y = y0.copy()
        for k in range(int(round(horizon / h))):
            y = rk4_flat(y, P.m * P.g, np.zeros(3), k * h, h, QUIET, P)
        return y

    ref = run(dt / 16)
    return np.linalg.norm(run(dt) - ref)


def test_rk4_fourth_order_on_rotation():
    e1, e2 = _spin_error(0.02), _spin_error(0.01)
    assert e1 / e2 >= 12


def test_torque_free_spin_conserves_angular_momentum():
    P_asym = VehicleParams(J=np.diag([0.016, 0.02, 0.03]))
    x = State(np.zeros(3), np.zeros(3), np.array([1.0, 0, 0, 0]), np.array([0.0, 3.0, 0.0]))
    L0 = np.linalg.norm(P_asym.J @ x.w)
    for k in range(1000):
        x = step(x, ControlInput(0.0, np.zeros(3)), k * 1e-3, 1e-3, QUIET, P_asym)
    assert abs(np.linalg.norm(P_asym.J @ x.w) - L0) <= 1e-9


def test_general_spin_conserves_world_momentum():
    x = State(np.zeros(3), np.zeros(3), quat_exp([0.3, 0.1, -0.2]), np.array([1.5, -0.7, 2.2]))
    H0 = x.R @ (P.J @ x.w)
    for k in range(1000):
        x = step(x, ControlInput(0.0, np.zeros(3)), k * 1e-3, 1e-3, QUIET, P)
    assert np.allclose(x.R @ (P.J @ x.w), H0, atol=1e-9)


@pytest.mark.parametrize("u, expected", [
    (ControlInput(9.81, np.array([0.1, -0.2, 0.3])), (9.81, [0.1, -0.2, 0.3])),
    (ControlInput(-1.0, np.zeros(3)), (0.0, [0, 0, 0])),
    (ControlInput(5.0, np.array([10.0, 0, 0])), (5.0, [2.0, 0, 0])),
    (ControlInput(1e3, np.array([-3.0, 0, 0])), (4 * 9.81, [-2.0, 0, 0])),
])
def test_clamp_input(u, expected):
    c = clamp_input(u, P)
    assert c.T == pytest.approx(expected[0])
    assert np.allclose(c.tau, expected[1])


def test_nonfinite_state_raises():
    y = State.hover().flat()
    y[3] = np.inf
    with pytest.raises(DivergenceError):
        rk4_flat(y, 1.0, np.zeros(3), 0.0, 1e-3, QUIET, P)


def test_step_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        step(State.hover(), ControlInput(1.0, np.zeros(3)), 0.0, 0.0, QUIET, P)


@pytest.mark.parametrize("bad", [{"m": 0.0}, {"J": np.diag([1.0, -1.0, 1.0])}])
def test_vehicle_params_validation(bad):
    with pytest.raises(ValueError):
        VehicleParams(**bad)


def test_disturbance_spec_validation():
    with pytest.raises(ValueError):
        DisturbanceSpec(wind_freq=np.array([0.5, 0.0, 1.0]))
    with pytest.raises(ValueError):
        DisturbanceSpec(vert_amp=-1.0)
