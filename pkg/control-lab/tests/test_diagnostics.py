import numpy as np
import pytest

from app.diagnostics import (
    error_ball_radius,
    estimate_rho,
    fixed_point_iterate,
    measure_learning_bounds,
    steady_state_error,
)
from app.errors import ConvergenceError, ErrorBallHypothesisError
from app.linalg import stability_constants
from app.logs import TrajectoryLog
from app.mlp import init_network, normalize_lipschitz
from app.plant import Reference


def _ref(p=1.0):
    return Reference(x_r=np.array([p, 0.0]), u_r=0.0)


def _normalized_net(zeta, seed=4):
    net = init_network([3, 50, 50, 50, 50, 1], seed=seed, zeta=zeta)
    normalize_lipschitz(net)
    return net


def _log(rows):
    """rows of (t, p, pr, u, r_true, r_hat)"""
    log = TrajectoryLog(header={"estimates_residual": True}, seed=0)
    for t, p, pr, u, r_true, r_hat in rows:
        log.append(t, p, 0.0, pr, 0.0, u, r_true, r_hat, float("nan"))
    return log


def test_fixed_point_zero_network(friday_state, zero_net):
    """Test F is constant for a zero network so the iteration stops at index 1"""
    st = friday_state(net=zero_net)
    u, index = fixed_point_iterate(st, np.array([0.2, 0.0]), _ref(), u0=7.0, tol=1e-12, max_iter=10)
    assert index == 1
    assert u == pytest.approx(np.sqrt(20.0) * 0.8)


def test_fixed_point_gaps_contract(friday_state):
    """Test successive gaps shrink by at least zeta = 0.5"""
    st = friday_state(net=_normalized_net(0.5))
    gaps = []
    fixed_point_iterate(st, np.array([0.3, -0.1]), _ref(), u0=20.0, tol=1e-10, max_iter=1000, gaps=gaps)
    assert len(gaps) >= 2
    for before, after in zip(gaps, gaps[1:]):
        if before > 1e-8:
            assert after <= 0.5 * before * (1 + 1e-9) + 1e-12


def test_fixed_point_unique_across_starts(friday_state):
    """Test every start converges to the same input for zeta < 1"""
    st = friday_state(net=_normalized_net(0.9))
    x = np.array([-0.4, 0.2])
    points = [fixed_point_iterate(st, x, _ref(), u0, tol=1e-12, max_iter=10000)[0] for u0 in (-20.0, 0.0, 20.0)]
    assert max(points) - min(points) <= 1e-8


def test_fixed_point_reports_non_convergence(friday_state):
    """Test the iteration cap raises with the last gap"""
    st = friday_state(net=_normalized_net(0.9))
    with pytest.raises(ConvergenceError) as info:
        fixed_point_iterate(st, np.array([0.3, 0.0]), _ref(), u0=1e6, tol=1e-14, max_iter=1)
    assert info.value.residual > 0


def test_fixed_point_rejects_bad_tol(friday_state, zero_net):
    """Test tol must be positive"""
    with pytest.raises(ValueError):
        fixed_point_iterate(friday_state(net=zero_net), np.zeros(2), _ref(), 0.0, tol=0.0, max_iter=5)


@pytest.fixture
def constants(car, car_care):
    consts = stability_constants(car_care, car.a, car.b, car_care.gain_k, rho=0.0, r_x=10.0, r_u=100.0)
    return consts.with_context(z0=[1.0, 0.0], u_r_max=0.5, r_max=2.0)


def test_error_ball_zero_learning_error(constants):
    """Test eps_m = 0 gives a zero ultimate radius"""
    report = error_ball_radius(constants, l_r=1.0, eps_m=0.0)
    assert report.radius == 0.0
    assert report.r_z > 0.0
    assert report.denominator == pytest.approx(constants.c1 * constants.lambda_)


def test_error_ball_linear_in_eps(constants):
    """Test the radius scales linearly with eps_m"""
    one = error_ball_radius(constants, l_r=1.0, eps_m=1.0)
    two = error_ball_radius(constants, l_r=1.0, eps_m=2.0)
    assert two.radius == pytest.approx(2.0 * one.radius)
    assert two.r_u > one.r_u


def test_error_ball_feasibility(constants):
    """Test small errors are feasible and large ones are not"""
    assert error_ball_radius(constants, l_r=1.0, eps_m=0.01).feasibility_ok
    assert not error_ball_radius(constants, l_r=1.0, eps_m=1e6).feasibility_ok


def test_error_ball_hypothesis_violated(car, car_care):
    """Test c1 lambda <= c2 c3 rho L_R raises with the denominator"""
    consts = stability_constants(car_care, car.a, car.b, car_care.gain_k, rho=1.0, r_x=10.0, r_u=100.0)
    with pytest.raises(ErrorBallHypothesisError) as info:
        error_ball_radius(consts, l_r=1.0, eps_m=0.1)
    assert info.value.denominator <= 0


def test_error_ball_rejects_negative_inputs(constants):
    """Test eps_m and L_R must be non-negative"""
    with pytest.raises(ValueError):
        error_ball_radius(constants, l_r=1.0, eps_m=-1.0)
    with pytest.raises(ValueError):
        error_ball_radius(constants, l_r=-1.0, eps_m=1.0)


def test_estimate_rho_skips_small_errors():
    """Test rho = max |du| / ||z|| ignoring steps at the reference"""
    log = _log([(0.0, 1.0, 0.0, 0.0, 0.0, 0.0), (0.05, 1.0, 0.0, 0.5, 0.0, 0.0), (0.1, 0.0, 0.0, 10.0, 0.0, 0.0)])
    assert estimate_rho(log) == pytest.approx(0.5)


def test_estimate_rho_needs_two_rows():
    """Test a single row is rejected"""
    with pytest.raises(ValueError):
        estimate_rho(_log([(0.0, 1.0, 0.0, 0.0, 0.0, 0.0)]))


def test_measure_learning_bounds_ignores_non_finite():
    """Test eps_m and R_max use rows with finite estimates only"""
    log = _log([(0.0, 0.0, 0.0, 0.0, 1.0, 0.5), (0.05, 0.0, 0.0, 0.0, -3.0, float("nan"))])
    assert measure_learning_bounds(log) == (0.5, 1.0)


def test_steady_state_error_tail():
    """Test the max error over the trailing fraction"""
    log = _log([(0.05 * k, float(k), 0.0, 0.0, 0.0, 0.0) for k in range(10)])
    assert steady_state_error(log, fraction=0.2) == 9.0
    assert steady_state_error(log, fraction=1.0) == 9.0
    with pytest.raises(ValueError):
        steady_state_error(log, fraction=0.0)
