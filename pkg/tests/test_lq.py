"""Riccati oracle: closed form, ODE residual, march cross-check."""

import numpy as np
import pytest

from nscontrol.cost import make_cost
from nscontrol.galerkin import HypothesisParams, build_torus_system, \
    without_bilinear
from nscontrol.hjb import GridSpec, solve_hjb_grid, value_at
from nscontrol.lq import LQProblem, LQSolution, closed_form_p, solve_riccati


def test_closed_form_pins_the_integrator():
    # with no running weight the per-mode equation is Bernoulli and exact
    prob = LQProblem(lambdas=[1.0, 4.0], q_spectrum=[1.0, 0.5],
                     running_weights=[0.0, 0.0],
                     terminal_weights=[0.7, 2.0], horizon=1.0)
    sol = solve_riccati(prob)
    for t in (0.0, 0.13, 0.5, 1.0):
        p = sol.p(t)
        assert p[0] == pytest.approx(float(closed_form_p(1.0, 0.7, t)),
                                     rel=1e-8)
        assert p[1] == pytest.approx(float(closed_form_p(4.0, 2.0, t)),
                                     rel=1e-8)


def test_dense_output_satisfies_the_ode():
    prob = LQProblem(lambdas=[1.0, 4.0], q_spectrum=[1.0, 0.0625],
                     running_weights=[1.0, 1.0],
                     terminal_weights=[0.5, 0.5], horizon=0.5)
    sol = solve_riccati(prob)
    assert np.allclose(sol.p(0.0), [0.5, 0.5], atol=1e-12)
    assert sol.rho(0.0) == pytest.approx(0.0, abs=1e-12)
    h = 1e-6
    for t in (0.1, 0.25, 0.4):
        p = sol.p(t)
        dp = (sol.p(t + h) - sol.p(t - h)) / (2.0 * h)
        rhs = -2.0 * prob.lambdas * p - 2.0 * p * p + prob.running_weights
        assert np.max(np.abs(dp - rhs)) < 1e-5
        drho = (sol.rho(t + h) - sol.rho(t - h)) / (2.0 * h)
        assert drho == pytest.approx(float(np.sum(prob.q_spectrum * p)),
                                     abs=1e-5)


def test_rho_is_integral_of_traced_p():
    prob = LQProblem(lambdas=[1.0], q_spectrum=[0.8], running_weights=[2.0],
                     terminal_weights=[1.0], horizon=0.7)
    sol = solve_riccati(prob)
    ts = np.linspace(0.0, 0.7, 2001)
    integ = np.trapezoid([float(prob.q_spectrum[0] * sol.p(t)[0])
                          for t in ts], ts)
    assert sol.rho(0.7) == pytest.approx(integ, rel=1e-6)


def test_value_gradient_policy():
    prob = LQProblem(lambdas=[1.0, 4.0], q_spectrum=[1.0, 0.0625],
                     running_weights=[1.0, 0.5],
                     terminal_weights=[0.5, 0.25], horizon=0.5)
    sol = solve_riccati(prob)
    x = np.array([0.7, -0.2])
    t = 0.3
    p = sol.p(t)
    assert sol.value(t, x) == pytest.approx(
        float(np.sum(p * x * x)) + sol.rho(t), rel=1e-12)
    assert np.allclose(sol.gradient(t, x), 2.0 * p * x, rtol=1e-12)
    policy = sol.policy()
    # wall-clock adapter: at t the remaining time is T - t
    assert np.allclose(policy(0.2, x), -2.0 * sol.p(0.3) * x, rtol=1e-12)
    assert np.allclose(policy(0.5, x), -2.0 * sol.p(0.0) * x, rtol=1e-12)
    assert np.allclose(policy(9.0, x), -2.0 * sol.p(0.0) * x, rtol=1e-12)


def _lq_system(m):
    # gamma = 0 flattens the control operator, which is what makes the
    # quadratic ansatz close; the constructor gate is bypassed knowingly
    hyp = HypothesisParams(g=0.5, r=1.25, gamma=0.0, check=False)
    return without_bilinear(build_torus_system(m, 1, hyp=hyp))


def test_march_converges_to_riccati_value():
    sys = _lq_system(1)
    cost = make_cost(sys, {"kind": "quadratic", "weights": [1.0]},
                     {"kind": "quadratic", "weights": [0.5]})
    prob = LQProblem(lambdas=sys.lambdas, q_spectrum=sys.q_spectrum,
                     running_weights=[1.0], terminal_weights=[0.5],
                     horizon=0.5)
    oracle = solve_riccati(prob)
    hw = np.array([2.0 * np.sqrt(2.0)])
    probes = [np.array([0.3]), np.array([-1.0]), np.array([1.2])]
    errs = {}
    for n in (81, 161):
        grid = GridSpec(halfwidths=hw, points_per_axis=n)
        value = solve_hjb_grid(sys, cost, 1e6, 0.5, grid)
        errs[n] = max(
            abs(value_at(value, 0.5, p) - oracle.value(0.5, p))
            / abs(oracle.value(0.5, p)) for p in probes)
    assert errs[81] < 3e-2
    assert errs[161] < 0.62 * errs[81]     # first-order march


def test_problem_validation():
    with pytest.raises(ValueError, match="length"):
        LQProblem(lambdas=[1.0, 2.0], q_spectrum=[1.0],
                  running_weights=[1.0, 1.0], terminal_weights=[1.0, 1.0],
                  horizon=1.0)
    with pytest.raises(ValueError, match="lambda > 0"):
        LQProblem(lambdas=[0.0], q_spectrum=[1.0], running_weights=[1.0],
                  terminal_weights=[1.0], horizon=1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        LQProblem(lambdas=[1.0], q_spectrum=[1.0], running_weights=[-1.0],
                  terminal_weights=[1.0], horizon=1.0)
    with pytest.raises(ValueError, match="horizon"):
        LQProblem(lambdas=[1.0], q_spectrum=[1.0], running_weights=[1.0],
                  terminal_weights=[1.0], horizon=0.0)
    with pytest.raises(ValueError):
        closed_form_p(1.0, 0.0, 0.5)
