"""Path integrator: reproducibility contract, guards, ensemble statistics."""

import numpy as np
import pytest

from nscontrol.cost import make_cost
from nscontrol.galerkin import build_torus_system, without_bilinear
from nscontrol.hjb import GridSpec, solve_hjb_grid
from nscontrol.ou import ou_transition
from nscontrol.policies import constant_policy, zero_policy
from nscontrol.sde import IntegratorSpec, energy_estimate, \
    simulate_closed_loop, simulate_controlled, theta_delta_diagnostic, \
    theta_exponent


def _linear(m=2):
    return without_bilinear(build_torus_system(m, 1))


def test_exponential_step_matches_manual_recursion():
    # on the pure OU system the scheme is the exact transition applied
    # stepwise, so we can replay it outside the integrator bit for bit
    sys = _linear()
    n_paths, n_steps, T = 5, 12, 0.3
    ens = simulate_controlled(sys, zero_policy(), [1.1, -0.4], T,
                              IntegratorSpec(n_steps=n_steps),
                              np.random.default_rng(42), n_paths)
    tr = ou_transition(sys, T / n_steps)
    sigma = np.sqrt(tr.variance)
    xi = np.empty((n_paths, n_steps, sys.m))
    for i, child in enumerate(np.random.default_rng(42).spawn(n_paths)):
        xi[i] = child.standard_normal((n_steps, sys.m))
    X = np.broadcast_to(np.array([1.1, -0.4]), (n_paths, sys.m)).copy()
    assert np.array_equal(ens.states[:, 0], X)
    for n in range(n_steps):
        X = tr.mean_decay * X + sigma * xi[:, n]
        assert np.array_equal(ens.states[:, n + 1], X)
    assert np.all(ens.alive) and ens.n_clipped == 0


def test_euler_maruyama_matches_manual_recursion():
    sys = _linear()
    spec = IntegratorSpec(n_steps=10, scheme="euler_maruyama")
    ens = simulate_controlled(sys, zero_policy(), [0.8, 0.2], 0.25, spec,
                              np.random.default_rng(0), 3, noise=False)
    X = np.broadcast_to(np.array([0.8, 0.2]), (3, sys.m)).copy()
    for n in range(10):
        X = X + 0.025 * (-sys.lambdas * X)
        assert np.array_equal(ens.states[:, n + 1], X)


def test_paths_independent_of_batch_size():
    sys = _linear()
    spec = IntegratorSpec(n_steps=20)
    big = simulate_controlled(sys, zero_policy(), [1.0, 0.0], 0.5, spec,
                              np.random.default_rng(123), 4)
    small = simulate_controlled(sys, zero_policy(), [1.0, 0.0], 0.5, spec,
                                np.random.default_rng(123), 2)
    assert np.array_equal(big.states[:2], small.states)


def test_euler_maruyama_stiffness_guard():
    sys = _linear()   # max eigenvalue 4
    spec = IntegratorSpec(n_steps=1, scheme="euler_maruyama")
    with pytest.raises(ValueError, match="unstable"):
        simulate_controlled(sys, zero_policy(), [1.0, 0.0], 1.0, spec,
                            np.random.default_rng(0), 2)


def test_feedback_on_flat_value_equals_uncontrolled(sys1d_m2):
    cost = make_cost(sys1d_m2, {"kind": "constant", "value": 0.0},
                     {"kind": "constant", "value": 3.0})
    grid = GridSpec(halfwidths=np.array([2.8, 0.25]), points_per_axis=11)
    value = solve_hjb_grid(sys1d_m2, cost, 1.0, 0.5, grid)
    spec = IntegratorSpec(n_steps=25)
    fb = simulate_closed_loop(sys1d_m2, value, 1.0, [0.9, -0.3], 0.5, spec,
                              np.random.default_rng(11), 6)
    free = simulate_controlled(sys1d_m2, zero_policy(), [0.9, -0.3], 0.5,
                               spec, np.random.default_rng(11), 6)
    assert np.array_equal(fb.states, free.states)
    assert np.all(fb.controls == 0.0)
    assert fb.meta["policy"] == "feedback"
    # x0 starts outside the narrow second axis, so excursions must register
    assert fb.meta["n_excursions"] >= 6


def test_feedback_requires_covering_horizon(sys1d_m2):
    cost = make_cost(sys1d_m2, {"kind": "constant", "value": 0.0},
                     {"kind": "constant", "value": 0.0})
    grid = GridSpec(halfwidths=np.array([1.0, 0.2]), points_per_axis=5)
    value = solve_hjb_grid(sys1d_m2, cost, 1.0, 0.25, grid)
    with pytest.raises(ValueError, match="horizon"):
        simulate_closed_loop(sys1d_m2, value, 1.0, [0.1, 0.0], 0.5,
                             IntegratorSpec(n_steps=10),
                             np.random.default_rng(0), 2)


def test_noiseless_energy_decays(sys1d_m3):
    # the convection term conserves |X|^2, so without noise the coefficient
    # energy can only dissipate
    ens = simulate_controlled(sys1d_m3, zero_policy(), [1.5, 0.8, -0.4], 0.5,
                              IntegratorSpec(n_steps=200),
                              np.random.default_rng(5), 1, noise=False)
    sq = np.sum(ens.states[0] ** 2, axis=-1)
    assert np.all(np.diff(sq) <= 1e-12)


def test_blowup_paths_freeze_and_report(sys1d_m2):
    spec = IntegratorSpec(n_steps=5, blowup_threshold=1e-6)
    ens = simulate_controlled(sys1d_m2, constant_policy([1.0, 1.0]),
                              [1.5, 0.0], 0.1, spec,
                              np.random.default_rng(9), 4, saturation=None)
    assert ens.n_blowup == 4 and not np.any(ens.alive)
    assert np.all(ens.blowup_step == 1)
    # frozen at the last finite state (here the start), controls zeroed
    assert np.array_equal(ens.states,
                          np.broadcast_to([1.5, 0.0], ens.states.shape))
    assert np.all(ens.controls[:, 0] == 1.0)
    assert np.all(ens.controls[:, 1:] == 0.0)
    with pytest.raises(ValueError, match="no surviving paths"):
        energy_estimate(sys1d_m2, ens)


def test_saturation_projects_and_counts(sys1d_m2):
    n_paths, n_steps = 3, 8
    ens = simulate_controlled(sys1d_m2, constant_policy([10.0, 0.0]),
                              [0.5, 0.0], 0.2,
                              IntegratorSpec(n_steps=n_steps),
                              np.random.default_rng(2), n_paths,
                              saturation=1.0)
    assert ens.n_clipped == n_paths * (n_steps + 1)
    norms = np.linalg.norm(ens.controls, axis=-1)
    assert np.max(norms) <= 1.0 + 1e-9
    assert np.min(norms) > 0.999999


def test_energy_estimate_recomputes(sys1d_m2, rng):
    ens = simulate_controlled(sys1d_m2, zero_policy(), [1.2, 0.1], 0.4,
                              IntegratorSpec(n_steps=32), rng, 40)
    est = energy_estimate(sys1d_m2, ens)
    sq = np.sum(ens.states ** 2, axis=-1)
    sup = np.max(sq, axis=1)
    integ = np.trapezoid(np.sum(sys1d_m2.lambdas * ens.states ** 2, axis=-1),
                         ens.times, axis=1)
    rhs = 1.0 + (1.2 ** 2 + 0.1 ** 2) + sys1d_m2.trace_q
    assert est["E_sup_sq"] == pytest.approx(np.mean(sup), rel=1e-14)
    assert est["E_int_V"] == pytest.approx(np.mean(integ), rel=1e-14)
    assert est["bound_rhs"] == pytest.approx(rhs, rel=1e-14)
    assert est["c_empirical"] == pytest.approx(
        (np.mean(sup) + np.mean(integ)) / rhs, rel=1e-14)
    assert est["n_paths"] == 40 and est["n_excluded"] == 0
    assert est["final_sq_mean"] == pytest.approx(np.mean(sq[:, -1]),
                                                 rel=1e-14)


def test_save_stride_subsamples_same_trajectory(sys1d_m2):
    dense = simulate_controlled(sys1d_m2, zero_policy(), [1.0, 0.0], 0.5,
                                IntegratorSpec(n_steps=10),
                                np.random.default_rng(77), 2)
    sparse = simulate_controlled(sys1d_m2, zero_policy(), [1.0, 0.0], 0.5,
                                 IntegratorSpec(n_steps=10, save_stride=4),
                                 np.random.default_rng(77), 2)
    assert np.allclose(sparse.times, [0.0, 0.2, 0.4, 0.5])
    assert np.array_equal(sparse.states, dense.states[:, [0, 4, 8, 10]])


def test_theta_exponent_and_window(sys1d_m2, rng):
    assert theta_exponent(1.0) == 3.0
    with pytest.raises(ValueError, match="delta > 1/2"):
        theta_exponent(0.5)
    ens = simulate_controlled(sys1d_m2, zero_policy(), [1.0, 0.0], 0.25,
                              IntegratorSpec(n_steps=16), rng, 8)
    # defaults g = 0.5, gamma = 1.0 put the admissible window at (1/2, 3/2]
    for bad in (0.5, 1.6):
        with pytest.raises(ValueError, match="admissible range"):
            theta_delta_diagnostic(sys1d_m2, ens, bad)
    diag = theta_delta_diagnostic(sys1d_m2, ens, 1.0)
    lam = sys1d_m2.lambdas
    num = np.sum(lam ** 2.0 * ens.states ** 2, axis=-1)
    den = 1.0 + np.sum(lam * ens.states ** 2, axis=-1)
    integ = np.trapezoid(num / den ** 3, ens.times, axis=1)
    assert diag["theta"] == 3.0
    assert diag["estimate"] == pytest.approx(np.mean(integ), rel=1e-12)
    assert diag["n_paths"] == 8


def test_argument_validation(sys1d_m2, rng):
    with pytest.raises(ValueError, match="n_steps"):
        IntegratorSpec(n_steps=0)
    with pytest.raises(ValueError, match="unknown scheme"):
        IntegratorSpec(n_steps=4, scheme="milstein")
    with pytest.raises(ValueError, match="blowup_threshold"):
        IntegratorSpec(n_steps=4, blowup_threshold=0.0)
    with pytest.raises(ValueError, match="save_stride"):
        IntegratorSpec(n_steps=4, save_stride=0)
    spec = IntegratorSpec(n_steps=4)
    with pytest.raises(ValueError, match="horizon"):
        simulate_controlled(sys1d_m2, zero_policy(), [0.0, 0.0], 0.0, spec,
                            rng, 1)
    with pytest.raises(ValueError, match="n_paths"):
        simulate_controlled(sys1d_m2, zero_policy(), [0.0, 0.0], 1.0, spec,
                            rng, 0)
    with pytest.raises(ValueError, match="policy returned shape"):
        simulate_controlled(sys1d_m2, lambda t, X: X[:, :1], [0.0, 0.0],
                            1.0, spec, rng, 2)
