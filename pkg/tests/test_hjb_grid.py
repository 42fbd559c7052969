"""Explicit march: exact special cases, characteristics oracle, guards."""

import math
import re

import numpy as np
import pytest

from nscontrol.cost import make_cost
from nscontrol.galerkin import build_torus_system, with_q_spectrum, \
    without_bilinear
from nscontrol.hjb import (
    GridSpec,
    HJBNumericalError,
    ValueGrid,
    assert_value_bounds,
    default_halfwidths,
    gradient,
    gradient_at,
    refinement_deltas,
    solve_hjb_grid,
    value_at,
)

SAT = 1.0


def _const_cost(sys, run, term):
    return make_cost(sys, {"kind": "constant", "value": run},
                     {"kind": "constant", "value": term})


def test_constant_costs_give_affine_value(sys1d_m2):
    # flat slices have zero gradient, so diffusion, advection and the
    # Hamiltonian all drop out and each step adds exactly dt * Phi
    cost = _const_cost(sys1d_m2, 0.7, 2.0)
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=11)
    value = solve_hjb_grid(sys1d_m2, cost, SAT, 0.5, grid)
    for n, t in enumerate(value.times):
        assert np.max(np.abs(value.values[n] - (2.0 + 0.7 * t))) < 1e-12
    assert value.horizon == pytest.approx(0.5)
    # convection pushes mode 2 outward at its (small) box face here, so the
    # full monotone certificate needs the linear model
    lin = solve_hjb_grid(without_bilinear(sys1d_m2), cost, SAT, 0.5, grid)
    assert lin.meta["monotone"]["all"]


def test_constant_source_shift(sys1d_m2):
    # raising Phi by delta shifts every slice by t * delta: the scheme is
    # affine in the source and the extra constant has zero gradient
    delta = 0.5
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=41, dt=0.00125)
    base = make_cost(sys1d_m2, {"kind": "saturated_enstrophy", "cap": 4.0},
                     {"kind": "saturated_enstrophy", "cap": 4.0})
    run2 = lambda x: base.running(x) + delta
    shifted = type(base)(running=run2, terminal=base.terminal,
                         sup_running=base.sup_running + delta,
                         sup_terminal=base.sup_terminal)
    u1 = solve_hjb_grid(sys1d_m2, base, SAT, 0.25, grid)
    u2 = solve_hjb_grid(sys1d_m2, shifted, SAT, 0.25, grid)
    assert np.array_equal(u1.times, u2.times)
    for n, t in enumerate(u1.times):
        assert np.max(np.abs(u2.values[n] - u1.values[n] - t * delta)) < 1e-9


def _characteristics_setup():
    # one mode, no noise, no convection: u(t, x) = phi(x exp(-lambda t))
    # along the deterministic flow; the (tiny) saturation makes the
    # Hamiltonian term negligible rather than exactly zero
    sys = with_q_spectrum(without_bilinear(build_torus_system(1, 1)), 0.0)
    cost = make_cost(sys, {"kind": "constant", "value": 0.0},
                     {"kind": "rational_enstrophy", "cap": 10.0})
    phi = lambda x: x * x / (1.0 + x * x / 10.0)
    return sys, cost, phi


def test_characteristics_oracle_first_order():
    sys, cost, phi = _characteristics_setup()
    T = 0.5
    probes = np.array([0.5, -1.0, 1.5])
    exact = phi(probes * math.exp(-T))
    errs = {}
    for n in (101, 201, 401):
        grid = GridSpec(halfwidths=np.array([2.5]), points_per_axis=n)
        value = solve_hjb_grid(sys, cost, 1e-16, T, grid)
        got = np.array([value_at(value, T, [p]) for p in probes])
        errs[n] = float(np.max(np.abs(got - exact)))
    assert errs[401] < 5e-3
    # upwinding is first order: halving h should roughly halve the error
    assert 1.4 < errs[101] / errs[201] < 2.8
    assert 1.4 < errs[201] / errs[401] < 2.8


def test_refinement_deltas_shrink(sys1d_m2):
    cost = make_cost(sys1d_m2, {"kind": "saturated_enstrophy", "cap": 10.0},
                     {"kind": "saturated_enstrophy", "cap": 10.0})
    coarse = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                      points_per_axis=21)
    fine = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=41)
    x0 = np.array([1.0, 0.2])
    dh_c, dt_c = refinement_deltas(sys1d_m2, cost, SAT, 0.25, coarse, x0)
    dh_f, dt_f = refinement_deltas(sys1d_m2, cost, SAT, 0.25, fine, x0)
    assert dh_c > 0.0 and dh_f > 0.0
    assert dh_f < dh_c
    assert dt_f <= dt_c + 1e-12


def test_unstable_dt_names_the_bound(sys1d_m2):
    cost = _const_cost(sys1d_m2, 1.0, 1.0)
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=41)
    ref = solve_hjb_grid(sys1d_m2, cost, SAT, 0.25, grid)
    dt_max = ref.meta["dt_max"]
    bad = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                   points_per_axis=41, dt=0.25)
    assert 0.25 > dt_max
    with pytest.raises(ValueError, match="stability") as err:
        solve_hjb_grid(sys1d_m2, cost, SAT, 0.25, bad)
    quoted = float(re.search(r"admissible step .* is ([0-9.e+-]+)",
                             str(err.value)).group(1))
    assert quoted == pytest.approx(dt_max, rel=1e-4)


def test_non_dividing_dt_rejected(sys1d_m2):
    cost = _const_cost(sys1d_m2, 1.0, 1.0)
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=11, dt=0.017)
    with pytest.raises(ValueError, match="does not divide"):
        solve_hjb_grid(sys1d_m2, cost, SAT, 0.25, grid)


def test_overflow_aborts_with_location():
    sys = build_torus_system(1, 1)
    cost = make_cost(sys, {"kind": "constant", "value": 0.0},
                     {"kind": "quadratic", "weights": [1e308]})
    grid = GridSpec(halfwidths=np.array([2.0]), points_per_axis=11)
    with np.errstate(over="ignore"), \
            pytest.raises(HJBNumericalError, match=r"step 1 .*node index"):
        solve_hjb_grid(sys, cost, SAT, 0.25, grid)


def test_barrier_holds_exactly_for_bounded_costs(sys1d_m2):
    cost = make_cost(sys1d_m2, {"kind": "saturated_enstrophy", "cap": 10.0},
                     {"kind": "saturated_enstrophy", "cap": 10.0})
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=41)
    value = solve_hjb_grid(sys1d_m2, cost, SAT, 0.25, grid)
    report = assert_value_bounds(value, cost)
    assert report.applicable and report.ok and bool(report)
    assert report.min_value >= 0.0
    assert report.worst_upper_slack >= 0.0
    doc = report.to_dict()
    assert doc["ok"] and isinstance(doc["min_node"], list)


def test_barrier_not_applicable_for_unbounded_cost(sys1d_m2):
    cost = make_cost(sys1d_m2, {"kind": "quadratic", "weights": [1.0, 1.0]},
                     {"kind": "quadratic", "weights": [1.0, 1.0]})
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=21)
    value = solve_hjb_grid(sys1d_m2, cost, 100.0, 0.1, grid)
    report = assert_value_bounds(value, cost)
    assert not report.applicable
    assert report.ok     # reported, not failed


def test_save_stride_keeps_ends(sys1d_m2):
    cost = _const_cost(sys1d_m2, 1.0, 1.0)
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=11, save_stride=7)
    value = solve_hjb_grid(sys1d_m2, cost, SAT, 0.25, grid)
    assert value.times[0] == 0.0
    assert value.times[-1] == pytest.approx(0.25)
    assert len(value.times) < value.meta["n_steps"] + 1
    assert np.all(np.diff(value.times) > 0.0)


def test_interpolation_exact_for_synthetic_grids():
    ax = np.linspace(-2.0, 2.0, 9)
    times = np.array([0.0, 1.0])
    # u(t, x) = (1 + t) x: multilinear interpolation reproduces it exactly
    vals = np.stack([ax.copy(), 2.0 * ax])
    vg = ValueGrid(times=times, axes=(ax,), values=vals)
    assert value_at(vg, 0.5, [0.3]) == pytest.approx(1.5 * 0.3, rel=1e-14)
    # beyond the faces the interpolant clamps to the face value
    assert value_at(vg, 0.0, [5.0]) == pytest.approx(2.0)
    assert value_at(vg, 0.0, [-5.0]) == pytest.approx(-2.0)
    with pytest.raises(ValueError, match="outside the stored range"):
        value_at(vg, 2.0, [0.0])

    vg2 = ValueGrid(times=np.array([0.0]), axes=(ax,),
                    values=(ax * ax)[None, :])
    g = gradient(vg2)
    # central interior and one-sided faces are exact for quadratics
    pts = np.array([[-2.0], [-1.3], [0.0], [0.55], [2.0]])
    assert np.allclose(gradient_at(g, 0.0, pts)[:, 0], 2.0 * pts[:, 0],
                       rtol=1e-12, atol=1e-12)


def test_prepare_rejections(sys1d_m2):
    cost = _const_cost(sys1d_m2, 1.0, 1.0)
    hw = default_halfwidths(sys1d_m2)
    with pytest.raises(ValueError, match="m <= 3"):
        solve_hjb_grid(build_torus_system(4, 1), cost, SAT, 0.1,
                       GridSpec(halfwidths=np.ones(4), points_per_axis=5))
    with pytest.raises(ValueError, match="one entry per mode"):
        solve_hjb_grid(sys1d_m2, cost, SAT, 0.1,
                       GridSpec(halfwidths=np.ones(3), points_per_axis=5))
    with pytest.raises(ValueError, match="horizon"):
        solve_hjb_grid(sys1d_m2, cost, SAT, 0.0,
                       GridSpec(halfwidths=hw, points_per_axis=5))
    with pytest.raises(ValueError, match="saturation"):
        solve_hjb_grid(sys1d_m2, cost, 0.0, 0.1,
                       GridSpec(halfwidths=hw, points_per_axis=5))
    with pytest.raises(ValueError):
        GridSpec(halfwidths=hw, points_per_axis=10)    # even
    with pytest.raises(ValueError):
        GridSpec(halfwidths=hw, points_per_axis=1)


def test_default_halfwidths_box_rule(sys1d_m2):
    hw = default_halfwidths(sys1d_m2, sigmas=4.0)
    expect = 4.0 * np.sqrt(sys1d_m2.q_spectrum / (2.0 * sys1d_m2.lambdas))
    assert np.allclose(hw, expect, rtol=1e-15)
    with pytest.raises(ValueError, match="halfwidths"):
        default_halfwidths(with_q_spectrum(sys1d_m2, 0.0))


def test_meta_records_discretization(sys1d_m2):
    cost = _const_cost(sys1d_m2, 1.0, 1.0)
    grid = GridSpec(halfwidths=default_halfwidths(sys1d_m2),
                    points_per_axis=11)
    value = solve_hjb_grid(sys1d_m2, cost, SAT, 0.25, grid)
    meta = value.meta
    assert meta["method"] == "grid"
    assert meta["dt"] <= meta["dt_max"]
    assert meta["n_steps"] * meta["dt"] == pytest.approx(0.25)
    assert meta["points_per_axis"] == 11
    assert set(meta["monotone"]) == {"dt_ok", "hamiltonian_cell_ok",
                                     "face_inflow_ok", "all"}
