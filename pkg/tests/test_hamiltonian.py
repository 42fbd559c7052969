"""Saturated Legendre transform: seam, gradient, brute-force oracle."""

import math

import numpy as np
import pytest

from nscontrol.hamiltonian import (
    apply_control_adjoint,
    apply_control_operator,
    control_weights,
    feedback_control,
    saturated_gradient,
    saturated_value,
)

R = 1.3


def test_values_on_both_branches():
    p = np.array([0.3, -0.4])           # |p| = 0.5 <= R
    assert saturated_value(p, R) == pytest.approx(0.125, abs=1e-15)
    p = np.array([3.0, 4.0])            # |p| = 5 > R
    assert saturated_value(p, R) == pytest.approx(5.0 * R - 0.5 * R * R,
                                                  abs=1e-14)


def test_seam_is_continuous_and_c1():
    # at |p| = R both value branches give R^2/2 and both gradient branches
    # give p itself; crossing the seam changes nothing to rounding
    u = np.array([0.6, 0.8])
    p = R * u
    assert saturated_value(p, R) == pytest.approx(0.5 * R * R, rel=1e-15)
    assert np.allclose(saturated_gradient(p, R), p, rtol=1e-15)
    for shift in (1.0 - 1e-12, 1.0 + 1e-12):
        q = shift * p
        assert abs(saturated_value(q, R) - 0.5 * R * R) < 1e-11
        assert np.max(np.abs(saturated_gradient(q, R) - p)) < 1e-11


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(42)
    h = 1e-6
    checked = 0
    while checked < 200:
        p = rng.uniform(-3.0, 3.0, size=3)
        if abs(np.linalg.norm(p) - R) < 1e-3:
            continue        # C^1 but not C^2 at the seam; skip the kink
        g = saturated_gradient(p, R)
        num = np.empty(3)
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            num[k] = (saturated_value(p + e, R)
                      - saturated_value(p - e, R)) / (2.0 * h)
        assert np.max(np.abs(num - g)) < 1e-6
        checked += 1


def test_legendre_transform_brute_force():
    # F(p) = max over the control ball of (-p.z - |z|^2/2); scan a dense
    # grid of interior points plus the boundary circle
    xs = np.arange(-R, R + 1e-12, 0.01)
    ZX, ZY = np.meshgrid(xs, xs)
    inside = ZX**2 + ZY**2 <= R * R
    Z_in = np.stack([ZX[inside], ZY[inside]], axis=-1)
    th = np.linspace(0.0, 2.0 * math.pi, 20_000, endpoint=False)
    Z_bd = R * np.stack([np.cos(th), np.sin(th)], axis=-1)
    Z = np.concatenate([Z_in, Z_bd])
    zsq = 0.5 * np.sum(Z * Z, axis=-1)
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = rng.uniform(-4.0, 4.0, size=2)
        brute = float(np.max(-Z @ p - zsq))
        F = saturated_value(p, R)
        assert brute <= F + 1e-12          # subset of the ball, so no more
        assert F - brute < 5e-5 * (1.0 + F)
        # and the arg max is the clipped gradient with flipped sign
        z_star = -saturated_gradient(p, R)
        attained = float(-np.dot(p, z_star) - 0.5 * np.dot(z_star, z_star))
        assert attained == pytest.approx(F, rel=1e-12, abs=1e-12)


def test_gradient_stays_in_ball_and_is_radial_clip():
    rng = np.random.default_rng(8)
    P = rng.uniform(-5.0, 5.0, size=(1000, 4))
    G = saturated_gradient(P, R)
    norms = np.linalg.norm(G, axis=-1)
    assert np.all(norms <= R * (1.0 + 1e-12))
    small = np.linalg.norm(P, axis=-1) <= R
    assert np.allclose(G[small], P[small])
    big = ~small
    expected = R * P[big] / np.linalg.norm(P[big], axis=-1, keepdims=True)
    assert np.allclose(G[big], expected, rtol=1e-13)


def test_value_is_convex_along_segments():
    rng = np.random.default_rng(12)
    for _ in range(200):
        a = rng.uniform(-4.0, 4.0, size=3)
        b = rng.uniform(-4.0, 4.0, size=3)
        mid = saturated_value(0.5 * (a + b), R)
        avg = 0.5 * (saturated_value(a, R) + saturated_value(b, R))
        assert mid <= avg + 1e-12


def test_batched_shapes():
    P = np.zeros((4, 5, 3))
    assert saturated_value(P, R).shape == (4, 5)
    assert saturated_gradient(P, R).shape == (4, 5, 3)
    assert isinstance(saturated_value(np.zeros(3), R), float)


def test_saturation_validation():
    with pytest.raises(ValueError):
        saturated_value(np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        saturated_gradient(np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        saturated_value(np.zeros(2), math.inf)


def test_control_operator_and_feedback(sys1d_m3):
    lam, gamma = sys1d_m3.lambdas, sys1d_m3.hyp.gamma
    w = control_weights(sys1d_m3)
    assert np.allclose(w, lam**-gamma, rtol=1e-15)
    z = np.array([1.0, -2.0, 3.0])
    assert np.allclose(apply_control_operator(sys1d_m3, z), w * z)
    # B is diagonal, hence self-adjoint
    assert np.array_equal(apply_control_adjoint(sys1d_m3, z),
                          apply_control_operator(sys1d_m3, z))
    g = np.array([0.01, 0.02, -0.01])   # small gradient: no clipping
    fb = feedback_control(sys1d_m3, g, R)
    assert np.allclose(fb, -w * g, rtol=1e-14)
    big = np.array([100.0, 0.0, 0.0])
    fb_big = feedback_control(sys1d_m3, big, R)
    assert np.linalg.norm(fb_big) == pytest.approx(R, rel=1e-12)
    assert fb_big[0] < 0.0
