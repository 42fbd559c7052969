"""Control policies as (t, state batch) -> control batch callables.

All policies map a (n, m) array of states at wall-clock time t to a (n, m)
array of controls.  The optimal feedback reads the value function in
time-to-go coordinates: at wall-clock t it evaluates the gradient of
u(T - t, .), saturates it, and flips the sign.
"""

from __future__ import annotations

import numpy as np

from .galerkin import GalerkinSystem
from .hamiltonian import feedback_control
from .hjb import GradientField, ValueGrid, gradient, gradient_at

__all__ = [
    "zero_policy",
    "constant_policy",
    "random_ball_policy",
    "perturbed_policy",
    "feedback_policy",
]


def zero_policy():
    """No control."""
    def policy(t, X):
        return np.zeros_like(X)
    return policy


def constant_policy(z) -> object:
    """The same control vector at every time and state."""
    z = np.asarray(z, dtype=float)

    def policy(t, X):
        return np.broadcast_to(z, X.shape).copy()
    return policy


def _ball_draws(rng: np.random.Generator, n: int, m: int,
                radius: float) -> np.ndarray:
    d = rng.standard_normal((n, m))
    nrm = np.linalg.norm(d, axis=-1, keepdims=True)
    nrm[nrm == 0.0] = 1.0
    r = radius * rng.random(n) ** (1.0 / m)
    return d / nrm * r[:, None]


def random_ball_policy(radius: float, rng: np.random.Generator):
    """Fresh uniform draws from the closed control ball at every call.

    Owns its generator: deterministic given the seed, but the draw sequence
    follows the call schedule (unlike the path noise, which is per-path).
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")

    def policy(t, X):
        return _ball_draws(rng, X.shape[0], X.shape[1], radius)
    return policy


def perturbed_policy(base, delta: float, rng: np.random.Generator):
    """Base policy plus a uniform ball perturbation of radius delta."""
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")

    def policy(t, X):
        return np.asarray(base(t, X), dtype=float) + \
            _ball_draws(rng, X.shape[0], X.shape[1], delta)
    return policy


def feedback_policy(sys: GalerkinSystem, value, saturation: float):
    """Optimal synthesis from a solved value function.

    Accepts a ValueGrid (gradient computed once here) or a precomputed
    GradientField.  Times outside the stored range are clamped, and states
    outside the grid box use the face gradient (constant extension), so the
    policy is defined everywhere.
    """
    if isinstance(value, ValueGrid):
        grad = gradient(value)
    elif isinstance(value, GradientField):
        grad = value
    else:
        raise TypeError("value must be a ValueGrid or GradientField")
    horizon = float(grad.times[-1])

    def policy(t, X):
        tau = min(max(horizon - float(t), 0.0), horizon)
        g = gradient_at(grad, tau, X)
        return feedback_control(sys, g, saturation)
    return policy
