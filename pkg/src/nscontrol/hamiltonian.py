"""Saturated quadratic Hamiltonian and the feedback map.

With controls constrained to the ball |z| <= R, minimizing the running
control cost |z|^2/2 against a linear term gives the saturated Legendre
transform

    F(p) = |p|^2 / 2          if |p| <= R,
           R |p| - R^2 / 2    otherwise,

which is C^1 across the seam |p| = R with gradient

    DF(p) = p                 if |p| <= R,
            R p / |p|         otherwise  (norm min(|p|, R) <= R).

The control operator is the diagonal smoothing (B z)_k = lambda_k^(-gamma) z_k
(self-adjoint, so B* = B), and the optimal feedback reads the value gradient:
z* = -DF(B* grad u).

All functions accept batched arrays (..., m) with the norm taken over the
last axis.
"""

from __future__ import annotations

import numpy as np

from .galerkin import GalerkinSystem

__all__ = [
    "saturated_value",
    "saturated_gradient",
    "control_weights",
    "apply_control_operator",
    "apply_control_adjoint",
    "feedback_control",
]


def _check_saturation(R: float) -> float:
    R = float(R)
    if not (np.isfinite(R) and R > 0.0):
        raise ValueError(f"saturation bound must be positive and finite (R={R})")
    return R


def saturated_value(p, R: float):
    """F(p); scalar for a single (m,) argument, array for batches."""
    R = _check_saturation(R)
    p = np.asarray(p, dtype=float)
    pn = np.linalg.norm(p, axis=-1)
    out = np.where(pn <= R, 0.5 * pn * pn, R * pn - 0.5 * R * R)
    return float(out) if out.ndim == 0 else out


def saturated_gradient(p, R: float):
    """DF(p), the radial clip of p onto the ball of radius R."""
    R = _check_saturation(R)
    p = np.asarray(p, dtype=float)
    pn = np.linalg.norm(p, axis=-1, keepdims=True)
    scale = np.where(pn <= R, 1.0, R / np.where(pn > 0.0, pn, 1.0))
    out = scale * p
    assert np.all(np.linalg.norm(out, axis=-1) <= R * (1.0 + 1e-12)), \
        "saturated gradient left the control ball"
    return out


def control_weights(sys: GalerkinSystem) -> np.ndarray:
    """Diagonal of B (= B*): lambda_k**(-gamma)."""
    return sys.lambdas ** (-sys.hyp.gamma)


def apply_control_operator(sys: GalerkinSystem, z):
    """B z (componentwise power-law smoothing)."""
    return control_weights(sys) * np.asarray(z, dtype=float)


def apply_control_adjoint(sys: GalerkinSystem, w):
    """B* w; B is self-adjoint so this equals apply_control_operator."""
    return control_weights(sys) * np.asarray(w, dtype=float)


def feedback_control(sys: GalerkinSystem, grad_u, R: float):
    """Optimal stationary feedback z* = -DF(B* grad_u); |z*| <= R always."""
    return -saturated_gradient(apply_control_adjoint(sys, grad_u), R)
