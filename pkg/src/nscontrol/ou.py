"""Exact transitions and semigroup quadrature for the linearized dynamics.

With the convective term off, each mode is an independent scalar
Ornstein-Uhlenbeck process

    dZ_k = -lambda_k Z_k dt + sqrt(q_k) dW_k,

whose transition over a gap t is Gaussian with mean ``exp(-lambda_k t) x_k``
and variance ``q_k (1 - exp(-2 lambda_k t)) / (2 lambda_k)``.  Sampling uses
these closed forms, so there is no time-discretization error anywhere in
this module.  ``apply_R`` evaluates the transition semigroup
``(R_t f)(x) = E[f(Z(t, x))]`` either by Monte Carlo or, for m <= 3, by
tensorized Gauss-Hermite quadrature.
"""

from __future__ import annotations

import collections
import math
from dataclasses import dataclass

import numpy as np

from .galerkin import GalerkinSystem, ensure_field

__all__ = [
    "OUTransition",
    "ModeTransition",
    "ou_transition",
    "single_mode_transition",
    "sample_ou",
    "stochastic_convolution_path",
    "apply_R",
    "gauss_hermite_rule",
]

ModeTransition = collections.namedtuple("ModeTransition",
                                        ["mean_decay", "variance"])

# below this value of lambda*t the exact variance formula loses all digits
# to cancellation; the series limit q*t is correct to machine precision there
_SMALL_ARG = 1e-8


@dataclass(frozen=True)
class OUTransition:
    """Per-mode Gaussian transition over a fixed time gap."""

    t: float
    mean_decay: np.ndarray   # (m,) exp(-lambda_k t)
    variance: np.ndarray     # (m,) q_k (1 - exp(-2 lambda_k t)) / (2 lambda_k)

    def __post_init__(self):
        if self.t < 0.0:
            raise ValueError(f"transition time must be nonnegative (t={self.t})")
        if np.any(self.variance < 0.0):
            raise ValueError("transition variance must be nonnegative")


def ou_transition(sys: GalerkinSystem, t: float) -> OUTransition:
    """Closed-form transition parameters for a gap of length t >= 0."""
    if t < 0.0:
        raise ValueError(f"transition time must be nonnegative (t={t})")
    lam = sys.lambdas
    arg = lam * t
    decay = np.exp(-arg)
    small = arg < _SMALL_ARG
    with np.errstate(divide="ignore", invalid="ignore"):
        var = sys.q_spectrum * (1.0 - np.exp(-2.0 * arg)) / (2.0 * lam)
    var = np.where(small, sys.q_spectrum * t, var)
    return OUTransition(t=float(t), mean_decay=decay, variance=var)


def single_mode_transition(lam: float, q: float, t: float) -> ModeTransition:
    """Scalar one-mode transition parameters (same branches as ou_transition)."""
    if t < 0.0:
        raise ValueError(f"transition time must be nonnegative (t={t})")
    arg = lam * t
    if arg < _SMALL_ARG:
        return ModeTransition(math.exp(-arg), q * t)
    return ModeTransition(math.exp(-arg),
                          q * (1.0 - math.exp(-2.0 * arg)) / (2.0 * lam))


def sample_ou(sys: GalerkinSystem, x, t: float, rng: np.random.Generator,
              noise: bool = True) -> np.ndarray:
    """One exact draw of Z(t) started from x (noise=False gives the mean)."""
    x = ensure_field(sys, x)
    tr = ou_transition(sys, t)
    mean = tr.mean_decay * x
    if not noise:
        return mean
    return mean + np.sqrt(tr.variance) * rng.standard_normal(sys.m)


def stochastic_convolution_path(sys: GalerkinSystem, time_grid,
                                rng: np.random.Generator,
                                noise: bool = True) -> np.ndarray:
    """Sample the stochastic convolution on a time grid starting at 0.

    Uses the Markov decomposition: each increment is an exact OU transition
    conditioned on the previous point, so the marginals are exact for any
    grid spacing.
    """
    t = np.asarray(time_grid, dtype=float)
    if t.ndim != 1 or len(t) < 1:
        raise ValueError("time_grid must be a 1-d array")
    if t[0] != 0.0:
        raise ValueError(f"time_grid must start at 0 (got {t[0]})")
    if len(t) > 1 and np.any(np.diff(t) <= 0.0):
        raise ValueError("time_grid must be strictly increasing")
    out = np.zeros((len(t), sys.m))
    for n in range(1, len(t)):
        tr = ou_transition(sys, t[n] - t[n - 1])
        out[n] = tr.mean_decay * out[n - 1]
        if noise:
            out[n] += np.sqrt(tr.variance) * rng.standard_normal(sys.m)
    return out


def gauss_hermite_rule(order: int, m: int):
    """Tensorized probabilist nodes/weights: E[f(xi)] ~ sum w_i f(node_i)
    for xi ~ N(0, I_m).  Returns nodes (order**m, m) and weights summing
    to 1 (up to rounding)."""
    if order < 1:
        raise ValueError(f"quadrature order must be >= 1 (got {order})")
    x, w = np.polynomial.hermite.hermgauss(order)
    nodes_1d = math.sqrt(2.0) * x
    weights_1d = w / math.sqrt(math.pi)
    grids = np.meshgrid(*([nodes_1d] * m), indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in grids], axis=-1)
    wgrids = np.meshgrid(*([weights_1d] * m), indexing="ij")
    weights = np.ones(order**m)
    for g in wgrids:
        weights = weights * g.reshape(-1)
    return nodes, weights


def apply_R(sys: GalerkinSystem, test_fn, t: float, x, n_samples: int = 0,
            rng: np.random.Generator | None = None, method: str = "mc",
            quad_order: int = 16, vectorized: bool = False):
    """Evaluate (R_t f)(x) = E[f(Z(t, x))] with a standard error estimate.

    method="mc" draws ``n_samples`` exact transitions and returns
    (mean, std_error).  method="quadrature" (m <= 3 only) evaluates the
    Gaussian expectation by tensorized Gauss-Hermite quadrature of the given
    order and reports std_error 0.  With ``vectorized=True`` the test
    function must accept an (n, m) batch and return (n,) values.
    """
    x = ensure_field(sys, x)
    tr = ou_transition(sys, t)
    sig = np.sqrt(tr.variance)
    mean = tr.mean_decay * x

    def evaluate(points: np.ndarray) -> np.ndarray:
        if vectorized:
            return np.asarray(test_fn(points), dtype=float)
        return np.array([float(test_fn(p)) for p in points])

    if method == "quadrature":
        if sys.m > 3:
            raise ValueError("quadrature mode is limited to m <= 3 "
                             f"(m={sys.m}); use method='mc'")
        nodes, weights = gauss_hermite_rule(quad_order, sys.m)
        vals = evaluate(mean + sig * nodes)
        return float(np.dot(weights, vals)), 0.0
    if method != "mc":
        raise ValueError(f"unknown method {method!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1 for Monte Carlo evaluation")
    if rng is None:
        raise ValueError("Monte Carlo evaluation needs an rng")
    draws = mean + sig * rng.standard_normal((n_samples, sys.m))
    vals = evaluate(draws)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else math.inf
    return est, se
