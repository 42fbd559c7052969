"""Picard iteration on the mild (integral) form of the value equation.

With R_t the transition semigroup of the uncontrolled linear part
(independent per-mode OU factors), the value function satisfies

    u(t) = R_t phi + int_0^t R_{t-s} [ (b(.), grad u(s)) - F(B* grad u(s))
                                       + Phi ] ds,

and the fixed point is reached by iterating the right-hand side map from the
zero field (the first iterate is then the uncontrolled linear baseline
R_t phi + int R Phi).  The route shares no discretization machinery with the
explicit grid march except the node layout, which makes it an independent
check of the marched solution.

R_tau restricted to multilinear interpolants of grid values factorizes
exactly into a tensor product of per-axis transition matrices; each matrix
is built once per time lag with Gauss-Hermite quadrature against the clamped
piecewise-linear basis, so applying the semigroup costs one small matrix
product per axis instead of a full quadrature per node.
"""

from __future__ import annotations

import numpy as np

from .galerkin import GalerkinSystem
from .hamiltonian import saturated_value
from .hjb import CostSpec, GridSpec, ValueGrid, _prepare, _saved_indices, \
    _slice_gradient
from .ou import single_mode_transition

__all__ = ["PicardDivergenceError", "solve_hjb_mild", "axis_transition_matrix"]

_DIVERGENCE_FACTOR = 50.0


class PicardDivergenceError(RuntimeError):
    """Fixed-point residuals grew or left the finite range."""

    def __init__(self, message: str, residuals):
        super().__init__(message)
        self.residuals = list(residuals)


def axis_transition_matrix(ax: np.ndarray, lam: float, q: float, tau: float,
                           quad_order: int) -> np.ndarray:
    """One-axis semigroup matrix P with (P f)_i = E f_lin(decay x_i + noise).

    f_lin is the clamped linear interpolant on the axis nodes; the Gaussian
    expectation uses ``quad_order`` Hermite nodes.  Rows sum to one exactly
    (quadrature weights are normalized and the hat functions partition
    unity), so constants are preserved.
    """
    n = len(ax)
    if tau == 0.0:
        return np.eye(n)
    tr = single_mode_transition(lam, q, tau)
    h = ax[1] - ax[0]
    if tr.variance == 0.0:
        y = np.clip(tr.mean_decay * ax, ax[0], ax[-1])
        j = np.clip(((y - ax[0]) / h).astype(np.int64), 0, n - 2)
        frac = (y - ax[j]) / h
        P = np.zeros((n, n))
        rows = np.arange(n)
        np.add.at(P, (rows, j), 1.0 - frac)
        np.add.at(P, (rows, j + 1), frac)
        return P
    gh_x, gh_w = np.polynomial.hermite.hermgauss(quad_order)
    w = gh_w / np.sqrt(np.pi)
    y = tr.mean_decay * ax[:, None] + np.sqrt(2.0 * tr.variance) * gh_x[None, :]
    y = np.clip(y, ax[0], ax[-1])
    j = np.clip(((y - ax[0]) / h).astype(np.int64), 0, n - 2)
    frac = (y - ax[j]) / h
    P = np.zeros((n, n))
    rows = np.broadcast_to(np.arange(n)[:, None], y.shape)
    wts = np.broadcast_to(w[None, :], y.shape)
    np.add.at(P, (rows, j), wts * (1.0 - frac))
    np.add.at(P, (rows, j + 1), wts * frac)
    return P


def _lag_matrices(sys: GalerkinSystem, axes: tuple, dt: float, n_steps: int,
                  quad_order: int) -> list:
    """mats[d][k] propagates axis k over a lag of d time steps."""
    mats = []
    for d in range(n_steps + 1):
        mats.append([
            axis_transition_matrix(axes[k], float(sys.lambdas[k]),
                                   float(sys.q_spectrum[k]), d * dt,
                                   quad_order)
            for k in range(sys.m)
        ])
    return mats


def _apply_axes(mats: list, u: np.ndarray, offset: int = 0) -> np.ndarray:
    """Apply per-axis matrices to grid axes offset..offset+m-1 of u."""
    for k, P in enumerate(mats):
        ax = k + offset
        u = np.moveaxis(np.tensordot(P, np.moveaxis(u, ax, 0), axes=(1, 0)),
                        0, ax)
    return u


def solve_hjb_mild(sys: GalerkinSystem, cost: CostSpec, saturation: float,
                   T: float, grid: GridSpec, n_steps: int | None = None,
                   quad_order: int = 16, tol: float = 1e-9,
                   max_iter: int = 80) -> ValueGrid:
    """Solve the value equation by Picard iteration on the mild form.

    By default the time slices match what the explicit march would use on
    the same grid, so the two solutions compare node by node without time
    interpolation (the march's stability bound is not a constraint here,
    just a shared convention).  Raises PicardDivergenceError when the
    residuals grow, leave the finite range, or fail to reach tol within
    max_iter.
    """
    prob = _prepare(sys, cost, saturation, T, grid, enforce_stability=False)
    if n_steps is None:
        n_steps = prob.n_steps
    dt = T / n_steps

    mats = _lag_matrices(sys, prob.axes, dt, n_steps, quad_order)
    lin_phi = np.stack([_apply_axes(mats[d], prob.phi)
                        for d in range(n_steps + 1)])

    def picard_map(stack: np.ndarray) -> np.ndarray:
        grads = np.stack([_slice_gradient(sl, prob.axes) for sl in stack])
        weighted = grads * prob.b_weights
        g = (np.sum(prob.conv * grads, axis=-1)
             - saturated_value(weighted, saturation)
             + prob.run_cost)
        # trapezoid in lag-batched form: out[j] = dt * sum_l w_{l,j}
        # R_{(j-l) dt} g[l], weight 1/2 at l = 0 and l = j; batching over l
        # for each lag keeps the work in a few large tensor contractions
        acc = np.zeros_like(stack)
        for d in range(n_steps + 1):
            Gd = _apply_axes(mats[d], g[: n_steps + 1 - d], offset=1)
            acc[d:] += Gd
            acc[d] -= 0.5 * Gd[0]
            if d == 0:
                acc -= 0.5 * Gd
        return lin_phi + dt * acc

    stack = np.zeros((n_steps + 1,) + prob.shape)
    residuals = []
    converged = False
    for it in range(max_iter):
        new = picard_map(stack)
        res = float(np.max(np.abs(new - stack)))
        residuals.append(res)
        if not np.isfinite(res):
            raise PicardDivergenceError(
                f"non-finite residual at iteration {it}", residuals)
        if len(residuals) > 1 and res > _DIVERGENCE_FACTOR * residuals[0]:
            raise PicardDivergenceError(
                f"residual grew to {res:.3g} from initial "
                f"{residuals[0]:.3g}", residuals)
        stack = new
        if res <= tol:
            converged = True
            break
    if not converged:
        raise PicardDivergenceError(
            f"no convergence after {max_iter} iterations "
            f"(last residual {residuals[-1]:.3g}, tol {tol:.3g})", residuals)

    keep = _saved_indices(n_steps, grid.save_stride)
    times = np.array([i * dt for i in keep])
    values = stack[keep]
    meta = {
        "method": "mild",
        "dt": dt,
        "n_steps": n_steps,
        "quad_order": quad_order,
        "iterations": len(residuals),
        "residuals": residuals,
        "converged": converged,
        "tol": tol,
        "save_stride": grid.save_stride,
        "points_per_axis": grid.points_per_axis,
        "halfwidths": [float(v) for v in grid.halfwidths],
        "saturation": float(saturation),
        "cost": dict(cost.descriptor),
    }
    return ValueGrid(times=times, axes=prob.axes, values=values, meta=meta)
