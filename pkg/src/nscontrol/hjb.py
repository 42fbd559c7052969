"""Explicit grid solver for the value function of the controlled flow.

The value function u(t, x) (t = time-to-go, u(0, .) = terminal cost) solves

    D_t u = 1/2 sum_k q_k u_{x_k x_k} + (A x + b(x), grad u)
            - F(B* grad u) + Phi(x),

marched forward on a symmetric box grid with an explicit monotone stencil:
central second differences for the diffusion, first-order upwinding in the
drift sign, central differences inside the saturated Hamiltonian F, source
Phi, and linear extrapolation of u along the outward axis at the faces
(vanishing second derivative there).  Under the reported time-step bound and
the recorded monotonicity conditions the march preserves the barrier
0 <= u <= sup|phi| + t sup|Phi| for bounded costs exactly.

Feedback synthesis reads the spatial gradient at time-to-go, so a policy at
wall-clock time t uses grad u(T - t, .); the reflection lives in the policy
adapter (see ``nscontrol.policies``), not here.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .galerkin import GalerkinSystem, ensure_field

__all__ = [
    "CostSpec",
    "GridSpec",
    "ValueGrid",
    "GradientField",
    "BoundsReport",
    "HJBNumericalError",
    "default_halfwidths",
    "solve_hjb_grid",
    "gradient",
    "assert_value_bounds",
    "value_at",
    "gradient_at",
    "refinement_deltas",
]

_STABILITY_SAFETY = 0.8


class HJBNumericalError(RuntimeError):
    """March produced a non-finite value; carries the offending node."""


@dataclass
class CostSpec:
    """Running/terminal cost pair with recorded sup norms.

    ``running`` and ``terminal`` must be vectorized: they accept arrays of
    shape (..., m) and return shape (...).  ``sup_running``/``sup_terminal``
    are the exact sup norms (inf for unbounded costs, which disables the
    barrier check).  ``descriptor`` is a JSON-able record of how the cost
    was built.
    """

    running: object
    terminal: object
    sup_running: float
    sup_terminal: float
    descriptor: dict = field(default_factory=dict)

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.sup_running) and math.isfinite(self.sup_terminal)


@dataclass(frozen=True)
class GridSpec:
    """Symmetric box grid [-L_k, L_k]^m with an odd number of nodes per axis.

    dt=None selects the largest stable step (with a safety factor) that
    divides the horizon exactly.  save_stride thins the stored time slices
    (first and last slice are always kept).
    """

    halfwidths: np.ndarray
    points_per_axis: int
    dt: float | None = None
    save_stride: int = 1

    def __post_init__(self):
        hw = np.atleast_1d(np.asarray(self.halfwidths, dtype=float))
        hw.setflags(write=False)
        object.__setattr__(self, "halfwidths", hw)
        if self.points_per_axis < 3 or self.points_per_axis % 2 == 0:
            raise ValueError("points_per_axis must be an odd integer >= 3 "
                             f"(got {self.points_per_axis})")
        if np.any(hw <= 0.0):
            raise ValueError("grid halfwidths must be positive")
        if self.dt is not None and self.dt <= 0.0:
            raise ValueError(f"dt must be positive (got {self.dt})")
        if self.save_stride < 1:
            raise ValueError("save_stride must be >= 1")

    def axes(self) -> tuple:
        n = self.points_per_axis
        return tuple(np.linspace(-L, L, n) for L in self.halfwidths)

    def spacings(self) -> np.ndarray:
        return self.halfwidths * 2.0 / (self.points_per_axis - 1)


def default_halfwidths(sys: GalerkinSystem, sigmas: float = 4.0) -> np.ndarray:
    """Box rule: per-mode halfwidth = sigmas stationary standard deviations."""
    var = sys.q_spectrum / (2.0 * sys.lambdas)
    if np.any(var <= 0.0):
        raise ValueError("stationary variance vanishes for some mode; "
                         "pass explicit halfwidths for degenerate noise")
    return sigmas * np.sqrt(var)


@dataclass
class ValueGrid:
    """Time-stacked value function on the box grid.

    values[n] is u(times[n], .) with shape ``grid shape``; meta records the
    discretization and monotonicity diagnostics.
    """

    times: np.ndarray
    axes: tuple
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.axes)

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def grid_shape(self) -> tuple:
        return tuple(len(ax) for ax in self.axes)


@dataclass
class GradientField:
    """Spatial gradient of a ValueGrid; values shape (nt, *grid, m)."""

    times: np.ndarray
    axes: tuple
    values: np.ndarray


@dataclass
class BoundsReport:
    applicable: bool
    ok: bool
    min_value: float
    min_node: tuple
    worst_upper_slack: float
    worst_node: tuple
    final_slack: float
    detail: str

    def __bool__(self) -> bool:
        return self.ok

    def to_dict(self) -> dict:
        return {
            "applicable": self.applicable, "ok": self.ok,
            "min_value": self.min_value,
            "min_node": list(self.min_node),
            "worst_upper_slack": self.worst_upper_slack,
            "worst_node": list(self.worst_node),
            "final_slack": self.final_slack,
            "detail": self.detail,
        }


# ---------------------------------------------------------------------------
# problem assembly shared by the grid march and the mild solver
# ---------------------------------------------------------------------------


@dataclass
class _GridProblem:
    axes: tuple
    shape: tuple
    spacings: np.ndarray
    nodes: np.ndarray        # (*shape, m) coordinates
    drift: np.ndarray        # (*shape, m) A x + b(x)
    conv: np.ndarray         # (*shape, m) b(x) alone
    phi: np.ndarray          # terminal cost on nodes
    run_cost: np.ndarray     # running cost on nodes
    b_weights: np.ndarray    # (m,) diagonal of B*
    dt: float
    n_steps: int
    dt_max: float
    monotone: dict


def _prepare(sys: GalerkinSystem, cost: CostSpec, saturation: float, T: float,
             grid: GridSpec, enforce_stability: bool = True) -> _GridProblem:
    if sys.m > 3:
        raise ValueError(f"grid solves support m <= 3 (m={sys.m})")
    if len(grid.halfwidths) != sys.m:
        raise ValueError("grid halfwidths must have one entry per mode")
    if T <= 0.0:
        raise ValueError(f"horizon must be positive (T={T})")
    saturation = float(saturation)
    if saturation <= 0.0:
        raise ValueError(f"saturation bound must be positive (R={saturation})")

    axes = grid.axes()
    shape = tuple(len(ax) for ax in axes)
    h = grid.spacings()
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack(mesh, axis=-1)
    flat = nodes.reshape(-1, sys.m)
    blin = sys.make_bilinear()
    conv = blin(flat, flat).reshape(nodes.shape)
    drift = conv - sys.lambdas * nodes

    phi = np.asarray(cost.terminal(nodes), dtype=float)
    run_cost = np.asarray(cost.running(nodes), dtype=float)
    if phi.shape != shape or run_cost.shape != shape:
        raise ValueError("cost callables must map (..., m) -> (...)")

    b_weights = sys.lambdas ** (-sys.hyp.gamma)

    drift_max = np.max(np.abs(drift.reshape(-1, sys.m)), axis=0)
    denom = float(np.sum(sys.q_spectrum / h**2) + np.sum(drift_max / h))
    dt_max = math.inf if denom == 0.0 else 1.0 / denom

    if grid.dt is None:
        target = min(_STABILITY_SAFETY * dt_max, T)
        n_steps = max(1, int(math.ceil(T / target)))
        dt = T / n_steps
    else:
        dt = float(grid.dt)
        n_steps = int(round(T / dt))
        if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
            raise ValueError(f"dt={dt} does not divide the horizon T={T}")
        if enforce_stability and dt > dt_max * (1.0 + 1e-12):
            raise ValueError(
                f"dt={dt} violates the explicit stability bound; the largest "
                f"admissible step for this grid is {dt_max:.6g}")

    # monotonicity diagnostics: the dt bound, the cell condition that keeps
    # the centrally-differenced Hamiltonian advection (speed <= R b_k)
    # dominated by the diffusion, and inflow-only drift at the faces
    peclet_ok = bool(np.all(sys.q_spectrum >= saturation * b_weights * h - 1e-15))
    faces_ok = True
    for k in range(sys.m):
        hi = [slice(None)] * sys.m
        lo = [slice(None)] * sys.m
        hi[k] = -1
        lo[k] = 0
        if np.any(drift[tuple(hi)][..., k] > 1e-12) or \
           np.any(drift[tuple(lo)][..., k] < -1e-12):
            faces_ok = False
    monotone = {
        "dt_ok": dt <= dt_max * (1.0 + 1e-12),
        "hamiltonian_cell_ok": peclet_ok,
        "face_inflow_ok": faces_ok,
    }
    monotone["all"] = all(monotone.values())

    return _GridProblem(axes=axes, shape=shape, spacings=h, nodes=nodes,
                        drift=drift, conv=conv, phi=phi, run_cost=run_cost,
                        b_weights=b_weights, dt=dt, n_steps=n_steps,
                        dt_max=dt_max, monotone=monotone)


def _saved_indices(n_steps: int, stride: int) -> list[int]:
    idx = list(range(0, n_steps + 1, stride))
    if idx[-1] != n_steps:
        idx.append(n_steps)
    return idx


def solve_hjb_grid(sys: GalerkinSystem, cost: CostSpec, saturation: float,
                   T: float, grid: GridSpec,
                   backend: str | None = None) -> ValueGrid:
    """March u(0, .) = terminal cost forward to u(T, .).

    Raises ValueError for an unstable or non-dividing dt (naming the largest
    admissible step) and HJBNumericalError if the march produces NaN/Inf.
    """
    prob = _prepare(sys, cost, saturation, T, grid)
    stepper = kernels.make_hjb_stepper(
        prob.shape, prob.spacings, sys.q_spectrum, prob.b_weights,
        float(saturation), prob.dt, prob.drift, prob.run_cost,
        backend=backend)

    keep = _saved_indices(prob.n_steps, grid.save_stride)
    keep_set = set(keep)
    stack = np.empty((len(keep),) + prob.shape)
    times = np.empty(len(keep))
    u = prob.phi.astype(float).copy()
    pos = 0
    if 0 in keep_set:
        stack[pos] = u
        times[pos] = 0.0
        pos += 1
    for n in range(1, prob.n_steps + 1):
        u = stepper(u)
        if not np.all(np.isfinite(u)):
            bad = np.unravel_index(int(np.argmin(np.isfinite(u))), prob.shape)
            raise HJBNumericalError(
                f"non-finite value at step {n} (t={n * prob.dt:.6g}), "
                f"node index {bad}")
        if n in keep_set:
            stack[pos] = u
            times[pos] = n * prob.dt
            pos += 1

    meta = {
        "method": "grid",
        "dt": prob.dt,
        "dt_max": prob.dt_max,
        "n_steps": prob.n_steps,
        "save_stride": grid.save_stride,
        "points_per_axis": grid.points_per_axis,
        "halfwidths": [float(v) for v in grid.halfwidths],
        "saturation": float(saturation),
        "cost": dict(cost.descriptor),
        "monotone": prob.monotone,
        "backend": backend or kernels.active_backend(),
    }
    return ValueGrid(times=times, axes=prob.axes, values=stack, meta=meta)


# ---------------------------------------------------------------------------
# gradient and interpolation
# ---------------------------------------------------------------------------


def _slice_gradient(u: np.ndarray, axes: tuple) -> np.ndarray:
    """Central differences inside, second-order one-sided at the faces."""
    m = len(axes)
    out = np.empty(u.shape + (m,))
    for k in range(m):
        h = axes[k][1] - axes[k][0]
        g = np.empty_like(u)
        src = np.moveaxis(u, k, 0)
        dst = np.moveaxis(g, k, 0)
        dst[1:-1] = (src[2:] - src[:-2]) / (2.0 * h)
        dst[0] = (-3.0 * src[0] + 4.0 * src[1] - src[2]) / (2.0 * h)
        dst[-1] = (3.0 * src[-1] - 4.0 * src[-2] + src[-3]) / (2.0 * h)
        out[..., k] = g
    return out


def gradient(value: ValueGrid) -> GradientField:
    """Spatial gradient of every stored slice."""
    grads = np.stack([_slice_gradient(sl, value.axes) for sl in value.values])
    return GradientField(times=value.times, axes=value.axes, values=grads)


def _interp_space(axes: tuple, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Multilinear interpolation, constant beyond the faces (clamped).

    arr has shape (*grid, ...trailing); pts has shape (n, m); the result has
    shape (n, ...trailing).
    """
    m = len(axes)
    pts = np.asarray(pts, dtype=float)
    idx = []
    frac = []
    for k in range(m):
        ax = axes[k]
        h = ax[1] - ax[0]
        xk = np.clip(pts[:, k], ax[0], ax[-1])
        ik = np.clip(((xk - ax[0]) / h).astype(np.int64), 0, len(ax) - 2)
        idx.append(ik)
        frac.append((xk - ax[ik]) / h)
    trailing = arr.shape[m:]
    out = np.zeros((len(pts),) + trailing)
    for corner in itertools.product((0, 1), repeat=m):
        w = np.ones(len(pts))
        sel = []
        for k, bit in enumerate(corner):
            w = w * (frac[k] if bit else (1.0 - frac[k]))
            sel.append(idx[k] + bit)
        vals = arr[tuple(sel)]
        out += w.reshape((-1,) + (1,) * len(trailing)) * vals
    return out


def _time_weights(times: np.ndarray, t: float):
    t = float(t)
    lo, hi = float(times[0]), float(times[-1])
    if t < lo - 1e-9 * (1.0 + abs(hi)) or t > hi + 1e-9 * (1.0 + abs(hi)):
        raise ValueError(f"time {t} outside the stored range [{lo}, {hi}]")
    t = min(max(t, lo), hi)
    i = int(np.searchsorted(times, t, side="right")) - 1
    i = min(max(i, 0), len(times) - 2) if len(times) > 1 else 0
    if len(times) == 1:
        return 0, 0, 1.0, 0.0
    w1 = (t - times[i]) / (times[i + 1] - times[i])
    return i, i + 1, 1.0 - w1, w1


def value_at(value: ValueGrid, t: float, x) -> float:
    """u(t, x) by linear interpolation in time and multilinear in space."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    i0, i1, w0, w1 = _time_weights(value.times, t)
    v = w0 * _interp_space(value.axes, value.values[i0], pts)
    if w1 != 0.0:
        v = v + w1 * _interp_space(value.axes, value.values[i1], pts)
    return float(v[0])


def gradient_at(grad: GradientField, t: float, x) -> np.ndarray:
    """grad u(t, .) at a batch of states (n, m) -> (n, m)."""
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    i0, i1, w0, w1 = _time_weights(grad.times, t)
    g = w0 * _interp_space(grad.axes, grad.values[i0], pts)
    if w1 != 0.0:
        g = g + w1 * _interp_space(grad.axes, grad.values[i1], pts)
    return g


# ---------------------------------------------------------------------------
# barrier check and refinement deltas
# ---------------------------------------------------------------------------


def assert_value_bounds(value: ValueGrid, cost: CostSpec) -> BoundsReport:
    """Check 0 <= u(t, .) <= sup|phi| + t sup|Phi| at every node, exactly.

    Comparisons are exact (no tolerance): the explicit scheme is monotone
    under the recorded flags, so the discrete barrier should hold to the
    last bit.  Reports the worst upper slack with its node and the slack on
    the final slice; not applicable (reported, not failed) for unbounded
    costs.
    """
    if not cost.bounded:
        return BoundsReport(applicable=False, ok=True, min_value=math.nan,
                            min_node=(), worst_upper_slack=math.nan,
                            worst_node=(), final_slack=math.nan,
                            detail="cost is unbounded; barrier not applicable")
    shape = value.grid_shape()
    flat_min = int(np.argmin(value.values))
    slice_min, node_min = divmod(flat_min, int(np.prod(shape)))
    min_val = float(value.values.reshape(len(value.times), -1)
                    [slice_min, node_min])
    min_node = (slice_min,) + tuple(np.unravel_index(node_min, shape))

    bound = cost.sup_terminal + value.times * cost.sup_running
    slice_max = value.values.reshape(len(value.times), -1)
    slacks = bound - slice_max.max(axis=1)
    worst_slice = int(np.argmin(slacks))
    worst = float(slacks[worst_slice])
    worst_node = (worst_slice,) + tuple(
        np.unravel_index(int(np.argmax(slice_max[worst_slice])), shape))
    ok = (min_val >= 0.0) and (worst >= 0.0)
    detail = (f"min u = {min_val:.6g} at {min_node}, worst upper slack = "
              f"{worst:.6g} at {worst_node}, monotone flags = "
              f"{value.meta.get('monotone')}")
    return BoundsReport(applicable=True, ok=ok, min_value=min_val,
                        min_node=min_node, worst_upper_slack=worst,
                        worst_node=worst_node,
                        final_slack=float(slacks[-1]), detail=detail)


def refinement_deltas(sys: GalerkinSystem, cost: CostSpec, saturation: float,
                      T: float, grid: GridSpec, x0,
                      base: ValueGrid | None = None) -> tuple[float, float]:
    """Discretization budget: |u_h - u_{h/2}| and |u_dt - u_{dt/2}| at x0."""
    x0 = ensure_field(sys, x0)
    if base is None:
        base = solve_hjb_grid(sys, cost, saturation, T, grid)
    u_base = value_at(base, T, x0)
    fine_space = GridSpec(halfwidths=grid.halfwidths,
                          points_per_axis=2 * grid.points_per_axis - 1,
                          dt=None, save_stride=grid.save_stride)
    u_h = value_at(solve_hjb_grid(sys, cost, saturation, T, fine_space), T, x0)
    dt_half = base.meta["dt"] / 2.0
    fine_time = GridSpec(halfwidths=grid.halfwidths,
                         points_per_axis=grid.points_per_axis,
                         dt=dt_half, save_stride=grid.save_stride)
    u_t = value_at(solve_hjb_grid(sys, cost, saturation, T, fine_time), T, x0)
    return abs(u_base - u_h), abs(u_base - u_t)
