"""Path simulation for the controlled spectral dynamics.

State paths solve

    dX = (-Lambda X + b(X) + B z) dt + sqrt(Q) dW,

integrated with an exponential Euler step that treats the stiff diagonal
part exactly (it reduces to the exact OU transition when the nonlinear and
control terms vanish) or, as a cross-check, plain Euler-Maruyama.

Reproducibility contract: the Brownian draws of path i come from the i-th
spawned child of the caller's generator, so an ensemble is a deterministic
function of (seed, path index) regardless of batching, thread count, or the
order in which paths are advanced.  Stochastic policies hold their own
generator and are deterministic given their seed but may interleave draws
differently if the step schedule changes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .galerkin import GalerkinSystem, apply_fractional, ensure_field
from .hamiltonian import control_weights, feedback_control
from .hjb import ValueGrid, gradient, gradient_at
from .ou import ou_transition

__all__ = [
    "IntegratorSpec",
    "PathEnsemble",
    "simulate_controlled",
    "simulate_closed_loop",
    "energy_estimate",
    "theta_exponent",
    "theta_delta_diagnostic",
]

_PHI1_SERIES = 1e-4


@dataclass(frozen=True)
class IntegratorSpec:
    """Time discretization and guards for the path integrator."""

    n_steps: int
    scheme: str = "exponential_euler"
    blowup_threshold: float = 1e6
    save_stride: int = 1

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if self.scheme not in ("exponential_euler", "euler_maruyama"):
            raise ValueError(f"unknown scheme {self.scheme!r}; use "
                             "'exponential_euler' or 'euler_maruyama'")
        if self.blowup_threshold <= 0.0:
            raise ValueError("blowup_threshold must be positive")
        if self.save_stride < 1:
            raise ValueError("save_stride must be >= 1")


@dataclass
class PathEnsemble:
    """Stored slices of a batch of controlled paths.

    states/controls have shape (n_paths, n_saved, m); controls[i, j] is the
    policy output at times[j] (the last slice's control is recorded but not
    used by the integrator).  Paths whose sup norm crossed the blow-up
    threshold are frozen at their last finite state and flagged dead;
    blowup_step holds the offending step index (-1 for surviving paths).
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    alive: np.ndarray
    blowup_step: np.ndarray
    n_clipped: int
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_blowup(self) -> int:
        return int(np.sum(~self.alive))


def _phi1(lam: np.ndarray, dt: float) -> np.ndarray:
    # dt * phi1(-lam dt) = (1 - exp(-lam dt)) / lam; the direct formula loses
    # digits to cancellation for small arguments, where the series is exact
    arg = lam * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (1.0 - np.exp(-arg)) / lam
    series = dt * (1.0 - arg / 2.0 + arg**2 / 6.0 - arg**3 / 24.0)
    return np.where(arg < _PHI1_SERIES, series, out)


def simulate_controlled(sys: GalerkinSystem, policy, x0, T: float,
                        spec: IntegratorSpec, rng: np.random.Generator,
                        n_paths: int, saturation: float | None = None,
                        noise: bool = True) -> PathEnsemble:
    """Integrate n_paths controlled paths from x0 over [0, T].

    ``policy(t, X)`` maps a (n, m) state batch to a (n, m) control batch.
    When ``saturation`` is given, controls outside the closed ball of that
    radius are projected back onto it and the event is counted.
    """
    x0 = ensure_field(sys, x0)
    if T <= 0.0:
        raise ValueError(f"horizon must be positive (T={T})")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    dt = T / spec.n_steps
    lam = sys.lambdas
    if spec.scheme == "euler_maruyama" and dt * float(lam.max()) > 2.0:
        raise ValueError(
            f"Euler-Maruyama is unstable here: dt * max(lambda) = "
            f"{dt * float(lam.max()):.3g} > 2; shrink dt or use the "
            "exponential scheme")

    tr = ou_transition(sys, dt)
    sigma = np.sqrt(tr.variance) if spec.scheme == "exponential_euler" \
        else np.sqrt(sys.q_spectrum * dt)
    if not noise:
        sigma = np.zeros_like(sigma)
    phi1 = _phi1(lam, dt)
    bw = control_weights(sys)
    blin = sys.make_bilinear()

    # per-path noise from spawned child generators: independent of batching
    xi = np.empty((n_paths, spec.n_steps, sys.m))
    for i, child in enumerate(rng.spawn(n_paths)):
        xi[i] = child.standard_normal((spec.n_steps, sys.m))

    keep = list(range(0, spec.n_steps + 1, spec.save_stride))
    if keep[-1] != spec.n_steps:
        keep.append(spec.n_steps)
    keep_pos = {n: j for j, n in enumerate(keep)}
    n_saved = len(keep)

    X = np.broadcast_to(x0, (n_paths, sys.m)).copy()
    alive = np.ones(n_paths, dtype=bool)
    blow_step = np.full(n_paths, -1, dtype=np.int64)
    states = np.empty((n_paths, n_saved, sys.m))
    controls = np.empty((n_paths, n_saved, sys.m))
    n_clipped = 0

    def eval_policy(t: float, Xb: np.ndarray):
        nonlocal n_clipped
        Z = np.asarray(policy(t, Xb), dtype=float)
        if Z.shape != Xb.shape:
            raise ValueError(f"policy returned shape {Z.shape}, "
                             f"expected {Xb.shape}")
        if saturation is not None:
            nrm = np.linalg.norm(Z, axis=-1)
            over = nrm > saturation * (1.0 + 1e-9)
            if np.any(over):
                n_clipped += int(np.sum(over))
                Z = Z.copy()
                Z[over] *= (saturation / nrm[over])[:, None]
        return Z

    Z = eval_policy(0.0, X)
    if 0 in keep_pos:
        states[:, 0] = X
        controls[:, 0] = Z
    for n in range(spec.n_steps):
        drift_in = blin(X, X) + bw * Z
        if spec.scheme == "exponential_euler":
            X_new = tr.mean_decay * X + phi1 * drift_in + sigma * xi[:, n]
        else:
            X_new = X + dt * (-lam * X + drift_in) + sigma * xi[:, n]
        # freeze paths that left the admissible range this step
        bad = alive & (np.max(np.abs(X_new), axis=-1) > spec.blowup_threshold)
        bad |= alive & ~np.all(np.isfinite(X_new), axis=-1)
        if np.any(bad):
            blow_step[bad] = n + 1
            alive &= ~bad
        X = np.where(alive[:, None], X_new, X)
        t_next = (n + 1) * dt
        Z = eval_policy(t_next, X)
        Z = np.where(alive[:, None], Z, 0.0)
        j = keep_pos.get(n + 1)
        if j is not None:
            states[:, j] = X
            controls[:, j] = Z

    meta = {
        "scheme": spec.scheme,
        "dt": dt,
        "n_steps": spec.n_steps,
        "save_stride": spec.save_stride,
        "blowup_threshold": spec.blowup_threshold,
        "noise": noise,
        "x0": [float(v) for v in x0],
    }
    return PathEnsemble(times=np.array([k * dt for k in keep]),
                        states=states, controls=controls, alive=alive,
                        blowup_step=blow_step, n_clipped=n_clipped, meta=meta)


def simulate_closed_loop(sys: GalerkinSystem, value: ValueGrid,
                         saturation: float, x0, T: float,
                         spec: IntegratorSpec, rng: np.random.Generator,
                         n_paths: int) -> PathEnsemble:
    """Feedback run: z(t) = -DF(B* grad u(T - t, X(t))) read from the grid.

    States that wander outside the value box still get a control (the
    gradient extends constantly beyond the faces) but each such path-step is
    counted, so a polluted run is visible in meta['n_excursions'].
    """
    T = float(T)
    if value.horizon < T - 1e-12:
        raise ValueError(f"value function horizon {value.horizon} is shorter "
                         f"than the simulation horizon {T}")
    grad = gradient(value)
    lo = np.array([ax[0] for ax in value.axes])
    hi = np.array([ax[-1] for ax in value.axes])
    counter = {"excursions": 0}

    def policy(t, X):
        counter["excursions"] += int(np.sum(
            np.any((X < lo) | (X > hi), axis=-1)))
        tau = min(max(T - float(t), 0.0), value.horizon)
        return feedback_control(sys, gradient_at(grad, tau, X), saturation)

    ens = simulate_controlled(sys, policy, x0, T, spec, rng, n_paths,
                              saturation=saturation)
    ens.meta["n_excursions"] = counter["excursions"]
    ens.meta["policy"] = "feedback"
    return ens


# ---------------------------------------------------------------------------
# ensemble statistics
# ---------------------------------------------------------------------------


def _alive_states(ens: PathEnsemble) -> np.ndarray:
    if not np.any(ens.alive):
        raise ValueError("no surviving paths in the ensemble")
    return ens.states[ens.alive]


def energy_estimate(sys: GalerkinSystem, ens: PathEnsemble) -> dict:
    """A-priori energy moments: E sup|X|^2, E int ||X||^2 dt, and their ratio
    to the reference size 1 + |x0|^2 + Tr Q.

    |.| is the plain coefficient norm, ||.|| the enstrophy-weighted one
    (lambda^{1/2} scaling).  Blown-up paths are excluded and counted.
    """
    S = _alive_states(ens)
    sq_h = np.sum(S * S, axis=-1)                       # |X|^2
    sq_v = np.sum(sys.lambdas * S * S, axis=-1)         # ||X||^2
    sup = np.max(sq_h, axis=1)
    integ = np.trapezoid(sq_v, ens.times, axis=1)
    n = len(sup)
    x0 = np.asarray(ens.meta["x0"], dtype=float)
    bound_rhs = 1.0 + float(np.sum(x0 * x0)) + sys.trace_q
    sup_mean = float(np.mean(sup))
    int_mean = float(np.mean(integ))
    return {
        "n_paths": ens.n_paths,
        "n_excluded": ens.n_blowup,
        "E_sup_sq": sup_mean,
        "E_sup_sq_se": float(np.std(sup, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "E_int_V": int_mean,
        "E_int_V_se": float(np.std(integ, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "bound_rhs": bound_rhs,
        "c_empirical": (sup_mean + int_mean) / bound_rhs,
        "final_sq_mean": float(np.mean(sq_h[:, -1])),
    }


def theta_exponent(delta: float) -> float:
    if delta <= 0.5:
        raise ValueError(f"theta(delta) requires delta > 1/2 (got {delta})")
    return (2.0 * delta + 1.0) / (2.0 * delta - 1.0)


def theta_delta_diagnostic(sys: GalerkinSystem, ens: PathEnsemble,
                           delta: float) -> dict:
    """Weighted regularity functional whose mean stays bounded in m.

    Estimates E int_0^T |X|_{1+delta}^2 / (1 + |X|_delta^2)^theta dt with
    |x|_s the lambda^{s/2}-weighted norm and theta = (2 delta + 1) /
    (2 delta - 1); delta outside (1/2, min(1+g, 1+2 gamma)] is rejected.
    """
    upper = min(1.0 + sys.hyp.g, 1.0 + 2.0 * sys.hyp.gamma)
    if not 0.5 < delta <= upper:
        raise ValueError(f"delta={delta} outside the admissible range "
                         f"(1/2, {upper}]")
    theta = theta_exponent(delta)
    S = _alive_states(ens)
    num = np.sum(apply_fractional(sys, (1.0 + delta) / 2.0, S) ** 2, axis=-1)
    den = 1.0 + np.sum(apply_fractional(sys, delta / 2.0, S) ** 2, axis=-1)
    integ = np.trapezoid(num / den**theta, ens.times, axis=1)
    n = len(integ)
    return {
        "delta": delta,
        "theta": theta,
        "estimate": float(np.mean(integ)),
        "std_error": float(np.std(integ, ddof=1) / math.sqrt(n)) if n > 1 else 0.0,
        "n_paths": n,
    }
