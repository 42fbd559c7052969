"""Cost functionals, Monte Carlo objective estimates, and DP verification.

The objective being minimized is

    J(z) = E[ int_0^T ( Phi(X_t) + |z_t|^2 / 2 ) dt + phi(X_T) ],

whose quadratic control term is the convex conjugate pair of the saturated
Hamiltonian used by the value solvers; the verifier checks the dynamic
programming inequality J(z) >= J(z*) against that exact pairing, so a
mismatch between the two conventions shows up as a failed identity rather
than silently cancelling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .galerkin import GalerkinSystem, ensure_field
from .hjb import CostSpec, ValueGrid, value_at
from .policies import random_ball_policy, zero_policy
from .sde import IntegratorSpec, PathEnsemble, simulate_closed_loop, \
    simulate_controlled

__all__ = [
    "CostReport",
    "DPReport",
    "make_cost",
    "make_cost_component",
    "running_integrand",
    "estimate_cost",
    "compare_costs",
    "value_identity",
    "dp_verify",
]

_Z99 = 2.5758293035489004   # two-sided 99% normal quantile


@dataclass
class CostReport:
    """Monte Carlo estimate of J for one ensemble.

    The total is defined as the exact float sum of the three term estimates
    so the decomposition invariant holds to the last bit; the standard error
    comes from the per-path totals.
    """

    running_state: float
    running_control: float
    terminal: float
    std_error: float
    n_paths: int
    n_excluded: int
    descriptor: dict = field(default_factory=dict)

    @property
    def J_estimate(self) -> float:
        return self.running_state + self.running_control + self.terminal

    # kept as short aliases: the comparison code reads mean/se constantly
    @property
    def mean(self) -> float:
        return self.J_estimate

    @property
    def se(self) -> float:
        return self.std_error

    def to_dict(self) -> dict:
        return {
            "J_estimate": self.J_estimate,
            "std_error": self.std_error,
            "terms": {
                "running_state": self.running_state,
                "running_control": self.running_control,
                "terminal": self.terminal,
            },
            "n_paths": self.n_paths,
            "n_excluded": self.n_excluded,
            "descriptor": dict(self.descriptor),
        }


# ---------------------------------------------------------------------------
# cost construction
# ---------------------------------------------------------------------------


def _enstrophy(sys: GalerkinSystem, x: np.ndarray,
               active_modes: int | None) -> np.ndarray:
    w = sys.curl_weights
    if active_modes is not None:
        sq = x[..., :active_modes] ** 2
        return np.sum(w[:active_modes] * sq, axis=-1)
    return np.sum(w * x * x, axis=-1)


def make_cost_component(sys: GalerkinSystem, spec: dict):
    """Build one vectorized cost term from its JSON-able description.

    Returns (callable, sup_norm, normalized descriptor).  Kinds:

    - constant: {"kind": "constant", "value": c}
    - saturated_enstrophy: min(enstrophy, cap)
    - rational_enstrophy: enstrophy / (1 + enstrophy / cap)
    - quadratic: sum_k weight_k x_k^2 (unbounded; barrier checks are
      reported as not applicable)

    The enstrophy kinds accept "active_modes" to restrict the sum to the
    first few modes, which keeps the cost invariant under appending inert
    modes to the system.
    """
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"cost component must be a dict with 'kind': {spec!r}")
    kind = spec["kind"]
    known = {"constant", "saturated_enstrophy", "rational_enstrophy",
             "quadratic"}
    if kind not in known:
        raise ValueError(f"unknown cost kind {kind!r}; expected one of "
                         f"{sorted(known)}")
    extra = set(spec) - {"kind", "value", "cap", "weights", "active_modes"}
    if extra:
        raise ValueError(f"unknown cost fields {sorted(extra)} in {spec!r}")

    active = spec.get("active_modes")
    if active is not None:
        active = int(active)
        if not 1 <= active <= sys.m:
            raise ValueError(f"active_modes={active} outside 1..{sys.m}")

    if kind == "constant":
        c = float(spec["value"])
        if c < 0.0:
            raise ValueError("constant cost must be nonnegative")
        return (lambda x: np.full(np.asarray(x).shape[:-1], c),
                c, {"kind": kind, "value": c})

    if kind == "quadratic":
        w = np.asarray(spec["weights"], dtype=float)
        if w.shape != (sys.m,) or np.any(w < 0.0):
            raise ValueError("quadratic weights must be m nonnegative values")
        return (lambda x: np.sum(w * np.asarray(x) ** 2, axis=-1),
                math.inf, {"kind": kind, "weights": [float(v) for v in w]})

    cap = float(spec["cap"])
    if cap <= 0.0:
        raise ValueError("cap must be positive")
    desc = {"kind": kind, "cap": cap}
    if active is not None:
        desc["active_modes"] = active
    if kind == "saturated_enstrophy":
        return (lambda x: np.minimum(_enstrophy(sys, np.asarray(x), active), cap),
                cap, desc)
    def rational(x):
        e = _enstrophy(sys, np.asarray(x), active)
        return e / (1.0 + e / cap)
    return rational, cap, desc


def make_cost(sys: GalerkinSystem, running: dict, terminal: dict) -> CostSpec:
    """CostSpec from JSON-able running/terminal component descriptions."""
    run_fn, run_sup, run_desc = make_cost_component(sys, running)
    ter_fn, ter_sup, ter_desc = make_cost_component(sys, terminal)
    return CostSpec(running=run_fn, terminal=ter_fn, sup_running=run_sup,
                    sup_terminal=ter_sup,
                    descriptor={"running": run_desc, "terminal": ter_desc})


# ---------------------------------------------------------------------------
# Monte Carlo objective
# ---------------------------------------------------------------------------


def running_integrand(ens: PathEnsemble, cost: CostSpec) -> np.ndarray:
    """Instantaneous Phi(X_t) + |z_t|^2 / 2 on the stored slices, per path."""
    run = np.asarray(cost.running(ens.states), dtype=float)
    return run + 0.5 * np.sum(ens.controls ** 2, axis=-1)


def estimate_cost(ens: PathEnsemble, cost: CostSpec) -> CostReport:
    """J estimated by trapezoid in time over the stored slices.

    Blown-up paths are excluded (their count is reported); the estimate is
    conditional on survival, which the caller must treat as suspect whenever
    n_excluded > 0.
    """
    alive = ens.alive
    if not np.any(alive):
        raise ValueError("no surviving paths to estimate a cost on")
    S = ens.states[alive]
    Z = ens.controls[alive]
    run = np.asarray(cost.running(S), dtype=float)        # (n, nt)
    ctrl = 0.5 * np.sum(Z * Z, axis=-1)                   # (n, nt)
    run_int = np.trapezoid(run, ens.times, axis=1)
    ctrl_int = np.trapezoid(ctrl, ens.times, axis=1)
    term = np.asarray(cost.terminal(S[:, -1]), dtype=float)
    total = run_int + ctrl_int + term
    n = len(total)
    se = float(np.std(total, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if np.ptp(total) == 0.0:
        # a literally constant sample has zero spread; the mean-subtraction
        # route leaks ~ulp noise into it, which would turn an exact tie
        # between deterministic runs into a spurious "inconclusive"
        se = 0.0
    return CostReport(running_state=float(np.mean(run_int)),
                      running_control=float(np.mean(ctrl_int)),
                      terminal=float(np.mean(term)),
                      std_error=se, n_paths=n, n_excluded=ens.n_blowup,
                      descriptor=dict(cost.descriptor))


# ---------------------------------------------------------------------------
# dynamic programming checks
# ---------------------------------------------------------------------------


def compare_costs(star: CostReport, alt: CostReport, label: str = "") -> dict:
    """Test J(alt) >= J(star) at 99% confidence (Welch interval).

    verdict is "pass" when the lower CI edge of the difference is >= 0,
    "violated" when the upper edge is < 0, and "inconclusive" otherwise;
    there is no silent pass.  A degenerate exact tie (zero difference, zero
    spread) passes.
    """
    diff = alt.mean - star.mean
    se = math.sqrt(alt.se ** 2 + star.se ** 2)
    lo, hi = diff - _Z99 * se, diff + _Z99 * se
    if lo >= 0.0:
        verdict = "pass"
    elif hi < 0.0:
        verdict = "violated"
    else:
        verdict = "inconclusive"
    return {
        "label": label,
        "j_star": star.mean, "j_star_se": star.se,
        "j_alt": alt.mean, "j_alt_se": alt.se,
        "diff": diff, "diff_se": se, "ci_lo": lo, "ci_hi": hi,
        "verdict": verdict,
    }


def value_identity(u_at_start: float, star: CostReport,
                   eps_disc: float) -> dict:
    """|u(T, x0) - J(z*)| against the larger of 4 SE and the grid budget."""
    gap = abs(u_at_start - star.mean)
    tol = max(4.0 * star.se, eps_disc)
    return {
        "value": u_at_start, "j_star": star.mean, "j_star_se": star.se,
        "gap": gap, "tolerance": tol, "eps_disc": eps_disc,
        "ok": bool(gap <= tol),
    }


@dataclass
class DPReport:
    """Outcome of the dynamic-programming verification run."""

    u_value: float
    eps_disc: float
    star: CostReport
    comparisons: list
    identity: dict
    verdict: str
    counters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "u_value": self.u_value,
            "eps_disc": self.eps_disc,
            "j_star": self.star.to_dict(),
            "comparisons": list(self.comparisons),
            "identity": dict(self.identity),
            "verdict": self.verdict,
            "counters": dict(self.counters),
        }

    def table(self) -> str:
        rows = [f"{'policy':<22}{'J':>14}{'SE':>12}{'diff':>14}"
                f"{'ci_lo':>12}{'ci_hi':>12}  verdict"]
        rows.append(f"{'feedback (z*)':<22}{self.star.mean:>14.6g}"
                    f"{self.star.se:>12.3g}{'':>14}{'':>12}{'':>12}")
        for c in self.comparisons:
            rows.append(f"{c['label']:<22}{c['j_alt']:>14.6g}"
                        f"{c['j_alt_se']:>12.3g}{c['diff']:>14.6g}"
                        f"{c['ci_lo']:>12.3g}{c['ci_hi']:>12.3g}"
                        f"  {c['verdict']}")
        rows.append(f"identity |u - J*| = {self.identity['gap']:.3g} "
                    f"<= {self.identity['tolerance']:.3g}: "
                    f"{'ok' if self.identity['ok'] else 'FAILED'}")
        rows.append(f"overall: {self.verdict}")
        return "\n".join(rows)


def dp_verify(sys: GalerkinSystem, cost: CostSpec, value: ValueGrid,
              saturation: float, x0, integ: IntegratorSpec, n_paths: int,
              alternatives: list, rng: np.random.Generator,
              eps_disc: float) -> DPReport:
    """Empirical optimality test of the synthesized feedback.

    Simulates the closed loop and every alternative policy on independent
    noise, compares J(z*) against each J(alt) with 99% Welch intervals, and
    checks |u(T, x0) - J(z*)| <= max(4 SE, eps_disc).  ``alternatives`` is a
    list of (label, policy) pairs; a zero policy and an iid random
    admissible policy are always appended when absent, so the comparison set
    can never be trivially empty.  Overall verdict: "pass" only when every
    comparison passes and the identity holds; any violated comparison or
    failed identity gives "fail"; otherwise "inconclusive".
    """
    x0 = ensure_field(sys, x0)
    T = value.horizon
    alternatives = list(alternatives)
    labels = {lbl for lbl, _ in alternatives}
    if "zero" not in labels:
        alternatives.append(("zero", zero_policy()))
    if "random" not in labels:
        alternatives.append(
            ("random", random_ball_policy(saturation, rng.spawn(1)[0])))

    star_ens = simulate_closed_loop(sys, value, saturation, x0, T, integ,
                                    rng.spawn(1)[0], n_paths)
    star = estimate_cost(star_ens, cost)
    counters = {
        "star_clipped": star_ens.n_clipped,
        "star_excursions": star_ens.meta.get("n_excursions", 0),
        "star_excluded": star_ens.n_blowup,
    }

    comparisons = []
    for label, policy in alternatives:
        ens = simulate_controlled(sys, policy, x0, T, integ, rng.spawn(1)[0],
                                  n_paths, saturation=saturation)
        rep = estimate_cost(ens, cost)
        cmp_row = compare_costs(star, rep, label=label)
        cmp_row["n_excluded"] = ens.n_blowup
        cmp_row["n_clipped"] = ens.n_clipped
        comparisons.append(cmp_row)

    u_val = value_at(value, T, x0)
    ident = value_identity(u_val, star, eps_disc)

    verdicts = [c["verdict"] for c in comparisons]
    if any(v == "violated" for v in verdicts) or not ident["ok"]:
        verdict = "fail"
    elif all(v == "pass" for v in verdicts):
        verdict = "pass"
    else:
        verdict = "inconclusive"
    return DPReport(u_value=u_val, eps_disc=eps_disc, star=star,
                    comparisons=comparisons, identity=ident, verdict=verdict,
                    counters=counters)
