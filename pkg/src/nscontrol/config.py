"""Experiment configuration: strict schema, defaults, fingerprinting.

A config is one JSON file with nested blocks (system / control / cost /
solver / simulation / experiment).  Validation is strict both ways: unknown
keys anywhere are rejected (no silent defaults for misspelled fields) and
every violation is collected before raising, so a bad file reports all its
problems at once.  The fingerprint is the SHA-256 of the fully resolved
config (defaults filled in, CLI overrides applied); every artifact embeds
it, which is what makes runs comparable.
"""

from __future__ import annotations

import hashlib
import json
import math

import numpy as np

from .cost import make_cost
from .galerkin import GalerkinSystem, HypothesisParams, build_torus_system, \
    validate_hypotheses, without_bilinear
from .hjb import CostSpec, GridSpec, default_halfwidths
from .sde import IntegratorSpec

__all__ = [
    "ConfigError",
    "load_config",
    "resolve_config",
    "fingerprint",
    "build_system",
    "hypothesis_gate",
    "build_cost",
    "build_grid",
    "mild_grid",
    "build_integrator",
    "sde_steps",
]


class ConfigError(ValueError):
    """Invalid configuration; collects every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  - " + "\n  - ".join(self.problems))


_SCHEMES = ("exponential_euler", "euler_maruyama")

_DEFAULTS = {
    "system": {"bilinear": True, "enforce_hypotheses": True},
    "solver": {"methods": ["grid"], "halfwidths": None, "box_sigmas": 4.0,
               "dt": None, "save_stride": 1, "picard_tol": 1e-9,
               "picard_max_iter": 80, "quad_order": 16, "mild_steps": None,
               "mild_points": None, "killing_rate": None},
    "simulation": {"blowup_threshold": 1e6},
    "experiment": {"probes": None, "fk_paths": 4000, "fk_steps": None,
                   "alternatives": [{"kind": "zero"}, {"kind": "random"}],
                   "m_list": None},
}

_REQUIRED = {
    "system": ("m", "space_dim", "r", "g", "gamma"),
    "control": ("saturation",),
    "cost": ("running", "terminal"),
    "solver": ("horizon", "grid_points"),
    "simulation": ("scheme", "dt", "n_paths", "seed", "x0"),
    "experiment": (),
}

_ALL_KEYS = {
    "system": ("m", "space_dim", "r", "g", "gamma", "bilinear",
               "enforce_hypotheses"),
    "control": ("saturation",),
    "cost": ("running", "terminal"),
    "solver": ("horizon", "grid_points", "methods", "halfwidths",
               "box_sigmas", "dt", "save_stride", "picard_tol",
               "picard_max_iter", "quad_order", "mild_steps", "mild_points",
               "killing_rate"),
    "simulation": ("scheme", "dt", "n_paths", "seed", "x0",
                   "blowup_threshold"),
    "experiment": ("probes", "fk_paths", "fk_steps", "alternatives",
                   "m_list"),
}

_ALT_KINDS = {"zero", "random", "constant", "perturbed_feedback"}


def _check_number(cfg, block, key, errs, *, low=None, strict_low=None,
                  integer=False, odd=False, allow_none=False):
    val = cfg[block].get(key)
    where = f"{block}.{key}"
    if val is None:
        if not allow_none:
            errs.append(f"{where}: missing value")
        return
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        errs.append(f"{where}: expected a number, got {val!r}")
        return
    if integer and int(val) != val:
        errs.append(f"{where}: expected an integer, got {val!r}")
        return
    if not math.isfinite(val):
        errs.append(f"{where}: must be finite")
        return
    if low is not None and val < low:
        errs.append(f"{where}: must be >= {low} (got {val})")
    if strict_low is not None and val <= strict_low:
        errs.append(f"{where}: must be > {strict_low} (got {val})")
    if odd and int(val) % 2 == 0:
        errs.append(f"{where}: must be odd (got {val})")


def _check_vector(cfg, block, key, errs, length=None, allow_none=False):
    val = cfg[block].get(key)
    where = f"{block}.{key}"
    if val is None:
        if not allow_none:
            errs.append(f"{where}: missing value")
        return
    if not isinstance(val, list) or \
            not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                    for v in val):
        errs.append(f"{where}: expected a list of numbers, got {val!r}")
        return
    if length is not None and len(val) != length:
        errs.append(f"{where}: expected length {length}, got {len(val)}")


def resolve_config(doc: dict) -> dict:
    """Fill defaults and validate; raises ConfigError listing every problem."""
    errs = []
    if not isinstance(doc, dict):
        raise ConfigError(["top level must be a JSON object"])
    unknown_blocks = set(doc) - set(_ALL_KEYS)
    if unknown_blocks:
        errs.append(f"unknown top-level blocks: {sorted(unknown_blocks)}")
    cfg = {}
    for block, keys in _ALL_KEYS.items():
        given = doc.get(block, {})
        if not isinstance(given, dict):
            errs.append(f"{block}: must be an object")
            given = {}
        unknown = set(given) - set(keys)
        if unknown:
            errs.append(f"{block}: unknown keys {sorted(unknown)}")
        merged = dict(_DEFAULTS.get(block, {}))
        merged.update({k: v for k, v in given.items() if k in keys})
        cfg[block] = merged
        if block not in doc and _REQUIRED[block]:
            errs.append(f"missing required block '{block}'")
            continue
        for key in _REQUIRED[block]:
            if key not in merged:
                errs.append(f"{block}.{key}: missing required key")
    if errs:
        raise ConfigError(errs)

    _check_number(cfg, "system", "m", errs, integer=True, low=1)
    _check_number(cfg, "system", "space_dim", errs, integer=True, low=1)
    sd = cfg["system"].get("space_dim")
    if isinstance(sd, int) and sd not in (1, 2, 3):
        errs.append(f"system.space_dim: must be 1, 2, or 3 (got {sd})")
    for key in ("r", "g", "gamma"):
        _check_number(cfg, "system", key, errs)
    for key in ("bilinear", "enforce_hypotheses"):
        if not isinstance(cfg["system"][key], bool):
            errs.append(f"system.{key}: expected true/false")

    _check_number(cfg, "control", "saturation", errs, strict_low=0.0)

    for side in ("running", "terminal"):
        comp = cfg["cost"].get(side)
        if not isinstance(comp, dict) or "kind" not in comp:
            errs.append(f"cost.{side}: expected an object with a 'kind'")

    _check_number(cfg, "solver", "horizon", errs, strict_low=0.0)
    _check_number(cfg, "solver", "grid_points", errs, integer=True, low=3,
                  odd=True)
    methods = cfg["solver"]["methods"]
    if not isinstance(methods, list) or \
            not set(methods) <= {"grid", "mild"} or \
            len(set(methods)) != len(methods):
        errs.append("solver.methods: expected a duplicate-free subset of "
                    "['grid', 'mild'] (may be empty for simulation-only "
                    "configs)")
    m = cfg["system"].get("m")
    m = int(m) if isinstance(m, (int, float)) and not isinstance(m, bool) \
        and m == int(m) else None
    _check_vector(cfg, "solver", "halfwidths", errs, length=m, allow_none=True)
    _check_number(cfg, "solver", "box_sigmas", errs, strict_low=0.0)
    _check_number(cfg, "solver", "dt", errs, strict_low=0.0, allow_none=True)
    _check_number(cfg, "solver", "save_stride", errs, integer=True, low=1)
    _check_number(cfg, "solver", "picard_tol", errs, strict_low=0.0)
    _check_number(cfg, "solver", "picard_max_iter", errs, integer=True, low=1)
    _check_number(cfg, "solver", "quad_order", errs, integer=True, low=2)
    _check_number(cfg, "solver", "mild_steps", errs, integer=True, low=1,
                  allow_none=True)
    _check_number(cfg, "solver", "mild_points", errs, integer=True, low=3,
                  odd=True, allow_none=True)
    _check_number(cfg, "solver", "killing_rate", errs, strict_low=0.0,
                  allow_none=True)

    scheme = cfg["simulation"].get("scheme")
    if scheme not in _SCHEMES:
        errs.append(f"simulation.scheme: expected one of {_SCHEMES}, "
                    f"got {scheme!r}")
    _check_number(cfg, "simulation", "dt", errs, strict_low=0.0)
    _check_number(cfg, "simulation", "n_paths", errs, integer=True, low=1)
    _check_number(cfg, "simulation", "seed", errs, integer=True, low=0)
    _check_vector(cfg, "simulation", "x0", errs, length=m)
    _check_number(cfg, "simulation", "blowup_threshold", errs, strict_low=0.0)

    probes = cfg["experiment"]["probes"]
    if probes is not None:
        if not isinstance(probes, list) or not probes:
            errs.append("experiment.probes: expected a non-empty list of "
                        "states")
        else:
            for i, p in enumerate(probes):
                if not isinstance(p, list) or (m and len(p) != m):
                    errs.append(f"experiment.probes[{i}]: expected a state "
                                f"of length {m}")
    _check_number(cfg, "experiment", "fk_paths", errs, integer=True, low=2)
    _check_number(cfg, "experiment", "fk_steps", errs, integer=True, low=1,
                  allow_none=True)
    alts = cfg["experiment"]["alternatives"]
    if not isinstance(alts, list):
        errs.append("experiment.alternatives: expected a list")
    else:
        for i, alt in enumerate(alts):
            if not isinstance(alt, dict) or alt.get("kind") not in _ALT_KINDS:
                errs.append(f"experiment.alternatives[{i}]: expected an "
                            f"object with kind in {sorted(_ALT_KINDS)}")
                continue
            extra = set(alt) - {"kind", "z", "delta"}
            if extra:
                errs.append(f"experiment.alternatives[{i}]: unknown keys "
                            f"{sorted(extra)}")
            if alt["kind"] == "constant" and not isinstance(alt.get("z"), list):
                errs.append(f"experiment.alternatives[{i}]: constant policy "
                            "needs a 'z' vector")
            if alt["kind"] == "perturbed_feedback" and \
                    not isinstance(alt.get("delta"), (int, float)):
                errs.append(f"experiment.alternatives[{i}]: "
                            "perturbed_feedback needs a numeric 'delta'")
    m_list = cfg["experiment"]["m_list"]
    if m_list is not None:
        if not isinstance(m_list, list) or not m_list or \
                not all(isinstance(v, int) and not isinstance(v, bool)
                        and v >= 1 for v in m_list):
            errs.append("experiment.m_list: expected a non-empty list of "
                        "positive integers")

    # cross-field checks
    horizon = cfg["solver"].get("horizon")
    sim_dt = cfg["simulation"].get("dt")
    if isinstance(horizon, (int, float)) and isinstance(sim_dt, (int, float)) \
            and horizon > 0 and sim_dt > 0:
        n = round(horizon / sim_dt)
        if n < 1 or abs(n * sim_dt - horizon) > 1e-9 * max(1.0, horizon):
            errs.append(f"simulation.dt={sim_dt} does not divide "
                        f"solver.horizon={horizon}")

    if errs:
        raise ConfigError(errs)
    return cfg


def load_config(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from None
    return resolve_config(doc)


def fingerprint(cfg: dict) -> str:
    """SHA-256 of the canonical (sorted, compact) resolved config."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# object construction
# ---------------------------------------------------------------------------


def build_system(cfg: dict, m: int | None = None) -> GalerkinSystem:
    """Galerkin system for the config (hypotheses checked by the gate, not
    here, so degenerate oracle configs can still be built)."""
    blk = cfg["system"]
    hyp = HypothesisParams(g=float(blk["g"]), r=float(blk["r"]),
                           gamma=float(blk["gamma"]), check=False)
    sys = build_torus_system(int(m if m is not None else blk["m"]),
                             int(blk["space_dim"]), hyp=hyp)
    if not blk["bilinear"]:
        sys = without_bilinear(sys)
    return sys


def hypothesis_gate(cfg: dict, sys: GalerkinSystem):
    """Hypothesis report plus whether this config must pass it."""
    report = validate_hypotheses(sys)
    return report, bool(cfg["system"]["enforce_hypotheses"])


def build_cost(cfg: dict, sys: GalerkinSystem) -> CostSpec:
    return make_cost(sys, cfg["cost"]["running"], cfg["cost"]["terminal"])


def build_grid(cfg: dict, sys: GalerkinSystem,
               points: int | None = None) -> GridSpec:
    blk = cfg["solver"]
    if blk["halfwidths"] is not None:
        hw = np.asarray(blk["halfwidths"], dtype=float)
    else:
        hw = default_halfwidths(sys, sigmas=float(blk["box_sigmas"]))
    n = int(points if points is not None else blk["grid_points"])
    return GridSpec(halfwidths=hw, points_per_axis=n,
                    dt=blk["dt"], save_stride=int(blk["save_stride"]))


def mild_grid(cfg: dict, sys: GalerkinSystem) -> GridSpec:
    """Grid for the mild route; solver.mild_points overrides the node count
    (its cost grows much faster with resolution than the march's)."""
    return build_grid(cfg, sys, points=cfg["solver"]["mild_points"])


def sde_steps(cfg: dict) -> int:
    return int(round(cfg["solver"]["horizon"] / cfg["simulation"]["dt"]))


def build_integrator(cfg: dict, save_stride: int = 1) -> IntegratorSpec:
    blk = cfg["simulation"]
    return IntegratorSpec(n_steps=sde_steps(cfg), scheme=blk["scheme"],
                          blowup_threshold=float(blk["blowup_threshold"]),
                          save_stride=save_stride)
