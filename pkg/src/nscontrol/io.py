"""Deterministic artifact writers for experiment runs.

Fixed layout under the output directory: manifest.json at the top,
valuegrid/ for solved value functions (JSON header + CSV body), paths/ for
trajectory dumps, reports/ for everything else.  All writers are
byte-deterministic: sorted JSON keys, shortest-roundtrip float formatting,
LF line endings, no timestamps, and every file embeds the config
fingerprint.  The manifest is written with status "running" before any work
and rewritten with status "complete" at the end, so an interrupted run is
identifiable by its manifest alone.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .hjb import GradientField, ValueGrid, gradient
from .sde import PathEnsemble

__all__ = [
    "ArtifactWriter",
    "MAX_CSV_PATHS",
]

# full trajectory dumps are capped to the leading paths; summary statistics
# in the reports always use the whole ensemble
MAX_CSV_PATHS = 200


def _jsonify(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonify(v) for v in obj.tolist()]
    return obj


class ArtifactWriter:
    """Writes one run's artifacts under a fixed directory layout."""

    def __init__(self, out_dir: str, subcommand: str, fingerprint: str,
                 seed: int):
        self.out_dir = out_dir
        self.subcommand = subcommand
        self.fingerprint = fingerprint
        self.seed = int(seed)
        self.outputs = []
        os.makedirs(out_dir, exist_ok=True)
        for sub in ("valuegrid", "paths", "reports"):
            os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    # -- manifest -----------------------------------------------------------

    def _manifest(self, status: str) -> dict:
        return {
            "subcommand": self.subcommand,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "status": status,
            "outputs": sorted(self.outputs),
        }

    def open_manifest(self):
        self._write_json_file("manifest.json", self._manifest("running"),
                              record=False)

    def close_manifest(self):
        self._write_json_file("manifest.json", self._manifest("complete"),
                              record=False)

    # -- primitives ----------------------------------------------------------

    def _write_json_file(self, rel: str, doc: dict, record: bool = True):
        path = os.path.join(self.out_dir, rel)
        payload = json.dumps(_jsonify(doc), indent=2, sort_keys=True) + "\n"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(payload)
        if record:
            self.outputs.append(rel)

    def write_report(self, name: str, doc: dict):
        doc = dict(doc)
        doc.setdefault("fingerprint", self.fingerprint)
        doc.setdefault("seed", self.seed)
        self._write_json_file(os.path.join("reports", f"{name}.json"), doc)

    # -- value grids ----------------------------------------------------------

    def write_value_grid(self, label: str, value: ValueGrid,
                         grad: GradientField | None = None):
        """JSON header (grid metadata) plus CSV body (t, index, u, grad u)."""
        if grad is None:
            grad = gradient(value)
        m = value.m
        header = {
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "label": label,
            "m": m,
            "axes": [list(map(float, ax)) for ax in value.axes],
            "times": [float(t) for t in value.times],
            "meta": value.meta,
            "body": f"{label}_values.csv",
            "columns": (["t"] + [f"i_{k+1}" for k in range(m)] + ["u"]
                        + [f"du_{k+1}" for k in range(m)]),
        }
        self._write_json_file(
            os.path.join("valuegrid", f"{label}_header.json"), header)

        rel = os.path.join("valuegrid", f"{label}_values.csv")
        path = os.path.join(self.out_dir, rel)
        shape = value.grid_shape()
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header["columns"])
            for n, t in enumerate(value.times):
                u_flat = value.values[n].reshape(-1)
                g_flat = grad.values[n].reshape(-1, m)
                for flat_idx in range(u_flat.size):
                    idx = np.unravel_index(flat_idx, shape)
                    w.writerow([repr(float(t))]
                               + [str(i) for i in idx]
                               + [repr(float(u_flat[flat_idx]))]
                               + [repr(float(v)) for v in g_flat[flat_idx]])
        self.outputs.append(rel)

    # -- paths ----------------------------------------------------------------

    def write_paths(self, label: str, ens: PathEnsemble,
                    running_cost: np.ndarray):
        """Trajectory dump (first MAX_CSV_PATHS paths), one row per slice."""
        m = ens.states.shape[-1]
        rel = os.path.join("paths", f"{label}.csv")
        path = os.path.join(self.out_dir, rel)
        n_dump = min(ens.n_paths, MAX_CSV_PATHS)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["path", "t"]
                       + [f"X_{k+1}" for k in range(m)]
                       + [f"z_{k+1}" for k in range(m)]
                       + ["running_cost"])
            for p in range(n_dump):
                for j, t in enumerate(ens.times):
                    w.writerow([str(p), repr(float(t))]
                               + [repr(float(v)) for v in ens.states[p, j]]
                               + [repr(float(v)) for v in ens.controls[p, j]]
                               + [repr(float(running_cost[p, j]))])
        self.outputs.append(rel)
