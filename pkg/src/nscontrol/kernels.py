"""Backend selection for the hot numerical kernels.

Two interchangeable implementations exist:

* ``nscontrol._native`` -- Cython extension, used when the compiled module
  imported successfully and ``NSCONTROL_PURE_PYTHON`` is unset,
* ``nscontrol._reference`` -- vectorized numpy fallback.

Both are single-threaded and sum in a fixed order, so results do not depend
on thread counts or scheduling.  ``make_*`` helpers return closures bound to
one backend; pass ``backend=`` explicitly to compare the two (see
``benchmarks/bench_kernels.py``).
"""

from __future__ import annotations

import os

import numpy as np

from . import _reference

try:
    from . import _native
except ImportError:
    _native = None

_FORCE_REFERENCE = os.environ.get("NSCONTROL_PURE_PYTHON", "") not in ("", "0")


def available_backends() -> tuple[str, ...]:
    return ("native", "reference") if _native is not None else ("reference",)


def active_backend() -> str:
    if _native is not None and not _FORCE_REFERENCE:
        return "native"
    return "reference"


def _resolve(backend: str | None) -> str:
    name = backend or active_backend()
    if name not in ("native", "reference"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "native" and _native is None:
        raise RuntimeError("compiled kernels are not available in this install")
    return name


def make_bilinear(m: int, tensor_ijk: np.ndarray, tensor_vals: np.ndarray,
                  backend: str | None = None):
    """Return a batched contraction X, Y (n, m) -> (n, m) of a sparse
    third-order tensor, out[p, k] = sum_e v_e X[p, i_e] Y[p, j_e]."""
    name = _resolve(backend)
    ijk = np.ascontiguousarray(np.asarray(tensor_ijk, dtype=np.int64).reshape(-1, 3))
    vals = np.ascontiguousarray(np.asarray(tensor_vals, dtype=float))
    if name == "native":
        ii, jj, kk = (np.ascontiguousarray(ijk[:, c]) for c in range(3))

        def contract(X, Y, out=None):
            X = np.ascontiguousarray(X, dtype=float)
            Y = np.ascontiguousarray(Y, dtype=float)
            if out is None:
                out = np.zeros_like(X)
            else:
                out[...] = 0.0
            _native.bilinear_batch(ii, jj, kk, vals, X, Y, out)
            return out

        return contract
    return _reference.make_bilinear(m, ijk, vals)


def make_hjb_stepper(shape, h, q, b_weights, saturation, dt, drift, source,
                     backend: str | None = None):
    """Return a single explicit time-step map u -> u_new on a box grid.

    Discretization (identical in both backends): central second differences
    weighted q_k/2 for the diffusion, first-order upwinding in the drift
    sign for (drift . grad u), central differences inside the saturated
    quadratic Hamiltonian term, plus the source; face closure by linear
    extrapolation of u along the outward axis (vanishing second derivative).
    """
    name = _resolve(backend)
    h = np.asarray(h, dtype=float)
    q = np.asarray(q, dtype=float)
    bw = np.asarray(b_weights, dtype=float)
    drift = np.ascontiguousarray(drift, dtype=float)
    source = np.ascontiguousarray(source, dtype=float)
    ndim = len(shape)
    if drift.shape != tuple(shape) + (ndim,) or source.shape != tuple(shape):
        raise ValueError("drift/source arrays do not match the grid shape")
    if name == "reference":
        return _reference.make_hjb_stepper(shape, h, q, bw, float(saturation),
                                           float(dt), drift, source)

    step_fn = {1: _native.hjb_step_1d, 2: _native.hjb_step_2d,
               3: _native.hjb_step_3d}[ndim]

    def step(u):
        u = np.ascontiguousarray(u, dtype=float)
        out = np.empty_like(u)
        step_fn(u, drift, source, q, bw, float(saturation), h, float(dt), out)
        return out

    return step
