"""Pure numpy implementations of the hot kernels.

Semantics must match ``nscontrol._native`` exactly (same stencils, same face
closure); the test suite cross-checks the two backends on random inputs.
"""

from __future__ import annotations

import numpy as np


def make_bilinear(m: int, tensor_ijk: np.ndarray, tensor_vals: np.ndarray):
    """Batched sparse contraction with per-output-index grouping."""
    nnz = len(tensor_vals)
    if nnz == 0:
        def contract_empty(X, Y, out=None):
            if out is None:
                return np.zeros_like(np.asarray(X, dtype=float))
            out[...] = 0.0
            return out
        return contract_empty

    ii = tensor_ijk[:, 0]
    jj = tensor_ijk[:, 1]
    kk = tensor_ijk[:, 2]
    groups = [np.nonzero(kk == k)[0] for k in range(m)]

    def contract(X, Y, out=None):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        contrib = tensor_vals * X[..., ii] * Y[..., jj]
        if out is None:
            out = np.zeros(X.shape)
        for k, sel in enumerate(groups):
            out[..., k] = contrib[..., sel].sum(axis=-1) if len(sel) else 0.0
        return out

    return contract


def _axis_diffs(u: np.ndarray, axis: int, h: float):
    """Forward/backward first differences with linear-extrapolation ghosts.

    The ghost value 2*u_face - u_inner makes the one-sided difference at a
    face equal to the difference just inside it, so the second difference
    vanishes there.
    """
    fwd = np.empty_like(u)
    bwd = np.empty_like(u)
    src = np.moveaxis(u, axis, 0)
    f = np.moveaxis(fwd, axis, 0)
    b = np.moveaxis(bwd, axis, 0)
    f[:-1] = (src[1:] - src[:-1]) / h
    f[-1] = (src[-1] - src[-2]) / h
    b[1:] = f[:-1]
    b[0] = f[0]
    return fwd, bwd


def make_hjb_stepper(shape, h, q, b_weights, saturation, dt, drift, source):
    ndim = len(shape)
    R = saturation
    drift_comps = [drift[..., k] for k in range(ndim)]

    def step(u):
        rhs = source.copy()
        p_sq = np.zeros(shape)
        for k in range(ndim):
            fwd, bwd = _axis_diffs(u, k, h[k])
            rhs += (0.5 * q[k] / h[k]) * (fwd - bwd)
            a = drift_comps[k]
            rhs += np.maximum(a, 0.0) * fwd + np.minimum(a, 0.0) * bwd
            p_sq += (b_weights[k] * 0.5 * (fwd + bwd)) ** 2
        p_norm = np.sqrt(p_sq)
        f_val = np.where(p_norm <= R, 0.5 * p_sq, R * p_norm - 0.5 * R * R)
        rhs -= f_val
        return u + dt * rhs

    return step
