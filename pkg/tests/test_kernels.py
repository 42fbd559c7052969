"""Compiled kernels against the numpy reference implementation."""

import os
import subprocess
import sys

import numpy as np
import pytest

from nscontrol.galerkin import build_torus_system
from nscontrol.kernels import active_backend, available_backends, \
    make_bilinear, make_hjb_stepper

needs_native = pytest.mark.skipif(
    "native" not in available_backends(),
    reason="compiled kernels not built")


def test_native_backend_is_active_here():
    assert available_backends() == ("native", "reference")
    assert active_backend() == "native"


@needs_native
@pytest.mark.parametrize("m,dim", [(8, 1), (16, 3)])
def test_bilinear_backends_agree_on_real_tensors(m, dim, rng):
    sys = build_torus_system(m, dim)
    native = make_bilinear(sys.m, sys.tensor_ijk, sys.tensor_vals, "native")
    ref = make_bilinear(sys.m, sys.tensor_ijk, sys.tensor_vals, "reference")
    X = rng.normal(size=(37, m))
    Y = rng.normal(size=(37, m))
    a, b = native(X, Y), ref(X, Y)
    assert np.allclose(a, b, rtol=1e-13, atol=1e-15)
    out = np.empty_like(X)
    assert native(X, Y, out=out) is out
    assert np.array_equal(out, a)


@needs_native
def test_bilinear_backends_agree_on_random_tensor(rng):
    m, nnz = 6, 40
    ijk = rng.integers(0, m, size=(nnz, 3))
    vals = rng.normal(size=nnz)
    native = make_bilinear(m, ijk, vals, "native")
    ref = make_bilinear(m, ijk, vals, "reference")
    X = rng.normal(size=(11, m))
    Y = rng.normal(size=(11, m))
    assert np.allclose(native(X, Y), ref(X, Y), rtol=1e-13, atol=1e-15)


@needs_native
@pytest.mark.parametrize("shape", [(41,), (17, 15), (9, 9, 7)])
def test_hjb_steppers_agree(shape, rng):
    ndim = len(shape)
    h = 0.1 + 0.05 * np.arange(ndim)
    q = 0.5 + 0.1 * np.arange(ndim)
    bw = 1.0 / (1.0 + np.arange(ndim))
    drift = rng.normal(size=shape + (ndim,))
    source = rng.normal(size=shape)
    u = rng.normal(size=shape)
    kw = dict(h=h, q=q, b_weights=bw, saturation=1.3, dt=1e-3,
              drift=drift, source=source)
    native = make_hjb_stepper(shape, backend="native", **kw)
    ref = make_hjb_stepper(shape, backend="reference", **kw)
    a, b = native(u), ref(u)
    assert a.shape == shape
    assert np.allclose(a, b, rtol=1e-13, atol=1e-14)
    # iterate a few steps so discrepancies would compound if present
    for _ in range(5):
        a, b = native(a), ref(b)
    assert np.allclose(a, b, rtol=1e-12, atol=1e-13)


def test_stepper_rejects_mismatched_arrays():
    with pytest.raises(ValueError, match="do not match the grid"):
        make_hjb_stepper((5,), [0.1], [1.0], [1.0], 1.0, 1e-3,
                         np.zeros((5, 2)), np.zeros(5))


def test_unknown_backend_rejected():
    with pytest.raises(ValueError, match="unknown backend"):
        make_bilinear(2, np.zeros((0, 3)), np.zeros(0), backend="cuda")


def test_pure_python_env_forces_reference():
    code = ("import nscontrol.kernels as k; "
            "print(k.active_backend(), k.available_backends())")
    env = dict(os.environ, NSCONTROL_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.split()[0] == "reference"
