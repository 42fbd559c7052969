# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Semantics mirror ``nscontrol._reference`` exactly: same stencils, same
linear-extrapolation face closure, same saturated Hamiltonian branches.
The test suite cross-checks both backends on random inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()


def bilinear_batch(const cnp.int64_t[::1] ii, const cnp.int64_t[::1] jj,
                   const cnp.int64_t[::1] kk, const double[::1] vals,
                   const double[:, ::1] X, const double[:, ::1] Y,
                   double[:, ::1] out):
    """out[p, kk[e]] += vals[e] * X[p, ii[e]] * Y[p, jj[e]], fixed order."""
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t nnz = vals.shape[0]
    cdef Py_ssize_t p, e
    for p in range(n):
        for e in range(nnz):
            out[p, kk[e]] += vals[e] * X[p, ii[e]] * Y[p, jj[e]]


cdef inline double _fval(double pn, double R) nogil:
    if pn <= R:
        return 0.5 * pn * pn
    return R * pn - 0.5 * R * R


def hjb_step_1d(const double[::1] u, const double[:, ::1] drift,
                const double[::1] src, const double[::1] q,
                const double[::1] bw, double R, const double[::1] h,
                double dt, double[::1] out):
    cdef Py_ssize_t n0 = u.shape[0]
    cdef double h0 = h[0], q0 = q[0], bw0 = bw[0]
    cdef Py_ssize_t i
    cdef double fwd, bwd, a, rhs, p, pn
    for i in range(n0):
        if i == 0:
            fwd = (u[1] - u[0]) / h0
            bwd = fwd
        elif i == n0 - 1:
            bwd = (u[i] - u[i - 1]) / h0
            fwd = bwd
        else:
            fwd = (u[i + 1] - u[i]) / h0
            bwd = (u[i] - u[i - 1]) / h0
        rhs = src[i]
        rhs += (0.5 * q0 / h0) * (fwd - bwd)
        a = drift[i, 0]
        rhs += (a if a > 0.0 else 0.0) * fwd + (a if a < 0.0 else 0.0) * bwd
        p = bw0 * 0.5 * (fwd + bwd)
        pn = fabs(p)
        out[i] = u[i] + dt * (rhs - _fval(pn, R))


def hjb_step_2d(const double[:, ::1] u, const double[:, :, ::1] drift,
                const double[:, ::1] src, const double[::1] q,
                const double[::1] bw, double R, const double[::1] h,
                double dt, double[:, ::1] out):
    cdef Py_ssize_t n0 = u.shape[0], n1 = u.shape[1]
    cdef double h0 = h[0], h1 = h[1], q0 = q[0], q1 = q[1]
    cdef double bw0 = bw[0], bw1 = bw[1]
    cdef Py_ssize_t i, j
    cdef double f0, b0, f1, b1, a, rhs, p0, p1, pn
    for i in range(n0):
        for j in range(n1):
            if i == 0:
                f0 = (u[1, j] - u[0, j]) / h0
                b0 = f0
            elif i == n0 - 1:
                b0 = (u[i, j] - u[i - 1, j]) / h0
                f0 = b0
            else:
                f0 = (u[i + 1, j] - u[i, j]) / h0
                b0 = (u[i, j] - u[i - 1, j]) / h0
            if j == 0:
                f1 = (u[i, 1] - u[i, 0]) / h1
                b1 = f1
            elif j == n1 - 1:
                b1 = (u[i, j] - u[i, j - 1]) / h1
                f1 = b1
            else:
                f1 = (u[i, j + 1] - u[i, j]) / h1
                b1 = (u[i, j] - u[i, j - 1]) / h1
            rhs = src[i, j]
            rhs += (0.5 * q0 / h0) * (f0 - b0)
            a = drift[i, j, 0]
            rhs += (a if a > 0.0 else 0.0) * f0 + (a if a < 0.0 else 0.0) * b0
            rhs += (0.5 * q1 / h1) * (f1 - b1)
            a = drift[i, j, 1]
            rhs += (a if a > 0.0 else 0.0) * f1 + (a if a < 0.0 else 0.0) * b1
            p0 = bw0 * 0.5 * (f0 + b0)
            p1 = bw1 * 0.5 * (f1 + b1)
            pn = sqrt(p0 * p0 + p1 * p1)
            out[i, j] = u[i, j] + dt * (rhs - _fval(pn, R))


def hjb_step_3d(const double[:, :, ::1] u, const double[:, :, :, ::1] drift,
                const double[:, :, ::1] src, const double[::1] q,
                const double[::1] bw, double R, const double[::1] h,
                double dt, double[:, :, ::1] out):
    cdef Py_ssize_t n0 = u.shape[0], n1 = u.shape[1], n2 = u.shape[2]
    cdef double h0 = h[0], h1 = h[1], h2 = h[2]
    cdef double q0 = q[0], q1 = q[1], q2 = q[2]
    cdef double bw0 = bw[0], bw1 = bw[1], bw2 = bw[2]
    cdef Py_ssize_t i, j, k
    cdef double f0, b0, f1, b1, f2, b2, a, rhs, p0, p1, p2, pn
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                if i == 0:
                    f0 = (u[1, j, k] - u[0, j, k]) / h0
                    b0 = f0
                elif i == n0 - 1:
                    b0 = (u[i, j, k] - u[i - 1, j, k]) / h0
                    f0 = b0
                else:
                    f0 = (u[i + 1, j, k] - u[i, j, k]) / h0
                    b0 = (u[i, j, k] - u[i - 1, j, k]) / h0
                if j == 0:
                    f1 = (u[i, 1, k] - u[i, 0, k]) / h1
                    b1 = f1
                elif j == n1 - 1:
                    b1 = (u[i, j, k] - u[i, j - 1, k]) / h1
                    f1 = b1
                else:
                    f1 = (u[i, j + 1, k] - u[i, j, k]) / h1
                    b1 = (u[i, j, k] - u[i, j - 1, k]) / h1
                if k == 0:
                    f2 = (u[i, j, 1] - u[i, j, 0]) / h2
                    b2 = f2
                elif k == n2 - 1:
                    b2 = (u[i, j, k] - u[i, j, k - 1]) / h2
                    f2 = b2
                else:
                    f2 = (u[i, j, k + 1] - u[i, j, k]) / h2
                    b2 = (u[i, j, k] - u[i, j, k - 1]) / h2
                rhs = src[i, j, k]
                rhs += (0.5 * q0 / h0) * (f0 - b0)
                a = drift[i, j, k, 0]
                rhs += (a if a > 0.0 else 0.0) * f0 + (a if a < 0.0 else 0.0) * b0
                rhs += (0.5 * q1 / h1) * (f1 - b1)
                a = drift[i, j, k, 1]
                rhs += (a if a > 0.0 else 0.0) * f1 + (a if a < 0.0 else 0.0) * b1
                rhs += (0.5 * q2 / h2) * (f2 - b2)
                a = drift[i, j, k, 2]
                rhs += (a if a > 0.0 else 0.0) * f2 + (a if a < 0.0 else 0.0) * b2
                p0 = bw0 * 0.5 * (f0 + b0)
                p1 = bw1 * 0.5 * (f1 + b1)
                p2 = bw2 * 0.5 * (f2 + b2)
                pn = sqrt(p0 * p0 + p1 * p1 + p2 * p2)
                out[i, j, k] = u[i, j, k] + dt * (rhs - _fval(pn, R))
