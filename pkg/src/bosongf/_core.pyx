# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled RK4 integrator for one separated trajectory (G_x, G_y, R)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()

ctypedef double complex cplx


cdef inline void _coeffs(const cplx[::1] base, const double[::1] freq, double t, cplx[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(base.shape[0]):
        if freq[i] == 0.0:
            out[i] = base[i]
        else:
            out[i] = base[i] * (cos(freq[i] * t) + 1j * sin(freq[i] * t))


cdef long long _apply(const cplx[:, ::1] fac, const long long[::1] off, const cplx[::1] coef,
                      const cplx[::1] src, cplx[::1] dst) noexcept nogil:
    """dst = sum_t coef[t] * fac[t, i] * src[i] moved to i + off[t]."""
    cdef Py_ssize_t i, t, n = src.shape[0], nt = fac.shape[0]
    cdef long long ops = 0
    cdef cplx v, f, c
    cdef long long o
    for i in range(n):
        dst[i] = 0
    for t in range(nt):
        c = coef[t]
        o = off[t]
        for i in range(n):
            v = src[i]
            if v.real == 0.0 and v.imag == 0.0:
                continue
            f = fac[t, i]
            if f.real == 0.0 and f.imag == 0.0:
                continue
            dst[i + o] += c * f * v
            ops += 1
    return ops


cdef long long _source(const double[::1] kap, const long long[:, ::1] sx, const long long[:, ::1] sy,
                       const cplx[::1] gx, const cplx[::1] gy, cplx[::1] dst) noexcept nogil:
    cdef Py_ssize_t i, j, n = dst.shape[0]
    cdef long long a, b, ops = 0
    for j in range(kap.shape[0]):
        for i in range(n):
            a = sx[j, i]
            if a < 0:
                continue
            b = sy[j, i]
            if (gx[a].real == 0.0 and gx[a].imag == 0.0) or (gy[b].real == 0.0 and gy[b].imag == 0.0):
                continue
            dst[i] += kap[j] * gx[a] * gy[b]
            ops += 1
    return ops


cdef long long _prune(cplx[::1] y, double tau2) noexcept nogil:
    cdef Py_ssize_t i
    cdef long long nnz = 0
    cdef double m
    for i in range(y.shape[0]):
        m = y[i].real * y[i].real + y[i].imag * y[i].imag
        if m == 0.0:
            continue
        if m < tau2:
            y[i] = 0
        else:
            nnz += 1
    return nnz


cdef inline void _axpy(cplx[::1] out, const cplx[::1] y, double a, const cplx[::1] k) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(y.shape[0]):
        out[i] = y[i] + a * k[i]


cdef class _Block:
    cdef public object factors, offsets, base, freq
    cdef cplx[:, ::1] fac
    cdef long long[::1] off
    cdef cplx[::1] b
    cdef double[::1] fr
    cdef cplx[::1] coef

    def __init__(self, factors, offsets, base, freq):
        self.factors = np.ascontiguousarray(factors, dtype=np.complex128)
        self.offsets = np.ascontiguousarray(offsets, dtype=np.int64)
        self.base = np.ascontiguousarray(base, dtype=np.complex128)
        self.freq = np.ascontiguousarray(freq, dtype=np.float64)
        self.fac = self.factors
        self.off = self.offsets
        self.b = self.base
        self.fr = self.freq
        self.coef = np.zeros(self.base.shape[0], dtype=np.complex128)


def integrate(cplx[::1] gx, cplx[::1] gy, cplx[::1] r, xop, yop, rop, source,
              double t0, double dt, long nsteps, double tau_x, double tau_y, double tau_r,
              bint has_r=True):
    """Advance the trajectory in place by ``nsteps`` RK4 steps.

    Pruning (squared-magnitude test against ``tau**2``) runs once after each
    full step.  Returns ``(ops, peak_nnz)``.
    """
    cdef _Block X = _Block(*xop)
    cdef _Block Y = _Block(*yop)
    cdef _Block R = _Block(*rop)
    cdef double[::1] kap = np.ascontiguousarray(source[0], dtype=np.float64)
    cdef long long[:, ::1] sx = np.ascontiguousarray(source[1], dtype=np.int64)
    cdef long long[:, ::1] sy = np.ascontiguousarray(source[2], dtype=np.int64)

    cdef Py_ssize_t nx = gx.shape[0], ny = gy.shape[0], nr = r.shape[0]
    kxs = [np.zeros(nx, dtype=np.complex128) for _ in range(4)]
    kys = [np.zeros(ny, dtype=np.complex128) for _ in range(4)]
    krs = [np.zeros(nr, dtype=np.complex128) for _ in range(4)]
    cdef cplx[::1] kx1 = kxs[0], kx2 = kxs[1], kx3 = kxs[2], kx4 = kxs[3]
    cdef cplx[::1] ky1 = kys[0], ky2 = kys[1], ky3 = kys[2], ky4 = kys[3]
    cdef cplx[::1] kr1 = krs[0], kr2 = krs[1], kr3 = krs[2], kr4 = krs[3]
    cdef cplx[::1] tx = np.zeros(nx, dtype=np.complex128)
    cdef cplx[::1] ty = np.zeros(ny, dtype=np.complex128)
    cdef cplx[::1] tr = np.zeros(nr, dtype=np.complex128)

    cdef long long ops = 0, peak = 0, nnz
    cdef long step
    cdef Py_ssize_t i
    cdef double t, h2 = 0.5 * dt, h6 = dt / 6.0
    cdef double tx2 = tau_x * tau_x, ty2 = tau_y * tau_y, tr2 = tau_r * tau_r

    with nogil:
        for step in range(nsteps):
            t = t0 + step * dt
            # stage 1
            _coeffs(X.b, X.fr, t, X.coef)
            _coeffs(Y.b, Y.fr, t, Y.coef)
            _coeffs(R.b, R.fr, t, R.coef)
            ops += _apply(X.fac, X.off, X.coef, gx, kx1)
            ops += _apply(Y.fac, Y.off, Y.coef, gy, ky1)
            if has_r:
                ops += _apply(R.fac, R.off, R.coef, r, kr1)
                ops += _source(kap, sx, sy, gx, gy, kr1)
            # stage 2
            _coeffs(X.b, X.fr, t + h2, X.coef)
            _coeffs(Y.b, Y.fr, t + h2, Y.coef)
            _coeffs(R.b, R.fr, t + h2, R.coef)
            _axpy(tx, gx, h2, kx1)
            _axpy(ty, gy, h2, ky1)
            ops += _apply(X.fac, X.off, X.coef, tx, kx2)
            ops += _apply(Y.fac, Y.off, Y.coef, ty, ky2)
            if has_r:
                _axpy(tr, r, h2, kr1)
                ops += _apply(R.fac, R.off, R.coef, tr, kr2)
                ops += _source(kap, sx, sy, tx, ty, kr2)
            # stage 3
            _axpy(tx, gx, h2, kx2)
            _axpy(ty, gy, h2, ky2)
            ops += _apply(X.fac, X.off, X.coef, tx, kx3)
            ops += _apply(Y.fac, Y.off, Y.coef, ty, ky3)
            if has_r:
                _axpy(tr, r, h2, kr2)
                ops += _apply(R.fac, R.off, R.coef, tr, kr3)
                ops += _source(kap, sx, sy, tx, ty, kr3)
            # stage 4
            _coeffs(X.b, X.fr, t + dt, X.coef)
            _coeffs(Y.b, Y.fr, t + dt, Y.coef)
            _coeffs(R.b, R.fr, t + dt, R.coef)
            _axpy(tx, gx, dt, kx3)
            _axpy(ty, gy, dt, ky3)
            ops += _apply(X.fac, X.off, X.coef, tx, kx4)
            ops += _apply(Y.fac, Y.off, Y.coef, ty, ky4)
            if has_r:
                _axpy(tr, r, dt, kr3)
                ops += _apply(R.fac, R.off, R.coef, tr, kr4)
                ops += _source(kap, sx, sy, tx, ty, kr4)
            # combine
            for i in range(nx):
                gx[i] = gx[i] + h6 * (kx1[i] + 2.0 * kx2[i] + 2.0 * kx3[i] + kx4[i])
            for i in range(ny):
                gy[i] = gy[i] + h6 * (ky1[i] + 2.0 * ky2[i] + 2.0 * ky3[i] + ky4[i])
            if has_r:
                for i in range(nr):
                    r[i] = r[i] + h6 * (kr1[i] + 2.0 * kr2[i] + 2.0 * kr3[i] + kr4[i])
            nnz = _prune(gx, tx2) + _prune(gy, ty2)
            if has_r:
                nnz += _prune(r, tr2)
            if nnz > peak:
                peak = nnz
    return ops, peak


def apply_block(factors, offsets, base, freq, double t, cplx[::1] src):
    """Single stencil application; exposed for testing and benchmarking."""
    cdef _Block B = _Block(factors, offsets, base, freq)
    out = np.zeros(src.shape[0], dtype=np.complex128)
    cdef cplx[::1] dst = out
    cdef long long ops
    _coeffs(B.b, B.fr, t, B.coef)
    with nogil:
        ops = _apply(B.fac, B.off, B.coef, src, dst)
    return out, ops
