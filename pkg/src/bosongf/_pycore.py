"""NumPy fallback for the compiled trajectory integrator.

Mirrors ``_core.pyx`` operation for operation; results agree with the
compiled path to rounding (summation order differs).
"""

from __future__ import annotations

import numpy as np


class _Block:
    def __init__(self, factors, offsets, base, freq):
        self.base = np.asarray(base, dtype=complex)
        self.freq = np.asarray(freq, dtype=float)
        self.terms = []
        for fac, off in zip(np.asarray(factors, dtype=complex), np.asarray(offsets)):
            src = np.nonzero(fac)[0]
            self.terms.append((src, src + int(off), fac[src]))

    def coeffs(self, t: float) -> np.ndarray:
        return self.base * np.exp(1j * self.freq * t)

    def apply(self, coef: np.ndarray, src: np.ndarray, dst: np.ndarray) -> int:
        dst[:] = 0
        ops = 0
        for c, (s, d, f) in zip(coef, self.terms):
            vals = src[s]
            nz = vals != 0
            ops += int(np.count_nonzero(nz))
            dst[d] += c * f * vals
        return ops


def _source(kap, sx, sy, gx, gy, dst) -> int:
    ops = 0
    for k, a, b in zip(kap, sx, sy):
        valid = np.nonzero(a >= 0)[0]
        prod = gx[a[valid]] * gy[b[valid]]
        ops += int(np.count_nonzero(prod))
        dst[valid] += k * prod
    return ops


def _prune(y: np.ndarray, tau2: float) -> int:
    m = y.real * y.real + y.imag * y.imag
    y[(m < tau2) & (m != 0)] = 0
    return int(np.count_nonzero(y))


def integrate(gx, gy, r, xop, yop, rop, source, t0, dt, nsteps, tau_x, tau_y, tau_r, has_r=True):
    X, Y, R = _Block(*xop), _Block(*yop), _Block(*rop)
    kap = np.asarray(source[0], dtype=float)
    sx = np.asarray(source[1])
    sy = np.asarray(source[2])
    ops = peak = 0
    h2, h6 = 0.5 * dt, dt / 6.0

    def rhs(t, x, y, z):
        nonlocal ops
        dx, dy, dz = np.empty_like(x), np.empty_like(y), np.empty_like(z)
        ops += X.apply(X.coeffs(t), x, dx)
        ops += Y.apply(Y.coeffs(t), y, dy)
        if has_r:
            ops += R.apply(R.coeffs(t), z, dz)
            ops += _source(kap, sx, sy, x, y, dz)
        else:
            dz[:] = 0
        return dx, dy, dz

    for step in range(nsteps):
        t = t0 + step * dt
        k1 = rhs(t, gx, gy, r)
        k2 = rhs(t + h2, gx + h2 * k1[0], gy + h2 * k1[1], r + h2 * k1[2])
        k3 = rhs(t + h2, gx + h2 * k2[0], gy + h2 * k2[1], r + h2 * k2[2])
        k4 = rhs(t + dt, gx + dt * k3[0], gy + dt * k3[1], r + dt * k3[2])
        for y, a, b, c, d in zip((gx, gy, r), k1, k2, k3, k4):
            y += h6 * (a + 2.0 * b + 2.0 * c + d)
        nnz = _prune(gx, tau_x * tau_x) + _prune(gy, tau_y * tau_y)
        if has_r:
            nnz += _prune(r, tau_r * tau_r)
        peak = max(peak, nnz)
    return ops, peak


def apply_block(factors, offsets, base, freq, t, src):
    block = _Block(factors, offsets, base, freq)
    out = np.zeros_like(np.asarray(src, dtype=complex))
    ops = block.apply(block.coeffs(t), np.asarray(src, dtype=complex), out)
    return out, ops
