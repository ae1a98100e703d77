"""Right-hand sides of the coefficient dynamics.

Two pictures are supported.  In the F picture the coefficients ``f`` of the
ordered expansion evolve under the commutator recurrence with explicit
``s``-sums; in the G picture (``G = F * prod_j exp(x_j y_j / r)``) the
Hamiltonian part no longer mixes x and y, which is what allows the separated
evolution in :mod:`bosongf.evolve`.

The same :class:`HamiltonianPoly` feeds both the reference-style dict
evaluators here and the dense stencils consumed by the compiled core.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .coeff import DEFAULT_CONVENTION, CoeffTensor, MultiIndex, OperatorConvention

TWO_PI_MHZ = 2 * math.pi * 1e6


def binom(n: int, m: int) -> int:
    if m < 0 or n < 0 or m > n:
        return 0
    return math.comb(n, m)


def falling(n: int, m: int) -> float:
    """``n! / (n-m)!``, zero when ``m > n``."""
    if m > n or n < 0:
        return 0.0
    return float(math.perm(n, m))


@dataclass(frozen=True)
class HamTerm:
    """``hbar * h * exp(i*freq*t) * prod_j o1_j^{u_j} o2_j^{v_j}``."""

    u: tuple[int, ...]
    v: tuple[int, ...]
    h: complex
    freq: float = 0.0

    def coeff(self, t: float) -> complex:
        if self.freq == 0.0:
            return complex(self.h)
        return complex(self.h) * complex(math.cos(self.freq * t), math.sin(self.freq * t))


@dataclass
class HamiltonianPoly:
    n_modes: int
    terms: list[HamTerm] = field(default_factory=list)

    def add(self, u: Sequence[int], v: Sequence[int], h: complex, freq: float = 0.0) -> None:
        if h != 0:
            self.terms.append(HamTerm(tuple(u), tuple(v), complex(h), float(freq)))

    def is_hermitian(self, atol: float = 1e-9) -> bool:
        # collect by (u, v, freq); the adjoint partner is (v, u, conj h, -freq)
        acc: dict[tuple, complex] = {}
        for term in self.terms:
            key = (term.u, term.v, term.freq)
            acc[key] = acc.get(key, 0j) + term.h
        scale = max((abs(h) for h in acc.values()), default=1.0)
        for (u, v, freq), h in acc.items():
            partner = acc.get((v, u, -freq), 0j)
            if abs(partner - np.conj(h)) > atol * scale:
                return False
        return True

    def dense(self, n_levels: int, t: float = 0.0) -> np.ndarray:
        """Number-basis matrix of ``H / hbar`` (default convention)."""
        from .coeff import monomial_matrix

        dim = n_levels**self.n_modes
        out = np.zeros((dim, dim), dtype=complex)
        for term in self.terms:
            mat = np.ones((1, 1))
            for j in range(self.n_modes):
                mat = np.kron(mat, monomial_matrix(term.u[j], term.v[j], n_levels))
            out += term.coeff(t) * mat
        return out


@dataclass
class NetworkSpec:
    """Driven dissipative anharmonic-oscillator network in SI angular units.

    Frequencies are in rad/s, ``kappa`` in 1/s.  ``coupling`` is the symmetric
    matrix ``J`` with zero diagonal.
    """

    omega_q: np.ndarray
    eta: np.ndarray
    drive: np.ndarray
    omega_d: np.ndarray
    kappa: np.ndarray
    coupling: np.ndarray

    def __post_init__(self):
        self.omega_q = np.atleast_1d(np.asarray(self.omega_q, dtype=float))
        n = self.omega_q.size
        self.eta = np.broadcast_to(np.asarray(self.eta, dtype=float), (n,)).copy()
        self.drive = np.broadcast_to(np.asarray(self.drive, dtype=complex), (n,)).copy()
        self.omega_d = np.broadcast_to(np.asarray(self.omega_d, dtype=float), (n,)).copy()
        self.kappa = np.broadcast_to(np.asarray(self.kappa, dtype=float), (n,)).copy()
        self.coupling = np.asarray(self.coupling, dtype=float).reshape(n, n)
        self.validate()

    @property
    def n_modes(self) -> int:
        return self.omega_q.size

    def validate(self) -> None:
        if np.any(self.kappa < 0):
            raise ValueError("kappa must be non-negative")
        if not np.allclose(self.coupling, self.coupling.T, rtol=0, atol=0):
            raise ValueError("coupling matrix J must be symmetric")
        if np.any(np.diag(self.coupling) != 0):
            raise ValueError("coupling matrix J must have zero diagonal")

    @classmethod
    def table1(cls, n_modes: int = 1, **overrides) -> NetworkSpec:
        """Default superconducting-processor parameters."""
        drive = np.zeros(n_modes, dtype=complex)
        drive[0] = 125 * TWO_PI_MHZ
        coupling = np.full((n_modes, n_modes), 10 * TWO_PI_MHZ)
        np.fill_diagonal(coupling, 0.0)
        params = dict(
            omega_q=np.full(n_modes, 3500 * TWO_PI_MHZ),
            eta=np.full(n_modes, 250 * TWO_PI_MHZ),
            drive=drive,
            omega_d=np.full(n_modes, 3500 * TWO_PI_MHZ),
            kappa=np.full(n_modes, 0.02e6),
            coupling=coupling,
        )
        params.update(overrides)
        return cls(**params)

    def replace(self, **overrides) -> NetworkSpec:
        params = dict(
            omega_q=self.omega_q,
            eta=self.eta,
            drive=self.drive,
            omega_d=self.omega_d,
            kappa=self.kappa,
            coupling=self.coupling,
        )
        params.update(overrides)
        return NetworkSpec(**params)

    def hamiltonian(self) -> HamiltonianPoly:
        """Rotating-wave network Hamiltonian divided by hbar."""
        n = self.n_modes
        ham = HamiltonianPoly(n)

        def e(j: int, p: int = 1) -> tuple[int, ...]:
            out = [0] * n
            out[j] = p
            return tuple(out)

        zero = (0,) * n
        for j in range(n):
            ham.add(e(j), e(j), self.omega_q[j])
            ham.add(e(j, 2), e(j, 2), self.eta[j])
            # i*Omega*a*exp(+i wd t) + h.c.
            ham.add(zero, e(j), 1j * self.drive[j], self.omega_d[j])
            ham.add(e(j), zero, np.conj(1j * self.drive[j]), -self.omega_d[j])
            for jp in range(n):
                if jp != j:
                    # J a_j a_{j'}^dagger, normal ordered as a_{j'}^dagger a_j
                    ham.add(e(jp), e(j), self.coupling[j, jp])
        return ham


def _spread(idx: MultiIndex, n_modes: int) -> tuple[list[int], list[int]]:
    return [idx[2 * j] for j in range(n_modes)], [idx[2 * j + 1] for j in range(n_modes)]


def _join(k: Sequence[int], l: Sequence[int]) -> MultiIndex:
    out: list[int] = []
    for a, b in zip(k, l):
        out += [a, b]
    return tuple(out)


def _accumulate(out: dict, key: MultiIndex, val: complex, cap: int) -> None:
    if min(key) < 0 or max(key) > cap:
        return
    out[key] = out.get(key, 0j) + val


def general_commutator_rhs(
    h: HamiltonianPoly,
    f: CoeffTensor,
    t: float = 0.0,
    conv: OperatorConvention = DEFAULT_CONVENTION,
) -> CoeffTensor:
    """``df/dt`` of ``i [H, A]`` for ordered-monomial coefficients.

    Uses the product rule for ordered monomials,
    ``(o1^u o2^v)(o1^k o2^l) = sum_s r^s s! C(v,s) C(k,s) o1^{u+k-s} o2^{v+l-s}``
    per mode; the multimode product is taken over modes before subtracting
    the reversed product.
    """
    r = complex(conv.r)
    n = f.n_modes
    out: dict[MultiIndex, complex] = {}
    for term in h.terms:
        hc = 1j * term.coeff(t)
        for idx, val in f.data.items():
            k, l = _spread(idx, n)
            # H*A contracts v of H with k of A; A*H contracts l of A with u of H
            for sign, left, right in ((1.0, term.v, k), (-1.0, l, term.u)):
                per_mode = []
                for j in range(n):
                    opts = []
                    for s in range(min(left[j], right[j]) + 1):
                        c = r**s * math.factorial(s) * binom(left[j], s) * binom(right[j], s)
                        opts.append((s, c))
                    per_mode.append(opts)
                for combo in itertools.product(*per_mode):
                    amp = sign * hc * val
                    newk, newl = [], []
                    for j, (s, c) in enumerate(combo):
                        amp *= c
                        newk.append(term.u[j] + k[j] - s)
                        newl.append(term.v[j] + l[j] - s)
                    _accumulate(out, _join(newk, newl), amp, f.cap)
    return CoeffTensor(n, out, cap=f.cap)


def g_commutator_rhs(
    h: HamiltonianPoly,
    g: CoeffTensor,
    t: float = 0.0,
    conv: OperatorConvention = DEFAULT_CONVENTION,
) -> CoeffTensor:
    """Hamiltonian part of ``dg/dt``: ``i[:H(x, r d_x): - :H(r d_y, y):] G``."""
    r = complex(conv.r)
    n = g.n_modes
    out: dict[MultiIndex, complex] = {}
    for term in h.terms:
        hc = 1j * term.coeff(t)
        for idx, val in g.data.items():
            k, l = _spread(idx, n)
            ax = hc * val
            ay = -hc * val
            for j in range(n):
                ax *= r ** term.v[j] * falling(k[j], term.v[j])
                ay *= r ** term.u[j] * falling(l[j], term.u[j])
            if ax != 0:
                newk = [k[j] - term.v[j] + term.u[j] for j in range(n)]
                _accumulate(out, _join(newk, l), ax, g.cap)
            if ay != 0:
                newl = [l[j] - term.u[j] + term.v[j] for j in range(n)]
                _accumulate(out, _join(k, newl), ay, g.cap)
    return CoeffTensor(n, out, cap=g.cap)


def dissipator_rhs_f(f: CoeffTensor, kappa: float, mode: int = 0) -> CoeffTensor:
    """Zero-temperature photon loss on ``mode`` in the F picture.

    ``df_{k,l} = kappa/2 [2 delta_{kl} f_{k-1,k-1} - 2 f_{k-1,l-1} - (k+l) f_{k,l}]``
    """
    out: dict[MultiIndex, complex] = {}
    ik, il = 2 * mode, 2 * mode + 1
    for idx, val in f.data.items():
        k, l = idx[ik], idx[il]
        _accumulate(out, idx, -0.5 * kappa * (k + l) * val, f.cap)
        up = list(idx)
        up[ik] += 1
        up[il] += 1
        up = tuple(up)
        _accumulate(out, up, -kappa * val, f.cap)
        if k == l:
            _accumulate(out, up, kappa * val, f.cap)
    return CoeffTensor(f.n_modes, out, cap=f.cap)


def p_apply(g: CoeffTensor, mode: int = 0) -> CoeffTensor:
    """Keep entries diagonal in ``mode`` and multiply them by ``x_j y_j``."""
    out: dict[MultiIndex, complex] = {}
    ik, il = 2 * mode, 2 * mode + 1
    for idx, val in g.data.items():
        if idx[ik] == idx[il]:
            up = list(idx)
            up[ik] += 1
            up[il] += 1
            _accumulate(out, tuple(up), val, g.cap)
    return CoeffTensor(g.n_modes, out, cap=g.cap)


def dissipator_rhs_g(g: CoeffTensor, kappa: float, mode: int = 0) -> CoeffTensor:
    """``dG = kappa/2 (2P - x d_x - y d_y) G`` on ``mode``."""
    out: dict[MultiIndex, complex] = {}
    ik, il = 2 * mode, 2 * mode + 1
    for idx, val in g.data.items():
        _accumulate(out, idx, -0.5 * kappa * (idx[ik] + idx[il]) * val, g.cap)
    for idx, val in p_apply(g, mode).data.items():
        _accumulate(out, idx, kappa * val, g.cap)
    return CoeffTensor(g.n_modes, out, cap=g.cap)


def network_rhs_f(spec: NetworkSpec, f: CoeffTensor, t: float = 0.0) -> CoeffTensor:
    spec.validate()
    out = general_commutator_rhs(spec.hamiltonian(), f, t)
    for j in range(spec.n_modes):
        if spec.kappa[j]:
            out = out + dissipator_rhs_f(f, spec.kappa[j], j)
    return out


def network_rhs_g(spec: NetworkSpec, g: CoeffTensor, t: float = 0.0) -> CoeffTensor:
    spec.validate()
    out = g_commutator_rhs(spec.hamiltonian(), g, t)
    for j in range(spec.n_modes):
        if spec.kappa[j]:
            out = out + dissipator_rhs_g(g, spec.kappa[j], j)
    return out


# ---------------------------------------------------------------------------
# Dense stencils for the separated evolution.
#
# A stencil acts on a dense box of shape (cap+1,)*n_vars.  Each term moves the
# entry at index i to i + shift, scaled by base*exp(i*freq*t) times a product
# of per-variable tables evaluated at the source index.

Table = Callable[[np.ndarray], np.ndarray]


@dataclass
class StencilTerm:
    shift: tuple[int, ...]
    base: complex
    freq: float
    tables: dict[int, Table]
    # pairs of variables whose source exponents must be equal
    equal: tuple[tuple[int, int], ...] = ()


@dataclass
class Stencil:
    n_vars: int
    terms: list[StencilTerm]

    def compile(self, cap: int, merge_diagonal: bool = False) -> CompiledStencil:
        """Dense form; with ``merge_diagonal`` every static zero-shift term is
        folded into row 0 (present even when empty) so it costs one
        multiply-add per entry."""
        stencil = self
        if merge_diagonal:
            static = [t for t in self.terms if not any(t.shift) and t.freq == 0.0 and not t.equal]
            rest = [t for t in self.terms if t not in static]
            tables = [(t.base, t.tables) for t in static]
            stencil = Stencil(self.n_vars, [StencilTerm((0,) * self.n_vars, 1.0, 0.0, {})] + rest)
            comp = CompiledStencil.build(stencil, cap)
            grids = np.indices(comp.shape).reshape(self.n_vars, -1)
            row = np.zeros(grids.shape[1], dtype=complex)
            for base, tabs in tables:
                fac = np.full(grids.shape[1], base, dtype=complex)
                for var, table in tabs.items():
                    fac *= table(grids[var])
                row += fac
            comp.factors[0] = row
            return comp
        return CompiledStencil.build(stencil, cap)


@dataclass
class CompiledStencil:
    """Flat arrays consumed by the kernels.

    ``factors[t, i]`` is zero wherever term ``t`` would leave the box, so the
    kernels need no bounds checks.
    """

    shape: tuple[int, ...]
    factors: np.ndarray
    offsets: np.ndarray
    base: np.ndarray
    freq: np.ndarray

    @classmethod
    def build(cls, stencil: Stencil, cap: int) -> CompiledStencil:
        shape = (cap + 1,) * stencil.n_vars
        size = int(np.prod(shape))
        strides = [int(np.prod(shape[v + 1 :])) for v in range(stencil.n_vars)]
        grids = np.indices(shape).reshape(stencil.n_vars, size)
        n_terms = len(stencil.terms)
        factors = np.zeros((max(n_terms, 1), size), dtype=complex)
        offsets = np.zeros(max(n_terms, 1), dtype=np.int64)
        base = np.zeros(max(n_terms, 1), dtype=complex)
        freq = np.zeros(max(n_terms, 1), dtype=float)
        for t, term in enumerate(stencil.terms):
            fac = np.ones(size, dtype=complex)
            for var, table in term.tables.items():
                fac *= table(grids[var])
            for var, s in enumerate(term.shift):
                dest = grids[var] + s
                fac[(dest < 0) | (dest > cap)] = 0
            for a, b in term.equal:
                fac[grids[a] != grids[b]] = 0
            factors[t] = fac
            offsets[t] = sum(s * st for s, st in zip(term.shift, strides))
            base[t] = term.base
            freq[t] = term.freq
        if n_terms == 0:
            factors[:] = 0
        return cls(shape, factors, offsets, base, freq)

    def coeffs(self, t: float) -> np.ndarray:
        return self.base * np.exp(1j * self.freq * t)


def _falling_table(m: int, scale: complex = 1.0) -> Table:
    if m == 0:
        return lambda k: np.full(k.shape, scale, dtype=complex)

    def table(k: np.ndarray) -> np.ndarray:
        out = np.ones(k.shape, dtype=float)
        for i in range(m):
            out *= k - i
        out[k < m] = 0
        return scale * out

    return table


def _linear_table(k: np.ndarray) -> np.ndarray:
    return k.astype(float)


def x_stencil(spec: NetworkSpec, c: complex = 0.0, conv: OperatorConvention = DEFAULT_CONVENTION) -> Stencil:
    """Generator of ``G_x``: Hamiltonian x-part, half the loss, plus ``C``."""
    r = complex(conv.r)
    n = spec.n_modes
    terms = []
    for term in spec.hamiltonian().terms:
        shift = tuple(term.u[j] - term.v[j] for j in range(n))
        tables = {j: _falling_table(term.v[j], r ** term.v[j]) for j in range(n) if term.v[j]}
        terms.append(StencilTerm(shift, 1j * term.h, term.freq, tables))
    for j in range(n):
        if spec.kappa[j]:
            terms.append(StencilTerm((0,) * n, -0.5 * spec.kappa[j], 0.0, {j: _linear_table}))
    if c != 0:
        terms.append(StencilTerm((0,) * n, complex(c), 0.0, {}))
    return Stencil(n, terms)


def y_stencil(spec: NetworkSpec, c: complex = 0.0, conv: OperatorConvention = DEFAULT_CONVENTION) -> Stencil:
    """Generator of ``G_y``: Hamiltonian y-part, half the loss, minus ``C``."""
    r = complex(conv.r)
    n = spec.n_modes
    terms = []
    for term in spec.hamiltonian().terms:
        shift = tuple(term.v[j] - term.u[j] for j in range(n))
        tables = {j: _falling_table(term.u[j], r ** term.u[j]) for j in range(n) if term.u[j]}
        terms.append(StencilTerm(shift, -1j * term.h, term.freq, tables))
    for j in range(n):
        if spec.kappa[j]:
            terms.append(StencilTerm((0,) * n, -0.5 * spec.kappa[j], 0.0, {j: _linear_table}))
    if c != 0:
        terms.append(StencilTerm((0,) * n, -complex(c), 0.0, {}))
    return Stencil(n, terms)


def full_stencil(spec: NetworkSpec, conv: OperatorConvention = DEFAULT_CONVENTION) -> Stencil:
    """Full G-picture generator on interleaved variables ``(x1, y1, x2, y2, ...)``."""
    n = spec.n_modes
    terms = []
    for side, stencil in ((0, x_stencil(spec, 0.0, conv)), (1, y_stencil(spec, 0.0, conv))):
        for term in stencil.terms:
            shift = [0] * (2 * n)
            for j in range(n):
                shift[2 * j + side] = term.shift[j]
            tables = {2 * j + side: tab for j, tab in term.tables.items()}
            terms.append(StencilTerm(tuple(shift), term.base, term.freq, tables))
    for j in range(n):
        if spec.kappa[j]:
            shift = [0] * (2 * n)
            shift[2 * j] = shift[2 * j + 1] = 1
            terms.append(StencilTerm(tuple(shift), spec.kappa[j], 0.0, {}, ((2 * j, 2 * j + 1),)))
    return Stencil(2 * n, terms)


def diagonal_stencil(spec: NetworkSpec, conv: OperatorConvention = DEFAULT_CONVENTION) -> Stencil:
    """Generator restricted to functions of ``z_j = x_j y_j``.

    Only the index-preserving terms of the x and y parts map diagonal entries
    onto diagonal entries; every other term is projected out.
    """
    n = spec.n_modes
    terms = []
    for stencil in (x_stencil(spec, 0.0, conv), y_stencil(spec, 0.0, conv)):
        for term in stencil.terms:
            if any(term.shift):
                continue
            terms.append(StencilTerm(term.shift, term.base, term.freq, dict(term.tables)))
    for j in range(n):
        if spec.kappa[j]:
            shift = [0] * n
            shift[j] = 1
            terms.append(StencilTerm(tuple(shift), spec.kappa[j], 0.0, {}))
    return Stencil(n, terms)


def apply_stencil_tensor(stencil: Stencil, t_dense: np.ndarray, t: float, cap: int) -> np.ndarray:
    """Reference (slow) application of a stencil to a dense array."""
    comp = stencil.compile(cap)
    src = t_dense.ravel()
    out = np.zeros_like(src)
    for coeff, fac, off in zip(comp.coeffs(t), comp.factors, comp.offsets):
        idx = np.nonzero(fac)[0]
        out[idx + off] += coeff * fac[idx] * src[idx]
    return out.reshape(t_dense.shape)
