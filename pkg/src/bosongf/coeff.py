"""Sparse multi-index coefficient tensors and the F <-> G transforms.

An operator of an N-mode system is expanded in ordered monomials

    A = sum_{k,l} f_{k,l} prod_j o1_j^{k_j} o2_j^{l_j}

and the coefficients are stored sparsely, keyed by the interleaved multi-index
``(k_1, l_1, ..., k_N, l_N)``.  The transformed coefficients ``g`` belong to the
series ``G = F * prod_j exp(x_j y_j / r)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np

DEFAULT_CAP = 32

MultiIndex = tuple[int, ...]


@dataclass(frozen=True)
class OperatorConvention:
    """Elementary operators obeying ``[o2, o1] = r``.

    The default is ``o1 = a^dagger``, ``o2 = a`` with ``r = 1``.
    """

    r: complex = 1.0

    def __post_init__(self):
        if self.r == 0:
            raise ValueError("commutator scalar r must be nonzero")

    @property
    def is_default(self) -> bool:
        return complex(self.r) == 1.0


DEFAULT_CONVENTION = OperatorConvention()


@dataclass
class CoeffTensor:
    """Sparse map from multi-indices to complex amplitudes.

    Indices are tuples of length ``2 * n_modes`` laid out as
    ``(k1, l1, k2, l2, ...)``.  Entries whose exponents exceed ``cap`` are
    never stored; ``truncated`` accumulates the number of entries dropped for
    that reason.
    """

    n_modes: int
    data: dict[MultiIndex, complex] = field(default_factory=dict)
    cap: int = DEFAULT_CAP
    tau: float = 0.0
    truncated: int = 0

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("n_modes must be positive")
        clean: dict[MultiIndex, complex] = {}
        for idx, val in self.data.items():
            idx = tuple(int(i) for i in idx)
            self._check_index(idx)
            if max(idx) > self.cap:
                self.truncated += 1
                continue
            val = complex(val)
            if val != 0:
                clean[idx] = val
        self.data = clean

    def _check_index(self, idx: MultiIndex) -> None:
        if len(idx) != 2 * self.n_modes:
            raise ValueError(f"index {idx} has length {len(idx)}, expected {2 * self.n_modes}")
        if min(idx) < 0:
            raise ValueError(f"negative exponent in index {idx}")

    @classmethod
    def identity(cls, n_modes: int = 1, cap: int = DEFAULT_CAP) -> CoeffTensor:
        return cls(n_modes, {(0,) * (2 * n_modes): 1.0}, cap=cap)

    @classmethod
    def monomial(cls, exponents: Iterable[int], coeff: complex = 1.0, cap: int = DEFAULT_CAP) -> CoeffTensor:
        idx = tuple(exponents)
        return cls(len(idx) // 2, {idx: coeff}, cap=cap)

    def empty_like(self) -> CoeffTensor:
        return CoeffTensor(self.n_modes, {}, cap=self.cap, tau=self.tau)

    def __getitem__(self, idx: MultiIndex) -> complex:
        # negative indices are valid lookups and always vanish
        return self.data.get(tuple(idx), 0j)

    def __iter__(self) -> Iterator[tuple[MultiIndex, complex]]:
        return iter(sorted(self.data.items()))

    def __len__(self) -> int:
        return len(self.data)

    @property
    def nnz(self) -> int:
        return len(self.data)

    def max_exponent(self) -> int:
        return max((max(i) for i in self.data), default=0)

    def copy(self) -> CoeffTensor:
        return CoeffTensor(self.n_modes, dict(self.data), cap=self.cap, tau=self.tau, truncated=self.truncated)

    def scaled(self, alpha: complex) -> CoeffTensor:
        return CoeffTensor(self.n_modes, {k: alpha * v for k, v in self.data.items()}, cap=self.cap, tau=self.tau)

    def __add__(self, other: CoeffTensor) -> CoeffTensor:
        self._check_compatible(other)
        out = dict(self.data)
        for k, v in other.data.items():
            out[k] = out.get(k, 0j) + v
        return CoeffTensor(self.n_modes, out, cap=min(self.cap, other.cap), tau=self.tau)

    def __sub__(self, other: CoeffTensor) -> CoeffTensor:
        return self + other.scaled(-1.0)

    def __mul__(self, alpha: complex) -> CoeffTensor:
        return self.scaled(alpha)

    __rmul__ = __mul__

    def _check_compatible(self, other: CoeffTensor) -> None:
        if self.n_modes != other.n_modes:
            raise ValueError("mode counts differ")

    def max_abs_diff(self, other: CoeffTensor) -> float:
        keys = set(self.data) | set(other.data)
        return max((abs(self[k] - other[k]) for k in keys), default=0.0)

    def window(self, max_exp: int) -> CoeffTensor:
        """Entries with every exponent at most ``max_exp``."""
        return CoeffTensor(
            self.n_modes,
            {k: v for k, v in self.data.items() if max(k) <= max_exp},
            cap=self.cap,
            tau=self.tau,
        )

    def conj_transpose(self) -> CoeffTensor:
        """Coefficients of the adjoint operator (default convention)."""
        out = {}
        for idx, v in self.data.items():
            swapped = []
            for j in range(self.n_modes):
                swapped += [idx[2 * j + 1], idx[2 * j]]
            out[tuple(swapped)] = np.conj(v)
        return CoeffTensor(self.n_modes, out, cap=self.cap, tau=self.tau)

    def to_dense(self, cap: int | None = None) -> np.ndarray:
        """Dense array of shape ``(cap+1,) * 2N`` in interleaved index order."""
        cap = self.cap if cap is None else cap
        arr = np.zeros((cap + 1,) * (2 * self.n_modes), dtype=complex)
        for idx, v in self.data.items():
            if max(idx) <= cap:
                arr[idx] = v
        return arr

    @classmethod
    def from_dense(cls, arr: np.ndarray, cap: int | None = None, tau: float = 0.0) -> CoeffTensor:
        n_modes = arr.ndim // 2
        cap = arr.shape[0] - 1 if cap is None else cap
        nz = np.argwhere(arr != 0)
        data = {tuple(int(i) for i in row): complex(arr[tuple(row)]) for row in nz}
        return cls(n_modes, data, cap=cap, tau=tau)


def prune(t: CoeffTensor, tau: float) -> tuple[CoeffTensor, int]:
    """Drop entries with magnitude below ``tau``; returns (tensor, removed)."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    kept = {k: v for k, v in t.data.items() if abs(v) >= tau}
    removed = len(t.data) - len(kept)
    return CoeffTensor(t.n_modes, kept, cap=t.cap, tau=tau, truncated=t.truncated), removed


def _diag_transform(t: CoeffTensor, weight) -> CoeffTensor:
    """Apply ``c_{k,l} -> sum_j weight(j) c_{k-j,l-j}`` independently per mode."""
    cap = t.cap
    data = dict(t.data)
    for mode in range(t.n_modes):
        ik, il = 2 * mode, 2 * mode + 1
        out: dict[MultiIndex, complex] = {}
        for idx, v in data.items():
            room = cap - max(idx[ik], idx[il])
            for j in range(room + 1):
                w = weight(j)
                if w == 0:
                    continue
                new = list(idx)
                new[ik] += j
                new[il] += j
                key = tuple(new)
                out[key] = out.get(key, 0j) + w * v
        data = {k: v for k, v in out.items() if v != 0}
    return CoeffTensor(t.n_modes, data, cap=cap, tau=t.tau, truncated=t.truncated)


def f_to_g(f: CoeffTensor, conv: OperatorConvention = DEFAULT_CONVENTION) -> CoeffTensor:
    """``g_{k,l} = sum_j r^{-j} / j! f_{k-j,l-j}`` per mode."""
    r = complex(conv.r)
    return _diag_transform(f, lambda j: r ** (-j) / math.factorial(j))


def g_to_f(g: CoeffTensor, conv: OperatorConvention = DEFAULT_CONVENTION) -> CoeffTensor:
    """Inverse of :func:`f_to_g`: ``f_{k,l} = sum_j (-r)^{-j} / j! g_{k-j,l-j}``."""
    r = complex(conv.r)
    return _diag_transform(g, lambda j: (-r) ** (-j) / math.factorial(j))


def ladder_element(m: int, n: int, k: int, l: int) -> float:
    """``<m| (a^dagger)^k a^l |n>``."""
    if k > m or l > n or m - k != n - l:
        return 0.0
    return math.sqrt(math.factorial(m) / math.factorial(m - k) * math.factorial(n) / math.factorial(n - l))


def monomial_matrix(k: int, l: int, n_levels: int) -> np.ndarray:
    out = np.zeros((n_levels, n_levels))
    for n in range(l, n_levels):
        m = n - l + k
        if m < n_levels:
            out[m, n] = ladder_element(m, n, k, l)
    return out


def reconstruct_matrix(f: CoeffTensor, n_levels: int) -> np.ndarray:
    """Number-basis matrix of ``f`` truncated to ``n_levels`` per mode.

    Multimode output uses the Kronecker ordering with mode 1 most significant.
    Monomials whose exponents reach ``n_levels`` vanish on the retained block.
    """
    if n_levels < 1:
        raise ValueError("n_levels must be positive")
    dim = n_levels ** f.n_modes
    out = np.zeros((dim, dim), dtype=complex)
    cache: dict[tuple[int, int], np.ndarray] = {}
    for idx, v in f.data.items():
        if max(idx) >= n_levels:
            continue
        mat = np.ones((1, 1))
        for j in range(f.n_modes):
            key = (idx[2 * j], idx[2 * j + 1])
            if key not in cache:
                cache[key] = monomial_matrix(*key, n_levels)
            mat = np.kron(mat, cache[key])
        out += v * mat
    return out


def dumps(t: CoeffTensor, header: str | None = None) -> str:
    """Line-oriented text form: ``k1 l1 ... kN lN re im`` per entry."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    for idx, v in t:
        buf.write(" ".join(str(i) for i in idx))
        buf.write(f" {v.real!r} {v.imag!r}\n")
    return buf.getvalue()


def loads(text: str, cap: int = DEFAULT_CAP) -> CoeffTensor:
    data: dict[MultiIndex, complex] = {}
    width = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) < 4 or len(parts) % 2:
            raise ValueError(f"line {lineno}: malformed coefficient entry")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise ValueError(f"line {lineno}: inconsistent mode count")
        idx = tuple(int(p) for p in parts[:-2])
        data[idx] = data.get(idx, 0j) + complex(float(parts[-2]), float(parts[-1]))
    if width is None:
        raise ValueError("no coefficient entries found")
    return CoeffTensor((width - 2) // 2, data, cap=cap)


def from_mapping(n_modes: int, mapping: Mapping[MultiIndex, complex], cap: int = DEFAULT_CAP) -> CoeffTensor:
    return CoeffTensor(n_modes, dict(mapping), cap=cap)
