"""Number-basis reference solvers and entropy-production diagnostics.

The adjoint solver evolves a dense operator matrix under the network
Hamiltonian and the zero-temperature level-resolved dissipator.  The
Schrodinger-picture single-mode solvers back the entropy-production study.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import constants
from scipy.linalg import eigh

from .coeff import CoeffTensor, monomial_matrix, reconstruct_matrix
from .generators import NetworkSpec

HBAR = constants.hbar
K_B = constants.k
# floor for eigenvalues before the logarithm; only non-positive roundoff should hit it
EIG_FLOOR = float(np.finfo(float).tiny)
LEAKAGE_TOL = 1e-8


# ---------------------------------------------------------------------------
# dense multimode operators


def mode_operator(k: int, l: int, mode: int, n_modes: int, n_levels: int) -> sp.csr_matrix:
    """``(a_mode^dagger)^k a_mode^l`` on the truncated product space."""
    out = sp.identity(1, dtype=complex, format="csr")
    for j in range(n_modes):
        m = monomial_matrix(k, l, n_levels) if j == mode else np.eye(n_levels)
        out = sp.kron(out, sp.csr_matrix(m), format="csr")
    return out


def operator_matrix(a: CoeffTensor, n_levels: int) -> np.ndarray:
    return reconstruct_matrix(a, n_levels)


def hamiltonian_parts(spec: NetworkSpec, n_levels: int) -> list[tuple[float, sp.csr_matrix]]:
    """``H/hbar`` grouped by drive frequency: ``H(t) = sum_f exp(i f t) H_f``."""
    n = spec.n_modes
    groups: dict[float, sp.csr_matrix] = {}
    for term in spec.hamiltonian().terms:
        mat = sp.identity(1, dtype=complex, format="csr")
        for j in range(n):
            mat = sp.kron(mat, sp.csr_matrix(monomial_matrix(term.u[j], term.v[j], n_levels)), format="csr")
        groups[term.freq] = groups.get(term.freq, 0) + term.h * mat
    return [(f, sp.csr_matrix(m)) for f, m in sorted(groups.items())]


def hamiltonian_at(parts, t: float) -> sp.csr_matrix:
    out = None
    for f, m in parts:
        term = m if f == 0.0 else m * complex(math.cos(f * t), math.sin(f * t))
        out = term if out is None else out + term
    return out


class AdjointGenerator:
    """Right-hand side of the adjoint master equation on ``L**N`` levels.

    ``i[H(t), A] + sum_j (kappa_j/2) [2 sum_n (n+1)|n+1><n|A|n><n+1| - {n_j, A}]``
    """

    def __init__(self, spec: NetworkSpec, n_levels: int):
        if n_levels < 3:
            raise ValueError("reference truncation needs at least 3 levels")
        self.spec = spec
        self.n_levels = n_levels
        n = spec.n_modes
        self.dim = n_levels**n
        self.parts = hamiltonian_parts(spec, n_levels)
        occ = np.indices((n_levels,) * n).reshape(n, self.dim)  # occ[j, i]: level of mode j in basis i
        kap = np.asarray(spec.kappa, dtype=float)
        self.decay = -0.5 * sum(kap[j] * (occ[j][:, None] + occ[j][None, :]) for j in range(n))
        self.jumps = []
        rows, cols = np.indices((self.dim, self.dim))
        for j in range(n):
            if kap[j] == 0:
                continue
            ok = (occ[j][rows] == occ[j][cols]) & (occ[j][rows] < n_levels - 1)
            stride = n_levels ** (n - 1 - j)
            src_r, src_c = rows[ok], cols[ok]
            weight = kap[j] * (occ[j][src_r] + 1.0)
            self.jumps.append((src_r, src_c, src_r + stride, src_c + stride, weight))

    def nnz_h(self) -> int:
        return int(sum(m.nnz for _, m in self.parts))

    def ops_per_rhs(self) -> int:
        """Complex multiply-adds in one evaluation: two sparse products, the
        combined decay factor and the level-shift jumps."""
        return 2 * self.nnz_h() * self.dim + self.dim**2 + sum(len(j[0]) for j in self.jumps)

    def __call__(self, t: float, a: np.ndarray) -> np.ndarray:
        h = hamiltonian_at(self.parts, t)
        out = 1j * (h @ a - (h.T @ a.T).T)
        out += self.decay * a
        for sr, sc, dr, dc, w in self.jumps:
            out[dr, dc] += w * a[sr, sc]
        return out


def adjoint_rhs_number_basis(a: np.ndarray, spec: NetworkSpec, t: float = 0.0, n_levels: int | None = None) -> np.ndarray:
    if n_levels is None:
        n_levels = round(a.shape[0] ** (1.0 / spec.n_modes))
    return AdjointGenerator(spec, n_levels)(t, a)


@dataclass
class ReferenceRun:
    times: list[float]
    block_series: list[np.ndarray]
    final: np.ndarray
    n_levels: int
    peak_stored: int
    ops_per_step: int
    leakage: float


def _block(a: np.ndarray, n_modes: int, n_levels: int, keep: int) -> np.ndarray:
    shape = (n_levels,) * (2 * n_modes)
    sub = a.reshape(shape)[(slice(0, keep),) * (2 * n_modes)]
    return sub.reshape(keep**n_modes, keep**n_modes)


def block_leakage(a: np.ndarray, n_modes: int, n_levels: int, keep: int = 3) -> float:
    """Weight coupling the retained block to the top level of any mode, relative to the block norm."""
    t = a.reshape((n_levels,) * (2 * n_modes))
    blk = np.linalg.norm(_block(a, n_modes, n_levels, keep)) or 1.0
    worst = 0.0
    for j in range(n_modes):
        for ax_top in (j, n_modes + j):
            idx = [slice(0, keep)] * (2 * n_modes)
            idx[ax_top] = n_levels - 1
            worst = max(worst, float(np.linalg.norm(t[tuple(idx)])))
    return worst / blk


def solve_adjoint(
    a0: np.ndarray,
    spec: NetworkSpec,
    n_levels: int,
    dt: float,
    n_steps: int,
    sample_every: int = 1,
    keep: int = 3,
) -> ReferenceRun:
    """RK4 integration of the dense adjoint equation, sampling the ``keep``-level block."""
    gen = AdjointGenerator(spec, n_levels)
    a = np.array(a0, dtype=complex)
    times, blocks = [0.0], [_block(a, spec.n_modes, n_levels, keep)]
    for step in range(n_steps):
        t = step * dt
        k1 = gen(t, a)
        k2 = gen(t + 0.5 * dt, a + 0.5 * dt * k1)
        k3 = gen(t + 0.5 * dt, a + 0.5 * dt * k2)
        k4 = gen(t + dt, a + dt * k3)
        a = a + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if (step + 1) % sample_every == 0 or step + 1 == n_steps:
            times.append((step + 1) * dt)
            blocks.append(_block(a, spec.n_modes, n_levels, keep))
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("reference integration produced non-finite entries")
    return ReferenceRun(
        times=times,
        block_series=blocks,
        final=a,
        n_levels=n_levels,
        peak_stored=gen.dim**2,
        ops_per_step=4 * gen.ops_per_rhs(),
        leakage=block_leakage(a, spec.n_modes, n_levels, keep),
    )


def reference_solve(
    a0: CoeffTensor,
    spec: NetworkSpec,
    total_time: float,
    dt: float,
    n_levels: int,
    extra_levels: int = 8,
    keep: int = 3,
    sample_every: int | None = None,
) -> ReferenceRun:
    """Reference protocol: ``n_levels + extra_levels`` per mode and half the time step.

    ``dt`` is the production step; it is adjusted to land on ``total_time``
    exactly as the production integrator does, then halved.  ``sample_every``
    counts production steps, so samples line up with the production grid.
    """
    if extra_levels <= 0:
        raise ValueError("reference truncation must exceed the production truncation")
    levels = n_levels + extra_levels
    n_prod = max(1, math.ceil(total_time / dt - 1e-9)) if total_time > 0 else 0
    h = total_time / (2 * n_prod) if n_prod else 0.5 * dt
    every = 2 * (sample_every or max(n_prod, 1))
    run = solve_adjoint(operator_matrix(a0, levels), spec, levels, h, 2 * n_prod, every, keep)
    if run.leakage > LEAKAGE_TOL:
        warnings.warn(f"reference truncation leakage {run.leakage:.2e} exceeds {LEAKAGE_TOL:g}", RuntimeWarning, stacklevel=2)
    return run


def conventional_solve(
    a0: CoeffTensor, spec: NetworkSpec, total_time: float, dt: float, n_levels: int, keep: int = 3,
    sample_every: int | None = None,
) -> ReferenceRun:
    """Production conventional method: ``n_levels`` per mode at the production step."""
    n_steps = max(1, math.ceil(total_time / dt - 1e-9)) if total_time > 0 else 0
    h = total_time / n_steps if n_steps else dt
    return solve_adjoint(operator_matrix(a0, n_levels), spec, n_levels, h, n_steps, sample_every or max(n_steps, 1), keep)


# ---------------------------------------------------------------------------
# single-mode Schrodinger picture and entropy production


@dataclass(frozen=True)
class BathSpec:
    temperature: float  # K

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("bath temperature must be non-negative")

    def occupation(self, gap: float) -> float:
        """Bose occupation at angular gap ``gap`` (rad/s)."""
        if self.temperature == 0:
            return 0.0
        return bose(HBAR * gap / (K_B * self.temperature))


@dataclass(frozen=True)
class GaussianDiagonalState:
    c: float

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")

    @classmethod
    def from_temperature(cls, t0: float, omega: float) -> GaussianDiagonalState:
        return cls(HBAR * omega / (K_B * t0))

    @property
    def n0(self) -> float:
        return bose(self.c)

    def t0(self, omega: float) -> float:
        return HBAR * omega / (K_B * self.c)

    def matrix(self, n_levels: int) -> np.ndarray:
        """Populations ``(1 - e^-c) e^{-cn}``; unnormalized truncation tail is dropped."""
        n = np.arange(n_levels)
        return np.diag(-math.expm1(-self.c) * np.exp(-self.c * n)).astype(complex)


def _ladder(n_levels: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, n_levels)), 1).astype(complex)


def oscillator_hamiltonian(omega: float, eta: float, n_levels: int) -> np.ndarray:
    n = np.arange(n_levels, dtype=float)
    return np.diag(omega * n + eta * n * (n - 1)).astype(complex)


def _single(spec: NetworkSpec) -> tuple[float, float, float]:
    if spec.n_modes != 1:
        raise ValueError("single-mode master equation requires N = 1")
    return float(spec.omega_q[0]), float(spec.eta[0]), float(spec.kappa[0])


def schrodinger_rhs_conventional(rho: np.ndarray, spec: NetworkSpec, bath: BathSpec) -> np.ndarray:
    """Commonly used anharmonic-oscillator master equation (drive ignored)."""
    omega, eta, kappa = _single(spec)
    L = rho.shape[0]
    a = _ladder(L)
    ad = a.conj().T
    h = oscillator_hamiltonian(omega, eta, L)
    nb = bath.occupation(omega)
    out = -1j * (h @ rho - rho @ h)
    num = ad @ a
    out += 0.5 * kappa * (nb + 1) * (2 * a @ rho @ ad - num @ rho - rho @ num)
    if nb:
        anti = a @ ad
        out += 0.5 * kappa * nb * (2 * ad @ rho @ a - anti @ rho - rho @ anti)
    return out


def schrodinger_rhs_first_principles(rho: np.ndarray, spec: NetworkSpec, bath: BathSpec) -> np.ndarray:
    """Level-resolved master equation; the ``k <-> k+1`` channel uses the gap ``omega + 2 eta k``."""
    omega, eta, kappa = _single(spec)
    L = rho.shape[0]
    h = oscillator_hamiltonian(omega, eta, L)
    out = -1j * (h @ rho - rho @ h)
    pops = np.real(np.diag(rho))
    for k in range(L - 1):
        nb = bath.occupation(omega + 2 * eta * k)
        down = 0.5 * kappa * (k + 1) * (nb + 1)
        up = 0.5 * kappa * (k + 1) * nb
        out[k, k] += 2 * down * pops[k + 1]
        out[k + 1, :] -= down * rho[k + 1, :]
        out[:, k + 1] -= down * rho[:, k + 1]
        if up:
            out[k + 1, k + 1] += 2 * up * pops[k]
            out[k, :] -= up * rho[k, :]
            out[:, k] -= up * rho[:, k]
    return out


def gibbs_state(spec: NetworkSpec, bath: BathSpec, n_levels: int) -> np.ndarray:
    omega, eta, _ = _single(spec)
    e = np.real(np.diag(oscillator_hamiltonian(omega, eta, n_levels)))
    w = np.exp(-HBAR * (e - e[0]) / (K_B * bath.temperature))
    return np.diag(w / w.sum()).astype(complex)


def entropy_production(rho: np.ndarray, rho_dot: np.ndarray, h: np.ndarray, t_env: float,
                       floor: float = EIG_FLOOR) -> float:
    """``Pi / k_B`` in 1/s: ``-Tr[rho_dot (ln rho + hbar H / k_B T_E)]`` with ``H`` in rad/s."""
    if not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ValueError("density matrix is not Hermitian")
    if t_env <= 0:
        raise ValueError("environment temperature must be positive")
    vals, vecs = eigh(rho)
    log_rho = (vecs * np.log(np.maximum(vals, floor))) @ vecs.conj().T
    gen = log_rho + (HBAR / (K_B * t_env)) * h
    return float(-np.real(np.trace(rho_dot @ gen)))


def conventional_closed_form(omega: float, eta: float, kappa: float, n0: float, t0: float, t_env: float) -> float:
    """``Pi(0)/k_B`` for the conventional equation and a diagonal Gaussian state."""
    nb = bose(HBAR * omega / (K_B * t_env))
    scaled = (n0 - nb) * (omega * (1 - t_env / t0) + 4 * eta * n0)
    return scaled * HBAR * kappa / (K_B * t_env)


def first_principles_closed_form(omega: float, kappa: float, t0: float, t_env: float) -> float:
    """Low-temperature ``Pi(0)/k_B`` for the level-resolved equation."""
    bracket = (t_env - t0) * (math.exp(-HBAR * omega / (K_B * t_env)) - math.exp(-HBAR * omega / (K_B * t0)))
    return bracket * HBAR * kappa * omega / (K_B * t0 * t_env)


def negativity_window(omega: float, eta: float, n0: float, t_env: float) -> tuple[float, float] | None:
    """Open interval of ``T0`` giving negative initial entropy production, or ``None``.

    ``n0`` enters the window bound; a consistent pair uses ``n0`` of the state at ``T0``
    (see :func:`consistent_window`).
    """
    if omega <= 0 or n0 <= 0 or t_env <= 0:
        raise ValueError("omega, N0 and T_E must be positive")
    if eta == 0:
        return None
    s = omega + 4 * eta * n0
    if s <= 0:
        return (t_env, math.inf)
    edge = t_env / (4 * n0 * eta / omega + 1)
    return (edge, t_env) if eta > 0 else (t_env, edge)


def bose(x: float) -> float:
    """``1 / (e^x - 1)`` without overflow for large ``x``."""
    if x > 700:
        return math.exp(-x)
    return 1.0 / math.expm1(x)


def _n0_of(t0: float, omega: float) -> float:
    return bose(HBAR * omega / (K_B * t0))


def consistent_window(omega: float, eta: float, t_env: float) -> tuple[float, float] | None:
    """Window with ``N0`` tied to ``T0`` self-consistently.

    Solves for the edge ``T0`` where ``omega(1 - T_E/T0) + 4 eta N0(T0)`` changes
    sign; the other edge is ``T_E`` where ``N0 = nbar``.
    """
    if eta == 0:
        return None

    def bracket(t0: float) -> float:
        return omega * (1 - t_env / t0) + 4 * eta * _n0_of(t0, omega)

    from scipy.optimize import brentq

    if eta > 0:
        lo = t_env * 1e-3
        if bracket(lo) >= 0:
            return None
        return (brentq(bracket, lo, t_env, xtol=1e-14 * t_env, rtol=1e-15), t_env)
    hi = t_env
    while bracket(hi) < 0 and hi < 1e6 * t_env:
        hi *= 2
    if bracket(hi) < 0:
        return (t_env, math.inf)
    return (t_env, brentq(bracket, t_env * (1 + 1e-15), hi, xtol=1e-14 * t_env, rtol=1e-15))


def initial_entropy_production(
    spec: NetworkSpec, bath: BathSpec, state: GaussianDiagonalState, n_levels: int, model: str = "conventional"
) -> float:
    omega, eta, _ = _single(spec)
    rho = state.matrix(n_levels)
    rhs = schrodinger_rhs_conventional if model == "conventional" else schrodinger_rhs_first_principles
    rho_dot = rhs(rho, spec, bath)
    return entropy_production(rho, rho_dot, oscillator_hamiltonian(omega, eta, n_levels), bath.temperature)


def export_matrix(path, mat: np.ndarray) -> None:
    """Plain-text complex matrix: one row per line, ``re im`` pairs."""
    with open(path, "w") as fh:
        for row in np.atleast_2d(mat):
            fh.write(" ".join(f"{float(z.real)!r} {float(z.imag)!r}" for z in row) + "\n")


def import_matrix(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            vals = [float(x) for x in line.split()]
            rows.append([complex(a, b) for a, b in zip(vals[0::2], vals[1::2])])
    return np.array(rows, dtype=complex)
