"""Time integration of the transformed generating function.

The pipeline for an initial operator ``A(0)``:

1. expand ``A(0)`` in ordered monomials and transform to ``g(0)``;
2. fan out one trajectory per non-negligible ``g_{p,q}(0)`` starting from
   the monomial ``x^p y^q``;
3. evolve each trajectory as ``G = G_x G_y + R`` with the compiled core;
4. sum the weighted trajectories and transform back to ``f(t)``.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .coeff import DEFAULT_CAP, DEFAULT_CONVENTION, CoeffTensor, OperatorConvention, f_to_g, g_to_f
from .generators import NetworkSpec, diagonal_stencil, full_stencil, x_stencil, y_stencil

log = logging.getLogger(__name__)

N_SAMPLES = 200
# |lambda dt| bound kept inside the RK4 stability region (imaginary-axis limit 2*sqrt(2))
RK4_STABLE = 2.5


def separation_constant(p: Sequence[int], q: Sequence[int], spec: NetworkSpec) -> complex:
    """Constant balancing the initial phase rates of ``G_x`` and ``G_y``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    total = np.sum((spec.omega_q - spec.eta) * (p + q) + spec.eta * (p**2 + q**2))
    return complex(0.0, -0.5 * total)


def default_dt(spec: NetworkSpec) -> float:
    return 2 * math.pi / (float(np.max(spec.omega_q)) * 200)


def scaled_time_to_seconds(scaled: float, spec: NetworkSpec) -> float:
    """Convert ``omega_q t / pi`` to seconds (first mode's frequency)."""
    return scaled * math.pi / float(spec.omega_q[0])


@dataclass
class IntegratorConfig:
    total_time: float
    dt: float | None = None
    tau: float = 0.0
    cap: int = DEFAULT_CAP
    r_mode: str = "diagonal"
    out_degree: int = 2
    min_weight: float = 1e-14
    n_samples: int = N_SAMPLES
    backend: str | None = None
    threads: int = 1
    stability_substeps: bool = True

    def __post_init__(self):
        if self.total_time < 0:
            raise ValueError("total time must be non-negative")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.r_mode not in ("diagonal", "full"):
            raise ValueError("r_mode must be 'diagonal' or 'full'")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    def grid(self, spec: NetworkSpec) -> tuple[float, int, int]:
        """(dt, n_steps, sample_every) with ``dt`` adjusted to land on ``total_time``."""
        dt = self.dt or default_dt(spec)
        n_steps = int(math.ceil(self.total_time / dt - 1e-9)) if self.total_time > 0 else 0
        if n_steps:
            dt = self.total_time / n_steps
        every = max(1, math.ceil(n_steps / self.n_samples)) if n_steps else 1
        return dt, n_steps, every


def sample_steps(n_steps: int, every: int) -> list[int]:
    steps = list(range(0, n_steps + 1, every))
    if steps[-1] != n_steps:
        steps.append(n_steps)
    return steps


def rk4_step(rhs: Callable, y, t: float, dt: float, prune: Callable | None = None):
    """Classic four-stage Runge-Kutta step; ``prune`` runs on the combined update."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * dt, y + (0.5 * dt) * k1)
    k3 = rhs(t + 0.5 * dt, y + (0.5 * dt) * k2)
    k4 = rhs(t + dt, y + dt * k3)
    out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if prune is not None:
        out = prune(out)
    _check_finite(out)
    return out


def _check_finite(y) -> None:
    if isinstance(y, CoeffTensor):
        vals = np.fromiter(y.data.values(), dtype=complex, count=len(y.data))
    else:
        vals = np.asarray(y)
    if not np.all(np.isfinite(vals)):
        raise FloatingPointError("non-finite amplitude encountered during integration")


@dataclass(frozen=True, order=True)
class TrajectoryTag:
    p: tuple[int, ...]
    q: tuple[int, ...]
    weight: complex = field(default=1.0, compare=False)
    c: complex = field(default=0j, compare=False)

    def label(self) -> str:
        return "p=" + ",".join(map(str, self.p)) + " q=" + ",".join(map(str, self.q))


@dataclass
class SeparatedState:
    """``G = G_x(x) G_y(y) + R`` on dense boxes of side ``cap + 1``.

    ``gx`` and ``gy`` have one axis per mode.  In diagonal mode ``r`` has one
    axis per mode (the exponent of ``x_j y_j``); in full mode it has ``2N``
    interleaved axes ``(k1, l1, k2, l2, ...)``.
    """

    gx: np.ndarray
    gy: np.ndarray
    r: np.ndarray
    r_mode: str = "diagonal"

    @property
    def n_modes(self) -> int:
        return self.gx.ndim

    @property
    def cap(self) -> int:
        return self.gx.shape[0] - 1

    @classmethod
    def monomial(cls, p: Sequence[int], q: Sequence[int], cap: int, r_mode: str = "diagonal") -> SeparatedState:
        n = len(p)
        gx = np.zeros((cap + 1,) * n, dtype=complex)
        gy = np.zeros((cap + 1,) * n, dtype=complex)
        gx[tuple(p)] = 1.0
        gy[tuple(q)] = 1.0
        rshape = (cap + 1,) * (n if r_mode == "diagonal" else 2 * n)
        return cls(gx, gy, np.zeros(rshape, dtype=complex), r_mode)

    def copy(self) -> SeparatedState:
        return SeparatedState(self.gx.copy(), self.gy.copy(), self.r.copy(), self.r_mode)

    def nnz(self) -> int:
        return int(np.count_nonzero(self.gx) + np.count_nonzero(self.gy) + np.count_nonzero(self.r))

    def corner(self, degree: int) -> np.ndarray:
        """Dense ``G`` restricted to exponents ``<= degree``, interleaved axes."""
        n = self.n_modes
        sl = (slice(0, degree + 1),) * n
        out = _interleave(np.multiply.outer(self.gx[sl], self.gy[sl]), n)
        if self.r_mode == "full":
            out = out + self.r[(slice(0, degree + 1),) * (2 * n)]
        else:
            out = out + _diag_embed(self.r[sl], n)
        return out

    def combined(self) -> np.ndarray:
        return self.corner(self.cap)

    def to_tensor(self) -> CoeffTensor:
        return CoeffTensor.from_dense(self.combined())


def _interleave(outer: np.ndarray, n: int) -> np.ndarray:
    # outer has axes (k1..kN, l1..lN)
    order = []
    for j in range(n):
        order += [j, n + j]
    return np.transpose(outer, order)


def _diag_embed(r: np.ndarray, n: int) -> np.ndarray:
    side = r.shape[0]
    out = np.zeros((side,) * (2 * n), dtype=complex)
    for idx in np.ndindex(*r.shape):
        if r[idx] != 0:
            full = []
            for i in idx:
                full += [i, i]
            out[tuple(full)] = r[idx]
    return out


class SeparatedSystem:
    """Compiled stencils for one (spec, cap, r_mode); shared read-only by trajectories."""

    def __init__(self, spec: NetworkSpec, cap: int = DEFAULT_CAP, r_mode: str = "diagonal",
                 conv: OperatorConvention = DEFAULT_CONVENTION):
        self.spec = spec
        self.cap = cap
        self.r_mode = r_mode
        n = spec.n_modes
        # row 0 of each compiled block is the merged static diagonal; +C / -C is added per trajectory
        self.xop = x_stencil(spec, 0.0, conv).compile(cap, merge_diagonal=True)
        self.yop = y_stencil(spec, 0.0, conv).compile(cap, merge_diagonal=True)
        rst = diagonal_stencil(spec, conv) if r_mode == "diagonal" else full_stencil(spec, conv)
        self.rop = rst.compile(cap, merge_diagonal=True)
        self.source = self._source_maps(n)
        self.has_r = bool(np.any(spec.kappa > 0))
        self._xb = self._gershgorin(self.xop)
        self._yb = self._gershgorin(self.yop)
        self._rb = self._gershgorin(self.rop)

    @staticmethod
    def _gershgorin(op):
        """(diagonal, radius) per source index; the disc bounds the spectrum."""
        w = op.base[:, None] * op.factors
        return w[0], np.abs(w[1:]).sum(axis=0)

    def substeps(self, c: complex, dt: float) -> int:
        """Fixed RK4 subdivision keeping every Gershgorin disc inside the stable region."""
        bound = max(
            float(np.max(np.abs(self._xb[0] + c) + self._xb[1])),
            float(np.max(np.abs(self._yb[0] - c) + self._yb[1])),
            float(np.max(np.abs(self._rb[0]) + self._rb[1])) if self.has_r else 0.0,
        )
        return max(1, math.ceil(bound * dt / RK4_STABLE))

    def _source_maps(self, n: int):
        side = self.cap + 1
        kap = np.asarray(self.spec.kappa, dtype=float)
        xbox = (side,) * n
        if self.r_mode == "diagonal":
            size = side**n
            coords = np.indices(xbox).reshape(n, size)
            flat = np.arange(size)
            sx = np.full((n, size), -1, dtype=np.int64)
            for j in range(n):
                stride = side ** (n - 1 - j)
                ok = coords[j] >= 1
                sx[j, ok] = flat[ok] - stride
            return kap, sx, sx.copy()
        size = side ** (2 * n)
        coords = np.indices((side,) * (2 * n)).reshape(2 * n, size)
        kx, ly = coords[0::2], coords[1::2]
        sx = np.full((n, size), -1, dtype=np.int64)
        sy = np.full((n, size), -1, dtype=np.int64)
        for j in range(n):
            ok = (kx[j] == ly[j]) & (kx[j] >= 1)
            kk = kx.copy()
            ll = ly.copy()
            kk[j] -= 1
            ll[j] -= 1
            fx = np.ravel_multi_index(tuple(np.clip(kk, 0, None)), xbox)
            fy = np.ravel_multi_index(tuple(np.clip(ll, 0, None)), xbox)
            sx[j, ok] = fx[ok]
            sy[j, ok] = fy[ok]
        return kap, sx, sy

    def ops_for(self, c: complex):
        def pack(op, shift):
            fac = op.factors
            if shift != 0:
                fac = fac.copy()
                fac[0] += shift
            return (fac, op.offsets, op.base, op.freq)

        return pack(self.xop, c), pack(self.yop, -c), pack(self.rop, 0)


@dataclass
class TrajectoryResult:
    tag: TrajectoryTag
    times: list[float]
    samples: list
    ops: int
    peak_nnz: int
    peak_history: list[int] = field(default_factory=list)


def evolve_separated(
    init: SeparatedState,
    tag: TrajectoryTag,
    spec: NetworkSpec,
    cfg: IntegratorConfig,
    system: SeparatedSystem | None = None,
    reduce: Callable[[SeparatedState], object] | None = None,
    start_step: int = 0,
) -> TrajectoryResult:
    """Integrate one separated trajectory, sampling on the output grid.

    Pruning uses ``cfg.tau / |tag.weight|`` so the threshold applies to the
    weighted contribution.  ``reduce`` maps each sampled state to what is
    kept (default: a full copy).  ``start_step`` resumes from a checkpointed
    state taken at that step of the same grid.
    """
    if system is None:
        system = SeparatedSystem(spec, init.cap, init.r_mode)
    reduce = reduce or SeparatedState.copy
    dt, n_steps, every = cfg.grid(spec)
    w = abs(tag.weight) or 1.0
    tau = cfg.tau / w
    xop, yop, rop = system.ops_for(tag.c)
    sub = system.substeps(tag.c, dt) if cfg.stability_substeps else 1
    h = dt / sub
    state = init.copy()
    gx, gy, r = state.gx.reshape(-1), state.gy.reshape(-1), state.r.reshape(-1)
    if not 0 <= start_step <= n_steps:
        raise ValueError(f"start_step {start_step} outside the grid of {n_steps} steps")
    times, samples = [start_step * dt], [reduce(state)]
    ops = 0
    peak = state.nnz()
    history = [peak]
    steps = [start_step] + [k for k in sample_steps(n_steps, every) if k > start_step]
    for a, b in zip(steps[:-1], steps[1:]):
        o, pk = kernels.integrate(
            gx, gy, r, xop, yop, rop, system.source,
            a * dt, h, (b - a) * sub, tau, tau, tau, system.has_r, backend=cfg.backend,
        )
        ops += o
        peak = max(peak, pk)
        history.append(peak)
        if not (np.all(np.isfinite(gx)) and np.all(np.isfinite(gy)) and np.all(np.isfinite(r))):
            raise FloatingPointError(f"trajectory {tag.label()}: amplitude overflow (check separation constant)")
        times.append(b * dt)
        samples.append(reduce(state))
    return TrajectoryResult(tag, times, samples, ops, peak, history)


def fanout(g0: CoeffTensor, offset: Sequence[int] | int | None = None, min_weight: float = 0.0) -> list[TrajectoryTag]:
    """One tag per non-negligible ``g_{p,q}(0)``.

    With a diagonal ``offset`` d only entries with ``q = p + d`` are visited,
    which is a single pass over ``p``.
    """
    n = g0.n_modes
    tags = []
    if offset is None:
        items = g0.data.items()
    else:
        d = (offset,) * n if isinstance(offset, int) else tuple(offset)
        items = []
        lo = [max(0, -dj) for dj in d]
        for p in np.ndindex(*(g0.cap + 1 - lo[j] for j in range(n))):
            p = tuple(pi + lo[j] for j, pi in enumerate(p))
            q = tuple(pi + dj for pi, dj in zip(p, d))
            if max(q) > g0.cap:
                continue
            idx = sum(((a, b) for a, b in zip(p, q)), ())
            if idx in g0.data:
                items.append((idx, g0.data[idx]))
    for idx, w in items:
        if abs(w) <= min_weight:
            continue
        p = tuple(idx[0::2])
        q = tuple(idx[1::2])
        tags.append(TrajectoryTag(p, q, complex(w)))
    return sorted(tags)


def recombine(
    trajectories: Sequence[tuple[TrajectoryTag, Sequence[float], Sequence[np.ndarray]]],
    conv: OperatorConvention = DEFAULT_CONVENTION,
) -> tuple[list[float], list[CoeffTensor]]:
    """Weighted sum of per-trajectory ``G`` windows, transformed back to ``f``.

    Each entry is ``(tag, times, dense G windows)``.  Summation runs in tag
    order so results do not depend on execution order.
    """
    if not trajectories:
        raise ValueError("no trajectories to recombine")
    ordered = sorted(trajectories, key=lambda item: item[0])
    times = list(ordered[0][1])
    for tag, ts, _ in ordered:
        if len(ts) != len(times) or any(abs(a - b) > 1e-15 * max(1.0, abs(b)) for a, b in zip(ts, times)):
            raise ValueError(f"trajectory {tag.label()} sampled on a different grid")
    acc = [np.zeros_like(ordered[0][2][0]) for _ in times]
    for tag, _, windows in ordered:
        for i, win in enumerate(windows):
            acc[i] = acc[i] + tag.weight * win
    series = [g_to_f(CoeffTensor.from_dense(g), conv) for g in acc]
    return times, series


@dataclass
class OperatorRun:
    times: list[float]
    f_series: list[CoeffTensor]
    n_trajectories: int
    peak_stored: int
    ops_total: int
    n_steps: int
    wall_s: float
    tau: float
    peak_history: list[int] = field(default_factory=list)

    @property
    def ops_per_step(self) -> float:
        return self.ops_total / max(self.n_steps, 1)


def expand_initial(a0: CoeffTensor, cap: int) -> CoeffTensor:
    return CoeffTensor(a0.n_modes, dict(a0.data), cap=cap)


def evolve_operator(
    a0: CoeffTensor,
    spec: NetworkSpec,
    cfg: IntegratorConfig,
    offset: Sequence[int] | int | None = None,
    system: SeparatedSystem | None = None,
    c_shift: complex = 0j,
) -> OperatorRun:
    """Full pipeline: transform, fan out, integrate, recombine.

    Returns ``f(t)`` restricted to exponents ``<= cfg.out_degree``.
    ``c_shift`` is added to every separation constant (it cancels in the
    recombined result and only affects conditioning).
    """
    if a0.n_modes != spec.n_modes:
        raise ValueError("operator and network mode counts differ")
    start = time.perf_counter()
    system = system or SeparatedSystem(spec, cfg.cap, cfg.r_mode)
    g0 = f_to_g(expand_initial(a0, cfg.cap))
    scale = max((abs(v) for v in g0.data.values()), default=1.0)
    # a tag below tau cannot contribute an entry that survives pruning
    tags = fanout(g0, offset, max(cfg.min_weight * scale, cfg.tau))
    tags = [TrajectoryTag(t.p, t.q, t.weight, separation_constant(t.p, t.q, spec) + c_shift) for t in tags]
    _, n_steps, _ = cfg.grid(spec)
    degree = cfg.out_degree

    def run(tag: TrajectoryTag):
        init = SeparatedState.monomial(tag.p, tag.q, cfg.cap, cfg.r_mode)
        return evolve_separated(init, tag, spec, cfg, system, reduce=lambda s: s.corner(degree))

    results, failures = [], []
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as pool:
            futures = [(tag, pool.submit(run, tag)) for tag in tags]
            for tag, fut in futures:
                try:
                    results.append(fut.result())
                except FloatingPointError as exc:
                    failures.append(f"{tag.label()}: {exc}")
    else:
        for tag in tags:
            try:
                results.append(run(tag))
            except FloatingPointError as exc:
                failures.append(f"{tag.label()}: {exc}")
    if failures:
        raise FloatingPointError("trajectory failures: " + "; ".join(failures))
    times, series = recombine([(r.tag, r.times, r.samples) for r in results])
    return OperatorRun(
        times=times,
        f_series=series,
        n_trajectories=len(results),
        peak_stored=max((r.peak_nnz for r in results), default=0),
        ops_total=sum(r.ops for r in results),
        n_steps=n_steps,
        wall_s=time.perf_counter() - start,
        tau=cfg.tau,
        peak_history=[max(col) for col in zip(*(r.peak_history for r in results))] if results else [],
    )


CHECKPOINT_VERSION = 1


def write_checkpoint(path, tag: TrajectoryTag, step: int, t: float, state: SeparatedState) -> None:
    """Text checkpoint of one trajectory: header lines, then one section per array.

    Data lines are ``i1 ... im re im`` with nonzero entries only.
    """
    lines = [
        f"# bosongf-checkpoint {CHECKPOINT_VERSION}",
        "# tag " + " ".join(map(str, tag.p)) + " | " + " ".join(map(str, tag.q)),
        f"# weight {float(tag.weight.real)!r} {float(tag.weight.imag)!r}",
        f"# C {float(tag.c.real)!r} {float(tag.c.imag)!r}",
        f"# step {int(step)}",
        f"# time {float(t)!r}",
        f"# cap {state.cap}",
        f"# r_mode {state.r_mode}",
    ]
    for name in ("gx", "gy", "r"):
        arr = getattr(state, name)
        lines.append(f"# section {name}")
        for idx in zip(*np.nonzero(arr)):
            v = arr[idx]
            lines.append(" ".join(str(int(i)) for i in idx) + f" {float(v.real)!r} {float(v.imag)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_checkpoint(path) -> tuple[TrajectoryTag, int, float, SeparatedState]:
    meta: dict[str, str] = {}
    sections: dict[str, list[tuple[tuple[int, ...], complex]]] = {}
    current = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                if key == "section":
                    current = value
                    sections[current] = []
                else:
                    meta[key] = value
                continue
            if current is None:
                raise ValueError(f"line {lineno}: data before any section")
            parts = line.split()
            sections[current].append((tuple(int(v) for v in parts[:-2]), complex(float(parts[-2]), float(parts[-1]))))
    if meta.get("bosongf-checkpoint") != str(CHECKPOINT_VERSION):
        raise ValueError("not a bosongf checkpoint (or unsupported version)")
    ps, qs = meta["tag"].split("|")
    p = tuple(int(v) for v in ps.split())
    q = tuple(int(v) for v in qs.split())
    weight = complex(*map(float, meta["weight"].split()))
    c = complex(*map(float, meta["C"].split()))
    state = SeparatedState.monomial(p, q, int(meta["cap"]), meta["r_mode"])
    for name in ("gx", "gy", "r"):
        arr = getattr(state, name)
        arr[...] = 0
        for idx, v in sections.get(name, []):
            arr[idx] = v
    return TrajectoryTag(p, q, weight, c), int(meta["step"]), float(meta["time"]), state


def evolve_unseparated(
    p: Sequence[int], q: Sequence[int], spec: NetworkSpec, cfg: IntegratorConfig,
    conv: OperatorConvention = DEFAULT_CONVENTION,
) -> tuple[list[float], list[np.ndarray]]:
    """Oracle: RK4 on the full ``G`` box (interleaved axes) from ``x^p y^q``.

    No separation and no pruning; uses the same stage times as the separated path.
    """
    n = spec.n_modes
    comp = full_stencil(spec, conv).compile(cfg.cap)
    dt, n_steps, every = cfg.grid(spec)
    g = np.zeros(comp.shape, dtype=complex)
    g[sum(((a, b) for a, b in zip(p, q)), ())] = 1.0
    y = g.reshape(-1)

    def rhs(t, v):
        return kernels.apply_block(comp.factors, comp.offsets, comp.base, comp.freq, t, v, backend=cfg.backend)[0]

    times, samples = [0.0], [g.copy()]
    steps = set(sample_steps(n_steps, every))
    for step in range(n_steps):
        y = rk4_step(rhs, y, step * dt, dt)
        if step + 1 in steps:
            times.append((step + 1) * dt)
            samples.append(y.reshape((cfg.cap + 1,) * (2 * n)).copy())
    return times, samples
