"""Error-matched comparison of the generating-function and number-basis methods.

Stored elements and elementary operations follow fixed conventions:

* a stored element is one retained nonzero amplitude (generating-function
  method, peak over a single trajectory, since trajectories are processed
  independently) or one dense matrix entry (number-basis method);
* an elementary operation is one complex multiply-add inside a right-hand
  side evaluation, counted from the stencil applications.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .coeff import CoeffTensor, reconstruct_matrix
from .evolve import IntegratorConfig, OperatorRun, SeparatedSystem, default_dt, evolve_operator, scaled_time_to_seconds
from .generators import NetworkSpec
from .reference import ReferenceRun, conventional_solve, reference_solve

log = logging.getLogger(__name__)

CSV_COLUMNS = ["method", "N", "scaled_time", "stored_peak", "ops_per_step", "eps_r", "tau", "wall_s"]
KEEP = 3


@dataclass
class BenchRecord:
    method: str
    N: int
    scaled_time: float
    stored_peak: int
    ops_per_step: float
    eps_r: float
    tau: float = 0.0
    wall_s: float = 0.0

    def __post_init__(self):
        if self.method not in ("conventional", "generating-function"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.stored_peak < 0 or self.ops_per_step < 0:
            raise ValueError("counts must be non-negative")
        if not self.eps_r >= 0:
            raise ValueError("eps_r must be non-negative")

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


def relative_error(m: np.ndarray, m_ref: np.ndarray) -> float:
    """Element-wise L2 relative error."""
    m = np.asarray(m)
    m_ref = np.asarray(m_ref)
    if m.shape != m_ref.shape:
        raise ValueError(f"shape mismatch {m.shape} vs {m_ref.shape}")
    den = np.linalg.norm(m_ref)
    if den == 0:
        raise ValueError("reference matrix has zero norm")
    return float(np.linalg.norm(m - m_ref) / den)


def gf_block(f: CoeffTensor, keep: int = KEEP) -> np.ndarray:
    return reconstruct_matrix(f, keep)


def count_instrumentation(run: OperatorRun | ReferenceRun, n_modes: int, scaled_time: float,
                          eps_r: float, tau: float = 0.0, wall_s: float = 0.0) -> BenchRecord:
    if isinstance(run, OperatorRun):
        return BenchRecord("generating-function", n_modes, scaled_time, run.peak_stored, run.ops_per_step,
                           eps_r, tau, wall_s)
    return BenchRecord("conventional", n_modes, scaled_time, run.peak_stored, float(run.ops_per_step), eps_r, 0.0, wall_s)


@dataclass
class Problem:
    """One comparison point: network, initial operator, horizon and its reference."""

    spec: NetworkSpec
    a0: CoeffTensor
    scaled_time: float
    dt: float | None = None
    ref_levels: int = 8
    cap: int = 16
    r_mode: str = "diagonal"
    threads: int = 1
    offset: int | None = None
    _ref: ReferenceRun | None = field(default=None, repr=False)

    @property
    def total_time(self) -> float:
        return scaled_time_to_seconds(self.scaled_time, self.spec)

    @property
    def step(self) -> float:
        return self.dt or default_dt(self.spec)

    def config(self, tau: float) -> IntegratorConfig:
        return IntegratorConfig(self.total_time, dt=self.dt, tau=tau, cap=self.cap, r_mode=self.r_mode,
                                threads=self.threads)

    def reference(self) -> ReferenceRun:
        if self._ref is None:
            _, n_steps, every = self.config(0.0).grid(self.spec)
            self._ref = reference_solve(self.a0, self.spec, self.total_time, self.step, self.ref_levels,
                                        sample_every=every)
        return self._ref

    def ref_block(self) -> np.ndarray:
        return self.reference().block_series[-1]


@dataclass
class Calibration:
    tau: float
    eps_r: float
    steps: int
    converged: bool
    run: OperatorRun
    history: list[tuple[float, float]]


def calibrate_threshold(target: float, problem: Problem, lo: float = 1e-10, hi: float = 1e-3,
                        max_steps: int = 12, system: SeparatedSystem | None = None,
                        resolution: float = 1.25) -> Calibration:
    """Largest ``tau`` (bisection over ``log tau``) whose ``eps_r`` stays at or below ``target``.

    Bisection stops once the bracket is narrower than a factor
    ``resolution`` or after ``max_steps`` runs; the result counts as
    converged when its ``eps_r`` lies in ``[0.5, 1.5] * target``.  ``eps_r``
    is assumed non-increasing as ``tau`` decreases; the sampled history is
    returned so callers can check that.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    ref = problem.ref_block()
    system = system or SeparatedSystem(problem.spec, problem.cap, problem.r_mode)
    history: list[tuple[float, float]] = []

    def measure(tau: float) -> tuple[float, OperatorRun]:
        run = evolve_operator(problem.a0, problem.spec, problem.config(tau), problem.offset, system)
        err = relative_error(gf_block(run.f_series[-1]), ref)
        history.append((tau, err))
        log.info("calibration tau=%.3e eps_r=%.3e", tau, err)
        return err, run

    err_lo, run_lo = measure(lo)
    if err_lo > 1.5 * target:
        raise RuntimeError(f"target {target:g} unreachable at cap {problem.cap}: eps_r={err_lo:.3e} at tau={lo:g}")
    best = (lo, err_lo, run_lo)
    a, b = math.log(lo), math.log(hi)
    steps = 1
    while err_lo <= target and steps < max_steps and b - a > math.log(resolution):
        mid = math.exp(0.5 * (a + b))
        err, run = measure(mid)
        steps += 1
        if err <= target:
            best = (mid, err, run)
            a = math.log(mid)
        else:
            b = math.log(mid)
    tau, err, run = best
    return Calibration(tau, err, steps, 0.5 * target <= err <= 1.5 * target, run, history)


@dataclass
class ConventionalMatch:
    n_levels: int
    eps_r: float
    run: ReferenceRun
    tried: list[tuple[int, float]]


def match_conventional_levels(target: float, problem: Problem, start: int = 3, stop: int = 24) -> ConventionalMatch:
    """Smallest per-mode truncation whose production run meets ``target``."""
    ref = problem.ref_block()
    tried = []
    for levels in range(start, stop + 1):
        run = conventional_solve(problem.a0, problem.spec, problem.total_time, problem.step, levels)
        err = relative_error(run.block_series[-1], ref)
        tried.append((levels, err))
        if err <= target:
            return ConventionalMatch(levels, err, run, tried)
    raise RuntimeError(f"no truncation up to {stop} levels meets eps_r <= {target:g}")


def conventional_levels_over_time(target: float, problem: Problem, max_levels: int) -> list[int]:
    """Matched truncation at every sample time (smallest L meeting ``target`` there)."""
    ref = problem.reference().block_series
    _, _, every = problem.config(0.0).grid(problem.spec)
    needed = [None] * len(ref)
    for levels in range(KEEP, max_levels + 1):
        run = conventional_solve(problem.a0, problem.spec, problem.total_time, problem.step, levels,
                                 sample_every=every)
        for i, (blk, rblk) in enumerate(zip(run.block_series, ref)):
            if needed[i] is None and (np.linalg.norm(rblk) == 0 or relative_error(blk, rblk) <= target):
                needed[i] = levels
        if all(n is not None for n in needed):
            break
    return [n if n is not None else max_levels for n in needed]


@dataclass
class SweepPoint:
    n_modes: int
    gf: BenchRecord
    conv: BenchRecord
    calibration: Calibration
    gf_history: list[int]
    conv_history: list[int]

    @property
    def memory_ratio(self) -> float:
        return math.log(self.conv.stored_peak) / math.log(self.gf.stored_peak)

    @property
    def ops_ratio(self) -> float:
        return self.gf.ops_per_step / self.conv.ops_per_step


def sweep_point(problem: Problem, target: float = 1e-4) -> SweepPoint:
    n = problem.spec.n_modes
    t0 = time.perf_counter()
    cal = calibrate_threshold(target, problem)
    gf_wall = cal.run.wall_s
    gf = count_instrumentation(cal.run, n, problem.scaled_time, cal.eps_r, cal.tau, gf_wall)
    t1 = time.perf_counter()
    match = match_conventional_levels(1.5 * target, problem)
    conv = count_instrumentation(match.run, n, problem.scaled_time, match.eps_r, 0.0, time.perf_counter() - t1)
    levels = conventional_levels_over_time(1.5 * target, problem, match.n_levels)
    # running peak, matching the generating-function history
    conv_hist = list(np.maximum.accumulate([lv ** (2 * n) for lv in levels]))
    log.info("sweep point N=%d done in %.1fs", n, time.perf_counter() - t0)
    return SweepPoint(n, gf, conv, cal, list(cal.run.peak_history), conv_hist)


def scaling_sweep(problems: Sequence[Problem], target: float = 1e-4, csv_path=None) -> tuple[list[BenchRecord], list[str]]:
    """Run every point; failures are reported and the remaining points kept."""
    records: list[BenchRecord] = []
    errors: list[str] = []
    for prob in problems:
        try:
            pt = sweep_point(prob, target)
        except Exception as exc:  # keep partial results
            errors.append(f"N={prob.spec.n_modes} t={prob.scaled_time}: {exc}")
            continue
        records += [pt.conv, pt.gf]
        if csv_path is not None:
            write_csv(csv_path, records)
    if csv_path is not None:
        write_csv(csv_path, records)
    return records, errors


def memory_ratios(records: Sequence[BenchRecord]) -> dict[tuple[int, float], float]:
    out = {}
    by_key: dict[tuple[int, float], dict[str, BenchRecord]] = {}
    for r in records:
        by_key.setdefault((r.N, r.scaled_time), {})[r.method] = r
    for key, pair in sorted(by_key.items()):
        if len(pair) == 2 and pair["generating-function"].stored_peak > 1:
            out[key] = math.log(pair["conventional"].stored_peak) / math.log(pair["generating-function"].stored_peak)
    return out


def write_csv(path, records: Sequence[BenchRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        BenchRecord(r["method"], int(r["N"]), float(r["scaled_time"]), int(r["stored_peak"]),
                    float(r["ops_per_step"]), float(r["eps_r"]), float(r["tau"]), float(r["wall_s"]))
        for r in rows
    ]


def record_dict(r: BenchRecord) -> dict:
    return asdict(r)
