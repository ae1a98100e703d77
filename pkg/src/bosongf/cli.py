"""Command-line front end: ``bosongf {run,compare,bench,entropy}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import platform
import sys
import time
import traceback
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .bench import Problem, calibrate_threshold, conventional_levels_over_time, gf_block, memory_ratios, \
    relative_error, sweep_point, write_csv
from .coeff import CoeffTensor, dumps
from .config import ConfigError, RunConfig, load_config, parse_config
from .evolve import IntegratorConfig, evolve_operator
from .reference import (
    HBAR,
    K_B,
    BathSpec,
    GaussianDiagonalState,
    conventional_closed_form,
    conventional_solve,
    first_principles_closed_form,
    initial_entropy_production,
    negativity_window,
    consistent_window,
    schrodinger_rhs_conventional,
    schrodinger_rhs_first_principles,
)

log = logging.getLogger("bosongf")

COMMANDS = ("run", "compare", "bench", "entropy")


def expectation(f: CoeffTensor, state) -> complex:
    """``<psi| A |psi>`` from normal-ordered coefficients."""
    n = f.n_modes
    if state.kind == "vacuum":
        return f[(0,) * (2 * n)]
    if state.kind == "coherent":
        alpha = [complex(*a) if isinstance(a, list) else complex(a) for a in (state.alpha or [0] * n)]
        total = 0j
        for idx, v in f:
            term = v
            for j in range(n):
                term *= np.conj(alpha[j]) ** idx[2 * j] * alpha[j] ** idx[2 * j + 1]
            total += term
        return complex(total)
    levels = list(state.n or [0] * n)
    total = 0j
    for idx, v in f:
        if any(idx[2 * j] != idx[2 * j + 1] or idx[2 * j] > levels[j] for j in range(n)):
            continue
        w = 1.0
        for j in range(n):
            w *= math.factorial(levels[j]) / math.factorial(levels[j] - idx[2 * j])
        total += v * w
    return complex(total)


def _block_expectation(block: np.ndarray, state, n_modes: int, keep: int = 3) -> complex:
    if state.kind == "vacuum":
        return complex(block[0, 0])
    if state.kind == "number":
        levels = list(state.n or [0] * n_modes)
        if max(levels) >= keep:
            raise ValueError("conventional expectation limited to number states below 3 quanta")
        i = int(np.ravel_multi_index(levels, (keep,) * n_modes))
        return complex(block[i, i])
    raise ValueError("conventional method reports expectations for vacuum or number states only")


def _integrator(cfg: RunConfig, threads: int) -> IntegratorConfig:
    it = cfg.integrator
    return IntegratorConfig(cfg.total_time(), dt=it.dt, tau=it.tau, cap=it.cap, r_mode=it.r_mode,
                            out_degree=it.out_degree, n_samples=it.n_samples, threads=threads)


def _scaled(cfg: RunConfig, t: float) -> float:
    return t * float(cfg.spec().omega_q[0]) / math.pi


def _fmt(x: float) -> str:
    return repr(float(x))


class Outputs:
    def __init__(self, root: Path):
        self.root = root
        root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def csv(self, name: str, header, rows) -> None:
        with open(self.root / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        self.files.append(name)

    def text(self, name: str, content: str) -> None:
        (self.root / name).write_text(content)
        self.files.append(name)


def cmd_run(cfg: RunConfig, out: Outputs, args) -> dict:
    spec = cfg.spec()
    a0 = cfg.initial_operator()
    icfg = _integrator(cfg, args.threads)
    counts: dict = {}
    header = ["t", "scaled_time"]
    columns = []
    if cfg.method in ("generating-function", "both"):
        run = evolve_operator(a0, spec, icfg, cfg.operator.offset)
        times = run.times
        columns.append([expectation(f, cfg.state) for f in run.f_series])
        header += ["gf_re", "gf_im"]
        counts.update(n_trajectories=run.n_trajectories, peak_stored=run.peak_stored,
                      ops_per_step=run.ops_per_step, n_steps=run.n_steps)
        out.text("coefficients.txt", dumps(run.f_series[-1], header=f"time {run.times[-1]!r}"))
        snap = []
        for t, f in zip(run.times, run.f_series):
            for idx, v in f:
                snap.append([_fmt(t), *idx, _fmt(v.real), _fmt(v.imag)])
        idx_cols = [f"{c}{j + 1}" for j in range(spec.n_modes) for c in ("k", "l")]
        out.csv("snapshots.csv", ["t", *idx_cols, "re", "im"], snap)
    if cfg.method in ("conventional", "both"):
        _, _, every = icfg.grid(spec)
        conv = conventional_solve(a0, spec, icfg.total_time, icfg.grid(spec)[0], cfg.compare.levels, sample_every=every)
        times = conv.times
        columns.append([_block_expectation(b, cfg.state, spec.n_modes) for b in conv.block_series])
        header += ["conv_re", "conv_im"]
        counts.update(conventional_levels=cfg.compare.levels, conventional_stored=conv.peak_stored,
                      conventional_ops_per_step=conv.ops_per_step)
    rows = []
    for i, t in enumerate(times):
        row = [_fmt(t), _fmt(_scaled(cfg, t))]
        for col in columns:
            row += [_fmt(col[i].real), _fmt(col[i].imag)]
        rows.append(row)
    out.csv("series.csv", header, rows)
    return counts


def _problem(cfg: RunConfig, threads: int, spec=None, a0=None, scaled=None, cap=None) -> Problem:
    spec = spec or cfg.spec()
    return Problem(
        spec=spec,
        a0=a0 if a0 is not None else cfg.initial_operator(),
        scaled_time=scaled if scaled is not None else _scaled(cfg, cfg.total_time()),
        dt=cfg.integrator.dt,
        ref_levels=cfg.compare.ref_levels,
        cap=cap or cfg.integrator.cap,
        r_mode=cfg.integrator.r_mode,
        threads=threads,
        offset=cfg.operator.offset,
    )


def cmd_compare(cfg: RunConfig, out: Outputs, args) -> dict:
    prob = _problem(cfg, args.threads)
    ref = prob.reference()
    cal = calibrate_threshold(cfg.compare.target, prob)
    header = ["t", "scaled_time", "eps_r_gf", "tau"]
    conv_blocks = None
    if cfg.method in ("conventional", "both"):
        _, _, every = prob.config(0.0).grid(prob.spec)
        conv = conventional_solve(prob.a0, prob.spec, prob.total_time, prob.step, cfg.compare.levels, sample_every=every)
        conv_blocks = conv.block_series
        header.append("eps_r_conventional")
    rows = []
    for i, (t, f) in enumerate(zip(cal.run.times, cal.run.f_series)):
        rblk = ref.block_series[i]
        if np.linalg.norm(rblk) == 0:
            continue
        row = [_fmt(t), _fmt(_scaled(cfg, t)), _fmt(relative_error(gf_block(f), rblk)), _fmt(cal.tau)]
        if conv_blocks is not None:
            row.append(_fmt(relative_error(conv_blocks[i], rblk)))
        rows.append(row)
    out.csv("eps.csv", header, rows)
    return {
        "tau": cal.tau,
        "eps_r": cal.eps_r,
        "calibration_steps": cal.steps,
        "calibration_converged": cal.converged,
        "calibration_history": [[t, e] for t, e in cal.history],
        "peak_stored": cal.run.peak_stored,
        "ops_per_step": cal.run.ops_per_step,
        "reference_leakage": ref.leakage,
    }


def cmd_bench(cfg: RunConfig, out: Outputs, args) -> dict:
    from dataclasses import replace

    records, errors, ratios, history_rows = [], [], {}, []
    for n in cfg.bench.modes:
        net = replace(cfg.network, n_modes=int(n), drive=None if cfg.network.drive is None or n != cfg.network.n_modes
                      else cfg.network.drive)
        sub = replace(cfg, network=net)
        for st in cfg.bench.scaled_times:
            prob = _problem(sub, args.threads, spec=sub.spec(), a0=sub.operator.tensor(int(n), cfg.bench.cap),
                            scaled=float(st), cap=cfg.bench.cap)
            try:
                pt = sweep_point(prob, cfg.bench.target)
            except Exception as exc:
                errors.append({"N": int(n), "scaled_time": float(st), "error": f"{type(exc).__name__}: {exc}"})
                continue
            if not args.timing:
                pt.gf.wall_s = pt.conv.wall_s = 0.0
            records += [pt.conv, pt.gf]
            ratios[f"N={n},t={st}"] = {"memory_ratio": pt.memory_ratio, "ops_ratio": pt.ops_ratio}
            times = pt.calibration.run.times
            for t, g, c in zip(times, pt.gf_history, pt.conv_history):
                history_rows.append([int(n), _fmt(st), _fmt(_scaled(sub, t)), g, c])
    write_csv(out.root / "bench.csv", records)
    out.files.append("bench.csv")
    out.csv("bench_history.csv", ["N", "scaled_time", "sample_scaled_time", "gf_stored", "conventional_stored"],
            history_rows)
    return {"ratios": ratios, "log_ratio": {f"{k[0]},{k[1]}": v for k, v in memory_ratios(records).items()},
            "errors": errors}


def cmd_entropy(cfg: RunConfig, out: Outputs, args) -> dict:
    from .generators import TWO_PI_MHZ, NetworkSpec

    ent = cfg.entropy
    base = cfg.spec()
    omega = float(base.omega_q[0])
    t_env = HBAR * omega / (ent.hw_over_kte * K_B)
    bath = BathSpec(t_env)
    header = ["eta", "T0", "TE", "Pi0_numeric", "Pi0_analytic"]
    conv_rows, fp_rows = [], []
    flags = []
    rng = np.random.default_rng(args.seed)
    worst_trace = worst_herm = 0.0
    for eta_mhz in ent.eta:
        eta = float(eta_mhz) * TWO_PI_MHZ
        spec = NetworkSpec(omega_q=omega, eta=eta, drive=0.0, omega_d=omega, kappa=base.kappa[0], coupling=0.0)
        win = consistent_window(omega, eta, t_env)
        samples = [r * t_env for r in ent.t0_ratios]
        if win is not None and math.isfinite(win[1]):
            samples += [win[0] + f * (win[1] - win[0]) for f in ent.window_fractions]
        for t0 in sorted(samples):
            st = GaussianDiagonalState.from_temperature(t0, omega)
            pc = initial_entropy_production(spec, bath, st, ent.n_levels, "conventional")
            pf = initial_entropy_production(spec, bath, st, ent.n_levels, "first_principles")
            ac = conventional_closed_form(omega, eta, float(spec.kappa[0]), st.n0, t0, t_env)
            af = first_principles_closed_form(omega, float(spec.kappa[0]), t0, t_env)
            conv_rows.append([_fmt(eta), _fmt(t0), _fmt(t_env), _fmt(pc), _fmt(ac)])
            fp_rows.append([_fmt(eta), _fmt(t0), _fmt(t_env), _fmt(pf), _fmt(af)])
            w = negativity_window(omega, eta, st.n0, t_env)
            flags.append({"eta": eta, "T0": t0, "inside_window": bool(w and w[0] < t0 < w[1]),
                          "conventional_negative": pc < 0, "first_principles_negative": pf < -1e-12})
        # structural probe on a random Hermitian unit-trace state
        x = rng.normal(size=(ent.n_levels, ent.n_levels)) + 1j * rng.normal(size=(ent.n_levels, ent.n_levels))
        rho = x @ x.conj().T
        rho /= np.trace(rho).real
        for rhs in (schrodinger_rhs_conventional, schrodinger_rhs_first_principles):
            d = rhs(rho, spec, bath)
            worst_trace = max(worst_trace, abs(np.trace(d)))
            worst_herm = max(worst_herm, float(np.abs(d - d.conj().T).max()))
    out.csv("entropy_conventional.csv", header, conv_rows)
    out.csv("entropy_first_principles.csv", header, fp_rows)
    return {"TE": t_env, "points": flags, "max_trace_residual": worst_trace, "max_hermiticity_residual": worst_herm}


HANDLERS = {"run": cmd_run, "compare": cmd_compare, "bench": cmd_bench, "entropy": cmd_entropy}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bosongf", description="Heisenberg-picture bosonic network simulations")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML configuration (defaults apply when omitted)")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--threads", type=int, default=1, help="trajectory worker threads")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized probes (uint64)")
        p.add_argument("--timing", action="store_true", help="record wall-clock times (breaks byte-identical output)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _manifest(cfg: RunConfig, args, out: Outputs, results: dict) -> dict:
    return {
        "command": args.command,
        "seed": args.seed,
        "threads": args.threads,
        "backend": kernels.BACKEND,
        "versions": {
            "bosongf": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "config": cfg.to_dict(),
        "files": sorted(out.files + ["config.toml"]),
        "results": results,
    }


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o).__name__)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed < 0 or args.seed >= 2**64:
        print(json.dumps({"error": "ArgumentError", "message": "--seed must be a uint64"}), file=sys.stderr)
        return 2
    if args.threads < 1:
        print(json.dumps({"error": "ArgumentError", "message": "--threads must be >= 1"}), file=sys.stderr)
        return 2
    out_dir = args.out
    try:
        cfg = load_config(args.config) if args.config else parse_config("")
        # --out is not folded into the echoed config so reruns elsewhere stay byte-identical
        out_dir = Path(out_dir if out_dir is not None else cfg.out)
        out = Outputs(out_dir)
        started = time.perf_counter()
        results = HANDLERS[args.command](cfg, out, args)
        if args.timing:
            results["wall_s"] = time.perf_counter() - started
        (out_dir / "config.toml").write_text(cfg.dumps())
        manifest = _manifest(cfg, args, out, results)
        (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    except Exception as exc:
        record = {
            "error": type(exc).__name__,
            "message": str(exc),
            "command": args.command,
        }
        if isinstance(exc, ConfigError):
            record["line"] = exc.line
        else:
            record["traceback"] = traceback.format_exc(limit=5)
        text = json.dumps(record, indent=2, sort_keys=True)
        if out_dir is not None:
            try:
                Path(out_dir).mkdir(parents=True, exist_ok=True)
                (Path(out_dir) / "error.json").write_text(text + "\n")
            except OSError:
                pass
        print(text, file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
