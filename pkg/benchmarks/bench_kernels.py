"""Compiled core vs NumPy fallback on one separated trajectory.

    python benchmarks/bench_kernels.py [--modes 1] [--cap 16] [--scaled-time 2] [--repeat 3]

Both backends integrate the same trajectory; the script checks they agree
and prints the best-of-N wall time for each.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bosongf import kernels
from bosongf.config import NetworkBlock
from bosongf.evolve import (
    IntegratorConfig,
    SeparatedState,
    SeparatedSystem,
    TrajectoryTag,
    evolve_separated,
    scaled_time_to_seconds,
    separation_constant,
)


def run_once(backend, spec, cap, total, tau):
    n = spec.n_modes
    p, q = (0,) * n, (1,) * n
    tag = TrajectoryTag(p, q, 1.0, separation_constant(p, q, spec))
    system = SeparatedSystem(spec, cap)
    cfg = IntegratorConfig(total, tau=tau, cap=cap, backend=backend)
    init = SeparatedState.monomial(p, q, cap)
    t0 = time.perf_counter()
    res = evolve_separated(init, tag, spec, cfg, system)
    return time.perf_counter() - t0, res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--modes", type=int, default=1)
    ap.add_argument("--cap", type=int, default=16)
    ap.add_argument("--scaled-time", type=float, default=2.0)
    ap.add_argument("--tau", type=float, default=1e-8)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    spec = NetworkBlock(n_modes=args.modes).to_spec()
    total = scaled_time_to_seconds(args.scaled_time, spec)
    timings, finals = {}, {}
    for name in sorted(kernels.BACKENDS):
        best = np.inf
        for _ in range(args.repeat):
            wall, res = run_once(name, spec, args.cap, total, args.tau)
            best = min(best, wall)
        timings[name] = best
        finals[name] = res.samples[-1].combined()
        print(f"{name:>9}: {best * 1e3:9.2f} ms  ops={res.ops}  peak={res.peak_nnz}")
    if len(finals) == 2:
        a, b = finals["compiled"], finals["python"]
        diff = np.abs(a - b).max() / max(np.abs(b).max(), 1e-300)
        print(f"max relative difference {diff:.2e}; speedup {timings['python'] / timings['compiled']:.1f}x")
    else:
        print("compiled core not built; only the fallback was timed")


if __name__ == "__main__":
    main()
