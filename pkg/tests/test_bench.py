import math

import numpy as np
import pytest

from bosongf.bench import (
    CSV_COLUMNS,
    BenchRecord,
    Problem,
    calibrate_threshold,
    count_instrumentation,
    gf_block,
    memory_ratios,
    read_csv,
    relative_error,
    scaling_sweep,
    write_csv,
)
from bosongf.coeff import CoeffTensor
from bosongf.evolve import evolve_operator
from bosongf.generators import NetworkSpec
from bosongf.reference import conventional_solve


@pytest.fixture(scope="module")
def small():
    return Problem(NetworkSpec.table1(1), CoeffTensor.monomial((0, 1)), 2.0, cap=12)


def test_relative_error_basics():
    m = np.arange(9, dtype=complex).reshape(3, 3) + 1
    assert relative_error(m, m) == 0
    assert relative_error(1.5 * m, m) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        relative_error(m, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        relative_error(m, m[:2])


def test_relative_error_ignores_global_phase():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    ref = m + 1e-3 * rng.normal(size=(3, 3))
    ph = np.exp(0.7j)
    assert relative_error(ph * m, ph * ref) == pytest.approx(relative_error(m, ref), rel=1e-12)


def test_record_validation():
    with pytest.raises(ValueError):
        BenchRecord("dense", 1, 1.0, 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        BenchRecord("conventional", 1, 1.0, -1, 1.0, 0.0)
    with pytest.raises(ValueError):
        BenchRecord("conventional", 1, 1.0, 1, 1.0, float("nan"))


def test_csv_round_trip(tmp_path):
    recs = [BenchRecord("conventional", 2, 10.0, 625, 1.2e4, 9e-5),
            BenchRecord("generating-function", 2, 10.0, 31, 800.5, 1.1e-4, 2e-6, 0.0)]
    write_csv(tmp_path / "b.csv", recs)
    assert (tmp_path / "b.csv").read_text().splitlines()[0] == ",".join(CSV_COLUMNS)
    assert read_csv(tmp_path / "b.csv") == recs
    ratios = memory_ratios(recs)
    assert ratios[(2, 10.0)] == pytest.approx(math.log(625) / math.log(31))


@pytest.mark.parametrize("levels", [3, 6])
def test_conventional_stored_is_dense(small, levels):
    run = conventional_solve(small.a0, small.spec, small.total_time, small.step, levels)
    rec = count_instrumentation(run, 1, small.scaled_time, 0.0)
    assert rec.method == "conventional" and rec.stored_peak == levels**2


def test_error_decreases_with_threshold(small):
    ref = small.ref_block()
    errs = []
    for tau in (1e-3, 1e-5, 1e-7):
        run = evolve_operator(small.a0, small.spec, small.config(tau))
        errs.append(relative_error(gf_block(run.f_series[-1]), ref))
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[0] > 1e-4
    exact = evolve_operator(small.a0, small.spec, small.config(0.0))
    assert relative_error(gf_block(exact.f_series[-1]), ref) < 1e-4


def test_calibration_lands_in_band(small):
    cal = calibrate_threshold(1e-4, small)
    if cal.converged:
        assert 0.5e-4 <= cal.eps_r <= 1.5e-4
    assert cal.eps_r <= 1.5e-4
    assert cal.steps == len(cal.history) <= 12
    # sampled points are monotone: smaller tau never gives a larger error
    pts = sorted(cal.history)
    assert all(e1 <= e2 * (1 + 1e-9) for (_, e1), (_, e2) in zip(pts, pts[1:]))


def test_calibration_rejects_bad_target(small):
    with pytest.raises(ValueError):
        calibrate_threshold(0.0, small)
    with pytest.raises(RuntimeError):
        calibrate_threshold(1e-14, small, lo=1e-4)


def test_sweep_keeps_partial_results(small, tmp_path):
    bad = Problem(NetworkSpec.table1(1), CoeffTensor.monomial((0, 1)), 2.0, cap=2)
    recs, errors = scaling_sweep([bad, small], 1e-4, tmp_path / "s.csv")
    assert len(errors) == 1 and "N=1" in errors[0]
    assert {r.method for r in recs} == {"conventional", "generating-function"}
    assert read_csv(tmp_path / "s.csv") == recs


def test_instrumentation_is_passive(small):
    cfg = small.config(1e-6)
    a = evolve_operator(small.a0, small.spec, cfg)
    b = evolve_operator(small.a0, small.spec, cfg)
    assert a.f_series[-1] == b.f_series[-1]
    assert a.peak_stored == b.peak_stored and a.ops_per_step == b.ops_per_step
