import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosongf.coeff import CoeffTensor, f_to_g
from bosongf.evolve import (
    IntegratorConfig,
    SeparatedState,
    SeparatedSystem,
    TrajectoryTag,
    default_dt,
    evolve_operator,
    evolve_separated,
    evolve_unseparated,
    fanout,
    read_checkpoint,
    recombine,
    rk4_step,
    scaled_time_to_seconds,
    separation_constant,
    write_checkpoint,
)
from bosongf.generators import NetworkSpec


def test_separation_constant(table1):
    w = table1.omega_q[0]
    assert separation_constant((0,), (0,), table1) == 0
    assert separation_constant((1,), (0,), table1) == pytest.approx(-0.5j * w)
    assert separation_constant((1,), (1,), table1) == pytest.approx(-1j * w)


def test_grid_lands_on_total_time(table1):
    total = scaled_time_to_seconds(10, table1)
    dt, n, every = IntegratorConfig(total).grid(table1)
    assert n * dt == pytest.approx(total, rel=1e-15)
    assert dt <= default_dt(table1)
    assert every == math.ceil(n / 200)
    assert default_dt(table1) == pytest.approx(2 * math.pi / (table1.omega_q[0] * 200))


@pytest.mark.parametrize("kw", [dict(total_time=-1), dict(total_time=1, dt=0), dict(total_time=1, tau=-1),
                                dict(total_time=1, r_mode="sparse")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        IntegratorConfig(**kw)


@settings(max_examples=50, deadline=None)
@given(st.complex_numbers(max_magnitude=2), st.floats(1e-3, 0.2))
def test_rk4_scalar(lam, dt):
    y1 = rk4_step(lambda t, y: lam * y, np.array([1.0 + 0j]), 0.0, dt)[0]
    z = lam * dt
    assert abs(y1 - np.exp(z)) <= abs(z) ** 5 / 60 + 1e-15


def test_rk4_zero_rhs_and_overflow():
    y = np.array([1.0, 2.0j])
    assert np.array_equal(rk4_step(lambda t, v: 0 * v, y, 0.0, 0.1), y)
    with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
        rk4_step(lambda t, v: np.full_like(v, np.inf), y, 0.0, 0.1)
    with pytest.raises(ValueError):
        rk4_step(lambda t, v: v, y, 0.0, 0.0)


def test_fanout_identity():
    tags = fanout(f_to_g(CoeffTensor.identity(1, cap=6)))
    assert [(t.p, t.q) for t in tags] == [((j,), (j,)) for j in range(7)]
    assert [t.weight for t in tags] == pytest.approx([1 / math.factorial(j) for j in range(7)])


def test_fanout_annihilator_and_offset():
    g0 = f_to_g(CoeffTensor.monomial((0, 1), cap=8))
    tags = fanout(g0)
    assert [(t.p, t.q) for t in tags] == [((j,), (j + 1,)) for j in range(8)]
    assert [t.weight for t in tags] == pytest.approx([1 / math.factorial(j) for j in range(8)])
    assert fanout(g0, offset=1) == tags
    assert fanout(g0, offset=0) == []


def test_fanout_two_mode_product():
    g0 = f_to_g(CoeffTensor.monomial((0, 1, 0, 1), cap=4))
    tags = fanout(g0, offset=1)
    assert len(tags) == 16
    for t in tags:
        assert t.q == (t.p[0] + 1, t.p[1] + 1)
        assert t.weight == pytest.approx(1 / (math.factorial(t.p[0]) * math.factorial(t.p[1])))


def test_fanout_min_weight():
    g0 = f_to_g(CoeffTensor.monomial((0, 1), cap=20))
    assert len(fanout(g0, min_weight=1e-6)) == 10  # 1/9! > 1e-6 > 1/10!


def test_recombine_linearity_and_grid_check():
    win = np.zeros((3, 3), complex)
    win[0, 0] = 1.0
    tag = TrajectoryTag((0,), (0,), 1.0)
    _, f1 = recombine([(tag, [0.0, 1.0], [win, win])])
    _, f2 = recombine([(TrajectoryTag((0,), (0,), 2.5j), [0.0, 1.0], [win, win])])
    assert f2[1].max_abs_diff(f1[1] * 2.5j) == 0
    other = TrajectoryTag((1,), (1,), 1.0)
    with pytest.raises(ValueError, match="different grid"):
        recombine([(tag, [0.0, 1.0], [win, win]), (other, [0.0, 2.0], [win, win])])
    with pytest.raises(ValueError):
        recombine([])


@pytest.mark.parametrize("r_mode,tol", [("full", 1e-9), ("diagonal", 1e-6)])
def test_identity_operator_constant(table1, r_mode, tol):
    # the (j, j) tags cancel; diagonal R drops the drive-generated off-diagonal residual
    cfg = IntegratorConfig(scaled_time_to_seconds(1, table1), cap=10, r_mode=r_mode)
    run = evolve_operator(CoeffTensor.identity(1, cap=10), table1, cfg)
    for f in run.f_series:
        assert f.max_abs_diff(CoeffTensor.identity(1)) < tol


def test_damped_mode_analytic(damped):
    total = scaled_time_to_seconds(10, damped)
    cfg = IntegratorConfig(total, dt=default_dt(damped) / 2, cap=8)
    run = evolve_operator(CoeffTensor.monomial((0, 1), cap=8), damped, cfg)
    w, kap = damped.omega_q[0], damped.kappa[0]
    for t, f in zip(run.times, run.f_series):
        assert abs(f[(0, 1)] - np.exp((-1j * w - kap / 2) * t)) < 1e-8
        # the level-resolved loss feeds a^dag a^2 from a
        f12 = -np.exp(-1j * w * t) * (np.exp(-kap * t / 2) - np.exp(-1.5 * kap * t))
        assert abs(f[(1, 2)] - f12) < 1e-8
        others = [abs(v) for k, v in f if k not in ((0, 1), (1, 2))]
        assert max(others, default=0.0) < 1e-8


def test_thread_count_and_order_do_not_change_output(table1):
    cfg = dict(total_time=scaled_time_to_seconds(0.5, table1), cap=10, tau=1e-9)
    a0 = CoeffTensor.monomial((0, 1), cap=10)
    one = evolve_operator(a0, table1, IntegratorConfig(**cfg))
    many = evolve_operator(a0, table1, IntegratorConfig(threads=3, **cfg))
    for a, b in zip(one.f_series, many.f_series):
        assert a.data == b.data
    assert one.ops_total == many.ops_total


def test_separation_constant_neutral(table1):
    cfg = IntegratorConfig(scaled_time_to_seconds(1, table1), cap=10)
    a0 = CoeffTensor.monomial((0, 1), cap=10)
    base = evolve_operator(a0, table1, cfg)
    shifted = evolve_operator(a0, table1, cfg, c_shift=0.1j * table1.omega_q[0])
    assert base.f_series[-1].max_abs_diff(shifted.f_series[-1]) < 1e-8


def test_zero_loss_keeps_r_empty():
    spec = NetworkSpec.table1(1, kappa=0.0)
    system = SeparatedSystem(spec, 8)
    assert not system.has_r
    tag = TrajectoryTag((1,), (2,), 1.0, separation_constant((1,), (2,), spec))
    res = evolve_separated(SeparatedState.monomial((1,), (2,), 8), tag, spec,
                           IntegratorConfig(scaled_time_to_seconds(1, spec), cap=8), system)
    assert all(not s.r.any() for s in res.samples)


def test_residual_grows_linearly_at_small_kappa_t(table1):
    dt = default_dt(table1)
    cfg = IntegratorConfig(100 * dt, dt=dt, cap=8, n_samples=100)
    tag = TrajectoryTag((1,), (1,), 1.0, separation_constant((1,), (1,), table1))
    res = evolve_separated(SeparatedState.monomial((1,), (1,), 8), tag, table1, cfg)
    t = np.array(res.times[1:])
    r = np.array([np.abs(s.r).max() for s in res.samples[1:]])
    slope = np.polyfit(t, r, 1)[0]
    assert np.allclose(r, slope * t, rtol=0.02)
    assert slope == pytest.approx(table1.kappa[0], rel=0.05)


def test_unseparated_equivalence(table1):
    cap = 10
    cfg = IntegratorConfig(scaled_time_to_seconds(2, table1), dt=default_dt(table1) / 4, cap=cap, r_mode="full")
    p, q = (1,), (2,)
    tag = TrajectoryTag(p, q, 1.0, separation_constant(p, q, table1))
    sep = evolve_separated(SeparatedState.monomial(p, q, cap, "full"), tag, table1, cfg)
    _, full = evolve_unseparated(p, q, table1, cfg)
    for s, g in zip(sep.samples, full):
        assert np.abs(s.combined() - g).max() < 1e-8 * np.abs(g).max()


def test_checkpoint_resume(table1, tmp_path):
    cap = 8
    total = scaled_time_to_seconds(0.4, table1)
    cfg = IntegratorConfig(total, cap=cap, n_samples=4)
    p, q = (0,), (1,)
    tag = TrajectoryTag(p, q, 0.5, separation_constant(p, q, table1))
    system = SeparatedSystem(table1, cap)
    full = evolve_separated(SeparatedState.monomial(p, q, cap), tag, table1, cfg, system)
    _, n_steps, every = cfg.grid(table1)
    write_checkpoint(tmp_path / "ck.txt", tag, every, full.times[1], full.samples[1])
    tag2, step, t, state = read_checkpoint(tmp_path / "ck.txt")
    assert (tag2, step, t) == (tag, every, full.times[1]) and tag2.c == tag.c and tag2.weight == tag.weight
    assert np.array_equal(state.combined(), full.samples[1].combined())
    resumed = evolve_separated(state, tag2, table1, cfg, system, start_step=step)
    assert np.array_equal(resumed.samples[-1].combined(), full.samples[-1].combined())


def test_checkpoint_rejects_other_files(tmp_path):
    path = tmp_path / "x.txt"
    path.write_text("# section gx\n0 1.0 0.0\n")
    with pytest.raises(ValueError):
        read_checkpoint(path)


def test_mode_mismatch_rejected(table1):
    with pytest.raises(ValueError):
        evolve_operator(CoeffTensor.identity(2), table1, IntegratorConfig(1e-12))
