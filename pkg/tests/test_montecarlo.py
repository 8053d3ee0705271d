import numpy as np
import pytest

from fbsdexp import DiscreteLevyMeasure, TimeGrid, expand
from fbsdexp import kernels
from fbsdexp.catalog import build
from fbsdexp.montecarlo import (BLOCK_SIZE, estimate_charfn, flow_jump_sums, reconstruct, simulate_flows,
                                simulate_noise, simulate_state, terminal_residual)
from fbsdexp.reference import levy_khintchine_exact, plain_mc_terminal

from conftest import make_problem, zeros


def _same(a, b):
    return all(np.array_equal(getattr(a, k), getattr(b, k))
               for k in ("dW", "ev_path", "ev_time", "ev_component", "ev_atom", "ev_mark", "ev_uniform"))


def test_noise_deterministic(atoms):
    g = TimeGrid(0, 1, 16)
    a = simulate_noise(g, atoms, 42, 5000)
    b = simulate_noise(g, atoms, 42, 5000, threads=4)
    assert _same(a, b)
    assert not np.array_equal(a.dW, simulate_noise(g, atoms, 43, 5000).dW)


def test_noise_prefix_stable(atoms):
    g = TimeGrid(0, 1, 8)
    small = simulate_noise(g, atoms, 3, BLOCK_SIZE)
    big = simulate_noise(g, atoms, 3, BLOCK_SIZE + 10)
    assert np.array_equal(small.dW, big.dW[:BLOCK_SIZE])


def test_noise_empty_measure():
    b = simulate_noise(TimeGrid(0, 1, 8), DiscreteLevyMeasure.empty(), 0, 100)
    assert b.ev_time.size == 0 and b.jumps(0) == []


def test_noise_structure(atoms):
    g = TimeGrid(0.5, 2.0, 30)
    b = simulate_noise(g, atoms, 9, 200)
    assert b.dW.shape == (200, 30)
    assert np.all((b.ev_time >= 0.5) & (b.ev_time <= 2.0))
    assert np.all(np.diff(b.ev_path) >= 0)
    for p in range(5):
        times = [t for t, _, _ in b.jumps(p)]
        assert times == sorted(times)
    lo = g.nodes[b.ev_step]
    assert np.all((b.ev_time > lo - 1e-15) & (b.ev_time <= lo + g.dt + 1e-12))


def test_brownian_variance():
    g = TimeGrid(0, 1, 10)
    b = simulate_noise(g, DiscreteLevyMeasure.empty(), 1, 100_000)
    var = b.dW.var(axis=0)
    band = 3 * g.dt * np.sqrt(2 / 100_000)
    assert np.all(np.abs(var - g.dt) < band)


def test_jump_counts(atoms):
    b = simulate_noise(TimeGrid(0, 2, 10), atoms, 5, 50_000)
    counts = np.bincount(b.ev_path, minlength=50_000)
    assert abs(counts.mean() - 6.0) < 3 * np.sqrt(6.0 / 50_000)


def test_flows_vanish_without_noise(atoms):
    p = make_problem(diffusion=lambda t, x: zeros(t, x), drift=lambda t, x, e: -0.5 * x + zeros(t, e))
    g = TimeGrid(0, 1, 64)
    e = expand(p, g)
    fl = simulate_flows(p, e.frozen, 0.0, simulate_noise(g, p.measure, 0, 50))
    assert np.all(fl.X1 == 0) and np.all(fl.X2 == 0)
    assert np.allclose(fl.X_eps, (1 - 0.5 * g.dt) ** np.arange(65), rtol=1e-13)


def test_flow_initial_values():
    p = build("cir_like_smooth")
    g = TimeGrid(0, 1, 32)
    e = expand(p, g)
    fl = simulate_flows(p, e.frozen, 0.3, simulate_noise(g, p.measure, 2, 100))
    assert np.all(fl.X1[:, 0] == 0) and np.all(fl.X2[:, 0] == 0)
    assert np.all(fl.X_eps[:, 0] == p.initial_state)


def test_flow_superposition():
    p = build("cir_like_smooth")
    g = TimeGrid(0, 1, 32)
    F = expand(p, g).frozen
    n = F.node
    args = [n(k) for k in ("deb", "dxb", "dxxb", "dxeb", "deeb", "sigma0", "dxsigma", "comp0", "dxcomp0")]
    ba, bb = (simulate_noise(g, p.measure, s, 64) for s in (1, 2))
    Ja, Jb = flow_jump_sums(F, ba)[0], flow_jump_sums(F, bb)[0]
    zero = np.zeros_like(ba.dW)
    X1 = lambda dW, J: kernels.flows_euler(*args, dW, J, zero, g.dt)[0]  # noqa: E731
    lhs = X1(ba.dW + bb.dW, Ja + Jb) + X1(zero, zero)
    assert np.allclose(lhs, X1(ba.dW, Ja) + X1(bb.dW, Jb), atol=1e-12)
    # doubling the innovations doubles the centred flow
    base = X1(zero, zero)
    assert np.allclose(X1(2 * ba.dW, 2 * Ja) - base, 2 * (X1(ba.dW, Ja) - base), atol=1e-12)


def test_mean_first_flow():
    p = build("cir_like_smooth")
    g = TimeGrid(0, 1, 50)
    e = expand(p, g)
    fl = simulate_flows(p, e.frozen, 0.1, simulate_noise(g, p.measure, 8, 100_000))
    deb, dxb = e.frozen.node("deb"), e.frozen.node("dxb")
    m = np.zeros(len(g))
    for i in range(g.n_steps):
        m[i + 1] = m[i] + (deb[i] + dxb[i] * m[i]) * g.dt
    se = fl.X1.std(axis=0, ddof=1) / np.sqrt(fl.X1.shape[0])
    assert np.all(np.abs(fl.X1.mean(axis=0) - m) <= 3 * se + 1e-12)


def test_reconstruct_eps_zero_and_telescoping():
    p = build("cir_like_smooth")
    g = TimeGrid(0, 1, 64)
    e = expand(p, g)
    fl = simulate_flows(p, e.frozen, 0.2, simulate_noise(g, p.measure, 4, 200))
    r0 = reconstruct(e.order0, e.o1, e.o2, e.frozen, fl, 0.0, 2)
    assert np.all(r0.Y == e.order0.Y0.scalar) and np.all(r0.Z == 0)
    assert np.all(r0.psi(3, p.measure.marks()) == 0)
    eps = 0.2
    r1 = reconstruct(e.order0, e.o1, e.o2, e.frozen, fl, eps, 1)
    r2 = reconstruct(e.order0, e.o1, e.o2, e.frozen, fl, eps, 2)
    o2 = e.o2
    term = o2.y2.scalar * fl.X2 + o2.y11.scalar * fl.X1**2 + o2.y1.scalar * fl.X1 + o2.y0.scalar
    assert np.allclose(r2.Y - r1.Y, eps**2 * term, atol=1e-14)
    with pytest.raises(ValueError):
        reconstruct(e.order0, e.o1, e.o2, e.frozen, fl, eps, 3)


def test_terminal_residual_decreases():
    p = build("cir_like_smooth")
    g = TimeGrid(0, 1, 128)
    e = expand(p, g)
    fl = simulate_flows(p, e.frozen, 0.2, simulate_noise(g, p.measure, 6, 20_000))
    res = [terminal_residual(p, reconstruct(e.order0, e.o1, e.o2, e.frozen, fl, 0.2, N), fl) for N in (0, 1, 2)]
    for (m_a, s_a), (m_b, s_b) in zip(res, res[1:]):
        assert m_b + 3 * np.hypot(s_a, s_b) < m_a


def test_charfn_trivial_cases():
    g = TimeGrid(0, 1, 64)
    m = build("gaussian_jump_additive", drift=0.3, x0=0.4)
    for N in (1, 2, 4):
        assert estimate_charfn(m, 0.0, 0.2, N, g).value == pytest.approx(1.0, abs=1e-14)
    m0 = build("gaussian_jump_additive")
    assert estimate_charfn(m0, 1.3, 0.0, 3, g).value == pytest.approx(1.0, abs=1e-14)


def test_charfn_gaussian_order():
    g = TimeGrid(0, 1, 256)
    m = build("gaussian_jump_additive", intensity=0.0)
    th, sig = 1.5, 0.3
    gaps = []
    for eps in (0.2, 0.4):
        est = estimate_charfn(m, th, eps, 4, g).value
        gaps.append(abs(est - np.exp(-0.5 * th**2 * eps**2 * sig**2)))
    assert gaps[0] < 1e-5
    assert 2**6 * 0.8 < gaps[1] / gaps[0] < 2**6 * 1.2


def test_charfn_mc_cross_check(atoms):
    g = TimeGrid(0, 1, 64)
    m = build("gaussian_jump_additive")
    est = estimate_charfn(m, 1.0, 0.5, 4, g, n_paths=40_000, seed=1)
    exact = levy_khintchine_exact(0.0, 0.3, m.measure, 0.5, 1.0, 1.0, 0.0)
    assert abs(est.mc - exact) < 3 * est.mc_stderr


def test_charfn_requires_zero_driver():
    m = build("exp_levy", c=0.2)
    with pytest.raises(ValueError, match="driver identically zero"):
        estimate_charfn(m, 1.0, 0.1, 2, TimeGrid(0, 1, 16))


def test_euler_weak_error_halves(atoms):
    p = make_problem(drift=lambda t, x, e: -x + zeros(t, e), measure=atoms,
                     jump_coeff=lambda t, x, z: z + zeros(t, x))
    exact = np.exp(-1.0)
    errs = []
    for n in (4, 8, 16):
        est, se = plain_mc_terminal(p, 0.5, 1_000_000, seed=11, grid=TimeGrid(0, 1, n))
        errs.append(abs(est - exact))
        assert se < 5e-4
    for a, b in zip(errs, errs[1:]):
        assert 1.5 <= a / b <= 3.0


def test_thinning_acceptance_rate():
    from fbsdexp.catalog import intensity_demo_spec

    p = build("intensity_demo")
    spec = intensity_demo_spec()
    g = TimeGrid(0, 1, 32)
    b = simulate_noise(g, p.measure.scaled(spec.c2), 0, 20_000)
    st = simulate_state(p, 0.3, b, spec)
    lam = st.intensity[b.ev_path, b.ev_step]
    rate = lam / spec.c2
    assert abs(st.accepted.mean() - rate.mean()) < 3 * np.sqrt(np.mean(rate * (1 - rate)) / rate.size)
