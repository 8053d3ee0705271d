import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsdexp import DiscreteLevyMeasure, TimeGrid, expand
from fbsdexp.catalog import build
from fbsdexp.reference import LSMCConfig, levy_khintchine_exact, lsmc_solve, plain_mc_terminal

from conftest import make_problem, zeros


def _martingale(atoms):
    return make_problem(measure=atoms, jump_coeff=lambda t, x, z: z + zeros(t, x), initial_state=0.7)


def test_config_validation():
    with pytest.raises(ValueError):
        LSMCConfig(basis_degree=0)
    with pytest.raises(ValueError):
        LSMCConfig(n_paths=39, basis_degree=3)
    with pytest.raises(ValueError):
        LSMCConfig(picard=0)
    LSMCConfig(n_paths=40, basis_degree=3)


def test_lsmc_martingale(atoms):
    cfg = LSMCConfig(n_paths=20_000, grid=TimeGrid(0, 1, 32), seed=1)
    y0, se = lsmc_solve(_martingale(atoms), 0.8, cfg)
    assert se > 0
    assert abs(y0 - 0.7) < 3 * se


def test_lsmc_discounting():
    c = 0.4
    p = make_problem(terminal=lambda x: 1.0 + zeros(x), driver=lambda t, x, y, z, u: -c * y + zeros(t, x, z, u))
    vals = []
    for n in (100, 200):
        r = lsmc_solve(p, 0.5, LSMCConfig(n_paths=1000, grid=TimeGrid(0, 1, n)))
        assert r.std_error < 1e-9
        vals.append(r.y0 - np.exp(-c))
    # implicit Euler: first-order error in the step
    assert abs(vals[0]) < 1e-3
    assert 1.8 < vals[0] / vals[1] < 2.2


def test_lsmc_noise_collapse():
    p = build("cir_like_smooth")
    target = expand(p, TimeGrid(0, 1, 256)).order0.Y0.scalar[0]
    gaps = []
    for n in (200, 400):
        r = lsmc_solve(p, 0.0, LSMCConfig(n_paths=100, grid=TimeGrid(0, 1, n)))
        assert r.std_error < 1e-9
        assert np.all(r.degree == 0)
        gaps.append(r.y0 - target)
    assert abs(gaps[1]) < 1e-3
    assert 1.8 < gaps[0] / gaps[1] < 2.2


def test_lsmc_agrees_with_plain_mc(atoms):
    p = make_problem(measure=atoms, jump_coeff=lambda t, x, z: z + zeros(t, x), terminal=np.sin)
    g = TimeGrid(0, 1, 32)
    y_l, se_l = lsmc_solve(p, 0.6, LSMCConfig(n_paths=20_000, grid=g, seed=4))
    y_p, se_p = plain_mc_terminal(p, 0.6, 20_000, seed=4, grid=g)
    assert abs(y_l - y_p) < 3 * np.hypot(se_l, se_p)


def test_lsmc_degree_stability():
    p = build("cir_like_smooth")
    g = TimeGrid(0, 1, 50)
    r3 = lsmc_solve(p, 0.2, LSMCConfig(n_paths=50_000, basis_degree=3, grid=g, seed=2))
    r4 = lsmc_solve(p, 0.2, LSMCConfig(n_paths=50_000, basis_degree=4, grid=g, seed=2))
    assert abs(r3.y0 - r4.y0) < 2 * r3.std_error
    assert np.all(r3.condition < 1e10)


def test_lsmc_deterministic():
    p = build("quadratic_driver")
    cfg = LSMCConfig(n_paths=2000, grid=TimeGrid(0, 1, 16), seed=5)
    a, b = lsmc_solve(p, 0.3, cfg), lsmc_solve(p, 0.3, cfg)
    assert a.y0 == b.y0 and np.array_equal(a.pathwise, b.pathwise)


def test_lsmc_bundle_grid_mismatch():
    from fbsdexp.montecarlo import simulate_noise

    p = build("linear")
    b = simulate_noise(TimeGrid(0, 1, 8), p.measure, 0, 100)
    with pytest.raises(ValueError):
        lsmc_solve(p, 0.1, LSMCConfig(n_paths=100, grid=TimeGrid(0, 1, 16)), bundle=b)


def test_plain_mc_examples(atoms):
    const = make_problem(terminal=lambda x: 2.5 + zeros(x))
    assert plain_mc_terminal(const, 0.5, 500, 0) == (2.5, 0.0)
    est, se = plain_mc_terminal(_martingale(atoms), 0.9, 50_000, 3)
    assert abs(est - 0.7) < 3 * se
    with pytest.raises(ValueError, match="identically zero"):
        plain_mc_terminal(build("linear"), 0.1, 100, 0)


@pytest.mark.parametrize("theta", [0.5, 2.0])
def test_plain_mc_matches_lk(theta):
    meas = DiscreteLevyMeasure.from_atoms([0.5, -0.2], [1.0, 0.5])
    p = make_problem(measure=meas, jump_coeff=lambda t, x, z: z + zeros(t, x), initial_state=0.3,
                     drift=lambda t, x, e: 0.2 + zeros(t, x, e), terminal=lambda x: np.cos(theta * x))
    est, se = plain_mc_terminal(p, 0.7, 100_000, 6, grid=TimeGrid(0, 1, 20))
    exact = levy_khintchine_exact(0.2, 0.3, meas, 0.7, theta, 1.0, 0.3)
    assert abs(est - exact.real) < 3 * se


def test_lk_examples():
    meas = DiscreteLevyMeasure.from_atoms([1.0], [2.0])
    assert levy_khintchine_exact(0.3, 0.5, meas, 0.4, 0.0, 1.0, 0.2) == 1.0
    th, e, s, x, T = 1.3, 0.2, 0.5, 0.4, 2.0
    got = levy_khintchine_exact(0.0, s, DiscreteLevyMeasure.empty(), e, th, T, x)
    assert got == pytest.approx(np.exp(1j * th * x - 0.5 * th**2 * e**2 * s**2 * T), abs=1e-15)
    got = levy_khintchine_exact(0.0, 0.0, meas, e, th, T, x)
    assert got == pytest.approx(np.exp(1j * th * x + 2.0 * T * (np.exp(1j * th * e) - 1 - 1j * th * e)), abs=1e-15)
    with pytest.raises(ValueError):
        levy_khintchine_exact(lambda t: t, s, meas, e, th, T, x)


@settings(max_examples=50, deadline=None)
@given(st.floats(-2, 2), st.floats(0, 2), st.floats(0, 1), st.floats(-5, 5), st.floats(0.1, 3), st.floats(-3, 3),
       st.lists(st.tuples(st.floats(-2, 2).filter(lambda v: v != 0), st.floats(0.01, 4)), max_size=4))
def test_lk_modulus_bounded(b, s, e, th, T, x, atoms):
    meas = DiscreteLevyMeasure.from_atoms([a for a, _ in atoms], [w for _, w in atoms]) if atoms \
        else DiscreteLevyMeasure.empty()
    assert abs(levy_khintchine_exact(b, s, meas, e, th, T, x)) <= 1 + 1e-12
