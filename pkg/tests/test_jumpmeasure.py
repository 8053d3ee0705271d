import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbsdexp import DiscreteLevyMeasure, GridFunction, IntensitySpec, TimeGrid, density_path, transform_intensity
from fbsdexp.jumpmeasure import density_paths, gamma_bar0, integrate, moment_Gamma, moment_q, sample_jumps
from fbsdexp.model import eval_partial

from conftest import make_problem, zeros


def test_integrate_examples(atoms):
    assert integrate(atoms, lambda z: 0 * z) == 0.0
    assert integrate(atoms, lambda z: z**2) == pytest.approx(0.59, abs=1e-15)
    assert integrate(atoms, lambda z: np.ones_like(z)) == pytest.approx(3.0)
    assert atoms.total_mass() == pytest.approx(3.0)


def test_integrate_rejects_non_finite(atoms):
    with pytest.raises(ValueError, match="non-finite"):
        with np.errstate(invalid="ignore"):
            integrate(atoms, lambda z: np.log(z))


def test_integrate_leading_axes(atoms):
    s = np.linspace(0, 1, 4)
    vals = integrate(atoms, lambda z: s[:, None] * z[None, :])
    assert np.allclose(vals, 0.7 * s)


def test_moment_q(atoms):
    assert moment_q(atoms, lambda z: z, 2) == pytest.approx(0.59)
    assert moment_q(atoms, lambda z: z, 3) == pytest.approx(0.223)
    assert moment_q(atoms, lambda z: 0 * z, 5) == 0.0
    with pytest.raises(ValueError):
        moment_q(atoms, lambda z: z, 1)


def test_moment_Gamma(atoms):
    one = lambda z: np.ones_like(z)  # noqa: E731
    for j in (1, 2, 5):
        assert moment_Gamma(atoms, one, lambda z: 0 * z, j) == 0.0
    assert moment_Gamma(atoms, one, lambda z: z, 1) == pytest.approx(0.7)
    assert moment_Gamma(atoms, lambda z: z, lambda z: z, 2) == pytest.approx(1.403)


def test_gamma_bar0(atoms):
    one = lambda z: np.ones_like(z)  # noqa: E731
    assert gamma_bar0(atoms, one, lambda z: 0 * z) == 0.0
    assert gamma_bar0(atoms, one, lambda z: z) == pytest.approx(0.7)
    assert gamma_bar0(atoms, lambda z: np.minimum(1.0, np.abs(z)), one) == pytest.approx(1.3)


def test_measure_validation():
    with pytest.raises(ValueError):
        DiscreteLevyMeasure.from_atoms([0.0], [1.0])
    with pytest.raises(ValueError):
        DiscreteLevyMeasure.from_atoms([0.1], [-1.0])
    with pytest.raises(ValueError):
        DiscreteLevyMeasure.from_atoms([0.1, 0.2], [1.0])


def test_measure_roundtrip(tmp_path, atoms):
    path = tmp_path / "atoms.txt"
    atoms.save(path)
    back = DiscreteLevyMeasure.load(path)
    assert np.array_equal(back.marks(), atoms.marks())
    assert np.array_equal(back.weights(), atoms.weights())


def test_sample_jumps_empty_measure():
    assert sample_jumps(DiscreteLevyMeasure.empty(), (0.0, 1.0), np.random.default_rng(0)) == []


def test_sample_jumps_counts_and_marks(atoms):
    rng = np.random.default_rng(11)
    n = 100_000
    counts = np.empty(n)
    marks = []
    for i in range(n):
        ev = sample_jumps(atoms, (0.0, 1.0), rng)
        counts[i] = len(ev)
        marks.extend(m for _, _, m in ev)
    assert abs(counts.mean() - 3.0) < 0.05
    marks = np.array(marks)
    p = np.mean(marks == 0.5)
    band = 3 * np.sqrt(2 / 3 * 1 / 3 / marks.size)
    assert abs(p - 2 / 3) < band


def test_sample_jumps_sorted(atoms):
    ev = sample_jumps(atoms, (0.2, 3.0), np.random.default_rng(5))
    times = [t for t, _, _ in ev]
    assert times == sorted(times)
    assert all(0.2 <= t <= 3.0 for t in times)


def _intensity_problem(marks=(0.6, -0.4), weights=(0.5, 0.5), driver=None):
    return make_problem(
        drift=lambda t, x, e: -x + zeros(t, e),
        jump_coeff=lambda t, x, z: z + zeros(t, x),
        measure=DiscreteLevyMeasure.from_atoms(marks, weights),
        driver=driver or (lambda t, x, y, z, u: -0.1 * y + 0.5 * u + zeros(t, x, z)),
    )


def _cloud(n=200, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.uniform(0, 1, n), rng.uniform(-3, 3, n), rng.uniform(0, 1, n), rng.uniform(-2, 2, n),
            rng.uniform(-1, 1, n), rng.uniform(-1, 1, n))


def test_transform_constant_intensity_is_identity():
    p = _intensity_problem()
    spec = IntensitySpec(lambda t, x: 2.0 + zeros(t, x), 2.0, 2.0)
    q = transform_intensity(p, spec)
    t, x, e, y, z, u = _cloud()
    assert np.max(np.abs(q.drift(t, x, e) - p.drift(t, x, e))) < 1e-14
    assert np.max(np.abs(q.driver(t, x, y, z, u) - p.driver(t, x, y, z, u))) < 1e-14
    assert q.measure.total_mass() == pytest.approx(2.0)


def test_transform_driver_reduction():
    p = _intensity_problem(driver=lambda t, x, y, z, u: zeros(t, x, y, z, u))
    q = transform_intensity(p, IntensitySpec(lambda t, x: 0.5 + zeros(t, x), 0.5, 2.0))
    t, x, e, y, z, u = _cloud()
    assert np.allclose(q.driver(t, x, y, z, u), -1.5 * u, atol=1e-15)


def test_transform_drift_adds_mean_jump():
    p = _intensity_problem()
    c1, c2 = 0.5, 2.0
    lam = lambda t, x: c1 + (c2 - c1) / (1 + x * x) + zeros(t)  # noqa: E731
    q = transform_intensity(p, IntensitySpec(lam, c1, c2))
    t, x, _, _, _, _ = _cloud()
    mbar = 0.5 * 0.6 + 0.5 * -0.4
    assert np.allclose(q.drift(t, x, 1.0), p.drift(t, x, 1.0) + (c2 - lam(t, x)) * mbar, atol=1e-14)


def test_transform_partials_match_fd():
    p = _intensity_problem()
    c1, c2 = 0.5, 2.0
    lam = lambda t, x: c1 + (c2 - c1) / (1 + x * x) + zeros(t)  # noqa: E731
    q = transform_intensity(p, IntensitySpec(lam, c1, c2))
    t, x, e, y, z, u = _cloud(30)
    from fbsdexp.model import central_difference

    for idx in [(1, 0), (0, 1), (1, 1), (2, 0)]:
        analytic = eval_partial(q, "b", idx, t, x, e)
        fd = central_difference(q.drift, (t, x, e), {1: idx[0], 2: idx[1]}, 1e-4)
        assert np.allclose(analytic, fd, atol=1e-5)
    for idx in [(1, 0, 0, 0), (0, 0, 0, 1), (1, 0, 0, 1)]:
        analytic = eval_partial(q, "f", idx, t, x, y, z, u)
        fd = central_difference(q.driver, (t, x, y, z, u), {1: idx[0], 4: idx[3]}, 1e-4)
        assert np.allclose(analytic, fd, atol=1e-5)


def test_transform_requires_normalised_measure():
    p = _intensity_problem(weights=(1.0, 1.0))
    with pytest.raises(ValueError, match="normalised"):
        transform_intensity(p, IntensitySpec(lambda t, x: 1.0 + zeros(t, x), 1.0, 2.0))


def test_intensity_spec_bounds():
    with pytest.raises(ValueError):
        IntensitySpec(lambda t, x: x, 2.0, 1.0)
    spec = IntensitySpec(lambda t, x: 3.0 + zeros(t, x), 1.0, 2.0)
    with pytest.raises(ValueError):
        spec.check(np.zeros(3), np.zeros(3))


def test_density_constant_c2_is_one():
    grid = TimeGrid(0, 1, 50)
    spec = IntensitySpec(lambda t, x: 2.0 + zeros(t, x), 2.0, 2.0)
    x = GridFunction(grid, np.sin(grid.nodes))
    m = density_path(spec, x, [(0.3, 0, 0.5), (0.71, 0, -0.2)])
    assert np.allclose(m.scalar, 1.0, atol=1e-15)


def test_density_no_jumps_c1():
    grid = TimeGrid(0, 2, 40)
    spec = IntensitySpec(lambda t, x: 0.5 + zeros(t, x), 0.5, 2.0)
    m = density_path(spec, GridFunction(grid, np.zeros(len(grid))), [])
    assert np.allclose(m.scalar, np.exp(-1.5 * grid.nodes), rtol=1e-14)


def test_density_rejects_nonpositive_intensity():
    grid = TimeGrid(0, 1, 10)
    spec = IntensitySpec(lambda t, x: x, 0.5, 2.0)
    with pytest.raises(ValueError, match="lambda <= 0"):
        density_path(spec, GridFunction(grid, np.linspace(-1, 1, 11)), [])


def test_density_paths_matches_single():
    grid = TimeGrid(0, 1, 20)
    spec = IntensitySpec(lambda t, x: 1.0 + 0.5 * np.tanh(x) + zeros(t), 0.5, 1.5)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(3, 21))
    jp, js = np.array([0, 2, 2]), np.array([4, 1, 19])
    many = density_paths(spec, grid, X, jp, js)
    jt = (js + 0.5) * grid.dt
    for p in range(3):
        single = density_path(spec, GridFunction(grid, X[p]), [(t, 0, 1.0) for t in jt[jp == p]])
        assert np.allclose(single.scalar, many[p], rtol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2).filter(lambda v: abs(v) > 1e-3), st.floats(0.01, 5)), min_size=1, max_size=6),
       st.floats(-3, 3), st.floats(-3, 3))
def test_integrate_linear_and_q2_nonnegative(atoms, a, b):
    m = DiscreteLevyMeasure.from_atoms([z for z, _ in atoms], [w for _, w in atoms])
    g1, g2 = np.sin, np.cos
    lhs = integrate(m, lambda z: a * g1(z) + b * g2(z))
    rhs = a * integrate(m, g1) + b * integrate(m, g2)
    assert lhs == pytest.approx(rhs, abs=1e-10)
    assert moment_q(m, lambda z: z, 2) >= 0
