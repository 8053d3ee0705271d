"""Brute-force oracles: regression Monte Carlo, plain Monte Carlo, Lévy-Khintchine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, SingularRegression
from .jumpmeasure import DiscreteLevyMeasure, IntensitySpec
from .model import FBSDEProblem
from .montecarlo import PathBundle, simulate_noise, simulate_state
from .odecore import TimeGrid

RIDGE = 1e-10
MAX_CONDITION = 1e10


@dataclass(frozen=True)
class LSMCConfig:
    n_paths: int = 100_000
    basis_degree: int = 3
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(0.0, 1.0, 64))
    seed: int = 0
    picard: int = 3
    ridge: float = RIDGE
    strict: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.basis_degree < 1:
            raise ValueError("basis_degree must be >= 1")
        if self.n_paths < 10 * (self.basis_degree + 1):
            raise ValueError(f"n_paths must be >= 10 * (basis_degree + 1) = {10 * (self.basis_degree + 1)}")
        if self.picard < 1:
            raise ValueError("at least one Picard sweep is required")


@dataclass(frozen=True, eq=False)
class LSMCResult:
    """``y0`` with its standard error.

    ``pathwise`` holds ``xi(X_T) + sum_i f_i dt`` per path.  Regression onto a
    basis containing the constant preserves sample means, so its mean is
    ``y0`` (up to the ridge term); differences of two runs on the same seed
    give the noise of differenced estimators.
    ``condition`` and ``degree`` are per backward step.
    """

    y0: float
    std_error: float
    z0: float
    u0: float
    pathwise: np.ndarray = field(repr=False)
    condition: np.ndarray = field(repr=False)
    degree: np.ndarray = field(repr=False)

    def __iter__(self):
        return iter((self.y0, self.std_error))


class _Regressor:
    """Least squares on ``{1, x, ..., x^d}`` of the standardised state."""

    def __init__(self, x, degree, ridge, strict, step):
        P = x.size
        mu, sd = float(x.mean()), float(x.std())
        if not sd > 1e-12 * max(1.0, abs(mu)):
            degree = 0
        else:
            x = (x - mu) / sd
        while True:
            B = np.vander(x, degree + 1, increasing=True) if degree else np.ones((P, 1))
            G = B.T @ B / P
            G[np.diag_indices_from(G)] += ridge
            cond = float(np.linalg.cond(G))
            if cond <= MAX_CONDITION or degree == 0:
                break
            if strict:
                raise SingularRegression(step, cond)
            degree -= 1
        if not math.isfinite(cond):
            raise SingularRegression(step, cond)
        self.B, self.G, self.P = B, G, P
        self.degree, self.condition = degree, cond

    def fit(self, *responses):
        R = np.column_stack(responses)
        coef = np.linalg.solve(self.G, self.B.T @ R / self.P)
        out = self.B @ coef
        return [out[:, k] for k in range(out.shape[1])]


def lsmc_solve(problem: FBSDEProblem, eps: float, config: LSMCConfig, intensity: IntensitySpec | None = None,
               bundle: PathBundle | None = None) -> LSMCResult:
    """Backward regression solver for ``Y_0``.

    ``Y_i = E[Y_{i+1} | X_i] + f(t_i, X_i, Y_i, Z_i, U_i) dt`` with ``Y_i``
    found by Picard sweeps, ``Z_i = E[(Y_{i+1} - E Y_{i+1}) dW_i | X_i] / dt``
    and ``U_i`` from the compensated, ``rho``-weighted jump sum of the step.

    With ``intensity`` the jumps follow the state-dependent rate by thinning
    candidates at rate ``c2`` (the measure of ``problem`` must be normalised).
    ``eps`` may be negative, which only flips the sign of the noise.
    """
    grid = config.grid
    measure = problem.measure if intensity is None else problem.measure.scaled(intensity.c2)
    if bundle is None:
        bundle = simulate_noise(grid, measure, config.seed, config.n_paths, threads=config.threads)
    elif bundle.grid != grid:
        raise ValueError("bundle grid differs from config grid")
    state = simulate_state(problem, eps, bundle, intensity)
    X, R = state.X, state.jump_rho
    dt, nodes, n = grid.dt, grid.nodes, grid.n_steps
    f = problem.driver
    Y = np.asarray(problem.terminal(X[:, -1]), dtype=float) * np.ones(X.shape[0])
    conds = np.empty(n)
    degs = np.empty(n, dtype=np.int64)
    y_next = Y
    fsum = np.zeros_like(Y)
    for i in range(n - 1, -1, -1):
        x = X[:, i]
        reg = _Regressor(x, config.basis_degree, config.ridge, config.strict, i)
        conds[i], degs[i] = reg.condition, reg.degree
        (ey,) = reg.fit(y_next)
        c = y_next - ey
        z, u = reg.fit(c * bundle.dW[:, i] / dt, c * R[:, i] / dt)
        y = ey.copy()
        for _ in range(config.picard):
            fv = np.asarray(f(nodes[i], x, y, z, u), dtype=float) * np.ones_like(y)
            y = ey + dt * fv
        fsum += dt * fv
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite regression value at step {i}")
        if i == 0:
            y0, z0, u0 = float(y.mean()), float(z.mean()), float(u.mean())
            pathwise = Y + fsum
            pathwise += y0 - float(pathwise.mean())
        y_next = y
    se = float(pathwise.std(ddof=1) / math.sqrt(pathwise.size)) if pathwise.size > 1 else 0.0
    return LSMCResult(y0, se, z0, u0, pathwise, conds, degs)


def _assert_zero_driver(problem, samples=64):
    rng = np.random.default_rng(2024)
    t = rng.uniform(0.0, problem.horizon, samples)
    pts = rng.uniform(-3.0, 3.0, (4, samples))
    if np.any(np.asarray(problem.driver(t, *pts), dtype=float) != 0.0):
        raise ValueError("plain Monte Carlo requires a driver identically zero (f not == 0)")


def plain_mc_terminal(problem: FBSDEProblem, eps: float, n_paths: int, seed: int,
                      grid: TimeGrid | None = None) -> tuple[float, float]:
    """Sample mean and standard error of ``xi(X^eps_T)``; valid only when ``f == 0``."""
    _assert_zero_driver(problem)
    grid = TimeGrid(0.0, problem.horizon, 64) if grid is None else grid
    bundle = simulate_noise(grid, problem.measure, seed, n_paths)
    X = simulate_state(problem, eps, bundle).X
    v = np.asarray(problem.terminal(X[:, -1]), dtype=float) * np.ones(n_paths)
    se = float(v.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return float(v.mean()), se


def levy_khintchine_exact(b: float, sigma: float, measure: DiscreteLevyMeasure, eps: float, theta: float,
                          T: float, x: float, gamma=None) -> complex:
    """``E[exp(i theta X_T)]`` for ``X = x + b t + eps sigma W + eps int gamma(z) mu~``.

    ``gamma`` defaults to the identity on marks.  Coefficients are constants,
    so the exponent is linear in ``T``.
    """
    for v in (b, sigma):
        if callable(v) or np.ndim(v):
            raise ValueError("levy_khintchine_exact needs constant, state-independent coefficients")
    exponent = 1j * theta * b - 0.5 * theta**2 * eps**2 * sigma**2
    for marks, weights in measure.components:
        if marks.size == 0:
            continue
        g = marks if gamma is None else np.asarray(gamma(marks), dtype=float) * np.ones_like(marks)
        a = theta * eps * g
        exponent += np.sum(weights * (np.exp(1j * a) - 1.0 - 1j * a))
    return complex(np.exp(1j * theta * x + T * exponent))
