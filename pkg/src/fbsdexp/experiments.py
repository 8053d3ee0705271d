"""Expansion-versus-oracle experiments shared by the CLI and the test-suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expansion import Expansion, expand
from .jumpmeasure import IntensitySpec, transform_intensity
from .model import FBSDEProblem
from .montecarlo import simulate_noise
from .odecore import TimeGrid
from .reference import LSMCConfig, LSMCResult, lsmc_solve


@dataclass(frozen=True, eq=False)
class OracleRun:
    """LSMC values on common random numbers for a list of ``eps``.

    ``bias0`` is the LSMC error at ``eps = 0`` against the RK4 zeroth order;
    it is pure time-discretisation error of the implicit Euler recursion and
    is subtracted from every ``y0`` when ``debias`` was requested.
    """

    eps: np.ndarray
    results: list[LSMCResult]
    bias0: float
    debiased: bool

    @property
    def y0(self) -> np.ndarray:
        shift = self.bias0 if self.debiased else 0.0
        return np.array([r.y0 for r in self.results]) - shift

    @property
    def std_error(self) -> np.ndarray:
        return np.array([r.std_error for r in self.results])


def expansion_for(problem: FBSDEProblem, grid: TimeGrid, intensity: IntensitySpec | None = None) -> Expansion:
    """Expansion of ``problem``; with ``intensity`` it is computed under the constant-rate measure."""
    return expand(problem if intensity is None else transform_intensity(problem, intensity), grid)


def oracle_run(problem: FBSDEProblem, eps_values, config: LSMCConfig, expansion: Expansion,
               intensity: IntensitySpec | None = None, debias: bool = True) -> OracleRun:
    """LSMC at every ``eps`` on one shared noise bundle (plus ``eps = 0`` for the bias)."""
    measure = problem.measure if intensity is None else problem.measure.scaled(intensity.c2)
    bundle = simulate_noise(config.grid, measure, config.seed, config.n_paths, threads=config.threads)
    zero = lsmc_solve(problem, 0.0, config, intensity, bundle)
    bias0 = zero.y0 - float(expansion.order0.Y0.scalar[0])
    results = [lsmc_solve(problem, float(e), config, intensity, bundle) for e in eps_values]
    return OracleRun(np.asarray(eps_values, dtype=float), results, bias0, debias)


@dataclass(frozen=True)
class SlopeFit:
    order: int
    slope: float
    kept: np.ndarray
    gaps: np.ndarray


def loglog_slope(eps, gaps, std_error, order: int, noise_factor: float = 3.0) -> SlopeFit:
    """Least-squares slope of ``log|gap|`` against ``log eps``.

    Points whose gap is below ``noise_factor`` standard errors are dropped;
    fewer than two surviving points give a ``nan`` slope.
    """
    eps, gaps, se = (np.asarray(a, dtype=float) for a in (eps, gaps, std_error))
    kept = np.abs(gaps) >= noise_factor * se
    slope = float("nan")
    if kept.sum() >= 2:
        slope = float(np.polyfit(np.log(eps[kept]), np.log(np.abs(gaps[kept])), 1)[0])
    return SlopeFit(order, slope, kept, gaps)


def eps_sweep(problem: FBSDEProblem, eps_values, orders, config: LSMCConfig, expansion: Expansion,
              intensity: IntensitySpec | None = None, debias: bool = True):
    """Gaps ``Y0_expansion - Y0_oracle`` per order with their fitted slopes."""
    run = oracle_run(problem, eps_values, config, expansion, intensity, debias)
    fits = []
    for N in orders:
        exp_vals = np.array([expansion.initial_value(e, N) for e in run.eps])
        fits.append(loglog_slope(run.eps, exp_vals - run.y0, run.std_error, N))
    return run, fits


def second_derivative_fd(problem: FBSDEProblem, config: LSMCConfig, h: float,
                         intensity: IntensitySpec | None = None):
    """``(Y(h) - 2 Y(0) + Y(-h)) / (2 h^2)`` by LSMC on shared noise, with its standard error.

    Estimates half the second ``eps``-derivative of ``Y_0`` at ``eps = 0``;
    the error is ``O(h^2)``.
    """
    measure = problem.measure if intensity is None else problem.measure.scaled(intensity.c2)
    bundle = simulate_noise(config.grid, measure, config.seed, config.n_paths, threads=config.threads)
    r = {e: lsmc_solve(problem, e, config, intensity, bundle) for e in (0.0, h, -h)}
    est = (r[h].y0 + r[-h].y0 - 2.0 * r[0.0].y0) / (2.0 * h * h)
    pw = (r[h].pathwise + r[-h].pathwise - 2.0 * r[0.0].pathwise) / (2.0 * h * h)
    return float(est), float(pw.std(ddof=1) / np.sqrt(pw.size))
