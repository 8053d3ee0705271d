"""Small-variance expansion of a scalar FBSDE with jumps up to second order.

The zeroth order is a pair of deterministic ODEs (forward for ``X0``,
nonlinear backward for ``Y0``).  Orders one and two are represented by
deterministic coefficient functions multiplying powers of the stochastic
flows ``X1`` and ``X2``; those coefficients solve linear terminal-value ODEs
that are integrated in dependency order.

All coefficient tables are kept on the half-step grid (nodes and RK4
midpoints).  Midpoint values of already solved functions come from cubic
Hermite interpolation with their exact ODE derivative, so every ODE solve
keeps fourth-order accuracy.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import NumericalError
from .model import FBSDEProblem, eval_partial
from .odecore import GridFunction, TimeGrid, hermite_midpoints, integrate_forward, integrate_terminal

# f-partials needed up to total order two, keyed by (i_x, i_y, i_z, i_u)
F_INDICES = tuple(
    idx for idx in itertools.product(range(3), repeat=4) if 1 <= sum(idx) <= 2
)


@dataclass(frozen=True, eq=False)
class Order0Solution:
    X0: GridFunction
    Y0: GridFunction
    x_half: np.ndarray = field(repr=False)
    y_half: np.ndarray = field(repr=False)

    @property
    def grid(self) -> TimeGrid:
        return self.X0.grid


def _lookup(grid: TimeGrid, half_values: np.ndarray):
    hn = grid.half_nodes
    return lambda s: np.interp(s, hn, half_values)


def solve_order0(problem: FBSDEProblem, grid: TimeGrid) -> Order0Solution:
    """Deterministic zeroth order: ``X0' = b(s, X0, 0)`` and ``-Y0' = f(s, X0, Y0, 0, 0)``."""
    b, f, dt = problem.drift, problem.driver, grid.dt
    X0 = integrate_forward(lambda s, v: b(s, v, 0.0), problem.initial_state, grid)
    x = X0.scalar
    x_half = hermite_midpoints(x, np.asarray(b(grid.nodes, x, 0.0), dtype=float) * np.ones_like(x), dt)
    x_at = _lookup(grid, x_half)
    yT = problem.terminal(x[-1])
    Y0 = integrate_terminal(lambda s, v: f(s, x_at(s), v, 0.0, 0.0), yT, grid)
    y = Y0.scalar
    dy = -np.asarray(f(grid.nodes, x, y, 0.0, 0.0), dtype=float) * np.ones_like(y)
    y_half = hermite_midpoints(y, dy, dt)
    return Order0Solution(X0, Y0, x_half, y_half)


@dataclass(frozen=True, eq=False)
class FrozenCoefficients:
    """Coefficients and partials evaluated along the zeroth-order solution.

    Every array attribute is tabulated on the half-step grid; use
    :meth:`node` for node values.  ``fp`` holds the partials of ``f`` keyed
    by ``(i_x, i_y, i_z, i_u)``; ``gamma0`` and ``dxgamma0`` have one column
    per measure atom.
    """

    problem: FBSDEProblem
    order0: Order0Solution
    b0: np.ndarray
    sigma0: np.ndarray
    dxb: np.ndarray
    deb: np.ndarray
    dxxb: np.ndarray
    dxeb: np.ndarray
    deeb: np.ndarray
    dxsigma: np.ndarray
    gamma0: np.ndarray
    dxgamma0: np.ndarray
    Gamma0: np.ndarray
    dxGamma0: np.ndarray
    comp0: np.ndarray
    dxcomp0: np.ndarray
    m2: np.ndarray
    rho_m2: np.ndarray
    fp: dict
    dxi: float
    dxxi: float

    @property
    def grid(self) -> TimeGrid:
        return self.order0.grid

    def node(self, name: str, idx=None) -> np.ndarray:
        arr = self.fp[idx] if name == "fp" else getattr(self, name)
        return arr[::2]

    def f(self, ix=0, iy=0, iz=0, iu=0) -> np.ndarray:
        return self.fp[(ix, iy, iz, iu)]


def freeze(problem: FBSDEProblem, order0: Order0Solution, measure=None) -> FrozenCoefficients:
    """Tabulate every coefficient and partial needed by the first and second orders."""
    measure = problem.measure if measure is None else measure
    grid = order0.grid
    s = np.asarray(grid.half_nodes)
    x, y = order0.x_half, order0.y_half
    zero = np.zeros_like(s)

    def P(target, idx, *pt):
        try:
            v = eval_partial(problem, target, idx, *pt)
        except (ValueError, KeyError) as exc:
            raise NumericalError(f"derivative oracle failed for {target}{idx}: {exc}") from exc
        v = np.broadcast_to(v, np.broadcast(*pt).shape).astype(float)
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"non-finite partial {target}{idx} along the zeroth-order path")
        return v

    b0 = P("b", (0, 0), s, x, zero)
    dxb = P("b", (1, 0), s, x, zero)
    deb = P("b", (0, 1), s, x, zero)
    dxxb = P("b", (2, 0), s, x, zero)
    dxeb = P("b", (1, 1), s, x, zero)
    deeb = P("b", (0, 2), s, x, zero)
    sigma0 = P("sigma", (0,), s, x)
    dxsigma = P("sigma", (1,), s, x)

    marks, weights = measure.components[0]
    rho = np.asarray(problem.jump_weight(marks), dtype=float) * np.ones_like(marks)
    if marks.size:
        gamma0 = P("gamma", (0,), s[:, None], x[:, None], marks[None, :])
        dxgamma0 = P("gamma", (1,), s[:, None], x[:, None], marks[None, :])
    else:
        gamma0 = np.zeros((s.size, 0))
        dxgamma0 = np.zeros((s.size, 0))
    Gamma0 = gamma0 @ (rho * weights)
    dxGamma0 = dxgamma0 @ (rho * weights)
    comp0 = gamma0 @ weights
    dxcomp0 = dxgamma0 @ weights
    m2 = gamma0**2 @ weights
    rho_m2 = gamma0**2 @ (rho * weights)

    fp = {idx: P("f", idx, s, x, y, zero, zero) for idx in F_INDICES}
    xT = order0.X0.scalar[-1]
    dxi = float(P("xi", (1,), np.float64(xT)))
    dxxi = float(P("xi", (2,), np.float64(xT)))
    return FrozenCoefficients(
        problem, order0, b0, sigma0, dxb, deb, dxxb, dxeb, deeb, dxsigma,
        gamma0, dxgamma0, Gamma0, dxGamma0, comp0, dxcomp0, m2, rho_m2, fp, dxi, dxxi,
    )


def _solve_linear(a, g, y_terminal, grid):
    """Solve ``-y' = a y + g`` and return ``(node values, half-grid values)``."""
    y = kernels.rk4_linear_terminal(a, g, float(y_terminal), grid.dt)
    if not np.all(np.isfinite(y)):
        bad = int(np.argwhere(~np.isfinite(y))[-1, 0])
        from .errors import ODEBlowUp

        raise ODEBlowUp(bad)
    dy = -(a[::2] * y + g[::2])
    return y, hermite_midpoints(y, dy, grid.dt)


@dataclass(frozen=True, eq=False)
class Order1Coefficients:
    y1: GridFunction
    y0: GridFunction
    frozen: FrozenCoefficients = field(repr=False)
    y1_half: np.ndarray = field(repr=False)
    y0_half: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class Order2Coefficients:
    y2: GridFunction
    y11: GridFunction
    y1: GridFunction
    y0: GridFunction
    frozen: FrozenCoefficients = field(repr=False)
    half: dict = field(repr=False)


def solve_order1(frozen: FrozenCoefficients, grid: TimeGrid | None = None) -> Order1Coefficients:
    grid = frozen.grid if grid is None else grid
    F = frozen
    fx, fy, fz, fu = F.f(1), F.f(0, 1), F.f(0, 0, 1), F.f(0, 0, 0, 1)
    y1, y1h = _solve_linear(F.dxb + fy, fx, F.dxi, grid)
    y0, y0h = _solve_linear(fy, (F.deb + fz * F.sigma0 + fu * F.Gamma0) * y1h, 0.0, grid)
    return Order1Coefficients(GridFunction(grid, y1), GridFunction(grid, y0), frozen, y1h, y0h)


def solve_order2(frozen: FrozenCoefficients, o1: Order1Coefficients, grid: TimeGrid | None = None) -> Order2Coefficients:
    grid = frozen.grid if grid is None else grid
    F = frozen
    p, q = o1.y1_half, o1.y0_half
    f = F.f
    fx, fy, fz, fu = f(1), f(0, 1), f(0, 0, 1), f(0, 0, 0, 1)
    fxx, fyy, fzz, fuu = f(2), f(0, 2), f(0, 0, 2), f(0, 0, 0, 2)
    fxy, fxz, fxu = f(1, 1), f(1, 0, 1), f(1, 0, 0, 1)
    fyz, fyu, fzu = f(0, 1, 1), f(0, 1, 0, 1), f(0, 0, 1, 1)
    sig, Gam = F.sigma0, F.Gamma0

    y2, y2h = _solve_linear(F.dxb + fy, fx, F.dxi, grid)

    g11 = 0.5 * fxx + 0.5 * F.dxxb * y2h + fxy * p + 0.5 * fyy * p**2
    y11, y11h = _solve_linear(2.0 * F.dxb + fy, g11, 0.5 * F.dxxi, grid)

    g1 = (
        F.dxeb * y2h
        + 2.0 * F.deb * y11h
        + fz * (y2h * F.dxsigma + 2.0 * y11h * sig)
        + fu * (y2h * F.dxGamma0 + 2.0 * y11h * Gam)
        + fyy * p * q
        + fxy * q
        + p * (fxz * sig + fxu * Gam)
        + p**2 * (fyz * sig + fyu * Gam)
    )
    y1, y1h = _solve_linear(F.dxb + fy, g1, 0.0, grid)

    g0 = (
        y11h * (sig**2 + F.m2)
        + 0.5 * F.deeb * y2h
        + F.deb * y1h
        + y1h * (fz * sig + fu * Gam)
        + y11h * fu * F.rho_m2
        + 0.5 * fyy * q**2
        + p**2 * (0.5 * fzz * sig**2 + 0.5 * fuu * Gam**2 + fzu * sig * Gam)
        + p * q * (fyz * sig + fyu * Gam)
    )
    y0, y0h = _solve_linear(fy, g0, 0.0, grid)

    G = lambda v: GridFunction(grid, v)  # noqa: E731
    half = {"y2": y2h, "y11": y11h, "y1": y1h, "y0": y0h}
    return Order2Coefficients(G(y2), G(y11), G(y1), G(y0), frozen, half)


def evaluate_order(n: int, order0: Order0Solution, o1: Order1Coefficients | None,
                   o2: Order2Coefficients | None, x1, x2, s_index: int):
    """``(Y^[n], Z^[n], psi^[n])`` at node ``s_index`` given flow values ``x1``, ``x2``.

    ``x1`` and ``x2`` may be arrays (one entry per path); the returned
    ``psi`` maps an array of marks to values with a trailing mark axis.
    """
    i = int(s_index)
    if n == 0:
        y = order0.Y0.scalar[i]
        return y, 0.0, lambda z: np.zeros(np.shape(x1) + np.shape(z))
    x1 = np.asarray(x1, dtype=np.float64)
    frozen = (o1 or o2).frozen
    prob = frozen.problem
    s = frozen.grid.nodes[i]
    x0 = order0.X0.scalar[i]
    sig = frozen.sigma0[2 * i]
    dxsig = frozen.dxsigma[2 * i]
    g0 = lambda z: np.asarray(prob.jump_coeff(s, x0, z), dtype=float)  # noqa: E731
    if n == 1:
        a, c = o1.y1.scalar[i], o1.y0.scalar[i]
        Y = a * x1 + c
        Z = a * sig * np.ones_like(x1)
        return Y, Z, lambda z: a * g0(z) * np.ones(np.shape(x1) + (1,) * np.ndim(z))
    if n == 2:
        x2 = np.asarray(x2, dtype=np.float64)
        y2, y11 = o2.y2.scalar[i], o2.y11.scalar[i]
        y1, y0 = o2.y1.scalar[i], o2.y0.scalar[i]
        Y = y2 * x2 + y11 * x1**2 + y1 * x1 + y0
        Z = x1 * (y2 * dxsig + 2.0 * y11 * sig) + y1 * sig

        def psi(z):
            z = np.asarray(z, dtype=float)
            gz = g0(z)
            dgz = eval_partial(prob, "gamma", (1,), s, x0, z)
            xx = x1[..., None] if np.ndim(z) else x1
            return xx * (y2 * dgz + 2.0 * y11 * gz) + y11 * gz**2 + y1 * gz

        return Y, Z, psi
    raise ValueError(f"generic expansion is implemented for orders 0, 1, 2; got {n}")


@dataclass(frozen=True, eq=False)
class Expansion:
    """All coefficient functions of one problem on one grid."""

    problem: FBSDEProblem
    order0: Order0Solution
    frozen: FrozenCoefficients
    o1: Order1Coefficients
    o2: Order2Coefficients

    @property
    def grid(self) -> TimeGrid:
        return self.order0.grid

    def initial_value(self, eps: float, order: int) -> float:
        """Expansion of ``Y`` at the initial time (the flows vanish there)."""
        terms = [self.order0.Y0.scalar[0], self.o1.y0.scalar[0], self.o2.y0.scalar[0]]
        if not 0 <= order <= 2:
            raise ValueError(f"order must be 0, 1 or 2, got {order}")
        return float(sum(eps**n * terms[n] for n in range(order + 1)))

    def tables(self) -> dict[str, np.ndarray]:
        return {
            "X0": self.order0.X0.scalar, "Y0": self.order0.Y0.scalar,
            "y1_1": self.o1.y1.scalar, "y1_0": self.o1.y0.scalar,
            "y2_2": self.o2.y2.scalar, "y2_11": self.o2.y11.scalar,
            "y2_1": self.o2.y1.scalar, "y2_0": self.o2.y0.scalar,
        }


def expand(problem: FBSDEProblem, grid: TimeGrid) -> Expansion:
    order0 = solve_order0(problem, grid)
    frozen = freeze(problem, order0)
    o1 = solve_order1(frozen, grid)
    o2 = solve_order2(frozen, o1, grid)
    return Expansion(problem, order0, frozen, o1, o2)
