"""Polynomial expansion for forward dynamics that are linear in the state.

Two forward models are supported, both scalar:

* ``kind="exponential"``: ``dX = X (b dt + sigma dW) + X_- int gamma mu~``.
  The backward equation is driven by ``xi(eps X_T)`` and ``f(s, eps X, ...)``,
  and each order is a single monomial ``Y^[n] = X^n y^[n](s)``.
* ``kind="additive"``: ``X^eps = m(s) + eps L_s`` with ``m' = b``,
  ``dL = sigma dW + int gamma mu~`` and ``L_0 = 0``.  Shifting ``xi`` and
  ``f`` by ``m`` turns this into the same ``eps``-scaled structure with an
  additive forward process; each order is then a polynomial of degree ``n``
  in ``L``, solved by :func:`solve_poly_coeffs`.

Coefficient functions solve linear terminal-value ODEs whose forcing is the
multi-index sum over the driver's partial derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np

from . import kernels
from .errors import NumericalError, ODEBlowUp
from .jumpmeasure import DiscreteLevyMeasure
from .model import FD_STEP, _one, eval_partial
from .odecore import GridFunction, TimeGrid, hermite_midpoints, integrate_forward, integrate_terminal

MAX_LEVY_ORDER = 8


def _const(c):
    return lambda s: np.full(np.shape(s), float(c))


@dataclass(frozen=True, eq=False)
class ExpLevyModel:
    """Scalar model with time-dependent forward coefficients.

    ``drift(s)``, ``vol(s)`` and ``jump(s, z)`` are vectorised callbacks.
    ``terminal`` and ``driver`` follow the same conventions (and ``partials``
    keys) as :class:`~fbsdexp.model.FBSDEProblem`.
    """

    terminal: Callable
    driver: Callable
    horizon: float
    initial_state: float
    drift: Callable = field(default_factory=lambda: _const(0.0))
    vol: Callable = field(default_factory=lambda: _const(0.0))
    jump: Callable = lambda s, z: np.zeros(np.broadcast(s, z).shape)
    measure: DiscreteLevyMeasure = field(default_factory=DiscreteLevyMeasure.empty)
    jump_weight: Callable = _one
    partials: Mapping = field(default_factory=dict)
    kind: str = "exponential"
    max_order: int = MAX_LEVY_ORDER
    fd_step: float = FD_STEP
    dims: tuple[int, int, int, int] = (1, 1, 1, 1)
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("exponential", "additive"):
            raise ValueError(f"kind must be 'exponential' or 'additive', got {self.kind!r}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if tuple(self.dims) != (1, 1, 1, 1):
            raise ValueError("polynomial expansion is implemented for m = d = l = k = 1")
        s = np.linspace(0.0, self.horizon, 33)
        marks = self.measure.marks(0)
        probes = [self.drift(s), self.vol(s)]
        if marks.size:
            probes.append(self.jump(s[:, None], marks[None, :]))
        if not all(np.all(np.isfinite(np.asarray(p, dtype=float))) for p in probes):
            raise ValueError("forward coefficients must be finite on [0, T] x atoms")
        object.__setattr__(self, "partials", dict(self.partials))


def compositions(total: int, parts: int) -> list[tuple[int, ...]]:
    """Ordered tuples of ``parts`` positive integers summing to ``total``."""
    return list(_compositions(int(total), int(parts)))


@lru_cache(maxsize=None)
def _compositions(total, parts):
    if parts < 1 or parts > total:
        return ()
    if parts == 1:
        return ((total,),)
    out = []
    for first in range(1, total - parts + 2):
        out.extend((first,) + rest for rest in _compositions(total - first, parts - 1))
    return tuple(out)


@dataclass(frozen=True)
class DriverTerm:
    """One summand of the order-``n`` driver forcing.

    ``idx`` is the partial ``(i_x, i_y, i_z, i_u)`` of ``f``; ``y_orders``,
    ``z_orders`` and ``u_orders`` list the expansion orders whose ``Y``,
    ``Z`` and ``int rho psi nu`` components multiply it.
    """

    idx: tuple[int, int, int, int]
    y_orders: tuple[int, ...]
    z_orders: tuple[int, ...]
    u_orders: tuple[int, ...]

    @property
    def weight(self) -> float:
        return 1.0 / math.prod(math.factorial(k) for k in self.idx)


@lru_cache(maxsize=None)
def driver_terms(n: int) -> tuple[DriverTerm, ...]:
    """Enumerate the multi-index sum for order ``n`` (empty for ``n = 1``).

    ``k`` runs over ``2..n``, ``i_x`` over ``0..k-1``, ``i_y`` over
    ``0..k-i_x``, ``i_z`` over ``0..k-i_x-i_y``; the remaining
    ``k - i_x`` slots take every ordered composition of ``n - i_x``.
    """
    terms = []
    for k in range(2, n + 1):
        for ix in range(0, k):
            for iy in range(0, k - ix + 1):
                for iz in range(0, k - ix - iy + 1):
                    iu = k - ix - iy - iz
                    for beta in compositions(n - ix, k - ix):
                        terms.append(DriverTerm(
                            (ix, iy, iz, iu),
                            beta[:iy], beta[iy:iy + iz], beta[iy + iz:],
                        ))
    return tuple(terms)


@dataclass(frozen=True, eq=False)
class LevyCoefficients:
    """Zeroth order ``Y0`` and the coefficient functions of orders ``1..N``.

    For the exponential model ``y[n-1]`` holds ``y^[n]``.  For the additive
    model ``poly[n-1]`` holds the ``(nodes, n + 1)`` array of polynomial
    coefficients in ``L`` and ``y[n-1]`` its constant term.
    """

    model: ExpLevyModel
    Y0: GridFunction
    y: list
    poly: list = field(default_factory=list, repr=False)
    shift: np.ndarray | None = field(default=None, repr=False)

    @property
    def order(self) -> int:
        return len(self.y)

    @property
    def grid(self) -> TimeGrid:
        return self.Y0.grid


def _drift_shift(model: ExpLevyModel, grid: TimeGrid):
    """``m(s) = x + int_0^s b`` on the half grid (additive model)."""
    fine = grid.refine(2)
    m = integrate_forward(lambda s, v: np.asarray(model.drift(s), dtype=float), model.initial_state, fine)
    return m.scalar


def _order0_point(model, grid):
    """``x``-argument of ``f`` along the zeroth order on the half grid."""
    if model.kind == "additive":
        return _drift_shift(model, grid)
    return np.zeros(2 * grid.n_steps + 1)


def solve_levy_order0(model: ExpLevyModel, grid: TimeGrid) -> GridFunction:
    """``Y0`` from ``-Y0' = f(s, x0(s), Y0, 0, 0)`` with ``Y0(T) = xi(x0(T))``.

    ``x0`` is ``0`` for the exponential model and the drift shift ``m`` for
    the additive one.
    """
    xh = _order0_point(model, grid)
    hn = grid.half_nodes
    x_at = lambda s: np.interp(s, hn, xh)  # noqa: E731
    yT = float(model.terminal(xh[-1]))
    return integrate_terminal(lambda s, v: model.driver(s, x_at(s), v, 0.0, 0.0), yT, grid)


class _Frozen:
    """Partials of ``f`` along ``(s, x0(s), Y0(s), 0, 0)`` on the half grid, cached."""

    def __init__(self, model, Y0: GridFunction):
        grid = Y0.grid
        self.model = model
        self.s = np.asarray(grid.half_nodes)
        self.x = _order0_point(model, grid)
        y = Y0.scalar
        dy = -np.asarray(model.driver(grid.nodes, self.x[::2], y, 0.0, 0.0), dtype=float) * np.ones_like(y)
        self.y = hermite_midpoints(y, dy, grid.dt)
        self._cache = {}

    def __call__(self, idx):
        idx = tuple(idx)
        if idx not in self._cache:
            z = np.zeros_like(self.s)
            try:
                v = eval_partial(self.model, "f", idx, self.s, self.x, self.y, z, z)
            except ValueError as exc:
                raise NumericalError(f"driver partial {idx} unavailable: {exc}") from exc
            v = np.broadcast_to(v, self.s.shape).astype(float)
            if not np.all(np.isfinite(v)):
                raise NumericalError(f"non-finite driver partial {idx}")
            self._cache[idx] = v
        return self._cache[idx]


def _solve_scalar(a, g, yT, grid):
    y = kernels.rk4_linear_terminal(a, g, float(yT), grid.dt)
    if not np.all(np.isfinite(y)):
        raise ODEBlowUp(int(np.argwhere(~np.isfinite(y))[-1, 0]))
    return y, hermite_midpoints(y, -(a[::2] * y + g[::2]), grid.dt)


def _xi_taylor(model, n, at):
    return float(eval_partial(model, "xi", (n,), np.float64(at))) / math.factorial(n)


def solve_levy_coeffs(model: ExpLevyModel, Y0: GridFunction, N: int, grid: TimeGrid | None = None) -> LevyCoefficients:
    """Coefficient functions of orders ``1..N``."""
    grid = Y0.grid if grid is None else grid
    if not 1 <= N <= model.max_order:
        raise ValueError(f"order N must be in 1..{model.max_order}, got {N}")
    if model.kind == "additive":
        return _solve_additive(model, Y0, N, grid)
    fr = _Frozen(model, Y0)
    s = fr.s
    marks, weights = model.measure.components[0]
    rho = np.asarray(model.jump_weight(marks), dtype=float) * np.ones_like(marks)
    b = np.asarray(model.drift(s), dtype=float) * np.ones_like(s)
    sig = np.asarray(model.vol(s), dtype=float) * np.ones_like(s)
    gam = np.asarray(model.jump(s[:, None], marks[None, :]), dtype=float) * np.ones((s.size, marks.size))

    @lru_cache(maxsize=None)
    def q(j):
        return gam**j @ weights

    @lru_cache(maxsize=None)
    def Gam(j):
        return ((1.0 + gam) ** j - 1.0) @ (rho * weights)

    fy, fz, fu = fr((0, 1, 0, 0)), fr((0, 0, 1, 0)), fr((0, 0, 0, 1))
    y_half: dict[int, np.ndarray] = {}
    ys = []
    for n in range(1, N + 1):
        a = n * b + 0.5 * n * (n - 1) * sig**2 + fy + fz * n * sig + fu * Gam(n)
        for j in range(2, n + 1):
            a = a + math.comb(n, j) * q(j)
        g = fr((n, 0, 0, 0)) / math.factorial(n)
        for term in driver_terms(n):
            prod = term.weight * fr(term.idx)
            for beta in term.y_orders:
                prod = prod * y_half[beta]
            for beta in term.z_orders:
                prod = prod * (beta * sig * y_half[beta])
            for beta in term.u_orders:
                prod = prod * (Gam(beta) * y_half[beta])
            g = g + prod
        y, yh = _solve_scalar(a, g, _xi_taylor(model, n, 0.0), grid)
        y_half[n] = yh
        ys.append(GridFunction(grid, y))
    return LevyCoefficients(model, Y0, ys)


# -- general polynomial engine ------------------------------------------------

@dataclass(frozen=True)
class PolyForward:
    """Half-grid tables of ``dX = (b0 + b1 X) dt + (s0 + s1 X) dW + int (g0 + g1 X_-) mu~``.

    ``g0`` and ``g1`` have one column per atom of ``weights``.
    """

    b0: np.ndarray
    b1: np.ndarray
    s0: np.ndarray
    s1: np.ndarray
    g0: np.ndarray
    g1: np.ndarray
    weights: np.ndarray
    rho: np.ndarray


def _operators(fw: PolyForward, D: int):
    """Per-node matrices of the generator, the ``Z`` map and the ``U`` map on degree-``D`` polynomials.

    Column ``j`` holds the coefficients of the image of ``x**j``.
    """
    H = fw.b0.shape[0]
    L = np.zeros((H, D + 1, D + 1))
    Zm = np.zeros((H, D + 1, D + 1))
    Um = np.zeros((H, D + 1, D + 1))
    w, rw = fw.weights, fw.rho * fw.weights
    one_g1 = 1.0 + fw.g1
    for j in range(D + 1):
        if j >= 1:
            L[:, j - 1, j] += j * fw.b0
            L[:, j, j] += j * fw.b1
            Zm[:, j - 1, j] += j * fw.s0
            Zm[:, j, j] += j * fw.s1
        if j >= 2:
            L[:, j - 2, j] += 0.5 * j * (j - 1) * fw.s0**2
            L[:, j - 1, j] += j * (j - 1) * fw.s0 * fw.s1
            L[:, j, j] += 0.5 * j * (j - 1) * fw.s1**2
        # jump image of x**j: ((1 + g1) x + g0)**j - x**j
        for i in range(j + 1):
            c = math.comb(j, i) * one_g1**i * fw.g0 ** (j - i)
            if i == j:
                c = c - 1.0
            L[:, i, j] += c @ w
            Um[:, i, j] += c @ rw
        if j >= 1:
            L[:, j - 1, j] -= j * (fw.g0 @ w)
            L[:, j, j] -= j * (fw.g1 @ w)
    return L, Zm, Um


def _pmul(a, b, D):
    out = np.zeros((a.shape[0], D + 1))
    for i in range(a.shape[1]):
        for j in range(min(b.shape[1], D + 1 - i)):
            out[:, i + j] += a[:, i] * b[:, j]
    return out


def _rk4_matrix_terminal(M, g, cT, dt):
    """RK4 for ``-c' = M c + g`` on the half grid; returns node values."""
    n = (M.shape[0] - 1) // 2
    out = np.empty((n + 1, cT.size))
    c = cT.astype(float).copy()
    out[n] = c
    h2 = 0.5 * dt
    for i in range(n - 1, -1, -1):
        hi, mid, lo = 2 * i + 2, 2 * i + 1, 2 * i
        k1 = M[hi] @ c + g[hi]
        k2 = M[mid] @ (c + h2 * k1) + g[mid]
        k3 = M[mid] @ (c + h2 * k2) + g[mid]
        k4 = M[lo] @ (c + dt * k3) + g[lo]
        c = c + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(c)):
            raise ODEBlowUp(i)
        out[i] = c
    return out


def solve_poly_coeffs(fw: PolyForward, fpartial: Callable, xi_taylor: Callable, N: int, grid: TimeGrid) -> list[np.ndarray]:
    """Polynomial coefficients of ``Y^[1..N]`` for a state-linear forward model.

    ``fpartial(idx)`` returns the driver partial on the half grid evaluated
    at the zeroth order, ``xi_taylor(n)`` the Taylor coefficient
    ``d^n xi / n!`` of the terminal function.  Returns a list whose entry
    ``n - 1`` is the ``(nodes, n + 1)`` coefficient array of ``Y^[n]``.
    """
    L, Zm, Um = _operators(fw, N)
    H = L.shape[0]
    fy, fz, fu = fpartial((0, 1, 0, 0)), fpartial((0, 0, 1, 0)), fpartial((0, 0, 0, 1))
    A = L + fy[:, None, None] * np.eye(N + 1) + fz[:, None, None] * Zm + fu[:, None, None] * Um
    half: dict[int, np.ndarray] = {}
    out = []
    for n in range(1, N + 1):
        M = A[:, : n + 1, : n + 1]
        g = np.zeros((H, N + 1))
        g[:, n] += fpartial((n, 0, 0, 0)) / math.factorial(n)
        for term in driver_terms(n):
            prod = np.zeros((H, N + 1))
            prod[:, term.idx[0]] = term.weight * fpartial(term.idx)
            for beta in term.y_orders:
                prod = _pmul(prod, half[beta], N)
            for beta in term.z_orders:
                prod = _pmul(prod, np.einsum("hij,hj->hi", Zm, half[beta]), N)
            for beta in term.u_orders:
                prod = _pmul(prod, np.einsum("hij,hj->hi", Um, half[beta]), N)
            g += prod
        g = g[:, : n + 1]
        cT = np.zeros(n + 1)
        cT[n] = xi_taylor(n)
        c = _rk4_matrix_terminal(M, g, cT, grid.dt)
        dc = -(np.einsum("hij,hj->hi", M[::2], c) + g[::2])
        ch = np.zeros((H, N + 1))
        ch[:, : n + 1] = hermite_midpoints(c, dc, grid.dt)
        half[n] = ch
        out.append(c)
    return out


def poly_forward(model: ExpLevyModel, grid: TimeGrid) -> PolyForward:
    """Polynomial-engine tables for either model kind."""
    s = np.asarray(grid.half_nodes)
    marks, weights = model.measure.components[0]
    rho = np.asarray(model.jump_weight(marks), dtype=float) * np.ones_like(marks)
    b = np.asarray(model.drift(s), dtype=float) * np.ones_like(s)
    sig = np.asarray(model.vol(s), dtype=float) * np.ones_like(s)
    gam = np.asarray(model.jump(s[:, None], marks[None, :]), dtype=float) * np.ones((s.size, marks.size))
    zero, zg = np.zeros_like(s), np.zeros_like(gam)
    if model.kind == "exponential":
        return PolyForward(zero, b, zero, sig, zg, gam, weights, rho)
    return PolyForward(zero, zero, sig, zero, gam, zg, weights, rho)


def _solve_additive(model, Y0, N, grid):
    fr = _Frozen(model, Y0)
    fw = poly_forward(model, grid)
    xT = fr.x[-1]
    polys = solve_poly_coeffs(fw, fr, lambda n: _xi_taylor(model, n, xT), N, grid)
    ys = [GridFunction(grid, c[:, 0]) for c in polys]
    return LevyCoefficients(model, Y0, ys, polys, fr.x[::2])


def evaluate_levy(coeffs: LevyCoefficients, model: ExpLevyModel, x_value, s_index: int, eps: float, N: int):
    """``(Y, Z, psi)`` of the order-``N`` expansion at node ``s_index``.

    ``x_value`` is the forward state ``X_s`` for the exponential model and
    the additive Lévy part ``L_s`` for the additive one (``X^eps = m + eps L``).
    """
    if N > coeffs.order:
        raise ValueError(f"requested order {N} exceeds solved order {coeffs.order}")
    i = int(s_index)
    s = coeffs.grid.nodes[i]
    x = np.asarray(x_value, dtype=float)
    sig = float(np.asarray(model.vol(s), dtype=float))
    gam = lambda z: np.asarray(model.jump(s, z), dtype=float)  # noqa: E731
    Y = coeffs.Y0.scalar[i] + np.zeros_like(x)
    Z = np.zeros_like(x)
    if model.kind == "exponential":
        amp = [eps**n * x**n * coeffs.y[n - 1].scalar[i] for n in range(1, N + 1)]
        for n, a in enumerate(amp, start=1):
            Y = Y + a
            Z = Z + a * n * sig

        def psi(z):
            z = np.asarray(z, dtype=float)
            out = 0.0
            for n, a in enumerate(amp, start=1):
                out = out + np.multiply.outer(a, (1.0 + gam(z)) ** n - 1.0)
            return out + np.zeros(x.shape + z.shape)

        return Y, Z, psi

    polys = [coeffs.poly[n - 1][i] for n in range(1, N + 1)]
    for n, c in enumerate(polys, start=1):
        Y = Y + eps**n * sum(c[j] * x**j for j in range(n + 1))
        Z = Z + eps**n * sum(c[j] * j * x ** (j - 1) * sig for j in range(1, n + 1))

    def psi(z):
        z = np.asarray(z, dtype=float)
        xx = np.multiply.outer(x, np.ones_like(z))
        jumped = xx + gam(z)
        out = np.zeros_like(xx)
        for n, c in enumerate(polys, start=1):
            out = out + eps**n * sum(c[j] * (jumped**j - xx**j) for j in range(1, n + 1))
        return out

    return Y, Z, psi


def levy_initial_value(coeffs: LevyCoefficients, eps: float, N: int) -> float:
    """Expansion of ``Y`` at the initial time."""
    model = coeffs.model
    x0 = model.initial_state if model.kind == "exponential" else 0.0
    Y, _, _ = evaluate_levy(coeffs, model, x0, 0, eps, N)
    return float(Y)
