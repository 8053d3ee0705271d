"""Finite-atom Lévy measures, their quadratures and the intensity measure change.

The compensator ``nu`` of each jump component is represented by finitely
many atoms ``(z_j, w_j)``.  Infinite-activity measures have to be truncated
by the caller; all integrals below are then exact finite sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Mapping

import numpy as np

if TYPE_CHECKING:
    from .model import FBSDEProblem
    from .odecore import GridFunction


def _freeze(a):
    a = np.array(a, dtype=np.float64).reshape(-1)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DiscreteLevyMeasure:
    """Atoms ``(marks, weights)`` for each jump component."""

    components: tuple[tuple[np.ndarray, np.ndarray], ...] = ()

    def __post_init__(self):
        comps = []
        for marks, weights in self.components:
            marks, weights = _freeze(marks), _freeze(weights)
            if marks.shape != weights.shape:
                raise ValueError("marks and weights must have equal length")
            if not (np.all(np.isfinite(marks)) and np.all(np.isfinite(weights))):
                raise ValueError("atoms must be finite")
            if np.any(weights <= 0):
                raise ValueError("atom weights must be positive")
            if np.any(marks == 0):
                raise ValueError("atom marks must be non-zero")
            if not np.isfinite(np.sum(marks**2 * weights)):
                raise ValueError("second moment of the measure is not finite")
            comps.append((marks, weights))
        object.__setattr__(self, "components", tuple(comps))

    @classmethod
    def from_atoms(cls, marks, weights) -> "DiscreteLevyMeasure":
        return cls(((marks, weights),))

    @classmethod
    def empty(cls) -> "DiscreteLevyMeasure":
        return cls(((np.empty(0), np.empty(0)),))

    @classmethod
    def load(cls, *paths) -> "DiscreteLevyMeasure":
        """Read one two-column ``mark weight`` table per component."""
        comps = []
        for p in paths:
            data = np.loadtxt(p, ndmin=2, comments="#", delimiter=None)
            if data.size == 0:
                comps.append((np.empty(0), np.empty(0)))
            else:
                comps.append((data[:, 0], data[:, 1]))
        return cls(tuple(comps))

    def save(self, path, component: int = 0) -> None:
        np.savetxt(path, np.column_stack(self.components[component]), fmt="%.17g", header="mark weight")

    @property
    def k(self) -> int:
        return len(self.components)

    def marks(self, component: int = 0) -> np.ndarray:
        return self.components[component][0]

    def weights(self, component: int = 0) -> np.ndarray:
        return self.components[component][1]

    def total_mass(self, component: int = 0) -> float:
        return float(np.sum(self.weights(component)))

    def scaled(self, factor: float) -> "DiscreteLevyMeasure":
        return DiscreteLevyMeasure(tuple((m, w * factor) for m, w in self.components))


def integrate(measure: DiscreteLevyMeasure, g: Callable, component: int = 0) -> np.ndarray:
    """``sum_j g(z_j) w_j``.

    ``g`` receives the array of marks and may return extra leading axes
    (for instance one row per time node); the sum runs over the last axis.
    """
    marks, weights = measure.components[component]
    if marks.size == 0:
        probe = np.asarray(g(marks), dtype=np.float64)
        return np.zeros(probe.shape[:-1]) if probe.ndim > 1 else np.float64(0.0)
    vals = np.asarray(g(marks), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite integrand value on the measure atoms")
    vals = np.broadcast_to(vals, vals.shape[:-1] + marks.shape) if vals.ndim else np.full(marks.shape, vals)
    return vals @ weights


def moment_q(measure, gamma_at_s: Callable, j: int, component: int = 0):
    """``q(s, j) = int gamma(s, z)^j nu(dz)`` for ``j >= 2``."""
    if j < 2:
        raise ValueError(f"q(s, j) is defined for j >= 2, got {j}")
    return integrate(measure, lambda z: np.asarray(gamma_at_s(z), dtype=np.float64) ** j, component)


def moment_Gamma(measure, rho: Callable, gamma_at_s: Callable, j: int, component: int = 0):
    """``Gamma(s, j) = int rho(z) [(1 + gamma(s, z))^j - 1] nu(dz)`` for ``j >= 1``."""
    if j < 1:
        raise ValueError(f"Gamma(s, j) is defined for j >= 1, got {j}")

    def g(z):
        gz = np.asarray(gamma_at_s(z), dtype=np.float64)
        return np.asarray(rho(z), dtype=np.float64) * ((1.0 + gz) ** j - 1.0)

    return integrate(measure, g, component)


def gamma_bar0(measure, rho: Callable, gamma0_at_s: Callable, component: int = 0):
    """``int rho(z) gamma0(s, z) nu(dz)``."""
    return integrate(
        measure,
        lambda z: np.asarray(rho(z), dtype=np.float64) * np.asarray(gamma0_at_s(z), dtype=np.float64),
        component,
    )


def sample_jumps(measure: DiscreteLevyMeasure, interval, rng: np.random.Generator):
    """Jump events ``(time, component, mark)`` of the Poisson measure on ``interval``, sorted by time."""
    t0, t1 = map(float, interval)
    if not t1 > t0:
        raise ValueError("interval must have positive length")
    events = []
    for i, (marks, weights) in enumerate(measure.components):
        lam = float(np.sum(weights))
        if lam <= 0.0:
            continue
        count = rng.poisson(lam * (t1 - t0))
        times = rng.uniform(t0, t1, count)
        picks = rng.choice(marks.size, size=count, p=weights / lam)
        events.extend((float(t), i, float(marks[j])) for t, j in zip(times, picks))
    events.sort(key=lambda e: e[0])
    return events


@dataclass(frozen=True, eq=False)
class IntensitySpec:
    """State-dependent jump intensity ``lambda(t, x)`` bounded in ``[c1, c2]``.

    ``partials`` maps an ``x``-derivative order to an analytic callback;
    missing orders fall back to central differences.
    """

    rate: Callable
    c1: float
    c2: float
    partials: Mapping[int, Callable] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.c1 <= self.c2:
            raise ValueError(f"intensity bounds must satisfy 0 < c1 <= c2, got ({self.c1}, {self.c2})")

    def __call__(self, t, x):
        return np.asarray(self.rate(t, x), dtype=np.float64)

    def dx(self, order: int, t, x):
        from .model import central_difference, fd_step_for

        if order == 0:
            return self(t, x) * np.ones(np.broadcast(t, x).shape)
        fn = self.partials.get(order)
        if fn is not None:
            return np.asarray(fn(t, x), dtype=np.float64) * np.ones(np.broadcast(t, x).shape)
        return central_difference(self.rate, (t, x), {1: order}, fd_step_for(order))

    def check(self, t, x, tol: float = 1e-12) -> None:
        lam = self(t, x)
        if np.any(lam <= 0):
            raise ValueError("intensity must be strictly positive")
        if np.any(lam < self.c1 - tol) or np.any(lam > self.c2 + tol):
            raise ValueError(f"intensity leaves the declared bounds [{self.c1}, {self.c2}]")


def transform_intensity(problem: "FBSDEProblem", spec: IntensitySpec) -> "FBSDEProblem":
    """Equivalent constant-intensity problem under the measure change.

    Under ``Q`` the jumps arrive at rate ``c2`` with marks from ``nu``; the
    drift gains ``eps (c2 - lambda) int gamma nu`` and the driver loses
    ``(c2 - lambda) u``.  The returned measure carries mass ``c2`` and the
    weight ``rho`` is divided by ``c2`` so that the driver's jump argument is
    still ``int psi nu`` with the normalised ``nu``.
    """
    from .model import all_indices, eval_partial

    measure = problem.measure
    for i in range(measure.k):
        if not math.isclose(measure.total_mass(i), 1.0, rel_tol=0, abs_tol=1e-12):
            raise ValueError(f"measure component {i} must be normalised to mass 1, got {measure.total_mass(i)}")
    marks, weights = measure.components[0]
    rho_vals = np.asarray(problem.jump_weight(marks), dtype=np.float64)
    if marks.size and not np.allclose(rho_vals, 1.0, rtol=0, atol=1e-14):
        raise ValueError("the intensity transformation requires rho == 1")
    c2 = float(spec.c2)
    rho = problem.jump_weight

    def comp_dx(m, t, x):
        # d^m/dx^m of int gamma(t, x, z) nu(dz)
        if marks.size == 0:
            return np.zeros(np.broadcast(t, x).shape)
        t_, x_ = np.broadcast_arrays(np.asarray(t, float), np.asarray(x, float))
        vals = eval_partial(problem, "gamma", (m,), t_[..., None], x_[..., None], marks)
        return vals @ weights

    def gap_dx(m, t, x):
        # d^m/dx^m of (c2 - lambda(t, x))
        if m == 0:
            return c2 - spec.dx(0, t, x)
        return -spec.dx(m, t, x)

    def h_dx(n, t, x):
        return sum(math.comb(n, k) * gap_dx(k, t, x) * comp_dx(n - k, t, x) for k in range(n + 1))

    def drift(t, x, eps):
        return np.asarray(problem.drift(t, x, eps), dtype=np.float64) + eps * h_dx(0, t, x)

    def driver(t, x, y, z, u):
        return np.asarray(problem.driver(t, x, y, z, u), dtype=np.float64) - gap_dx(0, t, x) * u

    def jump_weight(z):
        return np.asarray(rho(z), dtype=np.float64) / c2

    partials = {}
    for key, fn in problem.partials.items():
        if key[0] in ("sigma", "gamma", "xi"):
            partials[key] = fn

    def b_partial(nx, ne):
        def fn(t, x, eps):
            base = eval_partial(problem, "b", (nx, ne), t, x, eps)
            if ne == 0:
                return base + eps * h_dx(nx, t, x)
            if ne == 1:
                return base + h_dx(nx, t, x)
            return base

        return fn

    def f_partial(idx):
        ix, iy, iz, iu = idx

        def fn(t, x, y, z, u):
            base = eval_partial(problem, "f", idx, t, x, y, z, u)
            if iy or iz or iu > 1:
                return base
            if iu == 1:
                return base - gap_dx(ix, t, x)
            return base - gap_dx(ix, t, x) * u

        return fn

    for idx in all_indices("b", problem.max_order):
        if any(idx):
            partials[("b", idx)] = b_partial(*idx)
    for idx in all_indices("f", problem.max_order):
        if any(idx):
            partials[("f", idx)] = f_partial(idx)

    return problem.with_(
        drift=drift,
        driver=driver,
        jump_weight=jump_weight,
        measure=measure.scaled(c2),
        partials=partials,
        name=(problem.name + "_Q") if problem.name else "",
    )


def density_paths(spec: IntensitySpec, grid, X: np.ndarray, jump_path: np.ndarray, jump_step: np.ndarray,
                  k: int = 1) -> np.ndarray:
    """Radon-Nikodym density ``M`` for many paths at once, shape ``(paths, nodes)``.

    ``X`` holds the state on the grid; jump ``j`` belongs to path
    ``jump_path[j]`` and to the grid step ``jump_step[j]``, whose left node
    supplies ``X_{r-}``.  Each jump contributes ``c2 / lambda(r, X_{r-})`` and
    the intensity gap is integrated with the left-point rule.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    s = grid.nodes
    lam = spec(s[None, :], X) * np.ones_like(X)
    if np.any(lam <= 0):
        raise ValueError("intensity must be strictly positive (lambda <= 0 encountered)")
    incr = -k * (spec.c2 - lam[:, :-1]) * grid.dt
    jump_path = np.asarray(jump_path, dtype=np.int64)
    jump_step = np.asarray(jump_step, dtype=np.int64)
    if jump_path.size:
        np.add.at(incr, (jump_path, jump_step), np.log(spec.c2 / lam[jump_path, jump_step]))
    log_m = np.zeros_like(X)
    np.cumsum(incr, axis=1, out=log_m[:, 1:])
    return np.exp(log_m)


def density_path(spec: IntensitySpec, x_path: "GridFunction", jumps, k: int = 1) -> "GridFunction":
    """Radon-Nikodym density ``M_s`` of the intensity measure change along one path.

    ``jumps`` are ``(time, component, mark)`` events; each is attributed to
    the grid step containing it.  See :func:`density_paths`.
    """
    from .odecore import GridFunction

    grid = x_path.grid
    steps = [min(max(int(math.ceil((t - grid.t0) / grid.dt)) - 1, 0), grid.n_steps - 1) for t, _, _ in jumps]
    m = density_paths(spec, grid, x_path.scalar[None, :], np.zeros(len(steps), dtype=np.int64), steps, k)
    return GridFunction(grid, m[0])
