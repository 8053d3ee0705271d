"""Monte-Carlo simulation on a shared grid.

Noise is generated once per bundle of paths and reused by every process
that needs it (``X^eps``, the flows ``X1``/``X2``, reference solvers at
several ``eps``), so comparisons use common random numbers.

Jumps are binned to the grid: an event in ``(t_i, t_{i+1}]`` is applied at
node ``i + 1`` with coefficients evaluated at the left node ``t_i``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NumericalError
from .expansion import FrozenCoefficients, Order0Solution, Order1Coefficients, Order2Coefficients
from .jumpmeasure import DiscreteLevyMeasure, IntensitySpec
from .model import FBSDEProblem
from .odecore import TimeGrid

BLOCK_SIZE = 4096


@dataclass(frozen=True, eq=False)
class PathBundle:
    """Brownian increments and binned jump events for ``n_paths`` scenarios.

    Events are stored as flat arrays sorted by ``(path, time)``.  ``uniform``
    is an independent U(0, 1) draw per event, used to thin candidate jumps
    when the intensity is state dependent.
    """

    grid: TimeGrid
    dW: np.ndarray
    ev_path: np.ndarray
    ev_time: np.ndarray
    ev_component: np.ndarray
    ev_atom: np.ndarray
    ev_mark: np.ndarray
    ev_uniform: np.ndarray
    seed: int
    ev_step: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.grid
        if self.dW.shape[1] != g.n_steps:
            raise ValueError("one Brownian increment per grid step is required")
        if self.ev_time.size and (self.ev_time.min() < g.t0 or self.ev_time.max() > g.T):
            raise ValueError("jump times must lie inside the grid interval")
        step = np.ceil((self.ev_time - g.t0) / g.dt).astype(np.int64) - 1
        object.__setattr__(self, "ev_step", np.clip(step, 0, g.n_steps - 1))

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    def jumps(self, path: int):
        """Events of one path as ``(time, component, mark)`` tuples."""
        sel = self.ev_path == path
        return list(zip(self.ev_time[sel].tolist(), self.ev_component[sel].tolist(), self.ev_mark[sel].tolist()))

    def step_groups(self):
        """Event indices grouped by grid step (list of index arrays)."""
        order = np.argsort(self.ev_step, kind="stable")
        bounds = np.searchsorted(self.ev_step[order], np.arange(self.grid.n_steps + 1))
        return [order[bounds[i]:bounds[i + 1]] for i in range(self.grid.n_steps)]

    def binned(self, values: np.ndarray) -> np.ndarray:
        """Sum per-event ``values`` into a ``(paths, steps)`` array."""
        out = np.zeros((self.n_paths, self.grid.n_steps))
        np.add.at(out, (self.ev_path, self.ev_step), values)
        return out

    def scaled(self, factor: float) -> "PathBundle":
        """Bundle with every Brownian increment multiplied by ``factor``."""
        return PathBundle(self.grid, self.dW * factor, self.ev_path, self.ev_time, self.ev_component,
                          self.ev_atom, self.ev_mark, self.ev_uniform, self.seed)


def _block(grid, measure, seed, block, m):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block])))
    dW = rng.standard_normal((m, grid.n_steps)) * np.sqrt(grid.dt)
    parts = []
    span = grid.T - grid.t0
    for c, (marks, weights) in enumerate(measure.components):
        lam = float(np.sum(weights))
        if lam <= 0.0 or marks.size == 0:
            continue
        counts = rng.poisson(lam * span, m)
        total = int(counts.sum())
        path = np.repeat(np.arange(m), counts)
        times = rng.uniform(grid.t0, grid.T, total)
        atom = rng.choice(marks.size, size=total, p=weights / lam)
        unif = rng.random(total)
        parts.append((path, times, np.full(total, c), atom, marks[atom], unif))
    return dW, parts


def simulate_noise(grid: TimeGrid, measure: DiscreteLevyMeasure, seed: int, n_paths: int = 1,
                   threads: int = 1) -> PathBundle:
    """Gaussian increments and Poisson jump events for ``n_paths`` scenarios.

    Paths are generated in fixed blocks of ``BLOCK_SIZE``, each with its own
    counter-based Philox stream keyed by ``(seed, block)``; the result does
    not depend on ``threads``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    sizes = [min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE) for b in range(-(-n_paths // BLOCK_SIZE))]
    jobs = [(grid, measure, seed, b, m) for b, m in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda a: _block(*a), jobs))
    else:
        results = [_block(*a) for a in jobs]
    dW = np.concatenate([r[0] for r in results], axis=0)
    cols = [[] for _ in range(6)]
    offset = 0
    for (blk_dW, parts), m in zip(results, sizes):
        for part in parts:
            cols[0].append(part[0] + offset)
            for k in range(1, 6):
                cols[k].append(part[k])
        offset += m
    if cols[0]:
        path, time, comp, atom, mark, unif = (np.concatenate(c) for c in cols)
    else:
        path = comp = atom = np.empty(0, dtype=np.int64)
        time = mark = unif = np.empty(0)
    order = np.lexsort((time, path))
    return PathBundle(grid, dW, path[order].astype(np.int64), time[order], comp[order].astype(np.int64),
                      atom[order].astype(np.int64), mark[order], unif[order], int(seed))


@dataclass(frozen=True, eq=False)
class StatePaths:
    """Euler paths of ``X^eps`` (shape ``(paths, nodes)``).

    ``accepted`` flags which candidate events of the bundle became actual
    jumps (all of them unless an intensity was given); ``jump_rho`` is the
    per-step compensated, ``rho``-weighted jump sum divided by the intensity,
    which the regression solver uses to extract the jump component.
    """

    X: np.ndarray
    accepted: np.ndarray
    jump_rho: np.ndarray
    intensity: np.ndarray | None = None


def simulate_state(problem: FBSDEProblem, eps: float, bundle: PathBundle,
                   intensity: IntensitySpec | None = None) -> StatePaths:
    """Euler-Maruyama for ``X^eps`` with drift ``b(., ., eps)``, diffusion ``eps sigma``, jumps ``eps gamma``.

    Without ``intensity`` the bundle's events are the jumps of the Poisson
    measure of ``problem.measure``.  With ``intensity`` the bundle must have
    been simulated from the normalised measure scaled to mass ``c2``; each
    candidate is kept with probability ``lambda(t_i, X_i) / c2`` and the
    compensator uses ``lambda(t_i, X_i) nu``.
    """
    grid = bundle.grid
    nodes, dt = grid.nodes, grid.dt
    marks, weights = problem.measure.components[0]
    rho = np.asarray(problem.jump_weight(marks), dtype=float) * np.ones_like(marks)
    rho_mass = float(rho @ weights)
    P = bundle.n_paths
    X = np.empty((P, grid.n_steps + 1))
    X[:, 0] = problem.initial_state
    accepted = np.ones(bundle.ev_time.size, dtype=bool)
    jump_rho = np.zeros((P, grid.n_steps))
    lam_tab = np.ones((P, grid.n_steps)) if intensity is not None else None
    groups = bundle.step_groups()
    ev_rho = np.asarray(problem.jump_weight(bundle.ev_mark), dtype=float) * np.ones(bundle.ev_mark.shape)
    for i in range(grid.n_steps):
        t, x = nodes[i], X[:, i]
        drift = np.asarray(problem.drift(t, x, eps), dtype=float)
        vol = np.asarray(problem.diffusion(t, x), dtype=float)
        if marks.size:
            comp = np.asarray(problem.jump_coeff(t, x[:, None], marks[None, :]), dtype=float) @ weights
        else:
            comp = 0.0
        lam = 1.0
        if intensity is not None:
            lam = intensity(t, x) * np.ones(P)
            lam_tab[:, i] = lam
        jumps = np.zeros(P)
        e = groups[i]
        jr = np.zeros(P)
        if e.size:
            p = bundle.ev_path[e]
            keep = np.ones(e.size, dtype=bool)
            if intensity is not None:
                keep = bundle.ev_uniform[e] < lam[p] / intensity.c2
                accepted[e] = keep
            vals = np.asarray(problem.jump_coeff(t, x[p], bundle.ev_mark[e]), dtype=float)
            np.add.at(jumps, p[keep], vals[keep])
            np.add.at(jr, p[keep], ev_rho[e][keep])
        jump_rho[:, i] = (jr - lam * rho_mass * dt) / lam
        X[:, i + 1] = x + drift * dt + eps * vol * bundle.dW[:, i] + eps * (jumps - lam * comp * dt)
        if not np.all(np.isfinite(X[:, i + 1])):
            raise NumericalError(f"non-finite state at node {i + 1}")
    return StatePaths(X, accepted, jump_rho, lam_tab)


@dataclass(frozen=True, eq=False)
class FlowPaths:
    grid: TimeGrid
    X_eps: np.ndarray
    X1: np.ndarray
    X2: np.ndarray


def flow_jump_sums(frozen: FrozenCoefficients, bundle: PathBundle):
    """Per-step sums of ``gamma0`` and ``d_x gamma0`` over the binned jumps."""
    if bundle.ev_time.size == 0 or frozen.gamma0.shape[1] == 0:
        z = np.zeros((bundle.n_paths, bundle.grid.n_steps))
        return z, z.copy()
    g0 = frozen.gamma0[::2][bundle.ev_step, bundle.ev_atom]
    dg0 = frozen.dxgamma0[::2][bundle.ev_step, bundle.ev_atom]
    return bundle.binned(g0), bundle.binned(dg0)


def simulate_flows(problem: FBSDEProblem, frozen: FrozenCoefficients, eps: float, bundle: PathBundle) -> FlowPaths:
    """``X^eps``, ``X1`` and ``X2`` on the same noise.

    The flows follow the linear equations obtained by differentiating the
    forward SDE in ``eps`` at ``eps = 0``; the jump integral of ``X2`` uses
    ``X1`` at the pre-jump node.
    """
    if frozen.grid != bundle.grid:
        raise ValueError("frozen coefficients and bundle must share the grid")
    state = simulate_state(problem, eps, bundle)
    J0, J1 = flow_jump_sums(frozen, bundle)
    n = lambda name: frozen.node(name)  # noqa: E731
    X1, X2 = kernels.flows_euler(
        n("deb"), n("dxb"), n("dxxb"), n("dxeb"), n("deeb"), n("sigma0"), n("dxsigma"),
        n("comp0"), n("dxcomp0"), bundle.dW, J0, J1, bundle.grid.dt,
    )
    if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(X2))):
        raise NumericalError("non-finite flow values")
    return FlowPaths(bundle.grid, state.X, X1, X2)


@dataclass(frozen=True, eq=False)
class Reconstruction:
    """Approximate ``Y`` and ``Z`` per path and node, plus a ``psi`` evaluator."""

    Y: np.ndarray
    Z: np.ndarray
    order: int
    eps: float
    _psi: object = field(repr=False)

    def psi(self, node: int, z):
        """``psi`` at ``node`` for marks ``z``; shape ``(paths,) + z.shape``."""
        return self._psi(node, z)


def reconstruct(order0: Order0Solution, o1: Order1Coefficients | None, o2: Order2Coefficients | None,
                frozen: FrozenCoefficients, flows: FlowPaths, eps: float, N: int) -> Reconstruction:
    """Node-wise ``Theta^[0] + sum_n eps^n Theta^[n]`` along the simulated flows."""
    if N not in (0, 1, 2):
        raise ValueError(f"N must be 0, 1 or 2, got {N}")
    from .model import eval_partial

    prob = frozen.problem
    nodes = flows.grid.nodes
    X1, X2 = flows.X1, flows.X2
    Y = np.broadcast_to(order0.Y0.scalar, X1.shape).copy()
    Z = np.zeros_like(X1)
    sig, dxsig = frozen.node("sigma0"), frozen.node("dxsigma")
    if N >= 1:
        Y += eps * (o1.y1.scalar * X1 + o1.y0.scalar)
        Z += eps * (o1.y1.scalar * sig)
    if N >= 2:
        y2, y11, y1, y0 = (o2.y2.scalar, o2.y11.scalar, o2.y1.scalar, o2.y0.scalar)
        Y += eps**2 * (y2 * X2 + y11 * X1**2 + y1 * X1 + y0)
        # Z uses the left limit of X1, i.e. the previous node
        X1m = np.concatenate([X1[:, :1], X1[:, :-1]], axis=1)
        Z += eps**2 * (X1m * (y2 * dxsig + 2.0 * y11 * sig) + y1 * sig)

    def psi(i, z):
        z = np.asarray(z, dtype=float)
        s, x0 = nodes[i], order0.X0.scalar[i]
        g = np.asarray(prob.jump_coeff(s, x0, z), dtype=float) * np.ones_like(z)
        x1 = X1[:, max(i - 1, 0)][:, None]
        out = np.zeros((X1.shape[0],) + z.shape)
        if N >= 1:
            out = out + eps * o1.y1.scalar[i] * g
        if N >= 2:
            dg = eval_partial(prob, "gamma", (1,), s, x0, z) * np.ones_like(z)
            out = out + eps**2 * (x1 * (o2.y2.scalar[i] * dg + 2.0 * o2.y11.scalar[i] * g)
                                  + o2.y11.scalar[i] * g**2 + o2.y1.scalar[i] * g)
        return out

    return Reconstruction(Y, Z, N, eps, psi)


def terminal_residual(problem: FBSDEProblem, rec: Reconstruction, flows: FlowPaths):
    """Mean and standard error of ``|Y_hat_T - xi(X^eps_T)|``."""
    r = np.abs(rec.Y[:, -1] - np.asarray(problem.terminal(flows.X_eps[:, -1]), dtype=float))
    return float(r.mean()), float(r.std(ddof=1) / np.sqrt(r.size)) if r.size > 1 else 0.0


@dataclass(frozen=True)
class CharFnEstimate:
    theta: float
    value: complex
    mc: complex | None = None
    mc_stderr: float | None = None


def _driver_is_zero(model, samples: int = 64) -> bool:
    rng = np.random.default_rng(12345)
    t = rng.uniform(0, model.horizon, samples)
    pts = rng.uniform(-3, 3, (4, samples))
    return bool(np.all(np.asarray(model.driver(t, *pts), dtype=float) == 0.0))


def charfn_models(model, theta: float):
    """Cosine and sine terminal variants of an additive model with zero driver."""
    from dataclasses import replace

    def deriv(kind):
        phase = 0.0 if kind == "cos" else -np.pi / 2

        def make(n):
            return lambda x: theta**n * np.cos(theta * np.asarray(x, dtype=float) + phase + n * np.pi / 2)

        return make

    out = []
    for kind in ("cos", "sin"):
        make = deriv(kind)
        partials = {k: v for k, v in model.partials.items() if k[0] != "xi"}
        for n in range(1, model.max_order + 1):
            partials[("xi", (n,))] = make(n)
        out.append(replace(model, terminal=make(0), partials=partials, kind="additive"))
    return out


def estimate_charfn(model, theta: float, eps: float, N: int, grid: TimeGrid, n_paths: int = 0,
                    seed: int = 0) -> CharFnEstimate:
    """Order-``N`` expansion of ``E[exp(i theta X^eps_T)]`` for an additive Lévy model.

    Runs the polynomial expansion with ``xi = cos(theta x)`` and
    ``xi = sin(theta x)``.  With ``n_paths > 0`` a plain Monte-Carlo
    estimate is attached for cross-checking.
    """
    from .levypoly import levy_initial_value, solve_levy_coeffs, solve_levy_order0

    if not _driver_is_zero(model):
        raise ValueError("characteristic function estimation requires a driver identically zero")
    parts = []
    for m in charfn_models(model, theta):
        Y0 = solve_levy_order0(m, grid)
        coeffs = solve_levy_coeffs(m, Y0, N, grid)
        parts.append(levy_initial_value(coeffs, eps, N))
    value = complex(parts[0], parts[1])
    if n_paths <= 0:
        return CharFnEstimate(theta, value)
    xT = additive_terminal_samples(model, eps, grid, n_paths, seed)
    e = np.exp(1j * theta * xT)
    se = float(np.sqrt(e.real.var(ddof=1) + e.imag.var(ddof=1)) / np.sqrt(n_paths))
    return CharFnEstimate(theta, value, complex(e.mean()), se)


def additive_terminal_samples(model, eps: float, grid: TimeGrid, n_paths: int, seed: int) -> np.ndarray:
    """Samples of ``X^eps_T = m(T) + eps L_T`` for an additive Lévy model."""
    from .levypoly import _drift_shift

    bundle = simulate_noise(grid, model.measure, seed, n_paths)
    nodes, dt = grid.nodes, grid.dt
    sig = np.asarray(model.vol(nodes[:-1]), dtype=float) * np.ones(grid.n_steps)
    L = bundle.dW @ sig
    marks, weights = model.measure.components[0]
    if marks.size:
        comp = np.asarray(model.jump(nodes[:-1, None], marks[None, :]), dtype=float) @ weights
        L -= np.sum(comp) * dt
        if bundle.ev_time.size:
            vals = np.asarray(model.jump(nodes[bundle.ev_step], bundle.ev_mark), dtype=float)
            np.add.at(L, bundle.ev_path, vals)
    return _drift_shift(model, grid)[-1] + eps * L
