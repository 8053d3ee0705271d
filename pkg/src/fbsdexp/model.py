"""Scalar FBSDE problems with jumps and their derivative oracle.

A problem bundles the coefficient callbacks of

    X_s = x + int b(r, X_r, eps) dr + int eps sigma(r, X_r) dW_r
            + int int eps gamma(r, X_{r-}, z) mu~(dr, dz)
    Y_s = xi(X_T) + int f(r, X_r, Y_r, Z_r, int rho psi_r nu) dr - ...

All callbacks must be numpy-vectorised: they are called with broadcastable
arrays.  Partial derivatives may be supplied analytically through
``partials``; anything missing is computed by nested central differences.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .jumpmeasure import DiscreteLevyMeasure

# target -> (attribute holding the callback, differentiable argument positions)
TARGETS: dict[str, tuple[str, tuple[int, ...]]] = {
    "b": ("drift", (1, 2)),  # b(t, x, eps)
    "sigma": ("diffusion", (1,)),  # sigma(t, x)
    "gamma": ("jump_coeff", (1,)),  # gamma(t, x, z)
    "xi": ("terminal", (0,)),  # xi(x)
    "f": ("driver", (1, 2, 3, 4)),  # f(t, x, y, z, u)
}

FD_STEP = 1e-5

MultiIndex = tuple  # per-argument derivative orders, see TARGETS


def _one(z):
    return np.ones_like(np.asarray(z, dtype=np.float64))


def _zero_jump(t, x, z):
    return np.zeros(np.broadcast(t, x, z).shape)


@dataclass(frozen=True, eq=False)
class FBSDEProblem:
    drift: Callable
    diffusion: Callable
    terminal: Callable
    driver: Callable
    horizon: float
    initial_state: float
    jump_coeff: Callable = _zero_jump
    jump_weight: Callable = _one
    measure: DiscreteLevyMeasure = field(default_factory=DiscreteLevyMeasure.empty)
    partials: Mapping[tuple[str, MultiIndex], Callable] = field(default_factory=dict)
    max_order: int = 4
    fd_step: float = FD_STEP
    dims: tuple[int, int, int, int] = (1, 1, 1, 1)
    name: str = ""

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if len(self.dims) != 4 or min(self.dims) < 1:
            raise ValueError(f"dims (d, m, l, k) must all be >= 1, got {self.dims}")
        if tuple(self.dims) != (1, 1, 1, 1):
            raise ValueError("the expansion engine supports scalar problems only (d = m = l = k = 1)")
        for (target, idx) in self.partials:
            check_index(target, idx, self.max_order)
        object.__setattr__(self, "partials", dict(self.partials))

    def with_(self, **changes) -> "FBSDEProblem":
        return replace(self, **changes)


def check_index(target: str, idx: MultiIndex, max_order: int) -> None:
    if target not in TARGETS:
        raise KeyError(f"unknown coefficient {target!r}")
    npos = len(TARGETS[target][1])
    if len(idx) != npos:
        raise ValueError(f"{target} takes a {npos}-entry multi-index, got {idx}")
    if any(int(k) != k or k < 0 for k in idx):
        raise ValueError(f"multi-index entries must be non-negative integers: {idx}")
    if sum(idx) > max_order:
        raise ValueError(f"derivative order {sum(idx)} exceeds configured maximum {max_order}")


def fd_step_for(order: int, base: float = FD_STEP) -> float:
    """Relative step for a nested central difference of the given total order.

    Orders up to two use ``base``; higher orders grow the step so that
    round-off (which scales like ``eps / h**order``) stays controlled.
    """
    if order <= 2:
        return base
    return max(base, np.finfo(float).eps ** (1.0 / (order + 2)))


def central_difference(fn: Callable, args: tuple, orders: Mapping[int, int], base: float) -> np.ndarray:
    """Mixed partial of ``fn`` by nested central differences.

    ``orders`` maps argument position to derivative order.  The step for
    argument ``a`` is ``base * max(1, |args[a]|)``.
    """
    args = tuple(np.asarray(a, dtype=np.float64) for a in args)
    steps = {p: base * np.maximum(1.0, np.abs(args[p])) for p, k in orders.items() if k}

    def rec(cur, remaining):
        for p, k in remaining.items():
            if k:
                h = steps[p]
                rest = dict(remaining)
                rest[p] = k - 1
                up = list(cur)
                dn = list(cur)
                up[p] = cur[p] + h
                dn[p] = cur[p] - h
                return (rec(tuple(up), rest) - rec(tuple(dn), rest)) / (2.0 * h)
        return np.asarray(fn(*cur), dtype=np.float64)

    return rec(args, dict(orders))


def eval_partial(problem, target: str, idx: MultiIndex, *point) -> np.ndarray:
    """Mixed partial of a coefficient at ``point`` (the callback's full argument list).

    A zero multi-index returns the plain callback value.  Supplied analytic
    partials take precedence over the finite-difference fallback.
    """
    idx = tuple(int(k) for k in idx)
    check_index(target, idx, problem.max_order)
    attr, positions = TARGETS[target]
    fn = getattr(problem, attr)
    if not any(idx):
        return np.asarray(fn(*point), dtype=np.float64)
    supplied = problem.partials.get((target, idx))
    if supplied is not None:
        return np.asarray(supplied(*point), dtype=np.float64) * np.ones(np.broadcast(*point).shape)
    orders = dict(zip(positions, idx))
    return central_difference(fn, point, orders, fd_step_for(sum(idx), problem.fd_step))


@dataclass
class ValidationReport:
    samples: int
    derivative_mismatch: dict[tuple[str, MultiIndex], float]
    lipschitz: dict[str, float]

    @property
    def max_mismatch(self) -> float:
        return max(self.derivative_mismatch.values(), default=0.0)

    def ok(self, tol: float = 1e-4) -> bool:
        return self.max_mismatch < tol


def _sample_cloud(problem, samples, rng):
    x0 = float(problem.initial_state)
    t = rng.uniform(0.0, problem.horizon, samples)
    x = rng.uniform(x0 - 3.0, x0 + 3.0, samples)
    eps = rng.choice(np.array([0.0, 0.25, 0.5, 1.0]), samples)
    y = rng.uniform(-3.0, 3.0, samples)
    z = rng.uniform(-1.0, 1.0, samples)
    u = rng.uniform(-1.0, 1.0, samples)
    marks = problem.measure.marks(0) if problem.measure.k and problem.measure.marks(0).size else np.array([1.0])
    zm = rng.choice(marks, samples)
    return {
        "b": (t, x, eps),
        "sigma": (t, x),
        "gamma": (t, x, zm),
        "xi": (x,),
        "f": (t, x, y, z, u),
    }


def validate(problem: FBSDEProblem, samples: int = 100, rng_seed: int = 0) -> ValidationReport:
    """Numerical spot-check of the coefficient callbacks.

    Every supplied analytic partial is compared against a central difference
    of the next lower-order partial; sampled Lipschitz ratios in ``x`` are
    reported for each callback.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(rng_seed)
    cloud = _sample_cloud(problem, samples, rng)

    for target, (attr, _) in TARGETS.items():
        vals = np.asarray(getattr(problem, attr)(*cloud[target]), dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite coefficient value from {target}")
    rho = np.asarray(problem.jump_weight(cloud["gamma"][2]), dtype=np.float64)
    if not np.all(np.isfinite(rho)):
        raise ValueError("non-finite coefficient value from rho")

    mismatch = {}
    for (target, idx), fn in problem.partials.items():
        point = cloud[target]
        analytic = np.asarray(fn(*point), dtype=np.float64)
        if not np.all(np.isfinite(analytic)):
            raise ValueError(f"non-finite coefficient value from partial {target}{idx}")
        j = next(i for i, k in enumerate(idx) if k)
        parent = tuple(k - 1 if i == j else k for i, k in enumerate(idx))
        pos = TARGETS[target][1][j]
        fd = central_difference(
            lambda *a: eval_partial(problem, target, parent, *a), point, {pos: 1}, problem.fd_step
        )
        rel = np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd))
        mismatch[(target, idx)] = float(np.max(rel))

    lipschitz = {}
    perm = rng.permutation(samples)
    for target in ("b", "sigma", "gamma", "xi", "f"):
        point = cloud[target]
        xpos = TARGETS[target][1][0]
        other = list(point)
        other[xpos] = point[xpos][perm]
        g1 = np.asarray(getattr(problem, TARGETS[target][0])(*point), dtype=np.float64)
        g2 = np.asarray(getattr(problem, TARGETS[target][0])(*other), dtype=np.float64)
        dx = np.abs(point[xpos] - other[xpos])
        keep = dx > 1e-12
        lipschitz[target] = float(np.max(np.abs(g1 - g2)[keep] / dx[keep])) if keep.any() else 0.0
    return ValidationReport(samples, mismatch, lipschitz)


def all_indices(target: str, max_order: int):
    """All multi-indices of ``target`` with total order ``<= max_order``."""
    npos = len(TARGETS[target][1])
    for idx in itertools.product(range(max_order + 1), repeat=npos):
        if sum(idx) <= max_order:
            yield idx


def multinomial_factorial(idx: MultiIndex) -> int:
    return math.prod(math.factorial(k) for k in idx)
