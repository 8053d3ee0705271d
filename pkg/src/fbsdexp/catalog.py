"""Built-in test models, selectable by name from the command line.

Each builder takes keyword overrides for its parameters and returns either
an :class:`~fbsdexp.model.FBSDEProblem` or, for the state-linear models, an
:class:`~fbsdexp.levypoly.ExpLevyModel`.  Analytic partials are supplied for
the low orders; everything else falls back to finite differences.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .jumpmeasure import DiscreteLevyMeasure, IntensitySpec
from .levypoly import ExpLevyModel
from .model import FBSDEProblem


def _zeros(*a):
    return np.zeros(np.broadcast(*a).shape)


def _const(c):
    return lambda *a: c + _zeros(*a)


def linear(a=0.1, alpha=-0.05, sigma=0.3, x0=1.0, T=1.0, marks=(0.5, -0.3), weights=(0.8, 1.2)):
    """``b = a x``, ``f = alpha y``, ``xi = x``; ``Y_s = exp((a + alpha)(T - s)) X_s``."""
    return FBSDEProblem(
        drift=lambda t, x, e: a * x + _zeros(t, e),
        diffusion=_const(sigma),
        terminal=lambda x: np.asarray(x, dtype=float),
        driver=lambda t, x, y, z, u: alpha * y + _zeros(t, x, z, u),
        jump_coeff=lambda t, x, z: z + _zeros(t, x),
        measure=DiscreteLevyMeasure.from_atoms(marks, weights),
        horizon=T,
        initial_state=x0,
        partials={
            ("b", (1, 0)): _const(a),
            ("xi", (1,)): lambda x: 1.0 + _zeros(x),
            ("f", (0, 1, 0, 0)): _const(alpha),
        },
        name="linear",
    )


def linear_exact(problem_params: dict | None = None) -> float:
    p = {"a": 0.1, "alpha": -0.05, "x0": 1.0, "T": 1.0}
    p.update(problem_params or {})
    return p["x0"] * np.exp((p["a"] + p["alpha"]) * p["T"])


def _root_vol(delta):
    """``(delta^2 + x^2)^(1/4)`` and its first two derivatives."""
    d2 = delta**2

    def v(x):
        return (d2 + x * x) ** 0.25

    def dv(x):
        return 0.5 * x * (d2 + x * x) ** -0.75

    def ddv(x):
        r = d2 + x * x
        return 0.5 * r**-0.75 - 0.75 * x * x * r**-1.75

    return v, dv, ddv


def cir_like_smooth(kappa=1.0, mean=1.0, beta=0.3, sigma=0.8, delta=0.5, x0=0.8, T=1.0, rate=0.05,
                    a_x=0.2, a_z=0.3, a_u=0.2, freq=3.0, phase=np.pi / 4, marks=(0.8,), weights=(0.5,)):
    """Mean-reverting state with square-root-like (smoothed) volatility and jumps.

    ``b = kappa (mean - x) + eps beta tanh(x)``,
    ``sigma(x) = s (delta^2 + x^2)^(1/4)``, ``gamma = z (delta^2 + x^2)^(1/4)``,
    ``xi = sin(freq x + phase)`` and
    ``f = -rate y + a_x cos(x) + a_z tanh(z) + a_u tanh(u)``.
    """
    v, dv, ddv = _root_vol(delta)
    th = np.tanh
    sech2 = lambda x: 1.0 - np.tanh(x) ** 2  # noqa: E731
    return FBSDEProblem(
        drift=lambda t, x, e: kappa * (mean - x) + e * beta * th(x) + _zeros(t),
        diffusion=lambda t, x: sigma * v(x) + _zeros(t),
        jump_coeff=lambda t, x, z: z * v(x) + _zeros(t),
        terminal=lambda x: np.sin(freq * np.asarray(x, dtype=float) + phase),
        driver=lambda t, x, y, z, u: -rate * y + a_x * np.cos(x) + a_z * th(z) + a_u * th(u) + _zeros(t),
        measure=DiscreteLevyMeasure.from_atoms(marks, weights),
        horizon=T,
        initial_state=x0,
        partials={
            ("b", (1, 0)): lambda t, x, e: -kappa + e * beta * sech2(x) + _zeros(t),
            ("b", (0, 1)): lambda t, x, e: beta * th(x) + _zeros(t, e),
            ("b", (1, 1)): lambda t, x, e: beta * sech2(x) + _zeros(t, e),
            ("b", (2, 0)): lambda t, x, e: -2.0 * e * beta * th(x) * sech2(x) + _zeros(t),
            ("b", (0, 2)): lambda t, x, e: _zeros(t, x, e),
            ("sigma", (1,)): lambda t, x: sigma * dv(x) + _zeros(t),
            ("gamma", (1,)): lambda t, x, z: z * dv(x) + _zeros(t),
            ("xi", (1,)): lambda x: freq * np.cos(freq * x + phase),
            ("xi", (2,)): lambda x: -freq**2 * np.sin(freq * x + phase),
            ("f", (1, 0, 0, 0)): lambda t, x, y, z, u: -a_x * np.sin(x) + _zeros(t, y, z, u),
            ("f", (0, 1, 0, 0)): _const(-rate),
            ("f", (0, 0, 1, 0)): lambda t, x, y, z, u: a_z * sech2(z) + _zeros(t, x, y, u),
            ("f", (0, 0, 0, 1)): lambda t, x, y, z, u: a_u * sech2(u) + _zeros(t, x, y, z),
        },
        name="cir_like_smooth",
    )


def _gauss_hermite_measure(mean, std, intensity, n_atoms):
    nodes, w = np.polynomial.hermite_e.hermegauss(n_atoms)
    marks = mean + std * nodes
    return DiscreteLevyMeasure.from_atoms(marks, intensity * w / w.sum())


def merton_smooth(drift=0.0, sigma=0.2, x0=0.0, T=1.0, rate=0.02, strike=1.0, smooth=0.05,
                  jump_mean=-0.1, jump_std=0.15, intensity=1.0, n_atoms=5, additive_levy: bool = False):
    """Additive log-price with Gaussian-quadrature Merton jumps and a softplus call payoff.

    ``xi(x) = smooth * log(1 + exp((e^x - strike) / smooth))``, ``f = -rate y``.
    With ``additive_levy=True`` the same model is returned as an
    :class:`ExpLevyModel` of additive kind.
    """
    measure = _gauss_hermite_measure(jump_mean, jump_std, intensity, n_atoms)

    def payoff(x):
        a = (np.exp(np.asarray(x, dtype=float)) - strike) / smooth
        return smooth * np.logaddexp(0.0, a)

    driver = lambda t, x, y, z, u: -rate * y + _zeros(t, x, z, u)  # noqa: E731
    fy = {("f", (0, 1, 0, 0)): _const(-rate)}
    if additive_levy:
        return ExpLevyModel(
            terminal=payoff, driver=driver, horizon=T, initial_state=x0,
            drift=_const(drift), vol=_const(sigma), jump=lambda s, z: z + _zeros(s),
            measure=measure, partials=fy, kind="additive", name="merton_smooth",
        )
    return FBSDEProblem(
        drift=lambda t, x, e: drift + _zeros(t, x, e),
        diffusion=_const(sigma),
        jump_coeff=lambda t, x, z: z + _zeros(t, x),
        terminal=payoff,
        driver=driver,
        measure=measure,
        horizon=T,
        initial_state=x0,
        partials={("b", (1, 0)): _const(0.0), ("sigma", (1,)): _const(0.0), **fy},
        name="merton_smooth",
    )


def _saturation(cap):
    """``S(v) = cap tanh(v / cap)`` and its first two derivatives."""

    def S(v):
        return cap * np.tanh(v / cap)

    def dS(v):
        return 1.0 - np.tanh(v / cap) ** 2

    def ddS(v):
        t = np.tanh(v / cap)
        return -2.0 * t * (1.0 - t * t) / cap

    return S, dS, ddS


def quadratic_driver(kappa=0.5, mean=0.0, sigma=0.5, x0=0.3, T=1.0, rate=0.03,
                     qy=0.1, qz=0.5, qu=0.5, cap=2.0, marks=(0.4, -0.3), weights=(0.5, 0.5)):
    """``f = -rate y + qy S(y)^2 + qz S(z)^2 + qu S(u)^2`` with saturation ``S``; ``xi = sin(x)``."""
    S, dS, ddS = _saturation(cap)
    sq = lambda v: 2.0 * S(v) * dS(v)  # noqa: E731
    sqq = lambda v: 2.0 * (dS(v) ** 2 + S(v) * ddS(v))  # noqa: E731
    return FBSDEProblem(
        drift=lambda t, x, e: kappa * (mean - x) + _zeros(t, e),
        diffusion=_const(sigma),
        jump_coeff=lambda t, x, z: z + _zeros(t, x),
        terminal=lambda x: np.sin(np.asarray(x, dtype=float)),
        driver=lambda t, x, y, z, u: -rate * y + qy * S(y) ** 2 + qz * S(z) ** 2 + qu * S(u) ** 2 + _zeros(t, x),
        measure=DiscreteLevyMeasure.from_atoms(marks, weights),
        horizon=T,
        initial_state=x0,
        partials={
            ("b", (1, 0)): _const(-kappa),
            ("xi", (1,)): np.cos,
            ("xi", (2,)): lambda x: -np.sin(x),
            ("f", (0, 1, 0, 0)): lambda t, x, y, z, u: -rate + qy * sq(y) + _zeros(t, x, z, u),
            ("f", (0, 0, 1, 0)): lambda t, x, y, z, u: qz * sq(z) + _zeros(t, x, y, u),
            ("f", (0, 0, 0, 1)): lambda t, x, y, z, u: qu * sq(u) + _zeros(t, x, y, z),
            ("f", (0, 2, 0, 0)): lambda t, x, y, z, u: qy * sqq(y) + _zeros(t, x, z, u),
            ("f", (0, 0, 2, 0)): lambda t, x, y, z, u: qz * sqq(z) + _zeros(t, x, y, u),
            ("f", (0, 0, 0, 2)): lambda t, x, y, z, u: qu * sqq(u) + _zeros(t, x, y, z),
        },
        name="quadratic_driver",
    )


def intensity_demo(kappa=1.0, mean=0.0, sigma=0.4, x0=0.5, T=1.0, rate=0.05, beta=0.5,
                   c1=0.5, c2=2.0, marks=(0.6, -0.4), weights=(0.5, 0.5)):
    """Jump model with state-dependent intensity ``lambda = c1 + (c2 - c1) / (1 + x^2)``.

    The measure is normalised (mass one) and ``rho == 1``, so the returned
    problem is the one whose jumps arrive at unit rate; pair it with
    :func:`intensity_demo_spec`.  ``f = -rate y + beta u``, ``xi = sin(x)``.
    """
    return FBSDEProblem(
        drift=lambda t, x, e: kappa * (mean - x) + _zeros(t, e),
        diffusion=_const(sigma),
        jump_coeff=lambda t, x, z: z + _zeros(t, x),
        terminal=lambda x: np.sin(np.asarray(x, dtype=float)),
        driver=lambda t, x, y, z, u: -rate * y + beta * u + _zeros(t, x, z),
        measure=DiscreteLevyMeasure.from_atoms(marks, weights),
        horizon=T,
        initial_state=x0,
        partials={
            ("b", (1, 0)): _const(-kappa),
            ("xi", (1,)): np.cos,
            ("xi", (2,)): lambda x: -np.sin(x),
            ("f", (0, 1, 0, 0)): _const(-rate),
            ("f", (0, 0, 0, 1)): _const(beta),
        },
        name="intensity_demo",
    )


def intensity_demo_spec(c1=0.5, c2=2.0, constant: bool = False) -> IntensitySpec:
    if constant:
        return IntensitySpec(lambda t, x: c2 + _zeros(t, x), c2, c2, {1: _const(0.0), 2: _const(0.0)})
    gap = c2 - c1
    return IntensitySpec(
        lambda t, x: c1 + gap / (1.0 + x * x) + _zeros(t),
        c1,
        c2,
        {
            1: lambda t, x: -2.0 * gap * x / (1.0 + x * x) ** 2 + _zeros(t),
            2: lambda t, x: gap * (6.0 * x * x - 2.0) / (1.0 + x * x) ** 3 + _zeros(t),
        },
    )


def gaussian_jump_additive(drift=0.0, sigma=0.3, mark=0.5, intensity=1.0, x0=0.0, T=1.0):
    """Additive Lévy model ``X = x + b t + eps sigma W + eps int z mu~`` with one jump atom and ``f == 0``.

    The terminal function is a placeholder (identity); the characteristic
    function routines replace it.
    """
    measure = DiscreteLevyMeasure.from_atoms([mark], [intensity]) if intensity > 0 else DiscreteLevyMeasure.empty()
    return ExpLevyModel(
        terminal=lambda x: np.asarray(x, dtype=float),
        driver=lambda t, x, y, z, u: _zeros(t, x, y, z, u),
        horizon=T, initial_state=x0, drift=_const(drift), vol=_const(sigma),
        jump=lambda s, z: z + _zeros(s), measure=measure, kind="additive", name="gaussian_jump_additive",
    )


def exp_levy(drift=0.0, sigma=0.3, marks=(0.2, -0.15), weights=(0.7, 0.9), x0=1.0, T=1.0, c=0.0):
    """Exponential Lévy model with ``xi(x) = x`` and ``f = -c y``."""
    return ExpLevyModel(
        terminal=lambda x: np.asarray(x, dtype=float),
        driver=lambda t, x, y, z, u: -c * y + _zeros(t, x, z, u),
        horizon=T, initial_state=x0, drift=_const(drift), vol=_const(sigma),
        jump=lambda s, z: z + _zeros(s), measure=DiscreteLevyMeasure.from_atoms(marks, weights),
        partials={("xi", (1,)): lambda x: 1.0 + _zeros(x), ("f", (0, 1, 0, 0)): _const(-c),
                  **{("xi", (n,)): _zeros for n in range(2, 9)}},
        kind="exponential", name="exp_levy",
    )


CATALOG: dict[str, Callable] = {
    "linear": linear,
    "cir_like_smooth": cir_like_smooth,
    "merton_smooth": merton_smooth,
    "quadratic_driver": quadratic_driver,
    "intensity_demo": intensity_demo,
    "gaussian_jump_additive": gaussian_jump_additive,
    "exp_levy": exp_levy,
}


def build(name: str, **params):
    try:
        builder = CATALOG[name]
    except KeyError:
        raise KeyError(f"unknown model {name!r}; available: {', '.join(sorted(CATALOG))}") from None
    return builder(**params)


# models whose jumps arrive at a state-dependent rate
INTENSITIES: dict[str, Callable] = {"intensity_demo": intensity_demo_spec}
