"""Command-line batch driver.

Usage::

    fbsdexp --config run.toml [--seed N] [--out DIR] [--threads N] [command]

The command (``expand``, ``simulate``, ``compare``, ``sweep``, ``charfn``)
is taken from the positional argument or from the config's ``command`` key.
Exit status: 0 on success, 1 on numerical failure, 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, catalog
from .errors import ConfigError, NumericalError
from .levypoly import MAX_LEVY_ORDER, ExpLevyModel, levy_initial_value, solve_levy_coeffs, solve_levy_order0
from .odecore import DEFAULT_STEPS, TimeGrid

COMMANDS = ("expand", "simulate", "compare", "sweep", "charfn")


@dataclass
class ExperimentConfig:
    command: str
    model: str
    eps: list[float] = field(default_factory=lambda: [0.1])
    order: int = 2
    n_steps: int = DEFAULT_STEPS
    n_paths: int = 10_000
    mc_steps: int = 100
    basis_degree: int = 3
    seed: int = 0
    threads: int = 1
    out: str = "out"
    debias: bool = True
    oracle: str = "lsmc"
    write_paths: int = 0
    theta: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    model_params: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        if "command" not in data or "model" not in data:
            raise ConfigError("config must define 'command' and 'model'")
        cfg = cls(**data)
        cfg.check()
        return cfg

    def check(self) -> None:
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}; expected one of {', '.join(COMMANDS)}")
        if self.model not in catalog.CATALOG:
            raise ConfigError(f"unknown model {self.model!r}")
        if not self.eps or any(not (0.0 < float(e) <= 1.0) for e in self.eps):
            raise ConfigError(f"invalid eps {self.eps}: values must lie in (0, 1]")
        self.eps = [float(e) for e in self.eps]
        for key in ("n_steps", "n_paths", "mc_steps", "threads"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.oracle not in ("lsmc", "plain"):
            raise ConfigError("oracle must be 'lsmc' or 'plain'")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _build(cfg: ExperimentConfig):
    try:
        model = catalog.build(cfg.model, **cfg.model_params)
    except TypeError as exc:
        raise ConfigError(f"bad model_params for {cfg.model}: {exc}") from exc
    spec = catalog.INTENSITIES.get(cfg.model)
    return model, (spec() if spec else None)


def _grid(model, steps):
    return TimeGrid(0.0, float(model.horizon), int(steps))


def _require_fbsde(model, command):
    if isinstance(model, ExpLevyModel):
        raise ConfigError(f"command {command!r} needs a generic model, {model.name!r} is a Lévy-polynomial model")


def _check_order(cfg, model):
    limit = MAX_LEVY_ORDER if isinstance(model, ExpLevyModel) else 2
    if not 0 <= cfg.order <= limit:
        raise ConfigError(f"order must be in 0..{limit} for model {cfg.model}")


def cmd_expand(cfg, model, spec, out: Path):
    grid = _grid(model, cfg.n_steps)
    if isinstance(model, ExpLevyModel):
        N = max(cfg.order, 1)
        Y0 = solve_levy_order0(model, grid)
        co = solve_levy_coeffs(model, Y0, N, grid)
        write_csv(out / "coefficients.csv", ["s", "Y0"] + [f"y{n}" for n in range(1, N + 1)],
                  zip(grid.nodes, Y0.scalar, *[c.scalar for c in co.y]))
        rows = [(e, n, levy_initial_value(co, e, n) if n else Y0.scalar[0]) for e in cfg.eps for n in range(N + 1)]
    else:
        from .experiments import expansion_for

        ex = expansion_for(model, grid, spec)
        tab = ex.tables()
        write_csv(out / "coefficients.csv", ["s"] + list(tab), zip(grid.nodes, *tab.values()))
        rows = [(e, n, ex.initial_value(e, n)) for e in cfg.eps for n in range(3)]
    write_csv(out / "initial_values.csv", ["eps", "order", "y0_expansion"], rows)


def cmd_simulate(cfg, model, spec, out: Path):
    from .montecarlo import reconstruct, simulate_flows, simulate_noise, terminal_residual

    _require_fbsde(model, "simulate")
    if spec is not None:
        raise ConfigError("simulate runs the constant-intensity dynamics; use compare for intensity models")
    from .expansion import expand

    grid = _grid(model, cfg.mc_steps)
    ex = expand(model, grid)
    bundle = simulate_noise(grid, model.measure, cfg.seed, cfg.n_paths, threads=cfg.threads)
    rows, path_rows = [], []
    for e in cfg.eps:
        fl = simulate_flows(model, ex.frozen, e, bundle)
        rec = reconstruct(ex.order0, ex.o1, ex.o2, ex.frozen, fl, e, cfg.order)
        res, res_se = terminal_residual(model, rec, fl)
        rows.append((e, cfg.order, cfg.n_paths, fl.X_eps[:, -1].mean(), fl.X1[:, -1].mean(), fl.X2[:, -1].mean(),
                     rec.Y[:, 0].mean(), rec.Y[:, -1].mean(), res, res_se))
        for p in range(min(cfg.write_paths, cfg.n_paths)):
            for i in range(len(grid)):
                path_rows.append((e, p, i, fl.X_eps[p, i], fl.X1[p, i], fl.X2[p, i], rec.Y[p, i], rec.Z[p, i]))
    write_csv(out / "summary.csv", ["eps", "order", "n_paths", "mean_X_eps_T", "mean_X1_T", "mean_X2_T",
                                    "Y_hat_0", "mean_Y_hat_T", "terminal_residual", "terminal_residual_se"], rows)
    if cfg.write_paths:
        write_csv(out / "paths.csv", ["eps", "path_id", "node", "X_eps", "X1", "X2", "Y_hat", "Z_hat"], path_rows)


def _lsmc_config(cfg, model):
    from .reference import LSMCConfig

    try:
        return LSMCConfig(n_paths=cfg.n_paths, basis_degree=cfg.basis_degree, grid=_grid(model, cfg.mc_steps),
                          seed=cfg.seed, threads=cfg.threads)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_compare(cfg, model, spec, out: Path):
    from .experiments import expansion_for, oracle_run

    _require_fbsde(model, "compare")
    _check_order(cfg, model)
    ex = expansion_for(model, _grid(model, cfg.n_steps), spec)
    if cfg.oracle == "plain":
        from .reference import plain_mc_terminal

        if spec is not None:
            raise ConfigError("the plain oracle does not support state-dependent intensities")
        try:
            vals = [plain_mc_terminal(model, e, cfg.n_paths, cfg.seed, _grid(model, cfg.mc_steps)) for e in cfg.eps]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        y0, se = np.array([v[0] for v in vals]), np.array([v[1] for v in vals])
    else:
        run = oracle_run(model, cfg.eps, _lsmc_config(cfg, model), ex, spec, cfg.debias)
        y0, se = run.y0, run.std_error
        write_csv(out / "lsmc_conditioning.csv", ["eps", "step", "condition", "degree"],
                  [(e, i, c, d) for e, r in zip(cfg.eps, run.results)
                   for i, (c, d) in enumerate(zip(r.condition, r.degree))])
    rows = []
    for e, y, s in zip(cfg.eps, y0, se):
        ye = ex.initial_value(e, cfg.order)
        rows.append((e, cfg.order, ye, y, ye - y, s))
    write_csv(out / "compare.csv", ["eps", "order", "y0_expansion", "y0_oracle", "gap", "std_error"], rows)


def cmd_sweep(cfg, model, spec, out: Path):
    from .experiments import eps_sweep, expansion_for

    _require_fbsde(model, "sweep")
    _check_order(cfg, model)
    ex = expansion_for(model, _grid(model, cfg.n_steps), spec)
    orders = list(range(0, cfg.order + 1))
    run, fits = eps_sweep(model, cfg.eps, orders, _lsmc_config(cfg, model), ex, spec, cfg.debias)
    rows = []
    for fit in fits:
        for e, y, s, g, k in zip(run.eps, run.y0, run.std_error, fit.gaps, fit.kept):
            rows.append((e, fit.order, ex.initial_value(e, fit.order), y, g, s, k))
    write_csv(out / "sweep.csv", ["eps", "order", "y0_expansion", "y0_oracle", "gap", "std_error", "kept"], rows)
    write_csv(out / "slope.csv", ["order", "slope", "n_kept"], [(f.order, f.slope, int(f.kept.sum())) for f in fits])


def cmd_charfn(cfg, model, spec, out: Path):
    from .montecarlo import estimate_charfn
    from .reference import levy_khintchine_exact

    if not isinstance(model, ExpLevyModel) or model.kind != "additive":
        raise ConfigError("charfn needs an additive Lévy model (e.g. gaussian_jump_additive)")
    _check_order(cfg, model)
    grid = _grid(model, cfg.n_steps)
    b, sig = float(np.asarray(model.drift(0.0))), float(np.asarray(model.vol(0.0)))
    rows = []
    for e in cfg.eps:
        for th in cfg.theta:
            try:
                est = estimate_charfn(model, float(th), e, max(cfg.order, 1), grid)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            ex = levy_khintchine_exact(b, sig, model.measure, e, float(th), float(model.horizon),
                                       float(model.initial_state), gamma=lambda z: model.jump(0.0, z))
            rows.append((e, th, est.value.real, est.value.imag, ex.real, ex.imag, abs(est.value - ex)))
    write_csv(out / "charfn.csv", ["eps", "theta", "re", "im", "exact_re", "exact_im", "abs_gap"], rows)


HANDLERS = {"expand": cmd_expand, "simulate": cmd_simulate, "compare": cmd_compare, "sweep": cmd_sweep,
            "charfn": cmd_charfn}


def run(cfg: ExperimentConfig) -> int:
    """Execute one experiment; returns the process exit status."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model, spec = _build(cfg)
    from . import kernels

    manifest = {"version": __version__, "backend": kernels.BACKEND, "config": asdict(cfg)}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    HANDLERS[cfg.command](cfg, model, spec, out)
    return 0


def parse_args(argv=None):
    ap = argparse.ArgumentParser(prog="fbsdexp", description="Asymptotic expansions for FBSDEs with jumps.")
    ap.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    ap.add_argument("--config", required=True, help="TOML experiment file")
    ap.add_argument("--seed", type=int, help="master seed (overrides config)")
    ap.add_argument("--out", help="output directory (overrides config)")
    ap.add_argument("--threads", type=int, help="worker threads for path simulation")
    return ap.parse_args(argv)


def load_config(args) -> ExperimentConfig:
    try:
        with open(args.config, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for key in ("command", "seed", "out", "threads"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return ExperimentConfig.from_mapping(data)


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        cfg = load_config(args)
        return run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
