"""Small-variance asymptotic expansions for FBSDEs with jumps."""

from importlib.metadata import PackageNotFoundError, version

from .errors import ConfigError, NumericalError, ODEBlowUp, SingularRegression
from .expansion import Expansion, expand, freeze, solve_order0, solve_order1, solve_order2
from .jumpmeasure import DiscreteLevyMeasure, IntensitySpec, density_path, transform_intensity
from .kernels import BACKEND
from .levypoly import ExpLevyModel, solve_levy_coeffs, solve_levy_order0
from .model import FBSDEProblem, eval_partial, validate
from .odecore import GridFunction, TimeGrid

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover - source checkout without install
    __version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "DiscreteLevyMeasure", "ExpLevyModel", "Expansion", "FBSDEProblem",
    "GridFunction", "IntensitySpec", "NumericalError", "ODEBlowUp", "SingularRegression", "TimeGrid",
    "density_path", "eval_partial", "expand", "freeze", "solve_levy_coeffs", "solve_levy_order0",
    "solve_order0", "solve_order1", "solve_order2", "transform_intensity", "validate", "__version__",
]
