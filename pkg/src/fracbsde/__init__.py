"""Mean-field anticipated BSDEs driven by fractional Brownian motion (1/2 < H < 1)."""

__version__ = "0.1.0"

from .kernel import KernelMatrix, inner_product, m_bound, norm_squared, sigma_hat
from .paths import Label, PathEnsemble, sample_fbm
from .solver import (
    EtaModel,
    GeneratorClass,
    GeneratorSpec,
    SolutionField,
    SolverConfig,
    TerminalSpec,
    picard_solve,
)
from .timegrid import DelaySpec, TimeGrid

__all__ = [
    "DelaySpec",
    "EtaModel",
    "GeneratorClass",
    "GeneratorSpec",
    "KernelMatrix",
    "Label",
    "PathEnsemble",
    "SolutionField",
    "SolverConfig",
    "TerminalSpec",
    "TimeGrid",
    "inner_product",
    "m_bound",
    "norm_squared",
    "picard_solve",
    "sample_fbm",
    "sigma_hat",
]
