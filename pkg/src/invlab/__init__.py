"""Numerical toolkit for recurrence, conservativeness and invariant measures of diffusions."""

__version__ = "0.1.0"

from .coefficients import (CoefficientField, DensitySpec, apply_L, apply_L_dual,  # noqa: E402
                           check_ellipticity, drift_decomposition)
from .criteria import ClassifyOptions, LyapunovSpec, Verdict, classify  # noqa: E402
from .expr import Expression, evaluate, parse  # noqa: E402
from .fields import ScalarField  # noqa: E402
from .gallery import instantiate, list_cases  # noqa: E402
from .sde import SimConfig, simulate, survival_probability  # noqa: E402
from .semigroup import estimate_dual_Ptf, estimate_Ptf, ou_semigroup  # noqa: E402
from .weak_form import TestFunction, default_battery, invariance_residual  # noqa: E402

__all__ = [
    "CoefficientField", "DensitySpec", "apply_L", "apply_L_dual", "check_ellipticity",
    "drift_decomposition", "ClassifyOptions", "LyapunovSpec", "Verdict", "classify",
    "Expression", "evaluate", "parse", "ScalarField", "instantiate", "list_cases",
    "SimConfig", "simulate", "survival_probability", "estimate_Ptf", "estimate_dual_Ptf",
    "ou_semigroup", "TestFunction", "default_battery", "invariance_residual",
]
