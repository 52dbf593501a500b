"""Grey-box identification and simulation of deformable linear objects.

A deformable linear object (cable, rod, foam cylinder) is modeled as a
serial chain of pseudo-rigid bodies with learnable segment lengths and
learnable interaction torques at the passive elastic joints.  The package
provides the chain kinematics and hybrid dynamics, stiff-capable implicit
integration, exact gradients through the solver, training and state
estimation, a signal-processing/data pipeline with a synthetic ground-truth
generator, and baseline models for comparison.

All numerics run in double precision.
"""

import jax as _jax

_jax.config.update("jax_enable_x64", True)

from . import (  # noqa: E402
    baselines,
    datapipe,
    dynamics,
    estimation,
    gradients,
    integrators,
    kinematics,
    models,
    spatial,
    torques,
    training,
)
from .errors import (  # noqa: E402
    DlodynError,
    DomainError,
    NonConvergence,
    NumericalError,
    ParseError,
    SingularOrientation,
)

__version__ = "0.1.0"

__all__ = [
    "baselines",
    "datapipe",
    "dynamics",
    "estimation",
    "gradients",
    "integrators",
    "kinematics",
    "models",
    "spatial",
    "torques",
    "training",
    "DlodynError",
    "DomainError",
    "NonConvergence",
    "NumericalError",
    "ParseError",
    "SingularOrientation",
    "__version__",
]
