"""Primal-dual splitting with randomly activated averaged maps.

Submodules: ``operators`` (projections, linear maps), ``activation``
(schedules and the seeded generator), ``pdsplit`` (the solver),
``kaczmarz``, ``network``, ``instancegen``, ``capexp`` (stochastic
capacity expansion) and ``bench`` (command-line harness).
"""

from randsplit.activation import ActivationSchedule, SeededRng, validate_schedule
from randsplit.capexp import solve_capexp
from randsplit.instancegen import generate_instance
from randsplit.network import build_nguyen_dupuis
from randsplit.operators import LinearMap, matrix_map
from randsplit.pdsplit import ProblemSpec, StepSizes, default_steps, solve, validate_steps

__version__ = "0.1.0"

__all__ = [
    "ActivationSchedule",
    "SeededRng",
    "validate_schedule",
    "LinearMap",
    "matrix_map",
    "ProblemSpec",
    "StepSizes",
    "default_steps",
    "validate_steps",
    "solve",
    "build_nguyen_dupuis",
    "generate_instance",
    "solve_capexp",
]
