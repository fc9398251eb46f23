"""Two-area AC/HVDC frequency-dynamics toolkit.

Builds the interconnected-system model in three variants, simulates load and
measurement-corruption scenarios, quantifies vulnerability to stealthy
data-injection attacks with an exact MILP search, and synthesizes residual
generators that detect, isolate, and recover each injected bias.
"""

from .gridmodel import (
    GridParams,
    LtiModel,
    Variant,
    build_attack_matrix,
    build_continuous,
    default_params,
    discretize_model,
    validate_stability,
)

__all__ = [
    "GridParams",
    "LtiModel",
    "Variant",
    "build_attack_matrix",
    "build_continuous",
    "default_params",
    "discretize_model",
    "validate_stability",
]

__version__ = "0.1.0"
