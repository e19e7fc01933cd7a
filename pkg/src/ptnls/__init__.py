"""Focusing NLS with a point interaction in the plane: operator, ground states, dynamics."""

__version__ = "0.1.0"

from .hamiltonian import ModelParams, SingularState
from .numerics import GridSpec

__all__ = ["GridSpec", "ModelParams", "SingularState", "__version__"]
