"""Linear inverse problems with classical and generative priors (C++ core)."""

from ._invbench import *  # noqa: F401,F403
from ._invbench import InvalidInput, SolverFailure, reconstruct

__all__ = [name for name in dir() if not name.startswith("_")]
