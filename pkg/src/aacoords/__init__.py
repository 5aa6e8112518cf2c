"""
Action-angle coordinates for integrable systems on Poisson manifolds.

Modules
-------
expr      symbolic expressions: parse, evaluate, differentiate, simplify
geometry  brackets, Hamiltonian fields, Jacobi checks, rank, polarity
systems   system documents, built-in fixtures, integrability checks
flows     adaptive integration, joint flows, near returns, torus tracing
torus     period refinement, lattice reduction, continuation
chart     actions, angles, straightening, canonical-form checks
cli       command-line front end
"""

from ._backend import BACKEND
from .systems import SystemSpec, builtin, load_system, serialize

__all__ = ["BACKEND", "SystemSpec", "builtin", "load_system", "serialize"]
__version__ = "0.1.0"
