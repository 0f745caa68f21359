"""Finite-volume operators: public entry point.

The implementation lives in :mod:`msalab.hamiltonian`; this module re-exports it
under the operator name.
"""

from .hamiltonian import *  # noqa: F401,F403
from .hamiltonian import __all__  # noqa: F401
