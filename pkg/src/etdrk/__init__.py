"""Exponential time differencing Runge-Kutta schemes for gradient flows.

Submodules: ``phi`` (phi-functions), ``tableau`` (coefficient tables and
order conditions), ``certificate`` (energy-stability test), ``spectral``
(periodic Fourier grids), ``models`` (gradient-flow models), ``stepper``
(time integration), ``adaptive`` (step-size control), ``harness`` and
``cli`` (experiments and command line).
"""

from .tableau import BUILTIN_SCHEMES, SCHEME_NAMES, Tableau, builtin_scheme, resolve_scheme

__all__ = ["BUILTIN_SCHEMES", "SCHEME_NAMES", "Tableau", "builtin_scheme", "resolve_scheme"]
__version__ = "0.1.0"
