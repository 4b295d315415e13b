"""Finite-dimensional classical and quantum channels with causal structure.

Modules:

``tensor_core``   matrices, partial traces, factor permutations
``channels``      classical and quantum channels on named ports
``optim``         LP, SDP and CPTP least-squares solvers
``dilation``      Stinespring dilations and environment morphisms
``metrics``       trace, diamond and purified distances
``causal``        causal specifications, stencils and contraction
``rigidity_cit``  deterministic decompositions and rigidity
``selftest``      quantum strategies and self-testing
``jsonio``        JSON forms of all of the above
``cli``           the ``dilatio`` command
"""

from . import channels, optim, tensor_core
from .channels import (ALG_TOL, CLASSICAL, QUANTUM, SOLVER_TOL, ClassicalChannel, Interface,
                       InterfaceError, Port, QuantumChannel)

__version__ = "0.1.0"

__all__ = ["ALG_TOL", "CLASSICAL", "QUANTUM", "SOLVER_TOL", "ClassicalChannel", "Interface",
           "InterfaceError", "Port", "QuantumChannel", "channels", "optim", "tensor_core"]
