"""Bertrand spaces recast as position-dependent-mass systems.

Submodules: ``geometry`` (radial profiles and potentials), ``pdm_map``
(coordinate maps and PDM Hamiltonians), ``dynamics`` (integration,
integrals of motion, apsidal angles), ``quantum_spectrum`` (Darboux III
levels) and ``cli``.
"""

__version__ = "0.1.0"
