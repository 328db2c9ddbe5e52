"""Quantum central spin bath (QCSB) entropic-spring simulator.

Submodules: ``statespace`` (basis, states, sector blocks), ``dynamics``
(block propagator and full-space reference), ``thermo`` (closed-form
thermodynamics), ``glass`` (TLS-to-QCSB mapping and the R_s map),
``analysis`` (fits) and ``cli``.
"""

__version__ = "0.1.0"
