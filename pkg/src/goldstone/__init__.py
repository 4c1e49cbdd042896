"""Finite-volume dispersion-bound toolkit for quantum Heisenberg
antiferromagnets with a staggered symmetry-breaking field.

Builds torus Hamiltonians exactly, computes ground states by restarted
Lanczos (dense oracle on tiny systems), and verifies the full chain of
finite-volume inequalities behind linear spin-wave dispersion: infrared
susceptibility bounds, double-commutator sum rules, smooth spectral filters,
wavepacket excitation energies, and quasi-locality estimates.
"""

__version__ = "0.1.0"

from .lattice import Lattice, LatticeSpec, dispersion_symbol  # noqa: F401
from .operators import (SparseHermitianOperator, build_hamiltonian,  # noqa: F401
                        fourier_spin, marshall_transform,
                        transformed_hamiltonian)
from .eigensolver import (GroundState, SpectralDecomposition,  # noqa: F401
                          deflated_solve, dense_spectrum, ground_state)
from .filters import (FilterSpec, GFilter, WavepacketSpec, apply_filter,  # noqa: F401
                      build_f, build_g, smoothstep)
from .analysis import (BoundEntry, BoundReport, DispersionRecord,  # noqa: F401
                       SystemContext, choose_epsilon, excitation_energy,
                       extrapolate_ms, staggered_magnetization)
