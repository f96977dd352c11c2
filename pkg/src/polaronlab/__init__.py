"""Strong-coupling polaron laboratory.

Core pieces: periodic-grid field algebra, Pekar ground-state solvers,
restricted-resolvent kernels, quasi-free phonon dynamics, and a truncated
Fock-space oracle for brute-force verification.
"""

__version__ = "0.1.0"
