"""Weighted anisotropic p-Laplace laboratory.

Forward Dirichlet solves by p-Dirichlet energy minimisation on P1 triangles,
the nonlinear Dirichlet-to-Neumann pairing, monotonicity and stability
experiments, and two-dimensional complex-gradient diagnostics.
"""

__version__ = "0.1.0"
