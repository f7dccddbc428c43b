"""Numerics for a half-lattice Schrodinger operator with linearly growing
coefficients: free and rank-one-perturbed spectral calculus, ground-state
solitons of the associated discrete NLS, the linearized matrix Hamiltonians,
and weighted dispersive decay estimates."""

__version__ = "0.1.0"
