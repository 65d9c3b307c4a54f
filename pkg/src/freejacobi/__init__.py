"""Verification toolkit for the free Jacobi process driven by k free unitary
Brownian motions.

The package cross-checks the same quantities along independent routes:
exact non-crossing-partition combinatorics, an exact word-reduction engine
over Z[k], moment ODE systems, truncated generating series with their PDE
and characteristic curves, and finite-N unitary Monte Carlo.
"""

__version__ = "0.1.0"
