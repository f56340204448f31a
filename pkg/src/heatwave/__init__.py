"""Space-time finite elements for the heat equation on polygonal domains.

A dG(q) in time / continuous Lagrange in space solver together with a
verification harness for weighted elliptic estimates, sectorial resolvent
bounds, discrete maximal parabolic regularity, and pointwise gradient
best-approximation ratios.
"""

__version__ = "0.1.0"
