"""Two-scale (reiterated) periodic homogenization toolkit.

Computes cell correctors and the homogenized tensor for coefficients
A(x/eps, x/eps^2), builds Fourier flux correctors and the first-order
two-scale corrector expansion, solves the oscillatory and homogenized
Dirichlet problems, and verifies the O(eps) convergence rate and the
large-scale interior Lipschitz bound empirically.
"""

__version__ = "0.1.0"
