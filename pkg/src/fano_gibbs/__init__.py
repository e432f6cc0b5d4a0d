"""Kahler-Einstein metrics on the projective line through Gibbs ensembles.

Quadrature on the sphere, holomorphic sections and Slater determinants,
energy functionals, quantized (Hermitian-matrix) functionals, partition
functions of the point process, MCMC sampling and an experiment runner.
"""

__version__ = "0.1.0"
