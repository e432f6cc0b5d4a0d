"""Holomorphic sections of O(2k) and their Slater determinants.

Sections are binary forms of degree ``2k`` written in the monomial frame
``z0^j z1^(2k-j)``.  A metric ``phi`` on O(2) gives the pointwise norm
``|s|^2 e^{-k phi}`` evaluated with normalized homogeneous coordinates.

Determinants of the monomial frame factor as a Vandermonde product, and with
normalized coordinates ``|z0_b z1_a - z0_a z1_b| = |x_a - x_b| / 2`` for the
corresponding unit vectors.  :func:`log_det_norm_sq` uses this to evaluate
Slater determinants of many configurations at once without cancellation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy.special import gammaln

from .errors import UnderResolvedError
from .sphere import PSI0, SpherePoint, chordal_sq, homogeneous


@dataclass(frozen=True, eq=False)
class SectionBasis:
    """Basis of ``H^0(O(2k))``; row ``i`` of ``coeffs`` is section ``s_i``."""

    k: int
    coeffs: np.ndarray = field(repr=False)
    orthonormal: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.shape != (self.N, self.N):
            raise ValueError(f"coefficient matrix must be {self.N}x{self.N}")
        if np.linalg.matrix_rank(c) < self.N:
            raise ValueError("coefficients do not form a basis")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def N(self):
        return 2 * self.k + 1

    @cached_property
    def log_abs_det(self):
        """``log |det coeffs|``."""
        return float(np.linalg.slogdet(self.coeffs)[1])

    @cached_property
    def log_det_constant(self):
        """``log ||det S||^2_{k psi0}`` minus the pairwise distance sum."""
        return 2 * self.log_abs_det - self.k * self.N * PSI0

    def values(self, z0, z1):
        """Sections in the ``k psi0`` frame at homogeneous coordinates.

        Returns an array ``(..., N)`` whose squared moduli are the pointwise
        norms ``|s_i|^2_{k psi0}``.
        """
        z0 = np.asarray(z0, dtype=complex)[..., None]
        z1 = np.asarray(z1, dtype=complex)[..., None]
        j = np.arange(self.N)
        mono = z0 ** j * z1 ** (2 * self.k - j)
        return (mono @ self.coeffs.T) * math.exp(-self.k * PSI0 / 2)

    def values_at(self, xyz):
        return self.values(*homogeneous(xyz))

    def to_json(self):
        return {"k": self.k,
                "coeffs": [[[float(v.real), float(v.imag)] for v in row] for row in self.coeffs],
                "orthonormal": self.orthonormal}

    @classmethod
    def from_json(cls, doc):
        c = np.array(doc["coeffs"], dtype=float)
        return cls(int(doc["k"]), c[..., 0] + 1j * c[..., 1], bool(doc["orthonormal"]))


@dataclass(frozen=True)
class LogSlater:
    log_abs: float
    finite: bool


def monomial_basis(k):
    return SectionBasis(k, np.eye(2 * k + 1))


def orthonormal_coefficients(k):
    """Closed-form scaling making ``z0^j z1^(2k-j)`` orthonormal for ``psi0``."""
    N = 2 * k + 1
    j = np.arange(N)
    return np.exp(0.5 * (k * PSI0 + gammaln(N + 1) - gammaln(j + 1) - gammaln(N - j)))


def gram_matrix(basis, grid, u=None, density=None):
    """``G_ij = int conj(s_i) s_j e^{-k phi} density dsigma`` on a grid.

    ``u`` is ``phi - psi0`` at the nodes (default 0) and ``density`` the
    measure density with respect to ``dsigma`` (default 1).
    """
    V = basis.values(*grid.homogeneous)
    w = np.array(grid.weights)
    if u is not None:
        w = w * np.exp(-basis.k * np.asarray(u))
    if density is not None:
        w = w * np.asarray(density)
    return (V.conj().T * w) @ V


def orthonormal_basis(k, grid):
    """Basis orthonormal for the round metric and ``dsigma``.

    Obtained by Cholesky factorization of the monomial Gram matrix on
    ``grid``; raises when the grid cannot resolve degree ``2k`` forms.
    """
    if grid.lmax < 2 * k or grid.mmax < 2 * k:
        raise UnderResolvedError(f"grid {grid.resolution} cannot resolve k={k}")
    G = gram_matrix(monomial_basis(k), grid)
    if 1.0 / np.linalg.cond(G) < 1e-12:
        raise UnderResolvedError("monomial Gram matrix is numerically singular")
    L = np.linalg.cholesky(G)
    C = np.conj(scipy.linalg.solve_triangular(L, np.eye(len(G)), lower=True))
    return SectionBasis(k, C, orthonormal=True)


def _config_array(config):
    if isinstance(config, np.ndarray):
        return np.asarray(config, dtype=float)
    return np.array([p.vector for p in config])


def pointwise_norm_sq(basis, i, x, phi):
    """``|s_i(x)|^2 e^{-k phi(x)}`` at a :class:`SpherePoint`."""
    v = basis.values(x.z0, x.z1)[i]
    u = float(phi.evaluate(x.vector))
    return float(abs(v) ** 2 * math.exp(-basis.k * u))


def log_slater(basis, config, phi):
    """``log ||det s_i(x_j)||_{k phi}`` by pivoted LU with column scaling."""
    if len(config) != basis.N:
        raise ValueError(f"configuration must have {basis.N} points, got {len(config)}")
    pts = [p if isinstance(p, SpherePoint) else SpherePoint.from_vector(p) for p in config]
    canon = [p.canonical() for p in pts]
    for a in range(len(canon)):
        for b in range(a):
            if canon[a].z0 == canon[b].z0 and canon[a].z1 == canon[b].z1:
                return LogSlater(-math.inf, False)
    z0 = np.array([p.z0 for p in pts])
    z1 = np.array([p.z1 for p in pts])
    u = phi.evaluate(to_vectors(pts))
    M = basis.values(z0, z1).T  # rows: sections, columns: points
    scale = np.max(np.abs(M), axis=0)
    lu, _ = scipy.linalg.lu_factor(M / scale, check_finite=False)
    with np.errstate(divide="ignore"):
        logdet = np.sum(np.log(np.abs(np.diag(lu))))
    total = float(logdet + np.sum(np.log(scale)) - basis.k * np.sum(u) / 2)
    return LogSlater(total, bool(np.isfinite(total)))


def to_vectors(points):
    return np.array([p.vector for p in points])


def pair_log_chordal(xyz):
    """``sum_{a<b} log(|x_a - x_b|^2 / 4)`` over the second-to-last axis."""
    xyz = np.asarray(xyz, dtype=float)
    n = xyz.shape[-2]
    a, b = np.triu_indices(n, 1)
    with np.errstate(divide="ignore"):
        return np.sum(np.log(chordal_sq(xyz[..., a, :], xyz[..., b, :]) / 4), axis=-1)


def log_det_norm_sq(basis, xyz, u=None):
    """Vectorized ``log ||det S||^2_{k phi}`` for configurations ``(..., N, 3)``.

    ``u`` holds ``phi - psi0`` at the points (shape ``(..., N)``), default 0.
    """
    val = basis.log_det_constant + pair_log_chordal(xyz)
    if u is not None:
        val = val - basis.k * np.sum(u, axis=-1)
    return val
