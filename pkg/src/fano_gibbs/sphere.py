"""Geometry of the Riemann sphere: points, quadrature, potentials and measures.

A metric on the anticanonical bundle O(2) is written ``phi = psi0 + u`` with
``psi0`` the round (Fubini-Study) metric.  In the homogeneous frame with
normalized coordinates ``|z0|^2 + |z1|^2 = 1`` the round metric is the
constant ``log(pi)``, chosen so that ``e^{-psi0}`` is the normalized area
measure ``dsigma``.  All densities below are taken with respect to ``dsigma``.

For curves the Monge-Ampere measure is linear in ``u``:
``MA(phi) = (1 + lap(u) / 2) dsigma`` with ``lap`` the round Laplacian
on the unit sphere, since ``dd^c psi0`` has total mass ``V = 2``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import CurvatureError, ConvergenceError, MassError, UnderResolvedError

VOLUME = 2.0
PSI0 = math.log(math.pi)
POSITIVITY_TOL = 1e-12
_CHUNK = 4096


# --------------------------------------------------------------------------
# points

def homogeneous(xyz):
    """Normalized homogeneous coordinates of unit vectors.

    Returns ``(z0, z1)`` with ``z0 = cos(theta/2) >= 0`` and
    ``z1 = sin(theta/2) e^{i azimuth}``.  The north pole is ``(1, 0)``.
    """
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
    w = x + 1j * y
    north = z >= 0
    c_n = np.sqrt(np.maximum(1.0 + z, 0.0) / 2.0)
    s_s = np.sqrt(np.maximum(1.0 - z, 0.0) / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        z1_n = np.where(c_n > 0, w / (2 * c_n), 0.0)
        r = np.abs(w)
        z1_s = np.where(r > 0, s_s * w / np.where(r > 0, r, 1.0), s_s)
        z0_s = np.where(s_s > 0, r / (2 * np.where(s_s > 0, s_s, 1.0)), 1.0)
    z0 = np.where(north, c_n, z0_s)
    z1 = np.where(north, z1_n, z1_s)
    return z0.astype(complex), z1


def to_vector(z0, z1):
    """Unit vectors from homogeneous coordinates (normalization is applied)."""
    z0 = np.asarray(z0, dtype=complex)
    z1 = np.asarray(z1, dtype=complex)
    n = np.abs(z0) ** 2 + np.abs(z1) ** 2
    w = 2 * np.conj(z0) * z1 / n
    z = (np.abs(z0) ** 2 - np.abs(z1) ** 2) / n
    return np.stack([w.real, w.imag, z], axis=-1)


def angles_to_vector(theta, azimuth):
    theta = np.asarray(theta, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(azimuth), st * np.sin(azimuth), np.cos(theta)], axis=-1)


def vector_to_angles(xyz):
    xyz = np.asarray(xyz, dtype=float)
    theta = np.arctan2(np.hypot(xyz[..., 0], xyz[..., 1]), xyz[..., 2])
    azimuth = np.mod(np.arctan2(xyz[..., 1], xyz[..., 0]), 2 * np.pi)
    return theta, azimuth


@dataclass(frozen=True, eq=False)
class SpherePoint:
    """A point of P^1 in normalized homogeneous coordinates.

    Equality is projective: representatives differing by a unit phase compare
    equal.  Instances are not hashable because equality uses a tolerance.
    """

    z0: complex
    z1: complex

    def __post_init__(self):
        n = math.sqrt(abs(self.z0) ** 2 + abs(self.z1) ** 2)
        if n == 0:
            raise ValueError("(0, 0) is not a point of P^1")
        object.__setattr__(self, "z0", complex(self.z0) / n)
        object.__setattr__(self, "z1", complex(self.z1) / n)

    __hash__ = None

    @classmethod
    def from_angles(cls, theta, azimuth):
        return cls(math.cos(theta / 2), math.sin(theta / 2) * complex(math.cos(azimuth), math.sin(azimuth)))

    @classmethod
    def from_vector(cls, xyz):
        z0, z1 = homogeneous(np.asarray(xyz, dtype=float))
        return cls(complex(z0), complex(z1))

    def canonical(self):
        """Representative whose first nonzero coordinate is real positive."""
        lead = self.z0 if abs(self.z0) > 0 else self.z1
        phase = abs(lead) / lead
        return SpherePoint(self.z0 * phase, self.z1 * phase)

    @property
    def vector(self):
        return to_vector(self.z0, self.z1)

    @property
    def angles(self):
        t, a = vector_to_angles(self.vector)
        return float(t), float(a)

    def __eq__(self, other):
        if not isinstance(other, SpherePoint):
            return NotImplemented
        a, b = self.canonical(), other.canonical()
        return abs(a.z0 - b.z0) < 1e-12 and abs(a.z1 - b.z1) < 1e-12


def chordal_sq(a, b):
    """Squared Euclidean distance between unit vectors (broadcasting)."""
    return np.sum((np.asarray(a) - np.asarray(b)) ** 2, axis=-1)


def geodesic(a, b):
    """Great-circle distance between unit vectors, stable for close points."""
    return 2 * np.arcsin(np.minimum(np.sqrt(chordal_sq(a, b)) / 2, 1.0))


def uniform_points(rng, shape):
    """Independent uniform points on the unit sphere, array ``shape + (3,)``."""
    g = rng.standard_normal(tuple(np.atleast_1d(shape)) + (3,))
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def tangent_frame(x):
    """Two orthonormal tangent vectors at each unit vector ``x``."""
    x = np.asarray(x, dtype=float)
    helper = np.where(np.abs(x[..., 2:3]) < 0.9, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    e1 = np.cross(helper, x)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(x, e1)
    return e1, e2


def exp_map(x, v):
    """Exponential map at ``x`` of tangent coordinates ``v`` (last axis 2)."""
    e1, e2 = tangent_frame(x)
    r = np.linalg.norm(v, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.where(r > 0, (v[..., :1] * e1 + v[..., 1:2] * e2) / np.where(r > 0, r, 1), 0.0)
    y = np.cos(r) * x + np.sin(r) * d
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# spherical harmonics

def _legendre(x, lmax, mmax):
    """Associated Legendre functions orthonormal on [-1, 1].

    Returns an array ``P[m, i, l]`` (zero for ``l < m``) with
    ``int_{-1}^{1} P[m, :, l]^2 dx = 1``.
    """
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.maximum(1.0 - x * x, 0.0))
    P = np.zeros((mmax + 1, x.size, lmax + 1))
    pmm = np.full(x.size, math.sqrt(0.5))
    for m in range(mmax + 1):
        if m > 0:
            pmm = -math.sqrt((2 * m + 1) / (2 * m)) * s * pmm
        P[m, :, m] = pmm
        if m + 1 <= lmax:
            P[m, :, m + 1] = math.sqrt(2 * m + 3) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = math.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = math.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            P[m, :, l] = a * (x * P[m, :, l - 1] - b * P[m, :, l - 2])
    return P


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Gauss-Legendre in ``cos(theta)`` times uniform azimuth.

    Node arrays are flattened row-major over ``(n_polar, n_azimuth)``.
    ``weights`` integrate against the normalized area measure and sum to one.
    Functions on the grid are expanded in spherical harmonics up to degree
    ``lmax = n_polar - 1`` and order ``mmax = min(lmax, n_azimuth // 2 - 1)``.
    """

    n_polar: int
    n_azimuth: int
    cos_theta: np.ndarray = field(repr=False)
    azimuth: np.ndarray = field(repr=False)
    polar_weights: np.ndarray = field(repr=False)

    @property
    def resolution(self):
        return (self.n_polar, self.n_azimuth)

    @property
    def size(self):
        return self.n_polar * self.n_azimuth

    @property
    def lmax(self):
        return self.n_polar - 1

    @property
    def mmax(self):
        return min(self.lmax, self.n_azimuth // 2 - 1)

    @cached_property
    def theta(self):
        return np.arccos(self.cos_theta)

    @cached_property
    def weights(self):
        w = np.repeat(self.polar_weights / (2 * self.n_azimuth), self.n_azimuth)
        w.setflags(write=False)
        return w

    @cached_property
    def points(self):
        """Unit vectors of the nodes, shape ``(size, 3)``."""
        t = np.repeat(self.theta, self.n_azimuth)
        a = np.tile(self.azimuth, self.n_polar)
        p = angles_to_vector(t, a)
        p.setflags(write=False)
        return p

    @cached_property
    def node_angles(self):
        return np.repeat(self.theta, self.n_azimuth), np.tile(self.azimuth, self.n_polar)

    @cached_property
    def homogeneous(self):
        t, a = self.node_angles
        return np.cos(t / 2).astype(complex), np.sin(t / 2) * np.exp(1j * a)

    @property
    def nodes(self):
        z0, z1 = self.homogeneous
        return [SpherePoint(a, b) for a, b in zip(z0, z1)]

    @cached_property
    def _legendre(self):
        return _legendre(self.cos_theta, self.lmax, self.mmax)

    @cached_property
    def degrees(self):
        return np.arange(self.lmax + 1)

    def integrate(self, values):
        """Quadrature against ``dsigma``; fixed summation order."""
        return float(np.dot(self.weights, np.asarray(values, dtype=float)))

    def analysis(self, values):
        """Spherical-harmonic coefficients ``C[m, l]`` of real grid values."""
        f = np.asarray(values, dtype=float).reshape(self.n_polar, self.n_azimuth)
        F = np.fft.rfft(f, axis=1)[:, : self.mmax + 1] / self.n_azimuth
        return np.einsum("mjl,j,jm->ml", self._legendre, self.polar_weights, F)

    def synthesis(self, coeffs):
        """Grid values (flattened) from coefficients ``C[m, l]``."""
        F = np.einsum("mjl,ml->jm", self._legendre, coeffs)
        full = np.zeros((self.n_polar, self.n_azimuth // 2 + 1), dtype=complex)
        full[:, : self.mmax + 1] = F
        return np.fft.irfft(full * self.n_azimuth, n=self.n_azimuth, axis=1).ravel()

    def evaluate_expansion(self, coeffs, xyz):
        """Evaluate a coefficient array at arbitrary unit vectors."""
        xyz = np.asarray(xyz, dtype=float)
        shape = xyz.shape[:-1]
        flat = xyz.reshape(-1, 3)
        out = np.empty(flat.shape[0])
        mult = np.where(np.arange(self.mmax + 1) == 0, 1.0, 2.0)
        for start in range(0, flat.shape[0], _CHUNK):
            blk = flat[start:start + _CHUNK]
            theta, az = vector_to_angles(blk)
            P = _legendre(np.cos(theta), self.lmax, self.mmax)
            A = np.einsum("mil,ml->im", P, coeffs)
            phase = np.exp(1j * np.outer(az, np.arange(self.mmax + 1)))
            out[start:start + _CHUNK] = np.real(A * phase) @ mult
        return out.reshape(shape)

    def laplacian(self, values):
        values = np.asarray(values, dtype=float)
        C = self.analysis(values - self.integrate(values))  # constants are in the kernel
        return self.synthesis(-self.degrees * (self.degrees + 1) * C)

    def to_json(self, include_nodes=False):
        doc = {"resolution": list(self.resolution)}
        if include_nodes:
            t, a = self.node_angles
            doc["nodes"] = np.stack([t, a], axis=1).tolist()
        return doc


def build_grid(n_polar=96, n_azimuth=64):
    """Quadrature grid with ``n_polar`` Gauss-Legendre rings."""
    if n_polar < 8 or n_azimuth < 8:
        raise UnderResolvedError(f"grid {n_polar}x{n_azimuth} is below the 8x8 minimum")
    x, w = np.polynomial.legendre.leggauss(n_polar)
    order = np.argsort(-x)  # north to south
    az = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
    return QuadratureGrid(int(n_polar), int(n_azimuth), x[order], az, w[order])


# --------------------------------------------------------------------------
# potentials and measures

@dataclass(frozen=True, eq=False)
class Potential:
    """A metric ``psi0 + u`` on O(2) stored by its grid values ``u``.

    ``func``, when present, evaluates ``u`` exactly at arbitrary unit vectors;
    otherwise off-grid values come from the band-limited interpolant.
    """

    grid: QuadratureGrid
    u: np.ndarray = field(repr=False)
    func: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        u = np.array(self.u, dtype=float).ravel()
        if u.size != self.grid.size:
            raise ValueError("potential values do not match the grid")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @classmethod
    def from_function(cls, grid, func):
        """Sample an exact function of unit vectors on the grid."""
        return cls(grid, func(grid.points), func)

    @cached_property
    def sup_u(self):
        return float(np.max(self.u))

    @cached_property
    def mean_u(self):
        return self.grid.integrate(self.u)

    @cached_property
    def coefficients(self):
        return self.grid.analysis(self.u)

    @cached_property
    def laplacian(self):
        return self.grid.laplacian(self.u)

    @cached_property
    def curvature_density(self):
        """Density of ``dd^c phi / V`` with respect to ``dsigma``."""
        return 1.0 + 0.5 * self.laplacian

    @property
    def is_reference(self):
        return bool(np.all(self.u == self.u[0]))

    def evaluate(self, xyz):
        """Values of ``u`` at unit vectors ``xyz`` (shape ``(..., 3)``)."""
        if self.func is not None:
            return np.asarray(self.func(np.asarray(xyz, dtype=float)), dtype=float)
        if self.is_reference:
            return np.full(np.shape(xyz)[:-1], self.u[0])
        return self.grid.evaluate_expansion(self.coefficients, xyz)

    def shifted(self, c):
        f = self.func
        return Potential(self.grid, self.u + c, None if f is None else (lambda x: f(x) + c))

    def centered(self):
        """Shift so that ``int u dsigma = 0``."""
        return self.shifted(-self.mean_u)

    def to_json(self, include_nodes=False):
        doc = self.grid.to_json(include_nodes)
        doc["values"] = self.u.tolist()
        return doc

    @classmethod
    def from_json(cls, doc, grid=None):
        grid = grid or build_grid(*doc["resolution"])
        return cls(grid, np.asarray(doc["values"], dtype=float))


@dataclass(frozen=True, eq=False)
class DensityMeasure:
    """A measure ``density * dsigma`` on the grid."""

    grid: QuadratureGrid
    density: np.ndarray = field(repr=False)
    func: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        d = np.array(self.density, dtype=float).ravel()
        if d.size != self.grid.size:
            raise ValueError("density values do not match the grid")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("density must be finite and nonnegative")
        d.setflags(write=False)
        object.__setattr__(self, "density", d)

    @cached_property
    def mass(self):
        return self.grid.integrate(self.density)

    def normalized(self):
        m = self.mass
        f = self.func
        return DensityMeasure(self.grid, self.density / m, None if f is None else (lambda x: f(x) / m))

    def integrate(self, values):
        return self.grid.integrate(self.density * np.asarray(values, dtype=float))

    @cached_property
    def coefficients(self):
        return self.grid.analysis(self.density)

    def evaluate(self, xyz):
        """Density at arbitrary unit vectors (exact or band-limited)."""
        if self.func is not None:
            return np.asarray(self.func(np.asarray(xyz, dtype=float)), dtype=float)
        return self.grid.evaluate_expansion(self.coefficients, xyz)

    def to_csv(self, path):
        t, a = self.grid.node_angles
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "polar", "azimuth", "density"])
            for i in range(self.grid.size):
                w.writerow([i, repr(float(t[i])), repr(float(a[i])), repr(float(self.density[i]))])

    @classmethod
    def from_csv(cls, path, grid):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(grid, np.array([float(r["density"]) for r in rows]))


def reference_metric(grid=None):
    """The round metric ``psi0`` (``u = 0``) on ``grid`` (default 96x64)."""
    grid = grid or build_grid()
    return Potential(grid, np.zeros(grid.size), lambda x: np.zeros(np.shape(x)[:-1]))


def uniform_measure(grid):
    return DensityMeasure(grid, np.ones(grid.size), lambda x: np.ones(np.shape(x)[:-1]))


def ma_measure(phi):
    """Normalized Monge-Ampere measure of ``phi``."""
    dens = phi.curvature_density
    bad = dens <= POSITIVITY_TOL
    if np.any(bad):
        raise CurvatureError(
            f"curvature is not positive at {int(bad.sum())} nodes (min density {dens.min():.3e})")
    return DensityMeasure(phi.grid, dens)


def solve_curvature_equation(mu, residual_tol=1e-6):
    """Potential ``phi`` with ``MA(phi) = mu`` and ``int u dsigma = 0``.

    This is the linear problem ``lap(u) = 2 (f - 1)`` solved spectrally.
    Content of ``f`` above the grid band limit cannot be represented; when the
    resulting residual exceeds ``residual_tol`` a :class:`ConvergenceError`
    is raised (pass ``None`` to skip the check).
    """
    if abs(mu.mass - 1.0) > 1e-8:
        raise MassError(f"measure has mass {mu.mass!r}, expected 1")
    if np.any(mu.density <= 0):
        raise ValueError("density must be strictly positive")
    grid = mu.grid
    d = grid.degrees.astype(float)
    C = grid.analysis(2.0 * (mu.density - 1.0))
    inv = np.zeros_like(d)
    inv[1:] = -1.0 / (d[1:] * (d[1:] + 1))
    u = grid.synthesis(C * inv)
    phi = Potential(grid, u)
    if residual_tol is not None:
        res = float(np.max(np.abs(phi.curvature_density - mu.density)))
        if not np.isfinite(res) or res > residual_tol:
            raise ConvergenceError(
                f"curvature solve residual {res:.2e} exceeds {residual_tol:.0e}", best=phi, residual=res)
    return phi


def entropy(mu, nu):
    """Relative entropy ``int log(dmu/dnu) dmu``; ``inf`` if not abs. continuous."""
    f, g = mu.density, nu.density
    pos = f > 0
    if np.any(pos & (g <= 0)):
        return math.inf
    terms = np.zeros_like(f)
    terms[pos] = f[pos] * np.log(f[pos] / g[pos])
    return mu.grid.integrate(terms)


# --------------------------------------------------------------------------
# test and preset potentials

def fs_potential(grid, A):
    """``u = 2 log |A z|^2``: the pull-back of the round metric by ``A``.

    O(2) metrics scale like ``|z|^4``, hence the factor two.
    """
    A = np.asarray(A, dtype=complex)

    def f(x):
        z0, z1 = homogeneous(x)
        return 2 * np.log(np.abs(A[0, 0] * z0 + A[0, 1] * z1) ** 2 + np.abs(A[1, 0] * z0 + A[1, 1] * z1) ** 2)

    return Potential.from_function(grid, f)


def fs_density(A):
    """Exact MA density of :func:`fs_potential` as a function of unit vectors."""
    A = np.asarray(A, dtype=complex)
    det2 = abs(np.linalg.det(A)) ** 2

    def f(x):
        z0, z1 = homogeneous(x)
        n = np.abs(A[0, 0] * z0 + A[0, 1] * z1) ** 2 + np.abs(A[1, 0] * z0 + A[1, 1] * z1) ** 2
        return det2 / n ** 2

    return f


def bump_potential(grid, amplitude, center=(0.0, 0.0), concentration=2.0):
    """Smooth bump ``a exp(kappa (x.c - 1))`` centred at polar angles ``center``."""
    c = angles_to_vector(*center)

    def f(x):
        return amplitude * np.exp(concentration * (np.asarray(x) @ c - 1.0))

    return Potential.from_function(grid, f)


def bump_laplacian(amplitude, center=(0.0, 0.0), concentration=2.0):
    """Exact round Laplacian of :func:`bump_potential`."""
    c = angles_to_vector(*center)
    k = concentration

    def f(x):
        t = np.asarray(x) @ c
        return amplitude * np.exp(k * (t - 1.0)) * (k * k * (1 - t * t) - 2 * k * t)

    return f


def combine(potentials, weights):
    """Convex combination of potentials on a common grid."""
    weights = np.asarray(weights, dtype=float)
    grid = potentials[0].grid
    u = sum(w * p.u for w, p in zip(weights, potentials))
    funcs = [p.func for p in potentials]
    func = None
    if all(f is not None for f in funcs):
        def func(x):
            return sum(w * f(x) for w, f in zip(weights, funcs))
    return Potential(grid, u, func)


def random_su2(rng):
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    a, b = complex(q[0], q[3]), complex(q[2], q[1])
    return np.array([[a, -b.conjugate()], [b, a.conjugate()]])


def random_potential(grid, rng, strength=0.4, bump=0.15):
    """A random positively curved test potential.

    Convex combination of two or three pulled-back round metrics with
    bounded distortion, plus a small bump; curvature is checked.
    """
    for _ in range(100):
        parts = []
        for _ in range(int(rng.integers(2, 4))):
            d = np.exp(strength * rng.uniform(-1, 1))
            A = random_su2(rng) @ np.diag([d, 1 / d]) @ random_su2(rng)
            parts.append(fs_potential(grid, A))
        w = rng.dirichlet(np.ones(len(parts)))
        b = bump_potential(grid, bump * rng.uniform(-1, 1),
                           (np.arccos(rng.uniform(-1, 1)), rng.uniform(0, 2 * np.pi)), 2.0)
        phi = combine(parts + [b], np.append(w, 1.0))
        if np.min(phi.curvature_density) > 0.05:
            return phi
    raise RuntimeError("could not draw a positively curved potential")


def random_density(grid, rng, strength=0.6):
    """A random smooth probability density (an FS pull-back density)."""
    d = np.exp(strength * rng.uniform(-1, 1))
    A = random_su2(rng) @ np.diag([d, 1 / d]) @ random_su2(rng)
    f = fs_density(A)
    return DensityMeasure(grid, f(grid.points), f).normalized()  # exact mass is 1; removes quadrature error


def normalized_volume(phi0):
    """Shift a potential so that ``e^{-phi0}`` has unit mass."""
    return phi0.shifted(math.log(phi0.grid.integrate(np.exp(-phi0.u))))


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
