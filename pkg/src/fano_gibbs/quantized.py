"""Hermitian metrics on sections: Fubini-Study map, Bergman measures,
quantized Ding functional, Donaldson iteration and coercivity rays.

Matrices are expressed in the reference orthonormal basis with the
convention ``H_ij = <s_i, s_j> = int conj(s_i) s_j``.  For such a matrix the
pointwise Bergman sum is ``K_H(x) = E(x) H^{-1} E(x)^*`` where ``E(x)`` is
the row of basis values in the ``k psi0`` frame, and
``FS(H) = psi0 + log(K_H / N) / k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.optimize
from scipy.special import gammaln, logsumexp

from .errors import ConvergenceError, MonotonicityError
from .functionals import _bergman_weights, _log_integral, twisted_gram
from .sphere import Potential, homogeneous, random_su2, to_vector


@dataclass(frozen=True, eq=False)
class HermitianMetricK:
    """Positive definite Hermitian ``N x N`` matrix."""

    k: int
    H: np.ndarray = field(repr=False)

    def __post_init__(self):
        H = np.array(self.H, dtype=complex)
        if H.shape != (2 * self.k + 1,) * 2:
            raise ValueError("matrix size must be 2k+1")
        if np.max(np.abs(H - H.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(H))):
            raise ValueError("matrix is not Hermitian")
        H = (H + H.conj().T) / 2
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        self.cholesky  # raises LinAlgError if not positive definite

    @property
    def N(self):
        return 2 * self.k + 1

    @cached_property
    def cholesky(self):
        return np.linalg.cholesky(self.H)

    @cached_property
    def logdet(self):
        return float(2 * np.sum(np.log(np.real(np.diag(self.cholesky)))))

    def scaled(self, c):
        """``e^c H``."""
        return HermitianMetricK(self.k, math.exp(c) * self.H)

    @cached_property
    def condition(self):
        return float(np.linalg.cond(self.H))

    def to_json(self):
        return {"k": self.k, "H": [[[float(v.real), float(v.imag)] for v in row] for row in self.H]}

    @classmethod
    def from_json(cls, doc):
        a = np.array(doc["H"], dtype=float)
        return cls(int(doc["k"]), a[..., 0] + 1j * a[..., 1])


def identity_metric(k):
    return HermitianMetricK(k, np.eye(2 * k + 1))


def random_metric(k, rng):
    """``G G^*`` with standard complex Gaussian ``G``."""
    N = 2 * k + 1
    G = (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / math.sqrt(2)
    return HermitianMetricK(k, G @ G.conj().T)


def expm_hermitian(A):
    w, V = np.linalg.eigh(A)
    return (V * np.exp(w)) @ V.conj().T


def logm_hermitian(H):
    w, V = np.linalg.eigh(H)
    return (V * np.log(w)) @ V.conj().T


@dataclass(frozen=True, eq=False)
class BergmanDensity:
    """``rho = (1/N) sum |S_i|^2_{k phi}`` and ``B = rho * nu`` on the grid."""

    rho: np.ndarray = field(repr=False)
    measure_density: np.ndarray = field(repr=False)
    mass: float
    fs_gap: float  # max |rho - e^{k (FS - phi)}|


def gram(phi, mu, basis):
    """Gram matrix of ``basis`` for ``k phi`` and the measure ``mu``."""
    G = (basis.values(*phi.grid.homogeneous).conj().T * (phi.grid.weights * np.exp(-basis.k * phi.u) * mu.density)) \
        @ basis.values(*phi.grid.homogeneous)
    try:
        return HermitianMetricK(basis.k, G)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Gram matrix lost positive definiteness (under-resolved grid)") from exc


def bergman_kernel_values(H, E):
    """``E H^{-1} E^*`` row by row for a block of basis values ``E``."""
    Z = np.linalg.solve(H.cholesky, E.conj().T)
    return np.sum(np.abs(Z) ** 2, axis=0)


def fs_map(H, basis, grid):
    """Potential ``FS(H)`` on ``grid``, exact off the grid as well."""
    N, k = basis.N, basis.k

    def func(xyz):
        xyz = np.asarray(xyz, dtype=float)
        E = basis.values_at(xyz.reshape(-1, 3))
        return (np.log(bergman_kernel_values(H, E) / N) / k).reshape(xyz.shape[:-1])

    E = basis.values(*grid.homogeneous)
    return Potential(grid, np.log(bergman_kernel_values(H, E) / N) / k, func)


def bergman_density(phi, p, basis):
    """Bergman data for ``phi`` and the twisted volume of ``p``."""
    values = basis.values(*phi.grid.homogeneous)
    rho, nu, G = _bergman_weights(phi.u, p, basis, values)
    fs = fs_map(HermitianMetricK(basis.k, G), basis, phi.grid)
    gap = float(np.max(np.abs(rho - np.exp(basis.k * (fs.u - phi.u)))))
    B = rho * nu
    return BergmanDensity(rho, B, phi.grid.integrate(B), gap)


def _fs_log_integral(fs, p):
    return _log_integral(fs.grid, p.log_twisted_weight(fs.u))


def quantized_ding(H, p, basis):
    """``log det H / (k N) - log int e^{-(gamma FS(H) + (1-gamma) phi0)} / gamma``."""
    fs = fs_map(H, basis, p.grid)
    return H.logdet / (basis.k * basis.N) - _fs_log_integral(fs, p) / p.gamma


def donaldson_map(H, p, basis):
    fs = fs_map(H, basis, p.grid)
    return HermitianMetricK(basis.k, twisted_gram(fs, p, basis))


def donaldson_step(H, p, basis, tol=1e-10):
    """One step of Donaldson's map, checking that the functional does not increase.

    The image is rescaled to unit determinant; the functional is scale
    invariant, while unnormalized iterates drift geometrically in scale.
    """
    T = _normalized(donaldson_map(H, p, basis))
    before, after = quantized_ding(H, p, basis), quantized_ding(T, p, basis)
    if after > before + tol:
        raise MonotonicityError(f"functional increased by {after - before:.3e}")
    return T


def fixed_point_residual(H, T):
    lam = np.real(np.vdot(H.H, T.H)) / np.real(np.vdot(H.H, H.H))
    return float(np.linalg.norm(T.H - lam * H.H) / np.linalg.norm(lam * H.H))


def _ding_and_gradient(H, p, basis):
    """Value and log-chart gradient at ``H = C C^*`` (``C`` Cholesky factor)."""
    grid, k, N = p.grid, basis.k, basis.N
    E = basis.values(*grid.homogeneous)
    K = bergman_kernel_values(H, E)
    u = np.log(K / N) / k
    log_nu = p.log_twisted_weight(u)
    m = log_nu.max()
    nu = np.exp(log_nu - m)
    Z = grid.integrate(nu)
    value = H.logdet / (k * N) - (m + math.log(Z)) / p.gamma
    w = grid.weights * nu / (Z * K)
    M = (E.conj().T * w) @ E
    Ci = np.linalg.inv(H.cholesky)
    grad = (np.eye(N) / N - Ci @ M @ Ci.conj().T) / k
    return value, (grad + grad.conj().T) / 2


@dataclass(frozen=True, eq=False)
class QuantizedMinimum:
    """Result of :func:`minimize_quantized_ding`.

    ``diverged`` flags a minimizing sequence escaping to infinity in the cone
    (condition number beyond ``cond_max``); ``ray`` is then the normalized
    trace-free log of the last iterate.
    """

    metric: HermitianMetricK
    value: float
    diverged: bool
    ray: np.ndarray | None = field(repr=False, default=None)
    iterations: int = 0
    trace: list = field(repr=False, default_factory=list)

    def __iter__(self):
        return iter((self.metric, self.value))


def _normalized(H):
    return HermitianMetricK(H.k, H.H / math.exp(H.logdet / H.N))


def _ray_of(H):
    A = logm_hermitian(H.H)
    A -= np.trace(A).real / H.N * np.eye(H.N)
    return A / np.linalg.norm(A)


def minimize_quantized_ding(p, basis, tol=1e-12, start=None, seed=0, max_donaldson=2000,
                            max_polish=500, grad_tol=1e-9, cond_max=1e6):
    """Infimum of the quantized Ding functional over Hermitian metrics.

    Donaldson iteration until the relative decrease falls below ``tol``,
    then gradient descent in the chart ``H = C exp(A) C^*`` with Armijo
    backtracking.  Without ``start`` a small deterministic perturbation of the
    identity is used so that unstable symmetric critical points are left.
    """
    k, N = basis.k, basis.N
    if start is None:
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))
        A = (A + A.conj().T) / 2
        start = HermitianMetricK(k, expm_hermitian(1e-2 * A / np.linalg.norm(A)))
    H = _normalized(start)
    value = quantized_ding(H, p, basis)
    trace = [(0, value, math.nan)]
    diverged = False
    n = 0
    for n in range(1, max_donaldson + 1):
        T = _normalized(donaldson_map(H, p, basis))
        new = quantized_ding(T, p, basis)
        if new > value + 1e-10:
            raise MonotonicityError(f"Donaldson step increased the functional by {new - value:.3e}")
        res = fixed_point_residual(H, T)
        H, decrease, value = T, value - new, new
        trace.append((n, value, res))
        if H.condition > cond_max:
            diverged = True
            break
        if decrease <= tol * max(1.0, abs(value)):
            break
    if not diverged:
        step = float(k * N)
        for _ in range(max_polish):
            value, G = _ding_and_gradient(H, p, basis)
            gnorm = float(np.linalg.norm(G))
            if gnorm < grad_tol:
                break
            C = H.cholesky
            while step > 1e-14:
                trial = _normalized(HermitianMetricK(k, C @ expm_hermitian(-step * G) @ C.conj().T))
                new = quantized_ding(trial, p, basis)
                if new <= value - 1e-4 * step * gnorm ** 2:
                    break
                step /= 2
            else:
                break
            H, value = trial, new
            step *= 2
            n += 1
            trace.append((n, value, gnorm))
            if H.condition > cond_max:
                diverged = True
                break
    return QuantizedMinimum(H, value, diverged, _ray_of(H) if diverged else None, n, trace)


# --------------------------------------------------------------------------
# rays and the coercivity threshold

RAY_TIMES = (6.0, 8.0, 10.0)


def rotation_matrix(basis, M):
    """Unitary ``U`` with ``E(M z) = E(z) U`` for ``M`` in SU(2)."""
    rng = np.random.default_rng(12345)
    z = rng.standard_normal((3 * basis.N, 2)) + 1j * rng.standard_normal((3 * basis.N, 2))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    w = z @ M.T
    E0 = basis.values(z[:, 0], z[:, 1])
    E1 = basis.values(w[:, 0], w[:, 1])
    return np.linalg.lstsq(E0, E1, rcond=None)[0]


def ray_metric(basis, M, lam, t):
    """``H_t = U e^{t Lambda} U^*`` for the rotation ``M`` and diagonal ``lam``."""
    U = rotation_matrix(basis, M)
    return HermitianMetricK(basis.k, (U * np.exp(t * np.asarray(lam))) @ U.conj().T)


class RayQuadrature:
    """Quantized Ding functional along diagonal rays in a rotated frame.

    Along ``H_t`` the Bergman sum at ``z`` equals the diagonal sum at
    ``y = M z``.  The integral is taken over ``y`` in coordinates
    ``s = log(|y1|^2 / |y0|^2)`` and azimuth, where concentration of the
    diagonal sum near the poles is resolved uniformly in ``t``.
    """

    def __init__(self, k, phi0, M=None, n_s=4001, n_azimuth=24, s_pad=80.0):
        self.k, self.N = k, 2 * k + 1
        self.phi0 = phi0
        self.M = np.eye(2) if M is None else np.asarray(M)
        self.n_s, self.s_pad = n_s, s_pad
        self.n_az = 1 if phi0.is_reference else n_azimuth
        j = np.arange(self.N)
        self.log_binom = gammaln(2 * k + 1) - gammaln(j + 1) - gammaln(2 * k - j + 1)
        self._cache = {}

    def _nodes(self, S):
        key = round(S, 6)
        if key not in self._cache:
            s = np.linspace(-S, S, self.n_s)
            ds = s[1] - s[0]
            log_w = -2 * np.logaddexp(s / 2, -s / 2) + math.log(ds)
            az = 2 * np.pi * np.arange(self.n_az) / self.n_az
            if self.n_az == 1:
                u0 = np.full((self.n_s, 1), float(self.phi0.u[0]))
            else:
                y0 = np.exp(-0.5 * np.logaddexp(0, s))[:, None] * np.ones(self.n_az)
                y1 = np.exp(-0.5 * np.logaddexp(0, -s))[:, None] * np.exp(1j * az)[None, :]
                Mi = np.linalg.inv(self.M)
                z0 = Mi[0, 0] * y0 + Mi[0, 1] * y1
                z1 = Mi[1, 0] * y0 + Mi[1, 1] * y1
                u0 = self.phi0.evaluate(to_vector(z0, z1))
            self._cache[key] = (s, log_w - math.log(self.n_az), u0)
        return self._cache[key]

    def ding(self, lam, t, gamma):
        """Functional at ``H_t`` for trace-zero ``lam`` (``log det H_t = 0``)."""
        lam = np.asarray(lam, dtype=float)
        S = t * np.ptp(lam) + self.s_pad
        s, log_w, u0 = self._nodes(S)
        j = np.arange(self.N)
        log_p0 = -np.logaddexp(0, s)        # log |y0|^2
        log_p1 = -np.logaddexp(0, -s)       # log |y1|^2
        terms = self.log_binom - t * lam + j * log_p0[:, None] + (2 * self.k - j) * log_p1[:, None]
        u_fs = logsumexp(terms, axis=1) / self.k
        expo = -gamma * u_fs[:, None] - (1 - gamma) * u0 + log_w[:, None]
        return -logsumexp(expo) / gamma + t * lam.sum() / (self.k * self.N)

    def slope(self, lam, gamma, times=RAY_TIMES):
        """Asymptotic slope from a fit ``a + b t + c log t``."""
        A = np.array([[1.0, t, math.log(t)] for t in times])
        y = np.array([self.ding(lam, t, gamma) for t in times])
        return float(np.linalg.solve(A, y)[1])


def trace_free_frame(N):
    """Orthonormal basis of trace-zero diagonals, shape ``(N, N-1)``."""
    Q, _ = np.linalg.qr(np.column_stack([np.ones(N), np.eye(N)[:, : N - 1]]))
    return Q[:, 1:]


@dataclass(frozen=True)
class RayThreshold:
    gamma: float
    lam: tuple
    slope_check: float


def _min_slope(quad, P, a0, gamma):
    f = lambda a: quad.slope(P @ a / np.linalg.norm(a), gamma)
    res = scipy.optimize.minimize(f, a0, method="Nelder-Mead",
                                  options={"xatol": 1e-5, "fatol": 1e-8, "maxiter": 400 * len(a0)})
    return float(res.fun), res.x / np.linalg.norm(res.x)


def ray_threshold(k, phi0, seed, bracket=(0.5, 2.0), width=0.004):
    """Largest ``gamma`` at which one ray family keeps a positive minimal slope.

    The family is the set of diagonal rays in the frame rotated by a Haar
    random ``M`` (keyed by ``seed``); the minimal slope over directions is
    found by Nelder-Mead from a random start and warm-started along the
    bisection in ``gamma``.
    """
    rng = np.random.default_rng([seed, k])
    M = random_su2(rng)
    quad = RayQuadrature(k, phi0, M)
    N = 2 * k + 1
    P = trace_free_frame(N)
    a = rng.standard_normal(N - 1)
    a /= np.linalg.norm(a)
    lo, hi = bracket
    s_lo, a = _min_slope(quad, P, a, lo)
    if s_lo <= 0:
        return RayThreshold(lo, tuple(P @ a), math.nan)
    s_hi, a_hi = _min_slope(quad, P, a, hi)
    if s_hi > 0:
        raise ConvergenceError(f"slopes stay positive up to gamma={hi}")
    while hi - lo > width:
        mid = (lo + hi) / 2
        s, a_mid = _min_slope(quad, P, a, mid)
        if s > 0:
            lo, a = mid, a_mid
        else:
            hi, a_hi = mid, a_mid
    lam = P @ a_hi
    check = quad.slope(lam, hi, times=(8.0, 10.0, 12.0)) - quad.slope(lam, hi)
    if abs(check) > 1e-3:
        raise ConvergenceError(f"ray slope not converged in t (drift {check:.2e})")
    return RayThreshold((lo + hi) / 2, tuple(lam), check)


def delta_k_estimate(k, p, n_rays=8, seed=0, detail=False):
    """Coercivity threshold of the quantized Ding functional along rays.

    Returns the minimum over ``n_rays`` ray families of the per-family
    threshold, so the estimate is non-increasing in ``n_rays`` for a fixed
    ``seed``.
    """
    if n_rays < 8:
        raise ValueError("n_rays must be at least 8")
    per_ray = [ray_threshold(k, p.phi0, seed * 100003 + i) for i in range(n_rays)]
    est = min(r.gamma for r in per_ray)
    return (est, per_ray) if detail else est
