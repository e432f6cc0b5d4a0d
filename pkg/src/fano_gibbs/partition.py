"""Partition functions of the determinantal point process and the verifiers
built on them.

With respect to ``dsigma^N`` the partition function at ``beta = -gamma`` is

    Z = int ||det S||_{k psi0}^{-2 gamma / k} prod_j e^{-(1 - gamma) u0(x_j)},

where ``u0 = phi0 - psi0``.  Slater determinants are evaluated through the
pairwise chordal distances (see :mod:`fano_gibbs.sections`).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.integrate
from scipy.special import digamma, gamma as gamma_fn, gammaln, hyp2f1, logsumexp

from .functionals import (GammaParams, inf_mabuchi, minimize_ding_k, scaled_ding_k, solve_aubin)
from .errors import ConvergenceError
from .quantized import minimize_quantized_ding
from .sections import log_det_norm_sq
from .sphere import exp_map, geodesic, uniform_points

METHODS = ("tensor_quadrature", "monte_carlo", "determinant_identity")


@dataclass(frozen=True)
class PartitionEstimate:
    """Estimate of ``log Z``.

    ``log_z`` is ``inf`` when the estimator's own divergence diagnostics fire;
    ``raw_log_z`` then keeps the finite-sample value.
    """

    log_z: float
    stderr: float
    method: str
    n_samples: int
    gamma: float
    k: int
    tail_index: float = math.inf
    raw_log_z: float = math.nan

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if (self.stderr == 0) != (self.method == "determinant_identity"):
            raise ValueError("stderr is zero exactly for the determinant identity")

    @property
    def converged(self):
        return math.isfinite(self.log_z)

    def to_json(self):
        return {k: (v if not isinstance(v, float) or math.isfinite(v) else repr(v)) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class ThresholdEstimate:
    gamma_low: float
    gamma_high: float
    evidence: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if not self.gamma_low < self.gamma_high:
            raise ValueError("empty bracket")

    def contains(self, value):
        return self.gamma_low <= value <= self.gamma_high

    @property
    def width(self):
        return self.gamma_high - self.gamma_low


def batch_rng(seed, batch):
    """Counter-based stream keyed by ``(seed, batch)``."""
    return np.random.Generator(np.random.Philox(key=np.array([seed, batch], dtype=np.uint64)))


# --------------------------------------------------------------------------
# exact values

def z_determinant_oracle(k, phi, mu, basis):
    """``log(N! det Gram(phi, mu))``: the partition function at exponent two."""
    from .quantized import gram
    if basis.k != k:
        raise ValueError("basis degree does not match k")
    return float(gammaln(basis.N + 1) + gram(phi, mu, basis).logdet)


def z_quadrature_k1(p, basis, epsabs=1e-9, epsrel=1e-7):
    """``log Z`` for ``k = 1`` and round ``phi0`` by reduction to a 2-D integral.

    One point is fixed at the north pole (rotation invariance); the azimuth
    of the second relative to the third is integrated with

        (1/2pi) int (a - b cos t)^{-q} dt = a^{-q} 2F1(q/2, q/2 + 1/2; 1; b^2/a^2),

    leaving an integral over ``t = sin^2(theta/2)`` of the other two points.
    By symmetry only ``t3 = s t2 < t2`` is integrated; the corner factor
    ``t2^(1 - 3q)`` is handled by an algebraic-weight rule and the diagonal
    ``s = 1`` by the singular expansion of the hypergeometric function.
    """
    if basis.k != 1:
        raise ValueError("quadrature path is implemented for k = 1")
    if not p.phi0.is_reference:
        raise ValueError("quadrature path requires the round volume form")
    q = p.gamma / basis.k

    def inner(s, t2):
        c = 1 + s - 2 * t2 * s
        return s ** (-q) * c ** (-q) * _hyp_near_one(q, ((1 - s) / c) ** 2)

    def outer(t2):
        return scipy.integrate.quad(inner, 0.0, 1.0, args=(t2,), epsabs=epsabs, epsrel=epsrel, limit=200)[0]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.integrate.IntegrationWarning)
        val, err = scipy.integrate.quad(outer, 0.0, 1.0, weight="alg", wvar=(1 - 3 * q, 0.0),
                                        epsabs=epsabs, epsrel=epsrel, limit=200)
    val, err = 2 * val, 2 * err
    # common factor: basis constant (norm of the product) and the uniform u0
    u0 = float(p.phi0.u[0])
    log_c = -q * basis.log_det_constant - (1 - p.gamma) * basis.N * u0
    return PartitionEstimate(log_c + math.log(val), max(err / val, 1e-15), "tensor_quadrature",
                             0, p.gamma, basis.k)


def _hyp_near_one(q, one_minus_z):
    """``2F1(q/2, q/2 + 1/2; 1; z)`` with the leading singular term near ``z = 1``."""
    if one_minus_z > 1e-8:
        return hyp2f1(q / 2, q / 2 + 0.5, 1.0, 1.0 - one_minus_z)
    a, b = q / 2, q / 2 + 0.5
    s = 0.5 - q
    w = max(one_minus_z, 1e-300)
    if abs(s) < 1e-12:
        return (-math.log(w) + 2 * digamma(1.0) - digamma(a) - digamma(b)) / (gamma_fn(a) * gamma_fn(b))
    if s < 0:
        return gamma_fn(-s) / (gamma_fn(a) * gamma_fn(b)) * w ** s
    return gamma_fn(s) / (gamma_fn(1 - a) * gamma_fn(1 - b))


# --------------------------------------------------------------------------
# Monte Carlo

def _log_sphere_area(d):
    """Log area of the unit sphere ``S^{d-1}`` in ``R^d``."""
    return math.log(2) + (d / 2) * math.log(math.pi) - gammaln(d / 2)


def _cluster_pair_sq(v):
    """Squared chordal distances of ``exp_x(v_a)`` from tangent offsets ``v`` (``(n, N, 2)``).

    Uses ``|y_a - y_b|^2 = (cos r_a - cos r_b)^2 + |sinc(r_a) v_a - sinc(r_b) v_b|^2``,
    which stays accurate for offsets far below the spacing of unit vectors.
    """
    r = np.linalg.norm(v, axis=-1)
    s = np.sinc(r / math.pi)
    sv = s[..., None] * v
    ra, rb = r[:, :, None], r[:, None, :]
    normal = -2 * np.sin((ra + rb) / 2) * np.sin((ra - rb) / 2)
    tangent = np.sum((sv[:, :, None, :] - sv[:, None, :, :]) ** 2, axis=-1)
    return normal ** 2 + tangent


def _pair_sq(x):
    return np.sum((x[:, :, None, :] - x[:, None, :, :]) ** 2, axis=-1)


class _Sampler:
    """Mixture proposal: ``e^{-phi0}`` per point, plus an anchored cluster law.

    The cluster component places the anchor uniformly and the remaining
    points at ``exp(r w)`` with ``w`` uniform on the unit sphere of the
    tangent space ``R^{2(N-1)}`` and ``r`` of density proportional to
    ``r^{b-1}`` on ``[0, r_max]``.  With ``b`` equal to minus the cluster
    scaling exponent, importance weights stay bounded in the collapsing
    direction; when the integrand is not integrable the weights acquire a
    tail index below one.  Pairwise distances of clustered draws are
    computed from the tangent offsets so that arbitrarily tight clusters
    keep exact weights.
    """

    def __init__(self, p, basis, cluster_fraction, r_max=1.0):
        self.p, self.basis = p, basis
        self.N, self.k = basis.N, basis.k
        self.u0 = p.phi0
        self.log_vol_max = float(np.max(-p.phi0.u))
        self.log_mass = math.log(p.grid.integrate(np.exp(-p.phi0.u)))
        kappa = (self.N - 1) * (p.gamma * self.N / self.k - 2)
        self.b = float(np.clip(-kappa, 0.25, 2 * self.N - 2))
        self.fraction = cluster_fraction if p.gamma > 0 else 0.0
        self.r_max = r_max
        self.d = 2 * (self.N - 1)

    def _base_points(self, rng, n):
        """``n x N`` points i.i.d. from the normalized ``e^{-phi0}`` (rejection)."""
        out = np.empty((n * self.N, 3))
        filled = 0
        if self.u0.is_reference:
            return uniform_points(rng, (n, self.N))
        while filled < out.shape[0]:
            m = 2 * (out.shape[0] - filled) + 64
            x = uniform_points(rng, m)
            acc = np.log(rng.random(m)) < -self.u0.evaluate(x) - self.log_vol_max
            x = x[acc][: out.shape[0] - filled]
            out[filled:filled + len(x)] = x
            filled += len(x)
        return out.reshape(n, self.N, 3)

    def _cluster_points(self, rng, n):
        anchor = uniform_points(rng, n)
        w = rng.standard_normal((n, self.d))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        r = np.maximum(self.r_max * rng.random(n) ** (1.0 / self.b), 1e-100)
        v = (r[:, None] * w).reshape(n, self.N - 1, 2)
        others = exp_map(anchor[:, None, :].repeat(self.N - 1, axis=1), v)
        x = np.concatenate([anchor[:, None, :], others], axis=1)
        D = _cluster_pair_sq(np.concatenate([np.zeros((n, 1, 2)), v], axis=1))
        # random anchor slot keeps the law symmetric
        slot = rng.integers(0, self.N, n)
        idx = (np.arange(self.N)[None, :] + slot[:, None]) % self.N
        x = np.take_along_axis(x, idx[..., None], axis=1)
        D = np.take_along_axis(np.take_along_axis(D, idx[:, :, None], axis=1), idx[:, None, :], axis=2)
        return x, D

    def _log_cluster_density(self, D):
        """Log density of the symmetrized cluster law with respect to ``dsigma^N``."""
        terms = []
        log_norm = math.log(self.b) - self.b * math.log(self.r_max) - _log_sphere_area(self.d)
        for i in range(self.N):
            chord = np.sqrt(np.delete(D[:, i, :], i, axis=1))
            dist = 2 * np.arcsin(np.minimum(chord / 2, 1.0))
            r = np.sqrt(np.sum(dist ** 2, axis=1))
            with np.errstate(divide="ignore"):
                jac = np.sum(math.log(4 * math.pi) - np.log(np.sinc(dist / math.pi)), axis=1)
                val = log_norm + (self.b - 1 - (self.d - 1)) * np.log(r) + jac
            terms.append(np.where(r <= self.r_max, val, -np.inf))
        return logsumexp(np.stack(terms), axis=0) - math.log(self.N)

    def draw(self, rng, n):
        """Configurations, their ``u0`` values, log proposal density and pair distances."""
        n_cl = int(round(self.fraction * n))
        x = self._base_points(rng, n - n_cl)
        D = _pair_sq(x)
        if n_cl:
            xc, Dc = self._cluster_points(rng, n_cl)
            x = np.concatenate([x, xc], axis=0)
            D = np.concatenate([D, Dc], axis=0)
        u = None if self.u0.is_reference else self.u0.evaluate(x)
        if u is None:
            log_base = np.full(n, -self.N * (float(self.u0.u[0]) + self.log_mass))
        else:
            log_base = -np.sum(u, axis=1) - self.N * self.log_mass
        if self.fraction > 0:
            log_q = np.logaddexp(math.log1p(-self.fraction) + log_base,
                                 math.log(self.fraction) + self._log_cluster_density(D))
        else:
            log_q = log_base
        return x, u, log_q, D


def log_integrand(p, basis, x, u=None, pair_sq=None):
    """Log of the partition-function integrand with respect to ``dsigma^N``.

    ``pair_sq`` optionally supplies squared chordal distances ``(..., N, N)``
    in place of those computed from ``x``.
    """
    if pair_sq is None:
        L = log_det_norm_sq(basis, x)
    else:
        a, b = np.triu_indices(basis.N, 1)
        with np.errstate(divide="ignore"):
            L = basis.log_det_constant + np.sum(np.log(pair_sq[..., a, b] / 4), axis=-1)
    val = -(p.gamma / basis.k) * L
    if u is None:
        return val - (1 - p.gamma) * basis.N * float(p.phi0.u[0])
    return val - (1 - p.gamma) * np.sum(u, axis=-1)


def hill_tail_index(log_w, top=None):
    """Hill estimator of the tail index from log importance weights."""
    log_w = np.sort(np.asarray(log_w)[np.isfinite(log_w)])[::-1]
    m = top or max(50, int(math.sqrt(len(log_w))))
    m = min(m, len(log_w) - 1)
    excess = log_w[:m] - log_w[m]
    mean = float(np.mean(excess))
    return math.inf if mean <= 0 else 1.0 / mean


def z_estimate(p, basis, budget=10 ** 6, seed=0, n_batches=32, cluster_fraction=0.3,
               method="monte_carlo"):
    """Estimate ``log Z`` at ``beta = -p.gamma``.

    Monte Carlo uses i.i.d. draws from ``e^{-phi0}`` per point, mixed for
    ``gamma > 0`` with a cluster proposal; aggregation is log-sum-exp and the
    error is from batch means.  The estimate is declared divergent
    (``log_z = inf``) when the Hill tail index of the weights is below one.
    """
    if method == "tensor_quadrature":
        return z_quadrature_k1(p, basis)
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    sampler = _Sampler(p, basis, cluster_fraction)
    per = max(1, budget // n_batches)
    log_ws = []
    for b in range(n_batches):
        rng = batch_rng(seed, b)
        for start in range(0, per, 1 << 16):
            n = min(1 << 16, per - start)
            x, u, log_q, D = sampler.draw(rng, n)
            log_ws.append(log_integrand(p, basis, x, u, D) - log_q)
    log_w = np.concatenate(log_ws).reshape(n_batches, per)
    batch = logsumexp(log_w, axis=1) - math.log(per)
    log_z = float(logsumexp(batch) - math.log(n_batches))
    rel = np.exp(batch - log_z)
    stderr = float(np.std(rel, ddof=1) / math.sqrt(n_batches))
    alpha = hill_tail_index(log_w.ravel())
    value = log_z if alpha > 1.0 else math.inf
    return PartitionEstimate(value, stderr if alpha > 1.0 else math.inf, "monte_carlo", per * n_batches,
                             p.gamma, basis.k, alpha, log_z)


# --------------------------------------------------------------------------
# integrability threshold

def cluster_shell_masses(p, basis, eps, gammas, n_samples=20000, seed=0):
    """Log masses of the partition integrand over cluster-radius shells.

    Configurations are an anchor plus ``N - 1`` points at ``exp(r w)``,
    ``w`` uniform on the unit sphere of ``R^{2(N-1)}``; shell ``j`` collects
    radii in ``[eps[j+1], eps[j]]``.  The same random numbers are used for
    every shell and every ``gamma``.
    """
    N, k = basis.N, basis.k
    d = 2 * (N - 1)
    rng = batch_rng(seed, 0)
    anchor = uniform_points(rng, n_samples)
    w = rng.standard_normal((n_samples, d))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    frac = rng.random(n_samples)
    out = np.empty((len(gammas), len(eps) - 1))
    for j in range(len(eps) - 1):
        lo, hi = eps[j + 1], eps[j]
        r = lo * (hi / lo) ** frac
        v = (r[:, None] * w).reshape(n_samples, N - 1, 2)
        others = exp_map(anchor[:, None, :].repeat(N - 1, axis=1), v)
        x = np.concatenate([anchor[:, None, :], others], axis=1)
        norms = np.linalg.norm(v, axis=2)
        log_jac = np.sum(np.log(np.sinc(norms / math.pi)), axis=1) - (N - 1) * math.log(4 * math.pi)
        log_meas = _log_sphere_area(d) + math.log(math.log(hi / lo)) + d * np.log(r) + log_jac
        L = log_det_norm_sq(basis, x)
        u = None if p.phi0.is_reference else p.phi0.evaluate(x)
        su = N * float(p.phi0.u[0]) if u is None else np.sum(u, axis=1)
        for i, g in enumerate(gammas):
            lf = -(g / k) * L - (1 - g) * su + log_meas
            out[i, j] = logsumexp(lf) - math.log(n_samples)
    return out


def gamma_k_detect(p, basis, gammas=None, eps=None, n_samples=20000, seed=0, max_width=0.2):
    """Bracket the integrability threshold by the sign of the cluster growth exponent.

    For each ``gamma`` the log shell masses are regressed on ``log(1/eps)``;
    a positive slope means the mass near the diagonal blows up as the shells
    shrink.  The bracket is formed by the last negative and first positive
    slope on the ``gamma`` grid.
    """
    gammas = np.round(np.arange(0.025, 1.5, 0.05), 6) if gammas is None else np.asarray(gammas)
    eps = 2.0 ** -np.arange(3, 10) if eps is None else np.asarray(eps)
    masses = cluster_shell_masses(p, basis, eps, gammas, n_samples, seed)
    mid = np.log(1 / np.sqrt(eps[:-1] * eps[1:]))
    A = np.column_stack([np.ones_like(mid), mid])
    slopes = np.linalg.lstsq(A, masses.T, rcond=None)[0][1]
    evidence = {"gammas": gammas.tolist(), "growth_exponents": slopes.tolist(),
                "eps": eps.tolist(), "log_shell_masses": masses.tolist()}
    pos = np.nonzero(slopes > 0)[0]
    if len(pos) == 0 or pos[0] == 0:
        raise ConvergenceError("growth exponent never changes sign on the gamma grid")
    i = pos[0]
    lo, hi = float(gammas[i - 1]), float(gammas[i])
    if hi - lo > max_width:
        raise ConvergenceError(f"inconclusive bracket [{lo}, {hi}]")
    return ThresholdEstimate(lo, hi, evidence)


# --------------------------------------------------------------------------
# verifiers

@dataclass
class VerificationReport:
    """Both sides of an inequality ``lhs <= rhs`` with Monte Carlo error on ``lhs``.

    ``slack = rhs - lhs``; ``slack_factorial`` replaces the additive ``log N``
    by ``log N!``, the constant produced by the determinant identity.
    """

    name: str
    inputs: dict
    lhs: float
    rhs: float
    stderr: float
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def holds(self):
        return self.slack >= -3 * self.stderr

    def to_json(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return repr(v)
            if isinstance(v, dict):
                return {a: clean(b) for a, b in v.items()}
            if isinstance(v, (list, tuple)):
                return [clean(b) for b in v]
            return v
        return clean({"name": self.name, "inputs": self.inputs, "lhs": self.lhs, "rhs": self.rhs,
                      "slack": self.slack, "stderr": self.stderr, "seed": self.seed, **self.extra})


def _lhs(p, basis, budget, seed, scale):
    """``-log Z / scale`` with its standard error (exact at ``gamma = -k``)."""
    if abs(p.gamma + basis.k) < 1e-14:
        from .sphere import DensityMeasure
        mu = DensityMeasure(p.grid, np.exp(-p.phi0.u))
        return -z_determinant_oracle(basis.k, p.phi0, mu, basis) / scale, 0.0, None
    est = z_estimate(p, basis, budget, seed)
    if not est.converged:
        raise ConvergenceError(f"partition function diverges (tail index {est.tail_index:.2f})")
    return -est.log_z / scale, est.stderr / abs(scale), est


def inf_scaled_ding_k(p, basis, n_random=4, seed=0):
    """``inf (1 + gamma/k) D_k`` over grid potentials, several starts."""
    from .sphere import random_potential
    k = basis.k
    if abs(p.gamma + k) < 1e-14:
        from .sphere import reference_metric
        return scaled_ding_k(reference_metric(p.grid), p, basis)
    starts = [None]
    if p.gamma < 1:
        try:
            starts.append(solve_aubin(p, 1e-9))
        except ConvergenceError:
            pass
    rng = np.random.default_rng(seed)
    starts += [random_potential(p.grid, rng) for _ in range(n_random)]
    best = math.inf
    for s in starts:
        phi, _ = minimize_ding_k(p, basis, start=s)
        best = min(best, scaled_ding_k(phi, p, basis))
        if s is not None:
            best = min(best, scaled_ding_k(s, p, basis))
    return best


def verify_prop_key_inequality(p, basis, budget=10 ** 6, seed=0):
    """``-log Z / (gamma N) <= (1 + gamma/k) inf D_k + log N / (k N)``."""
    k, N, g = basis.k, basis.N, p.gamma
    lhs, se, _ = _lhs(p, basis, budget, seed, g * N)
    inf_d = inf_scaled_ding_k(p, basis, seed=seed)
    rhs = inf_d + math.log(N) / (k * N)
    extra = {"inf_scaled_ding_k": inf_d,
             "slack_factorial": inf_d + gammaln(N + 1) / (k * N) - lhs}
    return VerificationReport("prop_key_inequality", {"k": k, "gamma": g, "budget": budget}, lhs, rhs, se,
                              seed, extra)


def verify_thm_quantized(p, basis, budget=10 ** 6, seed=0, bracket=None, delta=None):
    """``-log Z / (gamma N) <= inf D_{H_k} + log N / (k N)``.

    When a threshold bracket and a coercivity estimate are supplied the
    report also records whether ``gamma_high <= delta + 0.05``.
    """
    k, N, g = basis.k, basis.N, p.gamma
    lhs, se, _ = _lhs(p, basis, budget, seed, g * N)
    m = minimize_quantized_ding(p, basis)
    rhs = m.value + math.log(N) / (k * N)
    extra = {"inf_quantized_ding": m.value, "diverged": m.diverged,
             "slack_factorial": m.value + gammaln(N + 1) / (k * N) - lhs}
    if bracket is not None and delta is not None:
        extra.update(gamma_k_bracket=[bracket.gamma_low, bracket.gamma_high], delta_k=delta,
                     threshold_order=bool(bracket.gamma_high <= delta + 0.05))
    return VerificationReport("thm_quantized", {"k": k, "gamma": g, "budget": budget}, lhs, rhs, se, seed, extra)


def _inf_mab(gamma, phi0):
    if abs(gamma) < 1e-12:
        return 0.0  # inf of Ent(. | e^{-phi0}) for a normalized volume
    return inf_mabuchi(GammaParams(gamma, phi0), 1e-9).value


def _smallest_c(rhs, lhs, c_max=100.0):
    """Smallest ``C >= 0`` with ``lhs <= rhs(C)`` on a scan refined by bisection."""
    if lhs <= rhs(0.0):
        return 0.0
    grid = np.concatenate([np.linspace(0, 1, 21)[1:], np.linspace(1, c_max, 100)[1:]])
    prev = 0.0
    for c in grid:
        if lhs <= rhs(c):
            lo, hi = prev, float(c)
            for _ in range(40):
                mid = (lo + hi) / 2
                lo, hi = (lo, mid) if lhs <= rhs(mid) else (mid, hi)
            return hi
        prev = float(c)
    return math.inf


def verify_main_theorem(p, basis, budget=10 ** 6, seed=0):
    """Smallest ``C`` for which the free-energy bound on ``-log Z / N`` holds.

    Bound: ``((k+g)/(k+1)) inf M_{-g c_k} + (g/k)(C + (|1-g| + C) log||dV/dsigma||)``
    with ``c_k = (1 - C/k)(k+1)/(k+g)``; also the variant
    ``inf M_{-g(1-C/k)} + C/k + (g/k)(|1-g| + C) log||dV/dsigma||`` for ``g <= 1``.
    """
    k, N, g = basis.k, basis.N, p.gamma
    lhs, se, _ = _lhs(p, basis, budget, seed, N)
    log_dv = max(0.0, p.log_volume_bound())

    def rhs(c):
        ck = (1 - c / k) * (k + 1) / (k + g)
        return (k + g) / (k + 1) * _inf_mab(g * ck, p.phi0) + g / k * (c + (abs(1 - g) + c) * log_dv)

    def rhs_variant(c):
        return _inf_mab(g * (1 - c / k), p.phi0) + c / k + g / k * (abs(1 - g) + c) * log_dv

    c_star = _smallest_c(rhs, lhs)
    extra = {"C": c_star, "c_k": (1 - c_star / k) * (k + 1) / (k + g) if math.isfinite(c_star) else math.nan,
             "C_variant": _smallest_c(rhs_variant, lhs) if g <= 1 else math.nan,
             "C_found": bool(math.isfinite(c_star))}
    return VerificationReport("main_theorem", {"k": k, "gamma": g, "budget": budget}, lhs,
                              rhs(c_star) if math.isfinite(c_star) else math.inf, se, seed, extra)


def free_energy_trend(ks, phi0, bases, budget=10 ** 6, seed=0):
    """``|-log Z_N(beta=1) / N - inf M_{beta=1}|`` for each ``k``."""
    p = GammaParams(-1.0, phi0)
    inf_m = inf_mabuchi(p, 1e-9).value
    rows = []
    for k in ks:
        est = z_estimate(p, bases[k], budget, seed)
        lhs = -est.log_z / bases[k].N
        rows.append({"k": k, "lhs": lhs, "stderr": est.stderr / bases[k].N, "inf_mabuchi": inf_m,
                     "gap": abs(lhs - inf_m)})
    return rows
