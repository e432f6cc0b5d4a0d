"""Metropolis-Hastings simulation of the point process and empirical statistics.

The target law on ``(S^2)^N`` at inverse temperature ``beta`` has density

    ||det S||_{k phi0}^{2 beta / k} prod_j e^{-u0(x_j)}

with respect to ``dsigma^N``.  Slater determinants factor into pairwise
chordal distances, so a single-point move changes the log density by a sum
over the ``N - 1`` other points; this is the incremental update used here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import IntegrabilityError, SamplingError
from .partition import batch_rng, gamma_k_detect
from .sections import log_det_norm_sq
from .sphere import (DensityMeasure, Potential, SpherePoint, _legendre, angles_to_vector, chordal_sq,
                     exp_map, geodesic, uniform_points, vector_to_angles)

TARGET_ACCEPTANCE = 0.3
DRIFT_TOL = 1e-8
RECOMPUTE_EVERY = 10 ** 4
AUDIT_SIZE = 1000


@dataclass(frozen=True, eq=False)
class ChainState:
    """One recorded configuration of one chain."""

    config: tuple
    log_density: float
    step: int
    rng_key: tuple

    @property
    def xyz(self):
        return np.array([p.vector for p in self.config])


@dataclass(eq=False)
class ChainRun:
    """Thinned snapshots of all chains plus run diagnostics.

    ``configs`` has shape ``(n_snapshots, N, 3)``; ``chain`` and ``steps``
    label each snapshot.
    """

    k: int
    beta: float
    seed: int
    configs: np.ndarray = field(repr=False)
    chain: np.ndarray = field(repr=False)
    steps: np.ndarray = field(repr=False)
    log_density: np.ndarray = field(repr=False)
    acceptance: float
    cap_radius: np.ndarray = field(repr=False)
    iat: float
    thin: int
    max_drift: float
    audit: dict
    n_steps: int

    @property
    def N(self):
        return self.configs.shape[1]

    def __len__(self):
        return len(self.configs)

    def states(self):
        return [ChainState(tuple(SpherePoint.from_vector(x) for x in cfg), float(ld), int(s),
                           (self.seed, int(c)))
                for cfg, ld, s, c in zip(self.configs, self.log_density, self.steps, self.chain)]

    def points(self):
        """All snapshot points pooled, shape ``(n_snapshots * N, 3)``."""
        return self.configs.reshape(-1, 3)

    def to_csv(self, path):
        """Rows ``(chain, step, point, polar, azimuth)``."""
        theta, az = vector_to_angles(self.configs.reshape(-1, 3))
        theta, az = theta.reshape(len(self), self.N), az.reshape(len(self), self.N)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "step", "point", "polar", "azimuth"])
            for s in range(len(self)):
                for i in range(self.N):
                    w.writerow([int(self.chain[s]), int(self.steps[s]), i,
                                repr(float(theta[s, i])), repr(float(az[s, i]))])

    def diagnostics(self):
        return {"acceptance": self.acceptance, "iat": self.iat, "thin": self.thin,
                "max_drift": self.max_drift, "n_snapshots": len(self),
                "cap_radius": self.cap_radius.tolist(), "audit": dict(self.audit)}


# --------------------------------------------------------------------------
# target density

def _log_target(x, u, beta, basis):
    """Unnormalized log density of configurations ``x`` (``(..., N, 3)``)."""
    L = log_det_norm_sq(basis, x, u)
    su = 0.0 if u is None else np.sum(u, axis=-1)
    return (beta / basis.k) * L - su


def _cap_proposal(rng, x, radius):
    """Uniform point on the geodesic cap of ``radius`` around each ``x``."""
    c = 1 - rng.random(len(x)) * (1 - np.cos(radius))
    d = np.arccos(np.clip(c, -1.0, 1.0))
    a = 2 * math.pi * rng.random(len(x))
    return exp_map(x, d[:, None] * np.column_stack([np.cos(a), np.sin(a)]))


def integrated_autocorrelation(series, c=5.0):
    """Integrated autocorrelation time with Sokal's automatic window.

    ``series`` has shape ``(n_chains, n)``; autocorrelations are averaged
    over chains before windowing.
    """
    x = np.asarray(series, dtype=float)
    x = x - x.mean(axis=1, keepdims=True)
    n = x.shape[1]
    f = np.fft.rfft(x, n=2 * n, axis=1)
    acf = np.fft.irfft(f * np.conj(f), axis=1)[:, :n].mean(axis=0)
    if acf[0] <= 0:
        return 1.0
    rho = acf / acf[0]
    tau = 2 * np.cumsum(rho) - 1
    window = np.nonzero(np.arange(n) >= c * tau)[0]
    m = window[0] if len(window) else n - 1
    return float(max(1.0, tau[m]))


def mcmc_run(k, beta, p, basis, n_steps, seed=0, n_chains=16, burn_in=None, record_every=None,
             bracket=None):
    """Run ``n_chains`` independent single-point Metropolis-Hastings chains.

    ``n_steps`` counts post-burn-in transitions per chain.  Proposals are
    uniform on a geodesic cap whose radius is adapted during burn-in toward
    30% acceptance and frozen afterward.  Only ``p.phi0`` is read from
    ``p``; the exponent is ``2 beta / k``.  Snapshots are recorded every
    ``record_every`` steps and then thinned by the integrated
    autocorrelation time of the log density and the mean height.
    """
    if basis.k != k:
        raise ValueError("basis degree does not match k")
    if n_steps < RECOMPUTE_EVERY:
        raise ValueError(f"n_steps must be at least {RECOMPUTE_EVERY}")
    if beta < 0:
        bracket = bracket or gamma_k_detect(p, basis)
        if -beta >= bracket.gamma_low:
            raise IntegrabilityError(f"beta={beta} is beyond the integrable range (-{bracket.gamma_low})")
    N = basis.N
    phi0 = p.phi0
    ref = phi0.is_reference
    burn_in = max(2000, n_steps // 10) if burn_in is None else burn_in
    record_every = max(N, n_steps // 2000) if record_every is None else record_every
    rng = batch_rng(seed, 0)
    C = n_chains
    rows = np.arange(C)

    X = uniform_points(rng, (C, N))
    U = np.zeros((C, N)) if ref else phi0.evaluate(X)
    ld = _log_target(X, None if ref else U, beta, basis)
    radius = np.full(C, 0.8)
    accepted_window = np.zeros(C)
    n_acc = 0
    max_drift = 0.0
    stats, snaps = [], []
    audit = []
    total = burn_in + n_steps

    for step in range(1, total + 1):
        i = rng.integers(0, N, C)
        xi = X[rows, i]
        xn = _cap_proposal(rng, xi, radius)
        d_old = chordal_sq(xi[:, None, :], X)
        d_new = chordal_sq(xn[:, None, :], X)
        d_old[rows, i] = 1.0
        d_new[rows, i] = 1.0
        with np.errstate(divide="ignore"):
            delta = (beta / k) * np.sum(np.log(d_new) - np.log(d_old), axis=1)
        if not ref:
            un = phi0.evaluate(xn)
            delta = delta - (1 + beta) * (un - U[rows, i])
        log_u = np.log(rng.random(C))
        acc = log_u < delta
        if step > burn_in and len(audit) < AUDIT_SIZE:
            c = int(step % C)
            new = X[c].copy()
            new[i[c]] = xn[c]
            audit.append((X[c].copy(), new, float(log_u[c]), bool(acc[c])))
        X[rows[acc], i[acc]] = xn[acc]
        if not ref:
            U[rows[acc], i[acc]] = un[acc]
        ld = np.where(acc, ld + delta, ld)

        if step <= burn_in:
            accepted_window += acc
            if step % 200 == 0:
                radius = np.clip(radius * np.exp(2 * (accepted_window / 200 - TARGET_ACCEPTANCE)), 1e-3, math.pi)
                accepted_window[:] = 0
            continue
        n_acc += int(acc.sum())
        if step % RECOMPUTE_EVERY == 0:
            fresh = _log_target(X, None if ref else U, beta, basis)
            drift = float(np.max(np.abs(fresh - ld) / np.maximum(1.0, np.abs(fresh))))
            max_drift = max(max_drift, drift)
            if drift > DRIFT_TOL:
                raise SamplingError(f"incremental log density drifted by {drift:.2e}")
            ld = fresh
        if (step - burn_in) % N == 0:
            stats.append(np.stack([ld, X[..., 2].mean(axis=1)]))
        if (step - burn_in) % record_every == 0:
            snaps.append((step - burn_in, X.copy(), ld.copy()))

    acceptance = n_acc / (C * n_steps)
    if acceptance < 0.02:
        raise SamplingError(f"acceptance collapsed to {acceptance:.3f}")

    stats = np.array(stats)  # (n, 2, C)
    tau = max(integrated_autocorrelation(stats[:, j, :].T) for j in range(2)) * N
    thin = max(1, math.ceil(tau / record_every))
    kept = snaps[thin - 1::thin]
    configs = np.concatenate([s[1] for s in kept])
    chain = np.tile(rows, len(kept))
    steps = np.repeat([s[0] for s in kept], C)
    logd = np.concatenate([s[2] for s in kept])
    return ChainRun(k, float(beta), seed, configs, chain, steps, logd, float(acceptance), radius,
                    float(tau), thin * record_every, max_drift, _audit(audit, phi0, beta, basis), n_steps)


def _audit(records, phi0, beta, basis):
    """Recompute the Metropolis ratio from scratch on logged transitions."""
    if not records:
        return {"n": 0}
    old = np.array([r[0] for r in records])
    new = np.array([r[1] for r in records])
    log_u = np.array([r[2] for r in records])
    acc = np.array([r[3] for r in records])
    ref = phi0.is_reference
    ratio = (_log_target(new, None if ref else phi0.evaluate(new), beta, basis)
             - _log_target(old, None if ref else phi0.evaluate(old), beta, basis))
    decisive = np.abs(log_u - ratio) > 1e-9
    mismatches = int(np.sum((log_u < ratio)[decisive] != acc[decisive]))
    expected = np.minimum(1.0, np.exp(np.minimum(ratio, 0.0)))
    z = (acc.mean() - expected.mean()) / max(math.sqrt(np.sum(expected * (1 - expected))) / len(acc), 1e-12)
    return {"n": int(len(acc)), "mismatches": mismatches, "acceptance": float(acc.mean()),
            "expected_acceptance": float(expected.mean()), "z_score": float(z)}


# --------------------------------------------------------------------------
# empirical statistics

@dataclass(frozen=True, eq=False)
class SphereHistogram:
    """Bin masses on an equal-area partition: uniform in height and azimuth."""

    n_height: int
    n_azimuth: int
    masses: np.ndarray = field(repr=False)

    def __post_init__(self):
        m = np.asarray(self.masses, dtype=float).reshape(self.n_height, self.n_azimuth)
        object.__setattr__(self, "masses", m)

    @property
    def n_bins(self):
        return self.n_height * self.n_azimuth

    @property
    def mass(self):
        return float(self.masses.sum())

    @property
    def centers(self):
        z = -1 + (np.arange(self.n_height) + 0.5) * 2 / self.n_height
        a = (np.arange(self.n_azimuth) + 0.5) * 2 * math.pi / self.n_azimuth
        Z, A = np.meshgrid(z, a, indexing="ij")
        return angles_to_vector(np.arccos(Z), A).reshape(-1, 3)

    def subnodes(self, q=4):
        """Per-bin Gauss-Legendre (height) times midpoint (azimuth) nodes.

        Returns unit vectors ``(n_bins, q*q, 3)`` and weights summing to one
        in each bin.
        """
        g, w = np.polynomial.legendre.leggauss(q)
        hz = 2 / self.n_height
        ha = 2 * math.pi / self.n_azimuth
        z = -1 + (np.arange(self.n_height)[:, None] + (g[None, :] + 1) / 2) * hz
        a = (np.arange(self.n_azimuth)[:, None] + (np.arange(q)[None, :] + 0.5) / q) * ha
        Z = np.broadcast_to(z[:, None, :, None], (self.n_height, self.n_azimuth, q, q))
        A = np.broadcast_to(a[None, :, None, :], (self.n_height, self.n_azimuth, q, q))
        xyz = angles_to_vector(np.arccos(Z), A).reshape(self.n_bins, q * q, 3)
        wt = np.broadcast_to((w / 2)[:, None] / q, (q, q)).reshape(-1)
        return xyz, wt

    @classmethod
    def from_points(cls, xyz, n_height=8, n_azimuth=16):
        theta, az = vector_to_angles(np.asarray(xyz).reshape(-1, 3))
        iz = np.minimum(((np.cos(theta) + 1) / 2 * n_height).astype(int), n_height - 1)
        ia = np.minimum((np.mod(az, 2 * math.pi) / (2 * math.pi) * n_azimuth).astype(int), n_azimuth - 1)
        counts = np.bincount(iz * n_azimuth + ia, minlength=n_height * n_azimuth).astype(float)
        return cls(n_height, n_azimuth, counts / counts.sum())

    @classmethod
    def from_density(cls, target, n_height=8, n_azimuth=16, q=4):
        h = cls(n_height, n_azimuth, np.zeros(n_height * n_azimuth))
        xyz, wt = h.subnodes(q)
        vals = np.maximum(target.evaluate(xyz), 0.0) @ wt
        return cls(n_height, n_azimuth, vals / vals.sum())

    def to_json(self):
        return {"n_height": self.n_height, "n_azimuth": self.n_azimuth, "masses": self.masses.tolist()}


@dataclass(frozen=True)
class EmpiricalSummary:
    histogram: SphereHistogram = field(repr=False)
    w1_to_target: float
    w1_stderr: float
    h_minus1: float
    n_effective: float
    n_samples: int

    def bin_sigma(self):
        """Per-bin binomial standard deviation at the effective sample size."""
        m = self.histogram.masses
        return np.sqrt(m * (1 - m) / self.n_effective)

    def to_json(self):
        return {"w1_to_target": self.w1_to_target, "w1_stderr": self.w1_stderr, "h_minus1": self.h_minus1,
                "n_effective": self.n_effective, "n_samples": self.n_samples,
                "histogram": self.histogram.to_json()}


def _entropic_ot(a, b, cost, reg, n_iter=3000, tol=1e-10):
    """Entropic transport value ``<a, f> + <b, g>`` in the log domain."""
    la = np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), -np.inf)
    lb = np.where(b > 0, np.log(np.where(b > 0, b, 1.0)), -np.inf)
    f = np.zeros(len(a))
    g = np.zeros(len(b))
    for _ in range(n_iter):
        f_new = -reg * logsumexp(lb[None, :] + (g[None, :] - cost) / reg, axis=1)
        g = -reg * logsumexp(la[:, None] + (f_new[:, None] - cost) / reg, axis=0)
        done = np.max(np.abs(f_new - f)[a > 0]) < tol
        f = f_new
        if done:
            break
    return float(np.dot(a[a > 0], f[a > 0]) + np.dot(b[b > 0], g[b > 0]))


def sinkhorn_w1(a, b, centers, reg=1e-2):
    """Debiased entropic transport distance between bin masses, geodesic cost."""
    cost = geodesic(centers[:, None, :], centers[None, :, :])
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    val = (_entropic_ot(a, b, cost, reg) - 0.5 * _entropic_ot(a, a, cost, reg)
           - 0.5 * _entropic_ot(b, b, cost, reg))
    return max(0.0, val)


def _bin_harmonics(hist, lmax):
    """Real orthonormal spherical harmonics averaged over each bin, with degrees."""
    xyz, wt = hist.subnodes()
    theta, az = vector_to_angles(xyz.reshape(-1, 3))
    P = _legendre(np.cos(theta), lmax, lmax)
    cols, degs = [], []
    for m in range(lmax + 1):
        for l in range(max(m, 1), lmax + 1):
            if m == 0:
                cols.append(P[0, :, l] / math.sqrt(2 * math.pi))
                degs.append(l)
            else:
                for trig in (np.cos, np.sin):
                    cols.append(P[m, :, l] * trig(m * az) / math.sqrt(math.pi))
                    degs.append(l)
    Y = np.array(cols).reshape(len(cols), hist.n_bins, -1) @ wt
    return Y, np.array(degs)


def h_minus1_norm(hist, other, lmax=8):
    """``H^{-1}`` dual norm of the difference of two binned probability measures."""
    Y, deg = _bin_harmonics(hist, lmax)
    # bin masses are probabilities; harmonics are orthonormal for area 4 pi
    c = Y @ (hist.masses.ravel() - other.masses.ravel()) * math.sqrt(4 * math.pi)
    return float(math.sqrt(np.sum(c ** 2 / (deg * (deg + 1)))))


def empirical_summary(run, target, n_height=8, n_azimuth=16, n_boot=8, reg=1e-2, min_effective=100):
    """Bin the pooled empirical measure and compare it with ``target``.

    ``target`` is a :class:`DensityMeasure` (binned by sub-quadrature) or a
    :class:`SphereHistogram` on the same binning.
    """
    points = run.points()
    n_eff = float(len(points))
    if n_eff < min_effective:
        raise SamplingError(f"only {n_eff:.0f} effective samples")
    hist = SphereHistogram.from_points(points, n_height, n_azimuth)
    if isinstance(target, SphereHistogram):
        tgt = target
    else:
        tgt = SphereHistogram.from_density(target, n_height, n_azimuth)
    centers = hist.centers
    w1 = sinkhorn_w1(hist.masses, tgt.masses, centers, reg)
    rng = np.random.default_rng(0)
    boots = []
    for _ in range(n_boot):
        pick = rng.integers(0, len(run.configs), len(run.configs))
        hb = SphereHistogram.from_points(run.configs[pick].reshape(-1, 3), n_height, n_azimuth)
        boots.append(sinkhorn_w1(hb.masses, tgt.masses, centers, reg))
    se = float(np.std(boots, ddof=1)) if n_boot > 1 else math.nan
    return EmpiricalSummary(hist, w1, se, h_minus1_norm(hist, tgt), n_eff, int(len(points)))


# --------------------------------------------------------------------------
# curvature of the one-point log marginal

def omega_k_beta(k, beta, p, basis, grid, inner=None):
    """Normalized curvature density of the one-point log marginal (``k = 1``).

    For ``N = 3`` the inner integral over two points is the quadratic form
    ``sum a(x, y) B(y, y') a(x, y')`` on ``inner`` quadrature nodes, with
    ``a`` carrying the pair factor to ``x`` and the weight of ``y``.
    """
    if k != 1 or basis.k != 1:
        raise ValueError("omega_k_beta is implemented for k = 1 only")
    if beta <= 0:
        raise ValueError("beta must be positive")
    inner = inner or grid
    y = inner.points
    u_y = p.phi0.evaluate(y)
    x = grid.points
    e = beta / k
    a = (chordal_sq(x[:, None, :], y[None, :, :]) / 4) ** e * (inner.weights * np.exp(-(beta + 1) * u_y))
    B = (chordal_sq(y[:, None, :], y[None, :, :]) / 4) ** e
    q = np.sum((a @ B) * a, axis=1)
    # potential phi0 + (1/beta) log I, where I carries the factor e^{-beta u0(x)}
    U = np.log(q) / beta
    dens = 1 + 0.5 * grid.laplacian(U)
    return DensityMeasure(grid, np.maximum(dens, 0.0)).normalized()
