"""Energy, Ding, Mabuchi and quantized-energy functionals on potentials.

Conventions (see :mod:`fano_gibbs.sphere`): a potential is ``psi0 + u``,
``dsigma = e^{-psi0}`` is the unit-mass round measure, and the twisted volume
``e^{-(gamma phi + (1-gamma) phi0)}`` has density
``exp(-(gamma u + (1-gamma) u0))`` with respect to ``dsigma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import ConvergenceError
from .sections import gram_matrix
from .sphere import (DensityMeasure, Potential, entropy, ma_measure, reference_metric,
                     solve_curvature_equation)


@dataclass(frozen=True, eq=False)
class GammaParams:
    """Exponent ``gamma = -beta`` and reference volume ``e^{-phi0}``."""

    gamma: float
    phi0: Potential = field(repr=False)
    k: int | None = None

    def __post_init__(self):
        if self.gamma == 0 or not math.isfinite(self.gamma):
            raise ValueError("gamma must be finite and nonzero")
        m = self.phi0.grid.integrate(np.exp(-self.phi0.u))
        if not (math.isfinite(m) and m > 0):
            raise ValueError("e^{-phi0} must have finite positive mass")

    @property
    def beta(self):
        return -self.gamma

    @property
    def grid(self):
        return self.phi0.grid

    def with_gamma(self, gamma):
        return GammaParams(gamma, self.phi0, self.k)

    def log_twisted_weight(self, u):
        """Log density of ``e^{-(gamma phi + (1-gamma) phi0)}``."""
        return -(self.gamma * np.asarray(u) + (1 - self.gamma) * self.phi0.u)

    def log_volume_bound(self):
        """``log sup dV/dsigma`` with ``dV = e^{-phi0}``."""
        return float(np.max(-self.phi0.u))


@dataclass(frozen=True)
class FunctionalReport:
    value: float
    breakdown: dict
    normalization: dict = field(default_factory=dict)

    def __float__(self):
        return self.value

    def to_json(self):
        return {"value": self.value, "breakdown": dict(self.breakdown),
                "normalization": dict(self.normalization)}


_NORMALIZATION = {"psi0": "round metric, e^{-psi0} has unit mass", "V": 2}


def _report(**terms):
    return FunctionalReport(float(math.fsum(terms.values())), {k: float(v) for k, v in terms.items()},
                            dict(_NORMALIZATION))


def _log_integral(grid, logf):
    m = float(np.max(logf))
    return m + math.log(grid.integrate(np.exp(logf - m)))


# --------------------------------------------------------------------------
# functionals on potentials and measures

def energy(phi):
    """Monge-Ampere energy, ``int u dsigma + (1/4) int u lap(u) dsigma``."""
    ma_measure(phi)  # curvature check
    return phi.grid.integrate(phi.u + 0.25 * phi.u * phi.laplacian)


def energy_of_measure(mu):
    """Pluricomplex energy ``E(mu)`` via the potential solving ``MA = mu``."""
    phi = solve_curvature_equation(mu)
    return energy(phi) - mu.integrate(phi.u)


def j_functional(phi):
    """``J(phi) = -E(phi) + int u dsigma``; nonnegative."""
    return -energy(phi) + phi.mean_u


def jtype_gap(phi):
    """``-E(phi) + sup u - E(MA(phi))``, whose supremum is the constant ``c_X``."""
    return -energy(phi) + phi.sup_u - energy_of_measure(ma_measure(phi))


def twisted_ding(phi, p):
    """Twisted Ding functional with its two terms."""
    log_int = _log_integral(phi.grid, p.log_twisted_weight(phi.u))
    return _report(energy=-energy(phi), log_integral=-log_int / p.gamma)


def free_energy(mu, p):
    """Free energy ``-gamma (E(mu) + int u0 dmu) + Ent(mu | e^{-phi0})``.

    This is the form satisfying the Gibbs variational principle
    ``D <= M / gamma`` for every ``phi0``; it equals
    ``-gamma E(mu) + Ent(mu | e^{-(gamma psi0 + (1-gamma) phi0)})``.
    """
    dv = DensityMeasure(mu.grid, np.exp(-p.phi0.u))
    ent = entropy(mu, dv)
    if math.isinf(ent):
        return FunctionalReport(math.inf, {"energy": math.nan, "twist": math.nan, "entropy": math.inf},
                                dict(_NORMALIZATION))
    return _report(energy=-p.gamma * energy_of_measure(mu), twist=-p.gamma * mu.integrate(p.phi0.u),
                   entropy=ent)


def twisted_mabuchi(phi, p):
    return free_energy(ma_measure(phi), p).value


# --------------------------------------------------------------------------
# quantized energy

def twisted_gram(phi, p, basis):
    """Gram matrix of ``basis`` for ``k phi`` and the twisted volume."""
    return gram_matrix(basis, phi.grid, phi.u, np.exp(p.log_twisted_weight(phi.u)))


def l_functional(phi, p, basis):
    """``-log det Gram(phi, e^{-(gamma phi + (1-gamma) phi0)}) / (N (k + gamma))``."""
    G = twisted_gram(phi, p, basis)
    sign, logdet = np.linalg.slogdet(G)
    if sign <= 0 or not np.isfinite(logdet):
        raise np.linalg.LinAlgError("Gram matrix is not positive definite")
    return -logdet / (basis.N * (basis.k + p.gamma))


def ding_k(phi, p, basis):
    """Quantized twisted Ding functional on potentials."""
    return -l_functional(phi, p, basis) - _log_integral(phi.grid, p.log_twisted_weight(phi.u)) / p.gamma


def _bergman_weights(u, p, basis, values):
    """Bergman measure density ``rho * nu`` and ``nu`` on the grid."""
    grid = p.grid
    log_nu = p.log_twisted_weight(u)
    w = grid.weights * np.exp(-basis.k * u + log_nu)
    G = (values.conj().T * w) @ values
    L = np.linalg.cholesky(G)
    Z = np.linalg.solve(L, values.conj().T)
    K = np.sum(np.abs(Z) ** 2, axis=0)
    rho = K * np.exp(-basis.k * u) / basis.N
    return rho, np.exp(log_nu), G


def minimize_ding_k(p, basis, start=None, gtol=1e-11, maxiter=5000):
    """Infimum of the quantized Ding functional over grid potentials.

    The functional only involves grid values, so L-BFGS runs directly on
    ``u``; the gradient is ``w (nu / int nu - B)`` with ``B`` the Bergman
    measure density.  Returns ``(phi, value)``.
    """
    grid = p.grid
    values = basis.values(*grid.homogeneous)
    N, k, g = basis.N, basis.k, p.gamma

    def fun(u):
        rho, nu, G = _bergman_weights(u, p, basis, values)
        logdet = np.linalg.slogdet(G)[1]
        Zn = grid.integrate(nu)
        val = logdet / (N * (k + g)) - math.log(Zn) / g
        grad = grid.weights * (nu / Zn - rho * nu)
        return val, grad

    u0 = np.zeros(grid.size) if start is None else np.array(start.u)
    res = scipy.optimize.minimize(fun, u0, jac=True, method="L-BFGS-B",
                                  options={"maxiter": maxiter, "maxcor": 30, "ftol": 1e-16, "gtol": gtol})
    phi = Potential(grid, res.x - grid.integrate(res.x))
    return phi, float(res.fun)


# --------------------------------------------------------------------------
# Aubin's continuity equation

def solve_aubin(p, tol=1e-8, theta=0.5, max_iter=3000, start=None):
    """Solve ``MA(phi) = e^{-(gamma phi + (1-gamma) phi0)} / Z`` by damped iteration.

    Each step moves a fraction ``theta`` toward the potential whose
    Monge-Ampere measure is the current right-hand side; a step that raises
    the twisted Ding functional is retried with half the damping.  Iterates
    are centred, ``int u dsigma = 0``.  Raises :class:`ConvergenceError`
    carrying the best iterate when the residual stays above ``tol``.
    """
    grid = p.grid
    phi = start.centered() if start is not None else reference_metric(grid)
    step = theta
    ding = twisted_ding(phi, p).value
    residual = math.inf
    for _ in range(max_iter):
        logf = p.log_twisted_weight(phi.u)
        f = np.exp(logf - logf.max())
        rhs = DensityMeasure(grid, f / grid.integrate(f))
        residual = float(np.max(np.abs(phi.curvature_density - rhs.density)))
        if residual < tol:
            return phi
        target = solve_curvature_equation(rhs, residual_tol=None)
        while True:
            trial = Potential(grid, phi.u + step * (target.u - phi.u)).centered()
            d = twisted_ding(trial, p).value
            if d <= ding + 1e-13 * max(1.0, abs(ding)):
                break
            step /= 2
            if step < 1e-8:
                raise ConvergenceError("damping collapsed", best=phi, residual=residual)
        phi, ding = trial, d
        step = min(theta, 1.5 * step)
    raise ConvergenceError(f"no convergence after {max_iter} iterations (residual {residual:.2e})",
                           best=phi, residual=residual)


@dataclass(frozen=True)
class MabuchiInfimum:
    """Value of the twisted Mabuchi functional at the solver output.

    ``is_infimum`` is false when the solver did not converge; the value is
    then only an upper bound for the infimum.
    """

    value: float
    is_infimum: bool
    residual: float
    potential: Potential = field(repr=False, compare=False, default=None)

    def __float__(self):
        return self.value


def inf_mabuchi(p, tol=1e-8, **solver):
    try:
        phi = solve_aubin(p, tol, **solver)
        return MabuchiInfimum(twisted_mabuchi(phi, p), True, tol, phi)
    except ConvergenceError as exc:
        best = exc.best if exc.best is not None else reference_metric(p.grid)
        return MabuchiInfimum(twisted_mabuchi(best, p), False, float(exc.residual), best)


def scaled_free_energy_infimum(T, gamma, phi0, tol=1e-8):
    """``T * inf M_{-gamma/T}`` (increasing in ``T`` when ``e^{-phi0}`` is a probability)."""
    return T * inf_mabuchi(GammaParams(gamma / T, phi0), tol).value


def scaled_ding_k(phi, p, basis):
    """``(1 + gamma/k)`` times the quantized Ding functional.

    Written so that it stays finite at ``gamma = -k``, where the prefactor
    cancels the pole of the quantized energy.
    """
    k, N, g = basis.k, basis.N, p.gamma
    logdet = np.linalg.slogdet(twisted_gram(phi, p, basis))[1]
    return logdet / (k * N) - (k + g) / (k * g) * _log_integral(phi.grid, p.log_twisted_weight(phi.u))
