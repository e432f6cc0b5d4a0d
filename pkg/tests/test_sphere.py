import math

import numpy as np
import pytest
from scipy.special import sph_harm_y

from fano_gibbs.errors import ConvergenceError, CurvatureError, MassError, UnderResolvedError
from fano_gibbs.sphere import (DensityMeasure, Potential, SpherePoint, build_grid, bump_laplacian, bump_potential,
                               entropy, fs_density, fs_potential, ma_measure, random_density, random_potential,
                               random_su2, reference_metric, solve_curvature_equation, uniform_measure)


@pytest.mark.parametrize("shape,tol", [((64, 64), 1e-12), ((8, 8), 1e-10)])
def test_grid_weights_are_a_probability(shape, tol):
    g = build_grid(*shape)
    assert g.size == shape[0] * shape[1]
    assert abs(g.weights.sum() - 1) < tol
    assert np.all(g.weights > 0)


def test_grid_integrates_constants_and_rejects_tiny_sizes(grid):
    assert grid.integrate(np.ones(grid.size)) == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(UnderResolvedError):
        build_grid(4, 16)


def test_harmonics_integrate_to_zero_below_band_limit(grid):
    theta, az = grid.node_angles
    for l in range(1, grid.lmax + 1, 3):
        for m in range(0, min(l, grid.mmax) + 1, 2):
            y = sph_harm_y(l, m, theta, az)
            assert abs(grid.integrate(y.real)) < 1e-10
            assert abs(grid.integrate(y.imag)) < 1e-10


def test_point_normalization_and_projective_equality():
    p = SpherePoint(3.0, 4.0j)
    assert abs(abs(p.z0) ** 2 + abs(p.z1) ** 2 - 1) < 1e-12
    phase = complex(math.cos(0.7), math.sin(0.7))
    assert SpherePoint(p.z0 * phase, p.z1 * phase) == p
    c = p.canonical()
    assert c.canonical().z0 == c.z0 and c.canonical().z1 == c.z1
    assert c.z0.imag == 0 and c.z0.real > 0
    with pytest.raises(ValueError):
        SpherePoint(0, 0)


def test_angles_round_trip():
    p = SpherePoint.from_angles(1.1, 2.3)
    t, a = p.angles
    assert (t, a) == pytest.approx((1.1, 2.3), abs=1e-12)
    assert SpherePoint.from_vector(p.vector) == p


def test_reference_metric(grid, psi0):
    assert psi0.sup_u == 0 and np.all(psi0.u == 0)
    mu = ma_measure(psi0)
    assert np.max(np.abs(mu.density - 1)) < 1e-12
    assert grid.integrate(np.exp(-psi0.u)) == pytest.approx(1.0, abs=1e-14)
    shifted = psi0.shifted(2.5)
    assert shifted.sup_u == pytest.approx(2.5)
    assert np.max(np.abs(ma_measure(shifted).density - 1)) < 1e-12


def _radial_density_fd(a, kappa, theta, h=1e-3):
    """``1 + lap(u) / 2`` for ``u = a exp(kappa (cos t - 1))`` by 4th-order differences."""
    u = lambda t: a * np.exp(kappa * (np.cos(t) - 1))
    d1 = (-u(theta + 2 * h) + 8 * u(theta + h) - 8 * u(theta - h) + u(theta - 2 * h)) / (12 * h)
    d2 = (-u(theta + 2 * h) + 16 * u(theta + h) - 30 * u(theta) + 16 * u(theta - h) - u(theta - 2 * h)) / (12 * h * h)
    return 1 + 0.5 * (d2 + d1 * np.cos(theta) / np.sin(theta))


def test_ma_of_radial_bump_matches_finite_difference_oracle(grid):
    phi = bump_potential(grid, 0.3, (0.0, 0.0), 2.0)
    theta, _ = grid.node_angles
    oracle = _radial_density_fd(0.3, 2.0, theta)
    assert np.max(np.abs(ma_measure(phi).density - oracle)) < 1e-6


def test_ma_of_pulled_back_round_metric_is_exact(grid):
    A = random_su2(np.random.default_rng(1)) @ np.diag([1.3, 1 / 1.3])
    phi = fs_potential(grid, A)
    assert np.max(np.abs(ma_measure(phi).density - fs_density(A)(grid.points))) < 1e-8


def test_ma_mass_is_one_for_positive_potentials(grid, rng):
    for _ in range(5):
        assert ma_measure(random_potential(grid, rng)).mass == pytest.approx(1.0, abs=1e-8)


def test_negative_curvature_is_rejected(grid):
    with pytest.raises(CurvatureError):
        ma_measure(bump_potential(grid, -3.0, (0.5, 0.5), 4.0))


def test_curvature_equation_identity_and_round_trip(grid, psi0):
    assert np.max(np.abs(solve_curvature_equation(ma_measure(psi0)).u)) < 1e-8
    phi = bump_potential(grid, 0.3, (0.8, 1.2), 2.0)
    back = solve_curvature_equation(ma_measure(phi))
    diff = back.u - phi.u
    assert np.max(np.abs(diff - diff.mean())) < 1e-6


def test_curvature_equation_residual_on_random_measures(rng):
    grid = build_grid(64, 64)
    for _ in range(5):
        mu = random_density(grid, rng)
        phi = solve_curvature_equation(mu)
        assert np.max(np.abs(ma_measure(phi).density - mu.density)) < 1e-6


def test_curvature_equation_errors(grid):
    with pytest.raises(MassError):
        solve_curvature_equation(DensityMeasure(grid, 2 * np.ones(grid.size)))
    spiky = np.ones(grid.size)
    spiky[0] += 1 / grid.weights[0]
    with pytest.raises(ConvergenceError):
        solve_curvature_equation(DensityMeasure(grid, spiky).normalized())


def test_entropy_examples(grid, rng):
    mu = random_density(grid, rng)
    assert abs(entropy(mu, mu)) < 1e-14
    assert entropy(mu, uniform_measure(grid)) >= 0
    assert entropy(uniform_measure(grid), DensityMeasure(grid, 2 * np.ones(grid.size))) == pytest.approx(-math.log(2))
    assert entropy(uniform_measure(grid), DensityMeasure(grid, np.r_[0.0, np.ones(grid.size - 1)])) == math.inf


def test_entropy_is_nonnegative_for_probability_pairs(grid, rng):
    for _ in range(10):
        assert entropy(random_density(grid, rng), random_density(grid, rng)) >= -1e-14


def test_spectral_laplacian_matches_closed_form(grid):
    lap = grid.laplacian(bump_potential(grid, 0.5, (0.4, 2.0), 3.0).u)
    assert np.max(np.abs(lap - bump_laplacian(0.5, (0.4, 2.0), 3.0)(grid.points))) < 1e-9


def test_off_grid_evaluation_of_band_limited_values(grid, rng):
    phi = bump_potential(grid, 0.5, (0.4, 2.0), 1.0)
    plain = Potential(grid, phi.u)
    x = rng.standard_normal((50, 3))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    assert np.max(np.abs(plain.evaluate(x) - phi.evaluate(x))) < 1e-10


def test_serialization_round_trips(tmp_path, grid, rng):
    phi = random_potential(grid, rng)
    back = Potential.from_json(phi.to_json(), grid)
    assert np.array_equal(back.u, phi.u)
    mu = random_density(grid, rng)
    mu.to_csv(tmp_path / "mu.csv")
    assert np.array_equal(DensityMeasure.from_csv(tmp_path / "mu.csv", grid).density, mu.density)
