import math

import numpy as np
import pytest

from fano_gibbs.errors import MonotonicityError
from fano_gibbs.functionals import GammaParams, ding_k, twisted_gram
from fano_gibbs.quantized import (HermitianMetricK, RayQuadrature, _ding_and_gradient, bergman_density,
                                  delta_k_estimate, donaldson_map, donaldson_step, expm_hermitian,
                                  fixed_point_residual, fs_map, gram, identity_metric, minimize_quantized_ding,
                                  quantized_ding, random_metric, ray_metric, rotation_matrix)
from fano_gibbs.sections import SectionBasis
from fano_gibbs.sphere import (DensityMeasure, bump_potential, ma_measure, random_density, random_potential, random_su2,
                               uniform_measure)


def test_gram_identity_and_shift(grid, psi0, perturbed, bases):
    vol = uniform_measure(grid)
    for k in (1, 2):
        assert np.max(np.abs(gram(psi0, vol, bases[k]).H - np.eye(2 * k + 1))) < 1e-10
    G = gram(perturbed, vol, bases[2]).H
    G2 = gram(perturbed.shifted(0.4), vol, bases[2]).H
    assert np.allclose(G2, math.exp(-2 * 0.4) * G, rtol=1e-12, atol=0)


def test_gram_of_radial_metric_matches_radial_oracle(grid, bases):
    phi = bump_potential(grid, 0.3, (0.0, 0.0), 2.0)
    G = gram(phi, uniform_measure(grid), bases[1]).H
    assert np.max(np.abs(G - np.diag(np.diag(G)))) < 1e-12
    # |s_j|^2 = 3 C(2, j) ((1+c)/2)^j ((1-c)/2)^(2-j) on the height c = cos(theta)
    c, w = np.polynomial.legendre.leggauss(80)
    u = 0.3 * np.exp(2.0 * (c - 1))
    for j, binom in enumerate((1, 2, 1)):
        oracle = np.sum(w / 2 * 3 * binom * ((1 + c) / 2) ** j * ((1 - c) / 2) ** (2 - j) * np.exp(-u))
        assert G[j, j].real == pytest.approx(oracle, abs=1e-8)


def test_fs_map_examples(grid, bases, rng):
    for k in (1, 2, 3):
        fs = fs_map(identity_metric(k), bases[k], grid)
        assert np.max(np.abs(fs.u)) < 1e-12
    H = random_metric(2, rng)
    a, b = fs_map(H, bases[2], grid), fs_map(H.scaled(1.3), bases[2], grid)
    assert np.max(np.abs(b.u - (a.u - 1.3 / 2))) < 1e-12
    # another H-orthonormal description: basis E U with metric U^* H U
    U = np.linalg.qr(rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5)))[0] @ np.diag(
        [1.0, 2.0, 0.5, 1.5, 3.0])
    other = SectionBasis(2, U.T @ bases[2].coeffs)
    c = fs_map(HermitianMetricK(2, U.conj().T @ H.H @ U), other, grid)
    assert np.max(np.abs(c.u - a.u)) < 1e-12


def test_bergman_density(grid, psi0, perturbed, bases, rng):
    p1 = GammaParams(1.0, psi0)
    B = bergman_density(psi0, p1, bases[2])
    assert np.ptp(B.rho) < 1e-12
    for _ in range(3):
        phi = random_potential(grid, rng)
        B = bergman_density(phi, GammaParams(0.5, perturbed), bases[2])
        assert B.mass == pytest.approx(1.0, abs=1e-8)
        assert B.fs_gap < 1e-10


def test_quantized_ding_examples(grid, psi0, bases, rng):
    p = GammaParams(1.0, psi0)
    assert quantized_ding(identity_metric(1), p, bases[1]) == pytest.approx(0.0, abs=1e-13)
    H = random_metric(2, rng)
    base = quantized_ding(H, GammaParams(0.5, psi0), bases[2])
    for c in (-3, 1, 7):
        assert quantized_ding(H.scaled(c), GammaParams(0.5, psi0), bases[2]) == pytest.approx(base, abs=1e-10)


@pytest.mark.parametrize("gamma", [0.5, 1.0])
def test_first_quantization_inequality(grid, perturbed, bases, rng, gamma):
    p = GammaParams(gamma, perturbed)
    for k in (1, 2):
        for _ in range(25):
            phi = random_potential(grid, rng)
            H = HermitianMetricK(k, twisted_gram(phi, p, bases[k]))
            lhs = quantized_ding(H, p, bases[k])
            assert lhs <= (1 + gamma / k) * ding_k(phi, p, bases[k]) + 1e-9


def test_proof_identities(grid, perturbed, bases, rng):
    k, gamma = 2, 0.5
    p = GammaParams(gamma, perturbed)
    for _ in range(10):
        H = random_metric(k, rng)
        fs = fs_map(H, bases[k], grid)
        mu = random_density(grid, rng, 0.3)
        mu = DensityMeasure(grid, mu.density * rng.uniform(0.5, 2.0))
        G = gram(fs, mu, bases[k])
        assert G.logdet <= H.logdet + k * 0 + (2 * k + 1) * math.log(mu.mass) + 1e-10
        phi = random_potential(grid, rng)
        psi_k = fs_map(HermitianMetricK(k, twisted_gram(phi, p, bases[k])), bases[k], grid)
        lhs = grid.integrate(np.exp(p.log_twisted_weight(psi_k.u)))
        rhs = grid.integrate(np.exp(p.log_twisted_weight(phi.u))) ** (1 + gamma / k)
        assert lhs >= rhs * (1 - 1e-12)


def test_donaldson_examples(grid, psi0, bases, rng):
    p = GammaParams(1.0, psi0)
    T = donaldson_map(identity_metric(2), p, bases[2])
    assert fixed_point_residual(identity_metric(2), T) < 1e-12
    H = random_metric(1, rng)
    values = [quantized_ding(H, p, bases[1])]
    for _ in range(30):
        H = donaldson_step(H, p, bases[1])
        values.append(quantized_ding(H, p, bases[1]))
    d = np.diff(values)
    assert np.all(d <= 1e-12)
    # strict decrease until the fixed point is reached to rounding
    unconverged = np.array(values[:-1]) - values[-1] > 1e-10
    assert unconverged[0] and np.all(d[unconverged] < 0)
    assert fixed_point_residual(H, donaldson_map(H, p, bases[1])) < 1e-8


def test_balanced_metric_is_an_equality_case(perturbed, bases):
    p = GammaParams(0.5, perturbed)
    m = minimize_quantized_ding(p, bases[1])
    phi = fs_map(m.metric, bases[1], perturbed.grid)
    H = HermitianMetricK(1, twisted_gram(phi, p, bases[1]))
    assert quantized_ding(H, p, bases[1]) == pytest.approx((1 + 0.5) * ding_k(phi, p, bases[1]), abs=1e-6)


def test_minimizer_for_round_volume_is_the_identity(grid, psi0, bases):
    p = GammaParams(1.0, psi0)
    m = minimize_quantized_ding(p, bases[1], start=identity_metric(1))
    assert not m.diverged
    assert fixed_point_residual(identity_metric(1), m.metric) < 1e-10
    assert m.value == pytest.approx(quantized_ding(identity_metric(1), p, bases[1]), abs=1e-12)
    # from a generic start the minimizer is an automorphism pull-back of the identity:
    # FS(H) is then Kahler-Einstein, MA(FS(H)) = e^{-FS(H)} / Z
    m = minimize_quantized_ding(p, bases[1])
    assert m.value == pytest.approx(0.0, abs=1e-10)
    fs = fs_map(m.metric, bases[1], grid)
    ke = np.exp(-fs.u) / grid.integrate(np.exp(-fs.u))
    assert np.max(np.abs(ma_measure(fs).density - ke)) < 1e-6


def test_divergence_beyond_coercivity(psi0, bases):
    m = minimize_quantized_ding(GammaParams(1.5, psi0), bases[1])
    assert m.diverged and m.ray is not None
    assert abs(np.trace(m.ray)) < 1e-10


def test_gradient_matches_finite_differences(perturbed, bases, rng):
    p = GammaParams(0.5, perturbed)
    H = random_metric(2, rng)
    _, G = _ding_and_gradient(H, p, bases[2])
    C = H.cholesky
    for _ in range(3):
        A = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        A = (A + A.conj().T) / 2
        h = 1e-5
        f = lambda s: quantized_ding(HermitianMetricK(2, C @ expm_hermitian(s * A) @ C.conj().T), p, bases[2])
        fd = (f(h) - f(-h)) / (2 * h)
        assert fd == pytest.approx(np.real(np.vdot(G, A)), abs=1e-7)


def test_ray_quadrature_matches_grid_functional(perturbed, bases, rng):
    M = random_su2(rng)
    lam = np.array([0.4, -0.1, -0.3])
    quad = RayQuadrature(1, perturbed, M)
    for t in (0.5, 2.0):
        H = ray_metric(bases[1], M, lam, t)
        grid_value = quantized_ding(H, GammaParams(0.5, perturbed), bases[1])
        assert quad.ding(lam, t, 0.5) == pytest.approx(grid_value, abs=1e-6)


def test_rotation_matrix_is_unitary(bases, rng):
    U = rotation_matrix(bases[2], random_su2(rng))
    assert np.max(np.abs(U.conj().T @ U - np.eye(5))) < 1e-10


def test_delta_estimate_is_monotone_in_ray_count(psi0):
    p = GammaParams(0.5, psi0)
    small, rays = delta_k_estimate(1, p, n_rays=8, detail=True)
    large = delta_k_estimate(1, p, n_rays=12)
    assert large <= small
    assert small == pytest.approx(1.0, abs=0.05)
    with pytest.raises(ValueError):
        delta_k_estimate(1, p, n_rays=4)


def test_metric_serialization(rng):
    H = random_metric(2, rng)
    assert np.array_equal(HermitianMetricK.from_json(H.to_json()).H, H.H)
    with pytest.raises(np.linalg.LinAlgError):
        HermitianMetricK(1, -np.eye(3))
