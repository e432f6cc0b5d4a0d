import csv
import math

import numpy as np
import pytest

from fano_gibbs.errors import IntegrabilityError
from fano_gibbs.functionals import GammaParams, solve_aubin
from fano_gibbs.sampler import (
    SphereHistogram,
    empirical_summary,
    h_minus1_norm,
    integrated_autocorrelation,
    mcmc_run,
    omega_k_beta,
    sinkhorn_w1,
)
from fano_gibbs.sphere import ma_measure, uniform_measure


@pytest.fixture(scope="module")
def uniform_run(psi0, bases):
    return mcmc_run(1, 1.0, GammaParams(-1.0, psi0), bases[1], 40_000, seed=3)


def test_run_at_beta_equal_k_is_uniform(uniform_run, grid):
    s = empirical_summary(uniform_run, uniform_measure(grid), n_height=4, n_azimuth=8)
    dev = np.abs(s.histogram.masses - 1 / 32) / s.bin_sigma()
    assert dev.max() < 3.5
    assert s.w1_to_target < 0.02
    assert s.h_minus1 < 0.05


def test_audit_and_drift(uniform_run):
    a = uniform_run.audit
    assert a["n"] == 1000
    assert a["mismatches"] == 0
    assert abs(a["z_score"]) < 4
    assert uniform_run.max_drift <= 1e-8
    assert 0.02 < uniform_run.acceptance < 1


def test_snapshots_are_thinned_and_labelled(uniform_run):
    assert len(uniform_run) == len(uniform_run.chain) == len(uniform_run.steps)
    assert uniform_run.thin >= uniform_run.iat
    assert uniform_run.points().shape == (len(uniform_run) * 3, 3)
    st = uniform_run.states()[0]
    assert len(st.config) == 3
    np.testing.assert_allclose(np.linalg.norm(st.xyz, axis=1), 1.0)


def test_same_seed_reproduces(psi0, bases):
    p = GammaParams(-1.0, psi0)
    a = mcmc_run(1, 1.0, p, bases[1], 10_000, seed=11, n_chains=4)
    b = mcmc_run(1, 1.0, p, bases[1], 10_000, seed=11, n_chains=4)
    np.testing.assert_array_equal(a.configs, b.configs)
    c = mcmc_run(1, 1.0, p, bases[1], 10_000, seed=12, n_chains=4)
    assert not np.array_equal(a.configs, c.configs)


def test_two_seeds_agree_within_band(psi0, bases, grid):
    p = GammaParams(-2.0, psi0)
    target = uniform_measure(grid)
    s = [empirical_summary(mcmc_run(2, 2.0, p, bases[2], 20_000, seed=s), target, 4, 8, n_boot=1) for s in (1, 2)]
    gap = sinkhorn_w1(s[0].histogram.masses, s[1].histogram.masses, s[0].histogram.centers)
    assert gap < 0.02


def test_non_reference_volume_approaches_aubin_solution(perturbed, bases):
    p = GammaParams(-1.0, perturbed)
    run = mcmc_run(1, 1.0, p, bases[1], 20_000, seed=5)
    aubin = ma_measure(solve_aubin(p))
    near = empirical_summary(run, aubin, 4, 8).w1_to_target
    far = empirical_summary(run, uniform_measure(perturbed.grid), 4, 8).w1_to_target
    assert near < far / 2


def test_summary_against_its_own_histogram_is_zero(uniform_run):
    hist = SphereHistogram.from_points(uniform_run.points())
    s = empirical_summary(uniform_run, hist, n_boot=1)
    assert s.w1_to_target < 1e-6
    assert s.h_minus1 < 1e-12


def test_summary_is_permutation_invariant(uniform_run, grid):
    target = uniform_measure(grid)
    perm = uniform_run.configs[:, ::-1, :]
    shuffled = type(uniform_run)(**{**uniform_run.__dict__, "configs": perm})
    a = empirical_summary(uniform_run, target, n_boot=1)
    b = empirical_summary(shuffled, target, n_boot=1)
    assert a.w1_to_target == pytest.approx(b.w1_to_target, abs=1e-12)


def test_sinkhorn_and_h_minus1_basic_properties():
    h = SphereHistogram(4, 8, np.full(32, 1 / 32))
    m = np.zeros((4, 8))
    m[0, 0] = m[3, 4] = 0.5
    g = SphereHistogram(4, 8, m)
    assert sinkhorn_w1(h.masses, h.masses, h.centers) == pytest.approx(0.0, abs=1e-8)
    ab = sinkhorn_w1(h.masses, g.masses, h.centers)
    ba = sinkhorn_w1(g.masses, h.masses, h.centers)
    assert ab > 0.2 and ab == pytest.approx(ba, rel=1e-6)
    assert h_minus1_norm(h, h) == 0.0
    assert h_minus1_norm(h, g) > 0


def test_histogram_of_uniform_density_is_flat(grid):
    h = SphereHistogram.from_density(uniform_measure(grid))
    np.testing.assert_allclose(h.masses, 1 / h.n_bins, atol=1e-12)


def test_csv_round_trip(tmp_path, psi0, bases):
    run = mcmc_run(1, 1.0, GammaParams(-1.0, psi0), bases[1], 10_000, n_chains=2)
    path = tmp_path / "run.csv"
    run.to_csv(path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(run) * run.N
    assert set(rows[0]) == {"chain", "step", "point", "polar", "azimuth"}
    theta = float(rows[0]["polar"])
    assert math.cos(theta) == pytest.approx(run.configs[0, 0, 2], abs=1e-12)


def test_argument_validation(psi0, bases):
    p = GammaParams(-1.0, psi0)
    with pytest.raises(ValueError):
        mcmc_run(2, 1.0, p, bases[1], 10_000)
    with pytest.raises(ValueError):
        mcmc_run(1, 1.0, p, bases[1], 100)
    with pytest.raises(IntegrabilityError):
        mcmc_run(1, -0.9, GammaParams(0.9, psi0), bases[1], 10_000)


def test_negative_beta_within_range_runs(psi0, bases):
    run = mcmc_run(1, -0.3, GammaParams(0.3, psi0), bases[1], 10_000, n_chains=4)
    assert run.audit["mismatches"] == 0


def test_iat_of_independent_and_ar1_series():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal((8, 20_000))
    assert integrated_autocorrelation(iid) == pytest.approx(1.0, abs=0.15)
    rho = 0.8
    x = np.zeros((8, 20_000))
    e = rng.standard_normal(x.shape)
    for t in range(1, x.shape[1]):
        x[:, t] = rho * x[:, t - 1] + e[:, t]
    assert integrated_autocorrelation(x) == pytest.approx((1 + rho) / (1 - rho), rel=0.15)


def test_omega_at_reference_volume_is_uniform(psi0, bases, grid):
    w = omega_k_beta(1, 1.0, GammaParams(-1.0, psi0), bases[1], grid)
    np.testing.assert_allclose(w.density, 1.0, atol=1e-8)


def test_omega_tracks_aubin_solution(perturbed, bases):
    grid = perturbed.grid
    p = GammaParams(-1.0, perturbed)
    w = omega_k_beta(1, 1.0, p, bases[1], grid)
    aubin = ma_measure(solve_aubin(p))
    to_aubin = grid.integrate(np.abs(w.density - aubin.density))
    to_uniform = grid.integrate(np.abs(w.density - 1.0))
    assert to_aubin < to_uniform
    assert w.mass == pytest.approx(1.0, abs=1e-10)


def test_omega_validation(psi0, bases, grid):
    p = GammaParams(-1.0, psi0)
    with pytest.raises(ValueError):
        omega_k_beta(2, 1.0, p, bases[2], grid)
    with pytest.raises(ValueError):
        omega_k_beta(1, -1.0, p, bases[1], grid)
