import math

import numpy as np
import pytest

from faastune import gp


def test_matern_at_zero_distance_is_output_scale():
    k = gp.Kernel(2.5, np.array([0.7]))
    assert gp.matern52([0.3], [0.3], k) == pytest.approx(2.5, rel=1e-12)


def test_matern_closed_form_distance_one():
    # independent evaluation of sigma^2 (1 + sqrt5 r + 5 r^2/3) exp(-sqrt5 r) at r=1
    k = gp.Kernel(1.0, np.array([1.0]))
    expected = (1.0 + math.sqrt(5.0) + 5.0 / 3.0) * math.exp(-math.sqrt(5.0))
    assert gp.matern52([0.0], [1.0], k) == pytest.approx(expected, abs=1e-12)


def test_matern_symmetric_random_pairs():
    rng = np.random.default_rng(0)
    k = gp.Kernel(1.7, rng.uniform(0.2, 2.0, 3))
    for _ in range(20):
        a, b = rng.uniform(-2, 2, 3), rng.uniform(-2, 2, 3)
        assert gp.matern52(a, b, k) == pytest.approx(gp.matern52(b, a, k), rel=1e-12)


def test_kernel_rejects_nonpositive_hyperparameters():
    with pytest.raises(ValueError):
        gp.Kernel(0.0, np.array([1.0]))
    with pytest.raises(ValueError):
        gp.Kernel(1.0, np.array([1.0, -0.1]))


def test_lml_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, (15, 2))
    y = np.sin(3 * X[:, 0]) + 0.5 * X[:, 1] + 0.05 * rng.standard_normal(15)
    noise = np.full(15, 0.05**2)
    eps = 1e-5
    for _ in range(20):
        theta = np.concatenate(
            [[rng.uniform(math.log(0.3), math.log(3.0))],
             rng.uniform(math.log(0.1), math.log(1.5), 2)]
        )
        _, grads = gp.lml_value_and_grad(X, y, noise, gp.Kernel(math.exp(theta[0]), np.exp(theta[1:])))
        for j in range(len(theta)):
            tp, tm = theta.copy(), theta.copy()
            tp[j] += eps
            tm[j] -= eps
            lp, _ = gp.lml_value_and_grad(X, y, noise, gp.Kernel(math.exp(tp[0]), np.exp(tp[1:])))
            lm, _ = gp.lml_value_and_grad(X, y, noise, gp.Kernel(math.exp(tm[0]), np.exp(tm[1:])))
            fd = (lp - lm) / (2 * eps)
            rel = abs(fd - grads[j]) / max(abs(fd), abs(grads[j]), 1e-8)
            assert rel < 1e-4


def test_fit_beats_every_restart_init():
    rng = np.random.default_rng(5)
    X = rng.uniform(0, 1, (25, 1))
    y = np.sin(6 * X[:, 0]) + 0.1 * rng.standard_normal(25)
    model = gp.fit(X, y, noise_variances=np.full(25, 0.01), restarts=5, seed=9)
    best = gp.log_marginal_likelihood(model)
    # replicate the restart initializations used by fit
    span = model.x_hi - model.x_lo
    span = np.where(span > 0, span, 1.0)
    Xn = (X - model.x_lo) / span
    ystd = y.std()
    yn = (y - y.mean()) / ystd
    noise_n = np.full(25, 0.01) / ystd**2
    rng2 = np.random.default_rng(9)
    inits = [np.array([0.0, math.log(0.5)])]
    for _ in range(4):
        s2 = rng2.uniform(math.log(0.1), math.log(10.0))
        ell = rng2.uniform(math.log(0.05), math.log(2.0), size=1)
        inits.append(np.concatenate([[s2], ell]))
    for theta in inits:
        lml_init, _ = gp._lml_terms(Xn, yn, noise_n, theta[0], theta[1:])
        assert best >= lml_init - 1e-9


def test_lengthscale_recovery_within_factor_two():
    rng = np.random.default_rng(7)
    X = np.sort(rng.uniform(0, 1, 200))[:, None]
    true = gp.Kernel(1.0, np.array([0.3]))
    K = gp.matern52_matrix(X, X, true) + 1e-10 * np.eye(200)
    y = np.linalg.cholesky(K) @ rng.standard_normal(200)
    model = gp.fit(X, y, noise_variances=np.full(200, 1e-6), seed=1)
    ls = model.kernel.lengthscales[0]
    assert 0.15 <= ls <= 0.6


def test_noiseless_interpolation():
    X = np.linspace(0, 1, 12)[:, None]
    y = np.sin(4 * X[:, 0])
    model = gp.fit(X, y, noise_variances=np.zeros(12), seed=0)
    mu, var = model.posterior(X)
    assert np.abs(mu - y).max() < 1e-6
    assert var.max() < 1e-6


def test_prior_reversion_far_from_data():
    X = np.linspace(0, 1, 12)[:, None]
    y = np.sin(4 * X[:, 0])
    model = gp.fit(X, y, noise_variances=np.zeros(12), seed=0)
    mu, var = model.posterior(np.array([[50.0]]))
    assert mu[0] == pytest.approx(model.prior_mean_raw, rel=0.01, abs=1e-6)
    assert var[0] == pytest.approx(model.prior_variance_raw, rel=0.01)


def test_symmetric_observations_cancel():
    X = np.array([[0.0], [1.0]])
    y = np.array([1.0, -1.0])
    model = gp.GPModel(X, y, np.full(2, 1e-4), gp.Kernel(1.0, np.array([0.5])),
                       np.array([0.0]), np.array([1.0]))
    mu, _ = model.posterior(np.array([[0.5]]))
    assert abs(mu[0]) < 1e-9


def test_posterior_variance_never_exceeds_prior():
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 1, (30, 2))
    y = rng.standard_normal(30)
    model = gp.fit(X, y, noise_variances=np.full(30, 0.01), seed=3)
    grid = rng.uniform(-0.5, 1.5, (100, 2))
    _, var = model.posterior(grid)
    assert np.all(var <= model.prior_variance_raw + 1e-9)


def test_adding_observation_weakly_decreases_variance():
    rng = np.random.default_rng(4)
    X = rng.uniform(0, 1, (10, 1))
    y = np.cos(3 * X[:, 0])
    model = gp.fit(X, y, noise_variances=np.zeros(10), seed=0)
    grid = np.linspace(0, 1, 40)[:, None]
    _, var_before = model.posterior(grid)
    grown = model.with_observations(np.array([[0.37]]), np.array([0.5]), np.array([0.0]))
    _, var_after = grown.posterior(grid)
    assert np.all(var_after <= var_before + 1e-9)


def test_normalizer_absorbs_affine_rescaling():
    rng = np.random.default_rng(6)
    X = rng.uniform(0, 1, (20, 2))
    y = np.sin(3 * X[:, 0]) - X[:, 1]
    noise = np.full(20, 1e-4)
    m1 = gp.fit(X, y, noise_variances=noise, seed=11)
    scale = np.array([100.0, 0.01])
    shift = np.array([-5.0, 3.0])
    m2 = gp.fit(X * scale + shift, y, noise_variances=noise, seed=11)
    q = rng.uniform(0, 1, (15, 2))
    mu1, v1 = m1.posterior(q)
    mu2, v2 = m2.posterior(q * scale + shift)
    assert np.allclose(mu1, mu2, rtol=1e-8, atol=1e-10)
    assert np.allclose(v1, v2, rtol=1e-8, atol=1e-10)


def test_sample_posterior_qmc_mean_consistency():
    X = np.linspace(0, 1, 10)[:, None]
    y = np.sin(5 * X[:, 0])
    model = gp.fit(X, y, noise_variances=np.full(10, 0.01), seed=0)
    pt = np.array([[0.42]])
    mean, cov = model.posterior_joint(pt)
    draws = gp.sample_posterior(model, pt, 4096, qmc_mode=True, seed=5)
    se = math.sqrt(cov[0, 0] / 4096)
    assert abs(draws.mean() - mean[0]) <= 3 * se


def test_sample_posterior_zero_variance_returns_mean():
    X = np.linspace(0, 1, 8)[:, None]
    y = 2 * X[:, 0]
    model = gp.fit(X, y, noise_variances=np.zeros(8), seed=0)
    draws = gp.sample_posterior(model, X[3:4], 1, qmc_mode=False, seed=0)
    mu, _ = model.posterior(X[3:4])
    assert draws[0, 0] == pytest.approx(mu[0], abs=1e-6)


def test_qmc_estimator_no_worse_than_mc():
    # variance of the posterior-mean estimate of a smooth functional, paired seeds
    X = np.linspace(0, 1, 10)[:, None]
    y = np.sin(5 * X[:, 0])
    model = gp.fit(X, y, noise_variances=np.full(10, 0.04), seed=0)
    pts = np.linspace(0, 1, 5)[:, None]
    n = 256

    def estimates(qmc_mode):
        return np.array([
            gp.sample_posterior(model, pts, n, qmc_mode=qmc_mode, seed=s).mean()
            for s in range(30)
        ])

    var_qmc = estimates(True).var()
    var_mc = estimates(False).var()
    assert var_qmc <= var_mc


def test_fit_requires_two_points():
    with pytest.raises(ValueError):
        gp.fit(np.array([[0.0]]), np.array([1.0]))
