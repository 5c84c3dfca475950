"""Gaussian-process regression with a Matern-5/2 ARD kernel and fixed
per-point observation noise.

Inputs are normalized to the unit hypercube and targets standardized
internally, so callers work in raw units throughout. Hyperparameters are
fitted by multi-start gradient ascent on the log marginal likelihood, with
analytic gradients (finite-difference-checked in the test suite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.stats import norm, qmc

__all__ = [
    "Kernel",
    "GPModel",
    "matern52",
    "fit",
    "posterior",
    "sample_posterior",
    "log_marginal_likelihood",
]

_SQRT5 = math.sqrt(5.0)
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4)

LENGTHSCALE_BOUNDS = (1e-3, 10.0)
OUTPUT_SCALE_BOUNDS = (1e-4, 1e4)


@dataclass(frozen=True)
class Kernel:
    """Matern-5/2 with output scale sigma^2 and per-dimension lengthscales."""

    output_scale: float
    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if self.output_scale <= 0 or np.any(ls <= 0):
            raise ValueError("kernel hyperparameters must be positive")
        object.__setattr__(self, "lengthscales", ls)


def _scaled_dist(X1: np.ndarray, X2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    U1 = X1 / lengthscales
    U2 = X2 / lengthscales
    d2 = np.sum(U1**2, axis=1)[:, None] + np.sum(U2**2, axis=1)[None, :] - 2.0 * U1 @ U2.T
    return np.sqrt(np.clip(d2, 0.0, None))


def matern52_matrix(X1: np.ndarray, X2: np.ndarray, kernel: Kernel) -> np.ndarray:
    r = _scaled_dist(np.atleast_2d(X1), np.atleast_2d(X2), kernel.lengthscales)
    return kernel.output_scale * (1.0 + _SQRT5 * r + 5.0 * r * r / 3.0) * np.exp(-_SQRT5 * r)


def matern52(x1, x2, kernel: Kernel) -> float:
    """Covariance between two points: sigma^2 (1 + sqrt5 r + 5r^2/3) exp(-sqrt5 r)."""
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x1.shape != x2.shape or x1.shape[-1] != len(kernel.lengthscales):
        raise ValueError("point dimensions must match kernel lengthscales")
    return float(matern52_matrix(x1[None, :], x2[None, :], kernel)[0, 0])


def _chol_with_jitter(A: np.ndarray) -> tuple[np.ndarray, float]:
    for jit in _JITTERS:
        try:
            L = cholesky(A + jit * np.eye(len(A)), lower=True)
            return L, jit
        except np.linalg.LinAlgError:
            continue
    raise np.linalg.LinAlgError("ill-conditioned covariance: Cholesky failed at max jitter")


class GPModel:
    """Fitted GP: constant mean (training mean), Matern-5/2 covariance,
    fixed per-point noise. Immutable once constructed."""

    def __init__(self, X_raw, y_raw, noise_raw, kernel, x_lo, x_hi):
        self.X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        self.y_raw = np.asarray(y_raw, dtype=float)
        self.noise_raw = np.asarray(noise_raw, dtype=float)
        self.kernel = kernel
        self.x_lo = np.asarray(x_lo, dtype=float)
        self.x_hi = np.asarray(x_hi, dtype=float)

        self.y_mean = float(self.y_raw.mean())
        std = float(self.y_raw.std())
        self.y_std = std if std > 1e-12 else 1.0

        self.Xn = self._normalize(self.X_raw)
        self.yn = (self.y_raw - self.y_mean) / self.y_std
        self.noise_n = self.noise_raw / self.y_std**2

        K = matern52_matrix(self.Xn, self.Xn, kernel) + np.diag(self.noise_n)
        self.L, self.jitter = _chol_with_jitter(K)
        self.alpha = cho_solve((self.L, True), self.yn)

    # -- coordinate handling -------------------------------------------------

    def _normalize(self, X: np.ndarray) -> np.ndarray:
        span = self.x_hi - self.x_lo
        span = np.where(span > 0, span, 1.0)
        return (np.atleast_2d(X) - self.x_lo) / span

    @property
    def n(self) -> int:
        return len(self.y_raw)

    @property
    def prior_variance_raw(self) -> float:
        return self.kernel.output_scale * self.y_std**2

    @property
    def prior_mean_raw(self) -> float:
        return self.y_mean

    # -- prediction ------------------------------------------------------------

    def posterior(self, X_star) -> tuple[np.ndarray, np.ndarray]:
        """Pointwise posterior mean and variance in raw target units."""
        Xs = self._normalize(np.atleast_2d(np.asarray(X_star, dtype=float)))
        Ks = matern52_matrix(self.Xn, Xs, self.kernel)
        mean_n = Ks.T @ self.alpha
        v = solve_triangular(self.L, Ks, lower=True)
        var_n = np.clip(self.kernel.output_scale - np.sum(v * v, axis=0), 0.0, None)
        return mean_n * self.y_std + self.y_mean, var_n * self.y_std**2

    def posterior_joint(self, X_star) -> tuple[np.ndarray, np.ndarray]:
        """Joint posterior mean vector and covariance matrix (raw units)."""
        Xs = self._normalize(np.atleast_2d(np.asarray(X_star, dtype=float)))
        Ks = matern52_matrix(self.Xn, Xs, self.kernel)
        Kss = matern52_matrix(Xs, Xs, self.kernel)
        mean_n = Ks.T @ self.alpha
        v = solve_triangular(self.L, Ks, lower=True)
        cov_n = Kss - v.T @ v
        return mean_n * self.y_std + self.y_mean, cov_n * self.y_std**2

    def loo_predictive(self) -> tuple[np.ndarray, np.ndarray]:
        """Leave-one-out predictive mean/variance of each observation, raw
        units; the variance includes the point's own noise."""
        H = cho_solve((self.L, True), np.eye(self.n))
        hdiag = np.diag(H)
        mean_n = self.yn - self.alpha / hdiag
        var_n = 1.0 / hdiag
        return mean_n * self.y_std + self.y_mean, var_n * self.y_std**2

    def with_observations(self, X_new, y_new, noise_new) -> "GPModel":
        """Condition on extra observations keeping hyperparameters and the
        coordinate frame fixed (used for fantasy batch selection)."""
        X = np.vstack([self.X_raw, np.atleast_2d(np.asarray(X_new, dtype=float))])
        y = np.concatenate([self.y_raw, np.atleast_1d(y_new)])
        noise = np.concatenate([self.noise_raw, np.atleast_1d(noise_new)])
        model = GPModel.__new__(GPModel)
        GPModel.__init__(model, X, y, noise, self.kernel, self.x_lo, self.x_hi)
        # keep the original standardizer so fantasy values do not shift scales
        model.y_mean, model.y_std = self.y_mean, self.y_std
        model.yn = (model.y_raw - model.y_mean) / model.y_std
        model.noise_n = model.noise_raw / model.y_std**2
        K = matern52_matrix(model.Xn, model.Xn, model.kernel) + np.diag(model.noise_n)
        model.L, model.jitter = _chol_with_jitter(K)
        model.alpha = cho_solve((model.L, True), model.yn)
        return model


def posterior(model: GPModel, x_star) -> tuple[np.ndarray, np.ndarray]:
    return model.posterior(x_star)


# -- marginal likelihood ---------------------------------------------------


def _lml_terms(Xn, yn, noise_n, log_sigma2, log_ls):
    """LML and its gradient w.r.t. (log sigma^2, log lengthscales)."""
    n, d = Xn.shape
    sigma2 = math.exp(log_sigma2)
    ls = np.exp(log_ls)
    kernel = Kernel(sigma2, ls)
    Kpure = matern52_matrix(Xn, Xn, kernel)
    K = Kpure + np.diag(noise_n)
    try:
        L, _ = _chol_with_jitter(K)
    except np.linalg.LinAlgError:
        return -np.inf, np.zeros(1 + d)
    alpha = cho_solve((L, True), yn)
    lml = -0.5 * yn @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2.0 * math.pi)

    # dLML/dtheta = 0.5 tr((alpha alpha^T - K^-1) dK/dtheta)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv

    grads = np.empty(1 + d)
    grads[0] = 0.5 * np.sum(W * Kpure)  # dK/dlog sigma2 = Kpure

    r = _scaled_dist(Xn, Xn, ls)
    base = (5.0 / 3.0) * sigma2 * (1.0 + _SQRT5 * r) * np.exp(-_SQRT5 * r)
    for j in range(d):
        diff = (Xn[:, j][:, None] - Xn[:, j][None, :]) / ls[j]
        grads[1 + j] = 0.5 * np.sum(W * (base * diff * diff))
    return float(lml), grads


def log_marginal_likelihood(model: GPModel) -> float:
    lml, _ = _lml_terms(
        model.Xn,
        model.yn,
        model.noise_n,
        math.log(model.kernel.output_scale),
        np.log(model.kernel.lengthscales),
    )
    return lml


def lml_value_and_grad(Xn, yn, noise_n, kernel: Kernel):
    """Exposed for the finite-difference gradient oracle."""
    return _lml_terms(Xn, yn, noise_n, math.log(kernel.output_scale), np.log(kernel.lengthscales))


def fit(
    X,
    y,
    noise_variances=None,
    restarts: int = 5,
    seed: int = 0,
    bounds: tuple | None = None,
    iters: int = 120,
    lr: float = 0.08,
) -> GPModel:
    """Fit hyperparameters by Adam ascent on the LML from multiple restarts.

    noise_variances are per-point observation noise in raw target units
    (replicate variance of the mean when available); defaults to a 1e-6 floor.
    bounds, when given, fixes the input normalization box so that separately
    fitted models share one coordinate frame.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 observations")
    if noise_variances is None:
        noise = np.full(n, 1e-6)  # global floor when no replicate estimate exists
    else:
        noise = np.asarray(noise_variances, dtype=float)
        if noise.ndim == 0:
            noise = np.full(n, float(noise))
        if np.any(noise < 0):
            raise ValueError("noise variances must be >= 0")

    if bounds is not None:
        x_lo, x_hi = (np.asarray(b, dtype=float) for b in bounds)
    else:
        x_lo, x_hi = X.min(axis=0), X.max(axis=0)

    span = np.where(x_hi - x_lo > 0, x_hi - x_lo, 1.0)
    Xn = (X - x_lo) / span
    y_mean = y.mean()
    y_std_ = y.std() if y.std() > 1e-12 else 1.0
    yn = (y - y_mean) / y_std_
    noise_n = noise / y_std_**2

    rng = np.random.default_rng(seed)
    lo = np.log([OUTPUT_SCALE_BOUNDS[0]] + [LENGTHSCALE_BOUNDS[0]] * d)
    hi = np.log([OUTPUT_SCALE_BOUNDS[1]] + [LENGTHSCALE_BOUNDS[1]] * d)

    inits = [np.concatenate([[0.0], np.full(d, math.log(0.5))])]
    for _ in range(max(0, restarts - 1)):
        s2 = rng.uniform(math.log(0.1), math.log(10.0))
        ell = rng.uniform(math.log(0.05), math.log(2.0), size=d)
        inits.append(np.concatenate([[s2], ell]))

    best_theta, best_lml = None, -np.inf
    for theta0 in inits:
        theta = theta0.copy()
        m = np.zeros_like(theta)
        v = np.zeros_like(theta)
        for it in range(1, iters + 1):
            lml, g = _lml_terms(Xn, yn, noise_n, theta[0], theta[1:])
            if lml > best_lml:
                best_lml, best_theta = lml, theta.copy()
            if not np.isfinite(lml):
                break
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1.0 - 0.9**it)
            vhat = v / (1.0 - 0.999**it)
            theta = theta + lr * mhat / (np.sqrt(vhat) + 1e-8)
            theta = np.clip(theta, lo, hi)
        lml, _ = _lml_terms(Xn, yn, noise_n, theta[0], theta[1:])
        if lml > best_lml:
            best_lml, best_theta = lml, theta.copy()

    if best_theta is None or not np.isfinite(best_lml):
        raise np.linalg.LinAlgError("ill-conditioned: no restart produced a valid fit")
    kernel = Kernel(math.exp(best_theta[0]), np.exp(best_theta[1:]))
    return GPModel(X, y, noise, kernel, x_lo, x_hi)


# -- posterior sampling ------------------------------------------------------


def standard_normal_matrix(n_draws: int, dim: int, qmc_mode: bool, seed: int) -> np.ndarray:
    """(n_draws, dim) standard normals; QMC mode maps a scrambled Sobol
    sequence through the Gaussian inverse CDF."""
    if qmc_mode:
        sob = qmc.Sobol(d=dim, scramble=True, seed=seed)
        if n_draws & (n_draws - 1) == 0:
            u = sob.random_base2(int(math.log2(n_draws)))
        else:
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                u = sob.random(n_draws)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        return norm.ppf(u)
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n_draws, dim))


def sample_posterior(model: GPModel, points, n_draws: int, qmc_mode: bool = True, seed: int = 0) -> np.ndarray:
    """Joint posterior draws at the given points, (n_draws, num_points)."""
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    mean, cov = model.posterior_joint(points)
    p = len(mean)
    if float(np.max(np.diag(cov), initial=0.0)) < 1e-16:
        return np.tile(mean, (n_draws, 1))
    Lp, _ = _chol_with_jitter(cov)
    z = standard_normal_matrix(n_draws, p, qmc_mode, seed)
    return mean[None, :] + z @ Lp.T
