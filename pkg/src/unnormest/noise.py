"""Auxiliary (noise) distributions: exact log-densities and seeded samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular

from .models import DomainError, gg_constants, ica_log_pm0, ica_true_c

__all__ = [
    "GaussianAux",
    "GenGaussAux",
    "fit_gaussian",
    "aux_log_density",
    "aux_sample",
    "aux_from_json",
    "gen_gaussian_sample",
]


def gen_gaussian_sample(alpha: float, n: int, seed) -> np.ndarray:
    """Zero-mean, unit-variance generalized-Gaussian draws.

    The density is proportional to ``exp(-|s/nu|**alpha)``. We draw
    ``G ~ Gamma(1/alpha)``, set ``|s| = nu * G**(1/alpha)`` and attach an
    independent random sign.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    _, nu = gg_constants(alpha)
    rng = np.random.default_rng(seed)
    g = rng.standard_gamma(1.0 / alpha, size=n)
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return sign * nu * g ** (1.0 / alpha)


@dataclass(frozen=True)
class GaussianAux:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * np.abs(cov).max()):
            raise ValueError("covariance must be symmetric")
        try:
            L, _ = cho_factor(cov, lower=True)
        except np.linalg.LinAlgError:
            raise np.linalg.LinAlgError("covariance is not positive definite") from None
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "chol", np.tril(L))

    @property
    def dim(self) -> int:
        return self.mean.size

    def log_density(self, X) -> np.ndarray:
        X = _as_batch(X, self.dim)
        z = solve_triangular(self.chol, (X - self.mean).T, lower=True)
        half_logdet = np.sum(np.log(np.diag(self.chol)))
        return -0.5 * np.sum(z * z, axis=0) - half_logdet - 0.5 * self.dim * np.log(2.0 * np.pi)

    def sample(self, n: int, seed) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self.mean + rng.standard_normal((n, self.dim)) @ self.chol.T

    def to_json(self) -> dict:
        return {"type": "gaussian", "mean": self.mean.tolist(), "cov": self.cov.tolist()}


@dataclass(frozen=True)
class GenGaussAux:
    """Density of ``x = inv(B) s`` with i.i.d. generalized-Gaussian sources.

    With ``B = B_star`` this is exactly the ICA data density, which is
    what the ``p_n = p_d`` checks need.
    """

    alpha: float
    B: np.ndarray
    c_star: float = field(default=None)

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "c_star", ica_true_c(B, self.alpha))

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    def log_density(self, X) -> np.ndarray:
        X = _as_batch(X, self.dim)
        return ica_log_pm0(self.B, self.alpha, X) + self.c_star

    def sample(self, n: int, seed) -> np.ndarray:
        s = gen_gaussian_sample(self.alpha, n * self.dim, seed).reshape(n, self.dim)
        return np.linalg.solve(self.B, s.T).T

    def to_json(self) -> dict:
        return {"type": "gengauss", "alpha": self.alpha, "B": self.B.tolist()}


def _as_batch(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if dim > 1 or X.size == 1 else X[:, None]
    if X.shape[1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got {X.shape[1]}")
    return X


def fit_gaussian(data, reg: float = 0.0) -> GaussianAux:
    """Gaussian with the sample mean and covariance of ``data``.

    The covariance uses denominator ``n``. ``reg`` adds ``reg * I`` to the
    covariance for near-singular data.
    """
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples to fit a {d}-dimensional Gaussian, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / n + reg * np.eye(d)
    try:
        return GaussianAux(mean, cov)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "sample covariance is singular; pass a positive regularization (reg) to fit_gaussian"
        ) from None


def aux_log_density(spec, x):
    out = spec.log_density(x)
    return float(out[0]) if np.ndim(x) == 1 and (spec.dim > 1 or np.size(x) == 1) else out


def aux_sample(spec, n: int, seed) -> np.ndarray:
    return spec.sample(n, seed)


def aux_from_json(obj: dict):
    kind = obj.get("type")
    if kind == "gaussian":
        return GaussianAux(obj["mean"], obj["cov"])
    if kind == "gengauss":
        return GenGaussAux(obj["alpha"], obj["B"])
    raise ValueError(f"unknown auxiliary type {kind!r}")
