"""Unnormalized parametric models with analytic scores.

A parameter vector ``theta`` is a flat float array laid out as
``[phi..., c]``: the model parameters first, the negative log-partition
parameter ``c`` in the final slot. For the ICA model ``phi`` is the unmixing
matrix ``B`` flattened row-major.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn

__all__ = [
    "DomainError",
    "ModelSpec",
    "IcaModel",
    "Gauss1DModel",
    "IcaGroundTruth",
    "pack_theta",
    "split_theta",
    "gg_constants",
    "ica_log_pm0",
    "ica_score",
    "ica_true_c",
]


class DomainError(ValueError):
    """Parameter or argument outside the model's domain."""


def pack_theta(phi, c: float) -> np.ndarray:
    return np.append(np.ravel(np.asarray(phi, dtype=float)), float(c))


def split_theta(theta) -> tuple[np.ndarray, float]:
    theta = np.asarray(theta, dtype=float)
    return theta[:-1], float(theta[-1])


def gg_constants(alpha: float) -> tuple[float, float]:
    """Constants ``(kappa, nu)`` of the unit-variance generalized Gaussian.

    The density is ``exp(-|s/nu|**alpha) / (kappa * nu)`` with
    ``kappa = (2/alpha) Gamma(1/alpha)`` and
    ``nu = sqrt(Gamma(1/alpha) / Gamma(3/alpha))``.
    """
    _check_alpha(alpha)
    g1 = gamma_fn(1.0 / alpha)
    kappa = 2.0 / alpha * g1
    nu = np.sqrt(g1 / gamma_fn(3.0 / alpha))
    return float(kappa), float(nu)


def _check_alpha(alpha):
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}")


def ica_log_pm0(B, alpha: float, x):
    """``-sum_i |(B x)_i / nu|**alpha`` for one point or a row-stacked batch."""
    _check_alpha(alpha)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    x = np.asarray(x, dtype=float)
    _, nu = gg_constants(alpha)
    y = x @ B.T
    out = -np.sum(np.abs(y / nu) ** alpha, axis=-1)
    return float(out) if x.ndim == 1 else out


def ica_score(B, alpha: float, x):
    """Gradient of :func:`ica_log_pm0` with respect to ``B``.

    Returns a ``(d, d)`` matrix for a single point and ``(N, d, d)`` for a
    batch. Rows with ``(B x)_i == 0`` get the zero subgradient.
    """
    _check_alpha(alpha)
    B = np.atleast_2d(np.asarray(B, dtype=float))
    x = np.asarray(x, dtype=float)
    _, nu = gg_constants(alpha)
    y = x @ B.T
    with np.errstate(divide="ignore", invalid="ignore"):
        g = -(alpha / nu) * np.sign(y) * np.abs(y / nu) ** (alpha - 1.0)
    g = np.where(y == 0.0, 0.0, g)
    return g[..., :, None] * x[..., None, :]


def ica_true_c(B, alpha: float) -> float:
    """Value of ``c`` that normalizes the ICA model at unmixing matrix ``B``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    sign, logdet = np.linalg.slogdet(B)
    if sign == 0 or not np.isfinite(logdet):
        raise np.linalg.LinAlgError("unmixing matrix is singular")
    kappa, nu = gg_constants(alpha)
    return float(logdet - B.shape[0] * np.log(kappa * nu))


class ModelSpec(abc.ABC):
    """An unnormalized log-density ``log p_m0(x; phi)`` with analytic score.

    Subclasses work on row-stacked batches ``X`` of shape ``(N, dim_x)``.
    The full model is ``log p_m(x; theta) = log p_m0(x; phi) + c``.
    """

    dim_x: int
    dim_phi: int

    @abc.abstractmethod
    def log_pm0(self, phi, X) -> np.ndarray:
        ...

    @abc.abstractmethod
    def score_phi(self, phi, X) -> np.ndarray:
        """Gradient of ``log_pm0`` in ``phi``, shape ``(N, dim_phi)``."""

    @property
    def dim_theta(self) -> int:
        return self.dim_phi + 1

    def log_pm(self, theta, X) -> np.ndarray:
        phi, c = split_theta(theta)
        return self.log_pm0(phi, X) + c

    def grad_log_partition(self, phi) -> np.ndarray:
        """Gradient of ``log Z(phi)``; only needed for the known-``c`` score."""
        raise NotImplementedError(f"{type(self).__name__} has no analytic log-partition gradient")

    def psi(self, theta, X, include_c: bool = True) -> np.ndarray:
        """Score of the model in ``theta``.

        With ``include_c`` this is the augmented score whose trailing ``c``
        column is identically 1. Without it the model is taken as normalized,
        ``c = -log Z(phi)``, and the result is the ordinary Fisher score
        ``score_phi - grad log Z``, which has zero mean under the model.
        """
        phi, _ = split_theta(theta)
        s = self.score_phi(phi, X)
        if not include_c:
            return s - self.grad_log_partition(phi)
        return np.hstack([s, np.ones((s.shape[0], 1))])

    def sample(self, theta, n: int, seed) -> np.ndarray:
        """Draw from the normalized density at ``theta`` (the data distribution)."""
        raise NotImplementedError(f"{type(self).__name__} has no ground-truth sampler")

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim_theta,):
            raise ValueError(f"theta must have shape ({self.dim_theta},), got {theta.shape}")
        return theta

    def _as_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and self.dim_x == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[1] != self.dim_x:
            raise ValueError(f"expected samples of shape (N, {self.dim_x}), got {X.shape}")
        return X


class IcaModel(ModelSpec):
    """Linear ICA model with generalized-Gaussian sources of fixed shape."""

    def __init__(self, dim: int, alpha: float):
        _check_alpha(alpha)
        self.dim_x = int(dim)
        self.dim_phi = self.dim_x * self.dim_x
        self.alpha = float(alpha)

    def unmixing(self, phi) -> np.ndarray:
        return np.asarray(phi, dtype=float).reshape(self.dim_x, self.dim_x)

    def log_pm0(self, phi, X):
        return ica_log_pm0(self.unmixing(phi), self.alpha, self._as_batch(X))

    def score_phi(self, phi, X):
        X = self._as_batch(X)
        return ica_score(self.unmixing(phi), self.alpha, X).reshape(X.shape[0], self.dim_phi)

    def grad_log_partition(self, phi):
        # log Z = -log|det B| + d log(kappa nu)
        return -np.linalg.inv(self.unmixing(phi)).T.ravel()

    def sample(self, theta, n: int, seed) -> np.ndarray:
        from .noise import gen_gaussian_sample

        B = self.unmixing(split_theta(theta)[0])
        s = gen_gaussian_sample(self.alpha, n * self.dim_x, seed).reshape(n, self.dim_x)
        return np.linalg.solve(B, s.T).T

    def __repr__(self):
        return f"IcaModel(dim={self.dim_x}, alpha={self.alpha})"


class Gauss1DModel(ModelSpec):
    """Zero-mean 1-D Gaussian with precision ``lam``: ``log p_m0 = -lam x**2 / 2``."""

    dim_x = 1
    dim_phi = 1

    @staticmethod
    def _lam(phi) -> float:
        lam = float(np.ravel(phi)[0])
        if not lam > 0:
            raise DomainError(f"precision must be positive, got {lam}")
        return lam

    def log_pm0(self, phi, X):
        X = self._as_batch(X)
        return -0.5 * self._lam(phi) * X[:, 0] ** 2

    def score_phi(self, phi, X):
        X = self._as_batch(X)
        self._lam(phi)
        return -0.5 * X**2

    def grad_log_partition(self, phi):
        return np.array([-0.5 / self._lam(phi)])

    @staticmethod
    def true_c(lam: float) -> float:
        return 0.5 * np.log(lam / (2.0 * np.pi))

    @staticmethod
    def fisher_information(lam: float) -> float:
        return 1.0 / (2.0 * lam**2)

    def true_theta(self, lam: float) -> np.ndarray:
        return pack_theta([lam], self.true_c(lam))

    def sample(self, theta, n: int, seed) -> np.ndarray:
        lam = self._lam(split_theta(theta)[0])
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n, 1)) / np.sqrt(lam)

    def __repr__(self):
        return "Gauss1DModel()"


@dataclass(frozen=True)
class IcaGroundTruth:
    """Mixing matrix ``A`` with ``B_star = inv(A)`` and the normalizing ``c_star``."""

    A: np.ndarray
    B_star: np.ndarray
    alpha: float
    c_star: float
    seed: int | None = None

    @classmethod
    def from_mixing(cls, A, alpha: float, seed=None) -> "IcaGroundTruth":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.linalg.inv(A)
        return cls(A=A, B_star=B, alpha=float(alpha), c_star=ica_true_c(B, alpha), seed=seed)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def model(self) -> IcaModel:
        return IcaModel(self.dim, self.alpha)

    @property
    def theta_star(self) -> np.ndarray:
        return pack_theta(self.B_star, self.c_star)

    def sample(self, n: int, seed) -> np.ndarray:
        """Draw ``x = A s`` with i.i.d. unit-variance generalized-Gaussian sources."""
        from .noise import gen_gaussian_sample

        s = gen_gaussian_sample(self.alpha, n * self.dim, seed).reshape(n, self.dim)
        return s @ self.A.T

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "A": self.A.ravel().tolist(), "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "IcaGroundTruth":
        flat = np.asarray(obj["A"], dtype=float)
        d = int(round(np.sqrt(flat.size)))
        if d * d != flat.size:
            raise ValueError(f"A has {flat.size} entries, not a square matrix")
        return cls.from_mixing(flat.reshape(d, d), obj["alpha"], seed=obj.get("seed"))
