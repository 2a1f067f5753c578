"""Sample objective ``J_g`` and its analytic gradient.

Density ratios enter only through the log-ratio
``ell = log p_m0(x; phi) + c - log p_n(x)``, evaluated at both the data and
the noise sample. Divergence is reported through non-finite return values
rather than exceptions: an IS or PO run whose weights overflow can still
back off its line search and continue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_expit

from . import family
from .family import NonlinearityKind, parse_kind
from .models import ModelSpec

__all__ = [
    "EstimationProblem",
    "log_ratios",
    "objective_value",
    "objective_gradient",
    "value_and_gradient",
    "nc_logistic_form",
    "is_diverged",
]


@dataclass(frozen=True)
class EstimationProblem:
    """Fixed data and noise samples with their precomputed ``log p_n`` values."""

    model: ModelSpec
    kind: NonlinearityKind
    data: np.ndarray
    noise: np.ndarray
    data_logpn: np.ndarray
    noise_logpn: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", parse_kind(self.kind))
        if len(self.data) < 1 or len(self.noise) < 1:
            raise ValueError("need at least one data point and one noise point")
        if len(self.data_logpn) != len(self.data) or len(self.noise_logpn) != len(self.noise):
            raise ValueError("log p_n vectors must match the sample sizes")
        if not (np.all(np.isfinite(self.data_logpn)) and np.all(np.isfinite(self.noise_logpn))):
            raise ValueError("p_n must be nonzero on every data and noise point")

    @classmethod
    def build(cls, model: ModelSpec, kind, data, noise, aux) -> "EstimationProblem":
        data = model._as_batch(data)
        noise = model._as_batch(noise)
        return cls(model, kind, data, noise, aux.log_density(data), aux.log_density(noise))

    @property
    def n_data(self) -> int:
        return len(self.data)

    @property
    def n_noise(self) -> int:
        return len(self.noise)

    @property
    def gamma(self) -> float:
        """Ratio ``N_d / N_n`` of data to noise sample sizes."""
        return self.n_data / self.n_noise

    def with_kind(self, kind) -> "EstimationProblem":
        return EstimationProblem(self.model, kind, self.data, self.noise, self.data_logpn, self.noise_logpn)


def log_ratios(problem: EstimationProblem, theta) -> tuple[np.ndarray, np.ndarray]:
    theta = problem.model.check_theta(theta)
    ell_d = problem.model.log_pm(theta, problem.data) - problem.data_logpn
    ell_n = problem.model.log_pm(theta, problem.noise) - problem.noise_logpn
    return ell_d, ell_n


def _value(kind, ell_d, ell_n) -> float:
    if isinstance(kind, family.CustomPair):
        raise family.InvalidInputError(f"objective values are not defined for custom pair {kind.name!r}")
    g1, _ = family._g_pair(kind, ell_d)
    _, g2 = family._g_pair(kind, ell_n)
    with np.errstate(invalid="ignore"):
        return float(np.mean(g1) - np.mean(g2))


def _weighted_sum(w, psi) -> np.ndarray:
    # contiguous rows so numpy's pairwise summation applies along each row
    with np.errstate(invalid="ignore", over="ignore"):
        return np.ascontiguousarray((psi * w[:, None]).T).sum(axis=1)


def _gradient(problem, theta, ell_d, ell_n) -> np.ndarray:
    w_d, _ = family._weight_pair(problem.kind, ell_d)
    _, w_n = family._weight_pair(problem.kind, ell_n)
    psi_d = problem.model.psi(theta, problem.data)
    psi_n = problem.model.psi(theta, problem.noise)
    with np.errstate(invalid="ignore"):
        return _weighted_sum(w_d, psi_d) / problem.n_data - _weighted_sum(w_n, psi_n) / problem.n_noise


def objective_value(problem: EstimationProblem, theta) -> float:
    """``mean g1(q(x_i)) - mean g2(q(y_j))`` with every additive constant kept.

    Returns ``-inf`` when a term overflows towards the wrong side,
    ``+inf`` or ``nan`` when the evaluation diverged.
    """
    ell_d, ell_n = log_ratios(problem, theta)
    return _value(problem.kind, ell_d, ell_n)


def objective_gradient(problem: EstimationProblem, theta) -> np.ndarray:
    """Gradient ``mean w_d psi(x_i) - mean w_n psi(y_j)`` of the objective.

    Overflowing weights show up as non-finite entries; see :func:`is_diverged`.
    """
    theta = problem.model.check_theta(theta)
    ell_d, ell_n = log_ratios(problem, theta)
    return _gradient(problem, theta, ell_d, ell_n)


def value_and_gradient(problem: EstimationProblem, theta) -> tuple[float, np.ndarray]:
    theta = problem.model.check_theta(theta)
    ell_d, ell_n = log_ratios(problem, theta)
    return _value(problem.kind, ell_d, ell_n), _gradient(problem, theta, ell_d, ell_n)


def is_diverged(grad) -> bool:
    return not bool(np.all(np.isfinite(grad)))


def nc_logistic_form(problem: EstimationProblem, theta) -> float:
    """NC objective written as a logistic-regression log-likelihood.

    Data points are classified with probability ``sigmoid(ell)`` and noise
    points with ``sigmoid(-ell)``; the result equals :func:`objective_value`
    for the NC pair.
    """
    if problem.kind is not NonlinearityKind.NC:
        raise ValueError(f"logistic form only applies to the nc pair, got {problem.kind}")
    ell_d, ell_n = log_ratios(problem, theta)
    return float(np.mean(log_expit(ell_d)) + np.mean(log_expit(-ell_n)))
