"""Nonlinearity pairs (g1, g2) defining the estimator family.

Every quantity is evaluated from the log-ratio ``ell = log p_m - log p_n``;
the ratio ``q = exp(ell)`` is never formed where that could overflow.
The five named members are

======  ===================  ==============
kind    g1(q)                g2(q)
======  ===================  ==============
is      log q                q
po      q                    q**2 / 2
nc      log(q / (1 + q))     log(1 + q)
invpo   -1 / (2 q**2)        -1 / q
invis   -1 / q               log q
======  ===================  ==============

All pairs satisfy ``g2'(q) / g1'(q) = q``, which is what makes the true
log-density the unique stationary point of the objective. For ``invpo`` the
sign of g2 is negative: with ``+1/q`` the function would be decreasing and
the pairing identity would fail.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from scipy.special import expit

__all__ = [
    "NonlinearityKind",
    "CustomPair",
    "InvalidInputError",
    "parse_kind",
    "g_values",
    "weights_from_logratio",
    "log_g2_prime",
    "g2_prime",
    "check_pairing",
    "ALL_KINDS",
]


class InvalidInputError(ValueError):
    """Raised for non-finite log-ratios or out-of-domain arguments."""


class NonlinearityKind(str, enum.Enum):
    IS = "is"
    PO = "po"
    NC = "nc"
    INVPO = "invpo"
    INVIS = "invis"

    def __str__(self) -> str:
        return self.value


ALL_KINDS = tuple(NonlinearityKind)


@dataclass(frozen=True)
class CustomPair:
    """A user-supplied pair given through ``log g2'`` as a function of ell.

    ``g1' = g2' / q`` follows from the pairing identity, so the gradient
    weights and all asymptotic quantities are available in closed form.
    The objective values g1, g2 themselves are not, and custom pairs are
    therefore rejected by :func:`g_values`.
    """

    name: str
    log_g2_prime: Callable[[np.ndarray], np.ndarray]

    def __str__(self) -> str:
        return self.name


Kind = Union[NonlinearityKind, CustomPair]


def parse_kind(kind) -> Kind:
    """Accept a kind, a custom pair, or a lowercase token such as ``"nc"``."""
    if isinstance(kind, (NonlinearityKind, CustomPair)):
        return kind
    try:
        return NonlinearityKind(str(kind).lower())
    except ValueError:
        tokens = ", ".join(k.value for k in NonlinearityKind)
        raise InvalidInputError(f"unknown nonlinearity {kind!r}; expected one of {tokens}") from None


def _as_logratio(ell):
    ell = np.asarray(ell, dtype=float)
    if not np.all(np.isfinite(ell)):
        raise InvalidInputError("log-ratio must be finite")
    return ell


def _softplus(x):
    return np.logaddexp(0.0, x)


def _scalar_or_array(x, like):
    return float(x) if np.ndim(like) == 0 else x


def g_values(kind, ell):
    """Return ``(g1(q), g2(q))`` at ``q = exp(ell)``.

    Exponentials saturate to ``+inf`` instead of raising; the objective layer
    treats infinite terms as divergence.

    >>> g_values("nc", 0.0)
    (-0.6931471805599453, 0.6931471805599453)
    """
    kind = parse_kind(kind)
    if isinstance(kind, CustomPair):
        raise InvalidInputError(f"objective values are not defined for custom pair {kind.name!r}")
    g1, g2 = _g_pair(kind, _as_logratio(ell))
    return _scalar_or_array(g1, ell), _scalar_or_array(g2, ell)


def log_g2_prime(kind, ell):
    """``log g2'(q)`` at ``q = exp(ell)``; finite for every finite ell."""
    kind = parse_kind(kind)
    x = _as_logratio(ell)
    if isinstance(kind, CustomPair):
        out = np.asarray(kind.log_g2_prime(x), dtype=float)
    elif kind is NonlinearityKind.NC:
        out = -_softplus(x)
    elif kind is NonlinearityKind.IS:
        out = np.zeros_like(x)
    elif kind is NonlinearityKind.INVIS:
        out = -x
    elif kind is NonlinearityKind.PO:
        out = x.copy()
    else:
        out = -2.0 * x
    return _scalar_or_array(out, ell)


def g2_prime(kind, ell):
    with np.errstate(over="ignore"):
        return np.exp(log_g2_prime(kind, ell))


def weights_from_logratio(kind, ell):
    """Gradient weights ``(w_d, w_n) = (g1'(q) q, g2'(q) q)``.

    The objective gradient is ``E_d[w_d psi] - E_n[w_n psi]``. Since
    ``g1' = g2' / q`` we have ``w_d = g2'(q)`` and ``w_n = q g2'(q)``.
    """
    kind = parse_kind(kind)
    w_d, w_n = _weight_pair(kind, _as_logratio(ell))
    return _scalar_or_array(w_d, ell), _scalar_or_array(w_n, ell)


def check_pairing(kind, q: float, h: float | None = None, tol: float = 1e-6) -> bool:
    """Check ``g2'(q) / g1'(q) = q`` with central differences.

    ``h`` defaults to ``1e-4 * q`` so the check is scale-free across many
    decades of q.
    """
    if not q > 0:
        raise InvalidInputError(f"q must be positive, got {q}")
    if h is None:
        h = 1e-4 * q
    if not 0 < h < q:
        raise InvalidInputError(f"step h={h} must satisfy 0 < h < q")
    g1p, g2p = (a - b for a, b in zip(g_values(kind, np.log(q + h)), g_values(kind, np.log(q - h))))
    # the common 1/(2h) factor cancels in the ratio
    return bool(abs(g2p / g1p - q) <= tol * q)


# Unchecked kernels shared with the objective layer, where +/-inf log-ratios
# must propagate instead of raising.


def _g_pair(kind: NonlinearityKind, x: np.ndarray):
    with np.errstate(over="ignore", invalid="ignore"):
        if kind is NonlinearityKind.NC:
            return -_softplus(-x), _softplus(x)
        if kind is NonlinearityKind.IS:
            return x.copy(), np.exp(x)
        if kind is NonlinearityKind.INVIS:
            return -np.exp(-x), x.copy()
        if kind is NonlinearityKind.PO:
            return np.exp(x), 0.5 * np.exp(2.0 * x)
        return -0.5 * np.exp(-2.0 * x), -np.exp(-x)


def _weight_pair(kind: Kind, x: np.ndarray):
    with np.errstate(over="ignore", invalid="ignore"):
        if kind is NonlinearityKind.NC:
            return expit(-x), expit(x)
        if kind is NonlinearityKind.IS:
            return np.ones_like(x), np.exp(x)
        if kind is NonlinearityKind.INVIS:
            return np.exp(-x), np.ones_like(x)
        if kind is NonlinearityKind.PO:
            return np.exp(x), np.exp(2.0 * x)
        if kind is NonlinearityKind.INVPO:
            return np.exp(-2.0 * x), np.exp(-x)
        lg = np.asarray(kind.log_g2_prime(x), dtype=float)
        return np.exp(lg), np.exp(lg + x)
