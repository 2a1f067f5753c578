"""Monte-Carlo and quadrature estimates of the asymptotic covariance.

All integrals are expectations under the data density ``p_d = p_m(theta*)``
of functions of the augmented score ``psi`` and ``g2'(q)``, with
``q = p_d / p_n``:

* ``I       = E_d[g2'(q) psi psi^T]``
* ``A_gamma = E_d[q g2'(q)**2 psi psi^T]``
* ``A       = E_d[g2'(q)**2 psi psi^T]``
* ``B       = v v^T`` with ``v = E_d[g2'(q) psi]``

and the covariance of ``sqrt(N_d) (theta_hat - theta*)`` is
``Sigma(gamma) = I^-1 [gamma A_gamma + A - (1 + gamma) B] I^-1``.
Weights are formed from ``ell = log q`` and ``log g2'`` only.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import family
from .family import parse_kind

__all__ = [
    "SingularMatrixError",
    "BuildingBlocks",
    "AsymptoticReport",
    "estimate_I",
    "estimate_building_blocks",
    "quadrature_building_blocks",
    "sigma_g",
    "predicted_mse",
    "optimal_gamma",
    "gamma_objective",
    "fisher_information",
    "optimal_noise_logdensity",
    "divergence_check",
    "asymptotic_report",
]

SHARD_SIZE = 100_000
COND_LIMIT = 1e10


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, msg, cond=np.inf):
        super().__init__(msg)
        self.cond = cond


def _symmetrize(M):
    return 0.5 * (M + M.T)


def _shard_seeds(seed, n_mc):
    n_shards = max(1, -(-n_mc // SHARD_SIZE))
    children = np.random.SeedSequence(seed).spawn(n_shards)
    sizes = [SHARD_SIZE] * (n_shards - 1) + [n_mc - SHARD_SIZE * (n_shards - 1)]
    return list(zip(children, sizes))


@dataclass
class BuildingBlocks:
    """Raw Monte-Carlo moments shared by every derived quantity."""

    I: np.ndarray
    A_gamma: np.ndarray
    A: np.ndarray
    B: np.ndarray
    v: np.ndarray
    n_mc: int
    seed: int | None = None

    def sigma(self, gamma: float) -> np.ndarray:
        return sigma_g(self.I, self.A_gamma, self.A, self.B, gamma)

    def gamma_hat(self) -> float:
        return optimal_gamma(self.I, self.A_gamma, self.A, self.B)


def _accumulate(model, theta_star, aux, kind, X, include_c):
    """Per-shard sums of the four moment integrands."""
    kind = parse_kind(kind)
    theta_star = model.check_theta(theta_star)
    ell = model.log_pm(theta_star, X) - aux.log_density(X)
    lg = family.log_g2_prime(kind, ell)
    psi = model.psi(theta_star, X, include_c=include_c)
    with np.errstate(over="ignore", invalid="ignore"):
        w_i = np.exp(lg)
        w_a = np.exp(2.0 * lg)
        w_ag = np.exp(ell + 2.0 * lg)
        return (
            (psi * w_i[:, None]).T @ psi,
            (psi * w_ag[:, None]).T @ psi,
            (psi * w_a[:, None]).T @ psi,
            psi.T @ w_i,
        )


def estimate_building_blocks(
    model, theta_star, aux, kind, n_mc: int = 1_000_000, seed=0, include_c: bool = True
) -> BuildingBlocks:
    """Monte-Carlo estimates of ``I, A_gamma, A, B`` from one ``p_d`` sample.

    Samples are drawn from the model at ``theta_star`` in shards of
    ``SHARD_SIZE``; shard seeds are spawned from ``seed`` and partial sums are
    combined in shard order, so the result is independent of scheduling.
    """
    sums = None
    for child, size in _shard_seeds(seed, n_mc):
        X = model.sample(theta_star, size, child)
        part = _accumulate(model, theta_star, aux, kind, X, include_c)
        sums = part if sums is None else tuple(s + p for s, p in zip(sums, part))
    I, A_gamma, A, v = (s / n_mc for s in sums)
    return BuildingBlocks(
        I=_symmetrize(I),
        A_gamma=_symmetrize(A_gamma),
        A=_symmetrize(A),
        B=np.outer(v, v),
        v=v,
        n_mc=n_mc,
        seed=seed if isinstance(seed, int) else None,
    )


def estimate_I(model, theta_star, aux, kind, n_mc: int = 1_000_000, seed=0, include_c: bool = True):
    """Monte-Carlo estimate of ``I = E_d[g2'(q) psi psi^T]``."""
    return estimate_building_blocks(model, theta_star, aux, kind, n_mc, seed, include_c).I


def fisher_information(model, theta_star, n_mc: int = 1_000_000, seed=0) -> np.ndarray:
    """``E_d[s s^T]`` for the Fisher score ``s`` of the normalized model."""
    total = None
    for child, size in _shard_seeds(seed, n_mc):
        X = model.sample(theta_star, size, child)
        s = model.psi(theta_star, X, include_c=False)
        part = s.T @ s
        total = part if total is None else total + part
    return _symmetrize(total / n_mc)


def quadrature_building_blocks(model, theta_star, log_pn, kind, limits=(-40.0, 40.0), include_c=True):
    """Adaptive-quadrature version of :func:`estimate_building_blocks` for 1-D models.

    ``log_pn`` is a vectorized callable returning the (normalized) auxiliary
    log-density. Entries whose integral diverges come back as ``inf``.
    """
    kind = parse_kind(kind)
    theta_star = model.check_theta(theta_star)
    if model.dim_x != 1:
        raise ValueError("quadrature oracle is only available for 1-D models")

    def parts(x):
        X = np.array([[x]])
        lpd = float(model.log_pm(theta_star, X)[0])
        lpn = float(np.asarray(log_pn(X)).ravel()[0])
        psi = model.psi(theta_star, X, include_c=include_c)[0]
        if lpn == -np.inf:
            return psi, 0.0, 0.0, 0.0, 0.0
        ell = lpd - lpn
        lg = float(family.log_g2_prime(kind, ell))
        with np.errstate(over="ignore"):
            return (
                psi,
                np.exp(lpd + lg),
                np.exp(lpd + ell + 2 * lg),
                np.exp(lpd + 2 * lg),
                np.exp(lpd + lg),
            )

    p = model.dim_theta if include_c else model.dim_phi
    lo, hi = limits

    def integrate_entry(select):
        val, _ = integrate.quad(lambda x: select(parts(x)), lo, hi, points=[0.0], limit=400, epsabs=0, epsrel=1e-10)
        return val

    mats = []
    for slot in (1, 2, 3):
        M = np.empty((p, p))
        for i in range(p):
            for j in range(i, p):
                M[i, j] = M[j, i] = integrate_entry(lambda t, i=i, j=j, s=slot: t[s] * t[0][i] * t[0][j])
        mats.append(M)
    v = np.array([integrate_entry(lambda t, i=i: t[4] * t[0][i]) for i in range(p)])
    # an integrand still non-negligible at the cut-off means the integral diverges
    for slot, M in zip((1, 2, 3), mats):
        edge = max(abs(parts(x)[slot]) * (1.0 + np.sum(parts(x)[0] ** 2)) for x in (lo, hi))
        if not edge < 1e-12:
            M[:] = np.inf
    I, A_gamma, A = mats
    return BuildingBlocks(I=I, A_gamma=A_gamma, A=A, B=np.outer(v, v), v=v, n_mc=0)


def _inverse(I):
    I = np.atleast_2d(np.asarray(I, dtype=float))
    if not np.all(np.isfinite(I)):
        raise SingularMatrixError("I has non-finite entries")
    cond = np.linalg.cond(I)
    if not cond <= COND_LIMIT:
        raise SingularMatrixError(f"I is singular (condition number {cond:.3g}); model not identifiable", cond)
    # symmetric eigendecomposition; I is symmetric but need not be definite for every kind
    w, U = np.linalg.eigh(_symmetrize(I))
    return (U / w) @ U.T


def sigma_g(I, A_gamma, A, B, gamma: float) -> np.ndarray:
    """Asymptotic covariance ``I^-1 [gamma A_gamma + A - (1 + gamma) B] I^-1``."""
    Iinv = _inverse(I)
    with np.errstate(invalid="ignore"):
        middle = gamma * np.asarray(A_gamma) + np.asarray(A) - (1.0 + gamma) * np.asarray(B)
        return _symmetrize(Iinv @ middle @ Iinv)


def predicted_mse(Sigma, n_data: int) -> float:
    """Asymptotic mean squared error ``tr(Sigma) / N_d``."""
    return float(np.trace(np.atleast_2d(Sigma)) / n_data)


def gamma_objective(blocks: BuildingBlocks, gamma: float) -> float:
    """``(1 + 1/gamma) tr(Sigma(gamma))``, i.e. ``N_tot`` times the MSE at fixed total budget."""
    return float((1.0 + 1.0 / gamma) * np.trace(blocks.sigma(gamma)))


def optimal_gamma(I, A_gamma, A, B) -> float:
    """Closed-form minimizer of ``(1 + 1/gamma) tr(Sigma(gamma))``.

    Returns ``nan`` when either trace is nonpositive or not finite, which
    happens when the underlying integrals diverge.
    """
    try:
        Iinv = _inverse(I)
    except SingularMatrixError:
        return float("nan")
    with np.errstate(invalid="ignore"):
        num = np.trace(Iinv @ (np.asarray(A) - B) @ Iinv)
        den = np.trace(Iinv @ (np.asarray(A_gamma) - B) @ Iinv)
    if not (np.isfinite(num) and np.isfinite(den) and num > 0 and den > 0):
        return float("nan")
    return float(np.sqrt(num / den))


def optimal_noise_logdensity(model, theta_star, I, x, include_c: bool = True):
    """Unnormalized log-density of the MSE-optimal auxiliary for the IS pair.

    ``log ||I^-1 psi(x)|| + log p_d(x)``; points where ``I^-1 psi`` vanishes
    get ``-inf``.
    """
    Iinv = _inverse(I)
    X = model._as_batch(x)
    psi = model.psi(theta_star, X, include_c=include_c)
    with np.errstate(divide="ignore"):
        out = np.log(np.linalg.norm(psi @ Iinv.T, axis=1)) + model.log_pm(theta_star, X)
    return float(out[0]) if np.ndim(x) <= 1 and X.shape[0] == 1 else out


def _trace_a_gamma(model, theta_star, aux, kind, n, seed):
    kind = parse_kind(kind)
    X = model.sample(theta_star, n, seed)
    ell = model.log_pm(theta_star, X) - aux.log_density(X)
    lg = family.log_g2_prime(kind, ell)
    psi = model.psi(theta_star, X)
    with np.errstate(over="ignore", invalid="ignore"):
        return float(np.mean(np.exp(ell + 2.0 * lg) * np.sum(psi * psi, axis=1)))


def divergence_check(model, theta_star, aux, kind, n_mc: int = 20_000, seed=0, n_pairs: int = 5,
                     factor: float = 1.5) -> bool:
    """Heuristic test for an infinite ``A_gamma`` integral.

    For each of ``n_pairs`` independent seed pairs, ``tr(A_gamma)`` is
    estimated with ``n_mc`` and ``4 * n_mc`` samples; the integral is declared
    divergent when the larger sample exceeds the smaller by more than
    ``factor`` in a majority of pairs. Finite integrals give ratios near one,
    while a divergent one keeps growing with the sample size.
    """
    children = np.random.SeedSequence(seed).spawn(2 * n_pairs)
    grows = 0
    for small, large in zip(children[::2], children[1::2]):
        t_small = _trace_a_gamma(model, theta_star, aux, kind, n_mc, small)
        t_large = _trace_a_gamma(model, theta_star, aux, kind, 4 * n_mc, large)
        if not np.isfinite(t_large) or t_large > factor * t_small:
            grows += 1
    return grows > n_pairs // 2


def _num(v):
    """Finite floats pass through; nan and inf become None for strict JSON."""
    if v is None or not np.isfinite(v):
        return None
    return float(v)


@dataclass
class AsymptoticReport:
    kind: str
    gamma: float
    I_hat: np.ndarray
    A_gamma_hat: np.ndarray
    A_hat: np.ndarray
    B_hat: np.ndarray
    Sigma_hat: np.ndarray | None
    trace_sigma: float | None
    gamma_hat: float | None
    cond_I: float
    diverged: dict = field(default_factory=dict)
    mc_samples: int = 0
    seed: int | None = None

    def predicted_mse(self, n_data: int) -> float | None:
        if self.trace_sigma is None:
            return None
        return self.trace_sigma / n_data

    def to_json(self) -> dict:
        def mat(M):
            if M is None:
                return None
            return [[_num(v) for v in row] for row in np.atleast_2d(M).tolist()]

        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "I_hat": mat(self.I_hat),
            "A_gamma_hat": mat(self.A_gamma_hat),
            "A_hat": mat(self.A_hat),
            "B_hat": mat(self.B_hat),
            "Sigma_hat": mat(self.Sigma_hat),
            "trace_sigma": _num(self.trace_sigma),
            "gamma_hat": _num(self.gamma_hat),
            "cond_I": _num(self.cond_I),
            "diverged": self.diverged,
            "mc_samples": self.mc_samples,
            "seed": self.seed,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, allow_nan=False)


def asymptotic_report(model, theta_star, aux, kind, gamma: float = 1.0, n_mc: int = 1_000_000, seed: int = 0,
                      check_divergence: bool = True, divergence_mc: int = 20_000) -> AsymptoticReport:
    """Everything the theory predicts for one (model, p_n, kind) triple."""
    kind = parse_kind(kind)
    blocks = estimate_building_blocks(model, theta_star, aux, kind, n_mc, seed)
    diverged = {"A_gamma": False}
    if check_divergence:
        diverged["A_gamma"] = divergence_check(model, theta_star, aux, kind, divergence_mc, seed + 1)
    try:
        cond = float(np.linalg.cond(blocks.I))
    except np.linalg.LinAlgError:
        cond = float("inf")
    sigma = tr = g_hat = None
    if not diverged["A_gamma"]:
        try:
            sigma = sigma_g(blocks.I, blocks.A_gamma, blocks.A, blocks.B, gamma)
            tr = float(np.trace(sigma))
            g_hat = blocks.gamma_hat()
        except SingularMatrixError:
            diverged["I"] = True
        if g_hat is not None and not np.isfinite(g_hat):
            g_hat = None
    return AsymptoticReport(
        kind=str(kind),
        gamma=gamma,
        I_hat=blocks.I,
        A_gamma_hat=blocks.A_gamma,
        A_hat=blocks.A,
        B_hat=blocks.B,
        Sigma_hat=sigma,
        trace_sigma=tr,
        gamma_hat=g_hat,
        cond_I=cond,
        diverged=diverged,
        mc_samples=n_mc,
        seed=seed,
    )
