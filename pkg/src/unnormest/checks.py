"""Fast self-checks run by ``unnormest verify``."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .asymptotics import estimate_building_blocks
from .family import ALL_KINDS, check_pairing
from .models import Gauss1DModel
from .noise import GaussianAux, fit_gaussian
from .objective import EstimationProblem, nc_logistic_form, objective_gradient, objective_value
from .optimizer import finite_diff_gradient


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def random_problem(rng, kind, n: int = 50, dim: int = 2, alpha: float = 3.0, spread: float = 0.2):
    """Small ICA problem with Gaussian noise and a parameter away from the truth.

    ``alpha = 3`` keeps the log-density twice differentiable, so finite
    differences are meaningful.
    """
    from .harness import make_ground_truth

    truth = make_ground_truth(dim, alpha, int(rng.integers(2**31)))
    data = truth.sample(n, int(rng.integers(2**31)))
    aux = fit_gaussian(data)
    noise = aux.sample(n, int(rng.integers(2**31)))
    problem = EstimationProblem.build(truth.model, kind, data, noise, aux)
    theta = truth.theta_star + spread * rng.standard_normal(truth.theta_star.size)
    return problem, theta


def gradient_rel_error(problem, theta, h: float = 1e-5) -> float:
    g = objective_gradient(problem, theta)
    fd = finite_diff_gradient(lambda t: objective_value(problem, t), theta, h)
    return float(np.linalg.norm(g - fd) / np.linalg.norm(fd))


def _timed(name, fn) -> CheckResult:
    t0 = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - t0)


def check_pairing_grid(n_q: int = 1000, tol: float = 1e-5):
    qs = np.logspace(-6, 6, n_q)
    bad = [(str(k), q) for k in ALL_KINDS for q in qs if not check_pairing(k, q, tol=tol)]
    return not bad, f"{len(ALL_KINDS) * n_q - len(bad)}/{len(ALL_KINDS) * n_q} points within {tol:g}"


def check_gradients(n_problems: int = 20, tol: float = 1e-5, seed: int = 0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_problems):
        for kind in ALL_KINDS:
            problem, theta = random_problem(rng, kind)
            worst = max(worst, gradient_rel_error(problem, theta))
    return worst < tol, f"max relative error {worst:.2e} over {n_problems} problems x 5 kinds"


def check_nc_identity(n_instances: int = 100, tol: float = 1e-10, seed: int = 1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_instances):
        problem, theta = random_problem(rng, "nc", n=20, spread=0.5)
        a, b = nc_logistic_form(problem, theta), objective_value(problem, theta)
        worst = max(worst, abs(a - b) / abs(b))
    return worst < tol, f"max relative difference {worst:.2e} over {n_instances} instances"


def check_known_c_covariance(n_mc: int = 100_000, tol: float = 0.05, lam: float = 1.0, seed: int = 0):
    model = Gauss1DModel()
    theta = model.true_theta(lam)
    p_d = GaussianAux([0.0], [[1.0 / lam]])
    inv_fisher = 1.0 / model.fisher_information(lam)
    worst = 0.0
    for kind in ALL_KINDS:
        blocks = estimate_building_blocks(model, theta, p_d, kind, n_mc, seed, include_c=False)
        for gamma in (0.25, 1.0, 4.0):
            target = (1.0 + gamma) * inv_fisher
            worst = max(worst, float(np.linalg.norm(blocks.sigma(gamma) - target) / target))
    return worst < tol, f"max relative deviation from (1+gamma)/I_F is {worst:.3f} at n_mc={n_mc}"


def run_all(n_mc: int = 100_000) -> list[CheckResult]:
    return [
        _timed("pairing identity", check_pairing_grid),
        _timed("gradient vs finite differences", check_gradients),
        _timed("nc logistic form", check_nc_identity),
        _timed("known-c covariance with p_n = p_d", lambda: check_known_c_covariance(n_mc)),
    ]
