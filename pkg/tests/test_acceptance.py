"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary of
all criteria is printed at the end of the session.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate

from unnormest.asymptotics import (
    divergence_check,
    estimate_building_blocks,
    gamma_objective,
    optimal_noise_logdensity,
    quadrature_building_blocks,
)
from unnormest.checks import check_known_c_covariance, check_gradients, check_nc_identity, check_pairing_grid
from unnormest.cli import main
from unnormest.family import ALL_KINDS
from unnormest.harness import TrialConfig, make_ground_truth, sweep_sample_size, theory_aux
from unnormest.models import Gauss1DModel
from unnormest.noise import GaussianAux, GenGaussAux

GAUSS = Gauss1DModel()
LAM = 1.0
THETA = GAUSS.true_theta(LAM)
P_D = GaussianAux([0.0], [[1.0 / LAM]])


def timed(fn, *args, **kwargs):
    t0 = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t0


def test_pairing_identity(criterion):
    (ok, detail), secs = timed(check_pairing_grid, 1000, 1e-5)
    passed = ok and secs < 1.0
    assert criterion(1, "pairing identity", passed, f"{detail}, {secs:.2f}s (limit 1s)")


def test_gradient_oracle(criterion):
    (ok, detail), secs = timed(check_gradients, 20, 1e-5)
    passed = ok and secs < 10.0
    assert criterion(2, "gradient vs finite differences", passed, f"{detail}, {secs:.2f}s (limit 10s)")


def test_nc_identity(criterion):
    (ok, detail), secs = timed(check_nc_identity, 100, 1e-10)
    passed = ok and secs < 1.0
    assert criterion(3, "nc logistic form", passed, f"{detail}, {secs:.2f}s (limit 1s)")


def test_known_c_bound(criterion):
    (ok, detail), secs = timed(check_known_c_covariance, 1_000_000, 0.05, LAM)
    passed = ok and secs < 60.0
    assert criterion(4, "known-c covariance (1+gamma)/I_F", passed, f"{detail}, {secs:.2f}s (limit 60s)")


def test_matched_noise_kind_independence(criterion):
    def traces():
        return {str(k): float(np.trace(estimate_building_blocks(GAUSS, THETA, P_D, k, 1_000_000, 0).sigma(1.0)))
                for k in ALL_KINDS}

    tr, secs = timed(traces)
    worst = max(abs(a - b) / min(a, b) for a, b in itertools.combinations(tr.values(), 2))
    passed = worst < 0.05 and secs < 60.0
    detail = f"max pairwise trace difference {worst:.2e} (limit 0.05), {secs:.2f}s"
    assert criterion(5, "tr(Sigma) equal across kinds with p_n = p_d", passed, detail)


@pytest.fixture(scope="module")
def nc_sweep():
    res, secs = timed(sweep_sample_size, TrialConfig(alpha=1.0, dim=2, kind="nc"), [500, 2000, 8000], ["nc"],
                      trials=20, root_seed=0)
    return res, secs


def test_consistency_slope(criterion, nc_sweep):
    res, secs = nc_sweep
    ns = np.array([500, 2000, 8000])
    med = np.array([res.row("nc", n).median_mse for n in ns])
    slope = float(np.polyfit(np.log(ns), np.log(med), 1)[0])
    last = res.row("nc", 8000)
    ratio = last.median_mse / last.theory_mse
    passed = abs(slope + 1.0) <= 0.3 and 0.5 <= ratio <= 2.0 and secs < 600
    detail = (f"slope {slope:.3f} (target -1 +/- 0.3), median/theory at N_d=8000 {ratio:.3f} "
              f"(within factor 2), medians {np.round(med, 5).tolist()}, {secs:.1f}s (limit 600s)")
    assert criterion(6, "NC consistency", passed, detail)


def test_divergence_detection(criterion):
    truth = make_ground_truth(2, 1.0, 0)
    aux = theory_aux(truth, "fit-gaussian")

    def flags():
        return {str(k): divergence_check(truth.model, truth.theta_star, aux, k) for k in ALL_KINDS}

    got, secs = timed(flags)
    expected = {"is": True, "po": True, "nc": False, "invis": False, "invpo": False}
    passed = got == expected and secs < 120
    assert criterion(7, "divergence detection", passed, f"flags {got}, {secs:.2f}s (limit 120s)")


def test_optimal_gamma(criterion):
    truth = make_ground_truth(2, 1.0, 0)
    aux = theory_aux(truth, "fit-gaussian")
    grid = 2.0 ** ((np.arange(33) - 16) / 4)

    def run():
        out = {}
        for kind in ("nc", "invis"):
            blocks = estimate_building_blocks(truth.model, truth.theta_star, aux, kind, 1_000_000, 0)
            g_hat = blocks.gamma_hat()
            best = grid[int(np.argmin([gamma_objective(blocks, g) for g in grid]))]
            out[kind] = (g_hat, best)
        matched = GenGaussAux(truth.alpha, truth.B_star)
        out["matched"] = estimate_building_blocks(truth.model, truth.theta_star, matched, "nc", 1_000_000, 0).gamma_hat()
        return out

    out, secs = timed(run)
    steps = {k: 4 * abs(math.log2(out[k][0]) - math.log2(out[k][1])) for k in ("nc", "invis")}
    passed = all(s <= 1.0 for s in steps.values()) and out["matched"] == 1.0 and secs < 120
    detail = (f"nc gamma_hat {out['nc'][0]:.4f} vs grid {out['nc'][1]:.4f}, invis gamma_hat {out['invis'][0]:.4f} "
              f"vs grid {out['invis'][1]:.4f} (within one 2^(1/4) step), matched-noise gamma_hat "
              f"{out['matched']!r}, {secs:.2f}s (limit 120s)")
    assert criterion(8, "closed-form optimal gamma", passed, detail)


def test_optimal_noise(criterion):
    def run():
        I = quadrature_building_blocks(GAUSS, THETA, P_D.log_density, "is").I
        Iinv = np.linalg.inv(I)
        # ||I^-1 psi(x)|| vanishes where the phi and c components cancel; split the integral there
        kinks = sorted({float(np.real(r)) for r in np.roots([-0.5 * Iinv[0, 0], 0.0, Iinv[0, 1]]) if np.isreal(r)})

        def log_unnorm(x):
            return optimal_noise_logdensity(GAUSS, THETA, I, np.asarray(x, dtype=float).reshape(-1, 1))

        Z, _ = integrate.quad(lambda t: math.exp(log_unnorm(t)[0]), -40, 40, points=kinks + [0.0], limit=400)
        best = float(np.trace(quadrature_building_blocks(
            GAUSS, THETA, lambda X: log_unnorm(X) - math.log(Z), "is").sigma(1.0)))
        others = {}
        for sigma in (0.5, 1.0, 2.0, 4.0):
            aux = GaussianAux([0.0], [[sigma**2]])
            with np.errstate(invalid="ignore"):
                others[sigma] = float(np.trace(quadrature_building_blocks(GAUSS, THETA, aux.log_density, "is")
                                               .sigma(1.0)))
        return best, others

    (best, others), secs = timed(run)
    passed = math.isfinite(best) and all(best <= v for v in others.values()) and secs < 60
    detail = (f"optimal p_n tr(Sigma) {best:.4f} vs Gaussian "
              + ", ".join(f"sigma={s}: {v:.4g}" for s, v in others.items()) + f", {secs:.2f}s (limit 60s)")
    assert criterion(9, "optimal noise beats Gaussians", passed, detail)


def test_normalizer_recovery(criterion, nc_sweep):
    res, _ = nc_sweep
    errs = np.abs([r.c_error for r in res.trials[("nc", 8000, 8000)]])
    med = float(np.median(errs))
    truth = make_ground_truth(2, 1.0, 0)
    passed = med < 0.1 and len(errs) == 20
    detail = f"median |c_hat - c*| = {med:.4f} over {len(errs)} trials (limit 0.1), c* = {truth.c_star:.4f}"
    assert criterion(10, "normalizing constant recovery", passed, detail)


def test_determinism(criterion, tmp_path):
    args = ["sweep-n", "--kinds", "nc,is", "--ns", "200,400", "--trials", "3", "--mc", "20000",
            "--divergence-mc", "2000", "--seed", "17"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    t0 = time.perf_counter()
    main([*args, "--out", str(a)])
    main([*args, "--out", str(b)])
    secs = time.perf_counter() - t0
    same = a.read_bytes() == b.read_bytes()
    same_meta = a.with_suffix(".json").read_bytes() == b.with_suffix(".json").read_bytes()
    passed = same and same_meta
    detail = f"CSV identical: {same}, metadata identical: {same_meta}, {len(a.read_bytes())} bytes, {secs:.2f}s"
    assert criterion(11, "sweep determinism", passed, detail)
