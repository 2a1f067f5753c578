import json
import math

import numpy as np
import pytest
from scipy import integrate

from unnormest.asymptotics import (
    SingularMatrixError,
    asymptotic_report,
    divergence_check,
    estimate_building_blocks,
    estimate_I,
    fisher_information,
    gamma_objective,
    optimal_gamma,
    optimal_noise_logdensity,
    predicted_mse,
    quadrature_building_blocks,
    sigma_g,
)
from unnormest.family import ALL_KINDS
from unnormest.harness import make_ground_truth
from unnormest.models import Gauss1DModel
from unnormest.noise import GaussianAux, GenGaussAux

MODEL = Gauss1DModel()
THETA = MODEL.true_theta(1.0)
P_D = GaussianAux([0.0], [[1.0]])
P_N = GaussianAux([0.0], [[1.3]])


def rel(a, b):
    return np.linalg.norm(np.asarray(a) - b) / np.linalg.norm(b)


class TestInformationMatrix:
    def test_is_weight_is_one(self):
        blocks = estimate_building_blocks(MODEL, THETA, P_N, "is", 100_000, 0)
        np.testing.assert_array_equal(blocks.I, blocks.A)
        np.testing.assert_allclose(blocks.B, np.outer(blocks.I[:, -1], blocks.I[:, -1]), rtol=1e-12)

    def test_nc_half_moment_when_matched(self):
        nc = estimate_I(MODEL, THETA, P_D, "nc", 100_000, 3)
        is_ = estimate_I(MODEL, THETA, P_D, "is", 100_000, 3)
        np.testing.assert_allclose(nc, 0.5 * is_, rtol=1e-12)

    def test_invis_integrates_against_noise(self):
        I = estimate_I(MODEL, THETA, P_N, "invis", 1_000_000, 1)
        Y = P_N.sample(1_000_000, 2)
        psi = MODEL.psi(THETA, Y)
        assert rel(I, psi.T @ psi / len(Y)) < 0.02

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_matches_quadrature(self, kind):
        noise = P_D if kind in ("po", "invpo") else P_N
        mc = estimate_building_blocks(MODEL, THETA, noise, kind, 1_000_000, 0)
        quad = quadrature_building_blocks(MODEL, THETA, noise.log_density, kind)
        for name in ("I", "A_gamma", "A", "B"):
            assert rel(getattr(mc, name), getattr(quad, name)) < 0.01, name

    def test_quadrature_flags_divergent_integral(self):
        # p_d / p_n grows like exp(x^2 / 4) with a narrow Gaussian noise, so A_gamma is infinite for IS
        narrow = GaussianAux([0.0], [[0.25]])
        quad = quadrature_building_blocks(MODEL, THETA, narrow.log_density, "is")
        assert np.all(np.isinf(quad.A_gamma))
        assert np.all(np.isfinite(quad.I))

    def test_shards_are_deterministic(self):
        a = estimate_building_blocks(MODEL, THETA, P_N, "nc", 250_000, 9)
        b = estimate_building_blocks(MODEL, THETA, P_N, "nc", 250_000, 9)
        np.testing.assert_array_equal(a.A_gamma, b.A_gamma)


class TestCovariance:
    @pytest.mark.parametrize("gamma", [0.25, 1.0, 4.0])
    def test_known_c_reaches_scaled_bound(self, gamma):
        target = (1.0 + gamma) / MODEL.fisher_information(1.0)
        for kind in ALL_KINDS:
            blocks = estimate_building_blocks(MODEL, THETA, P_D, kind, 1_000_000, 0, include_c=False)
            assert abs(blocks.sigma(gamma)[0, 0] - target) / target < 0.05

    def test_twice_the_bound_at_gamma_one(self):
        blocks = estimate_building_blocks(MODEL, THETA, P_D, "nc", 1_000_000, 1, include_c=False)
        assert blocks.sigma(1.0)[0, 0] == pytest.approx(2.0 / MODEL.fisher_information(1.0), rel=0.05)

    def test_same_trace_for_every_kind_when_matched(self):
        traces = [np.trace(estimate_building_blocks(MODEL, THETA, P_D, k, 1_000_000, 0).sigma(1.0))
                  for k in ALL_KINDS]
        assert (max(traces) - min(traces)) / min(traces) < 0.05

    def test_symmetric_psd(self):
        S = estimate_building_blocks(MODEL, THETA, P_N, "nc", 200_000, 0).sigma(2.0)
        np.testing.assert_array_equal(S, S.T)
        assert np.all(np.linalg.eigvalsh(S) > 0)

    def test_singular_information(self):
        with pytest.raises(SingularMatrixError) as info:
            sigma_g(np.ones((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 2)), 1.0)
        assert info.value.cond > 1e10

    def test_is_small_gamma_limit(self):
        quad = quadrature_building_blocks(MODEL, THETA, P_N.log_density, "is")
        gammas = np.logspace(-6, 1, 15)
        traces = [np.trace(quad.sigma(g)) for g in gammas]
        assert np.all(np.diff(traces) > 0)
        # with gamma -> 0 the phi block recovers the inverse Fisher information
        assert quad.sigma(1e-9)[0, 0] == pytest.approx(1.0 / MODEL.fisher_information(1.0), rel=1e-6)


class TestPredictedMse:
    def test_examples(self):
        assert predicted_mse(np.eye(17), 1000) == pytest.approx(0.017)
        assert predicted_mse(np.eye(3), 2000) == pytest.approx(0.5 * predicted_mse(np.eye(3), 1000))

    def test_known_c_case(self):
        blocks = estimate_building_blocks(MODEL, THETA, P_D, "invis", 1_000_000, 0, include_c=False)
        expected = 3.0 / MODEL.fisher_information(1.0) / 500
        assert predicted_mse(blocks.sigma(2.0), 500) == pytest.approx(expected, rel=0.05)


class TestOptimalGamma:
    def test_exactly_one_when_matched(self):
        truth = make_ground_truth(2, 1.0, 0)
        aux = GenGaussAux(1.0, truth.B_star)
        for kind in ("nc", "invis", "is"):
            blocks = estimate_building_blocks(truth.model, truth.theta_star, aux, kind, 20_000, 0)
            np.testing.assert_array_equal(blocks.A_gamma, blocks.A)
            assert blocks.gamma_hat() == 1.0

    def test_grid_minimizer(self):
        blocks = estimate_building_blocks(MODEL, THETA, GaussianAux([0.0], [[2.0]]), "nc", 1_000_000, 0)
        g_hat = blocks.gamma_hat()
        grid = 2.0 ** (np.arange(-64, 65) / 16)
        best = grid[np.argmin([gamma_objective(blocks, g) for g in grid])]
        assert abs(math.log2(best) - math.log2(g_hat)) <= 1 / 16 + 1e-12
        assert g_hat > 0

    def test_invalid_traces(self):
        assert math.isnan(optimal_gamma(np.eye(2), -np.eye(2), np.eye(2), np.zeros((2, 2))))
        assert math.isnan(optimal_gamma(np.eye(2), np.full((2, 2), np.inf), np.eye(2), np.zeros((2, 2))))
        assert math.isnan(optimal_gamma(np.zeros((2, 2)), np.eye(2), np.eye(2), np.zeros((2, 2))))


class TestFisher:
    @pytest.mark.parametrize("lam", [1.0, 4.0])
    def test_gaussian_precision(self, lam):
        I_F = fisher_information(MODEL, MODEL.true_theta(lam), 1_000_000, 0)
        assert I_F[0, 0] == pytest.approx(1.0 / (2 * lam * lam), rel=0.02)

    def test_score_mean_zero(self):
        X = MODEL.sample(THETA, 1_000_000, 4)
        s = MODEL.psi(THETA, X, include_c=False)[:, 0]
        assert abs(s.mean()) < 3 * s.std() / math.sqrt(len(s))


class TestOptimalNoise:
    def _I(self):
        return quadrature_building_blocks(MODEL, THETA, P_D.log_density, "is").I

    def test_even(self):
        I = self._I()
        x = np.linspace(0.1, 5, 20)[:, None]
        np.testing.assert_allclose(optimal_noise_logdensity(MODEL, THETA, I, x),
                                   optimal_noise_logdensity(MODEL, THETA, I, -x), rtol=1e-13)

    def test_scale_shifts_by_constant(self):
        I = self._I()
        x = np.linspace(-3, 3, 7)[:, None]
        diff = optimal_noise_logdensity(MODEL, THETA, I / 5.0, x) - optimal_noise_logdensity(MODEL, THETA, I, x)
        np.testing.assert_allclose(diff, math.log(5.0), rtol=1e-12)

    def test_beats_gaussian_noise(self):
        I = self._I()

        def log_unnorm(x):
            return optimal_noise_logdensity(MODEL, THETA, I, np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, 1))

        # the zeros of ||I^-1 psi|| are the kinks of the optimal density
        Iinv = np.linalg.inv(I)
        roots = [r for r in np.roots([-0.5 * Iinv[0, 0], 0, Iinv[0, 1]]) if np.isreal(r)]
        Z, _ = integrate.quad(lambda t: math.exp(log_unnorm(t)[0]), -40, 40, points=sorted(set(np.real(roots)) | {0.0}),
                              limit=400)

        def log_opt(X):
            return log_unnorm(np.asarray(X)[:, 0]) - math.log(Z)

        best = np.trace(quadrature_building_blocks(MODEL, THETA, log_opt, "is").sigma(1.0))
        for sigma in (0.5, 1.0, 2.0, 4.0):
            aux = GaussianAux([0.0], [[sigma**2]])
            blocks = quadrature_building_blocks(MODEL, THETA, aux.log_density, "is")
            with np.errstate(invalid="ignore"):
                other = np.trace(blocks.sigma(1.0))
            assert best <= other


class TestDivergence:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_matched_noise_never_flagged(self, kind):
        assert not divergence_check(MODEL, THETA, P_D, kind, 20_000, 0)

    def test_narrow_gaussian_flags_is(self):
        assert divergence_check(MODEL, THETA, GaussianAux([0.0], [[0.25]]), "is", 20_000, 0)


class TestReport:
    def test_json_is_strict(self):
        report = asymptotic_report(MODEL, THETA, P_N, "nc", gamma=1.0, n_mc=100_000, seed=3)
        obj = json.loads(report.dumps())
        assert obj["kind"] == "nc" and obj["mc_samples"] == 100_000 and obj["seed"] == 3
        assert obj["diverged"] == {"A_gamma": False}
        assert obj["gamma_hat"] > 0
        assert report.predicted_mse(100) == pytest.approx(obj["trace_sigma"] / 100)

    def test_divergent_report(self):
        report = asymptotic_report(MODEL, THETA, GaussianAux([0.0], [[0.25]]), "is", n_mc=100_000, seed=0)
        obj = json.loads(report.dumps())
        assert obj["diverged"]["A_gamma"] is True
        assert obj["trace_sigma"] is None and obj["Sigma_hat"] is None
        assert report.predicted_mse(100) is None
