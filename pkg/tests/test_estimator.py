"""Tests for the double shrinkage estimator and its validation quantities."""

import math

import numpy as np
import pytest

from doubleshrink import estimator
from doubleshrink.core import (
    CovarianceEstimate,
    CovarianceKind,
    PortfolioWeights,
    combine_weights,
    ridge_blend,
    sample_covariance,
    tikhonov_weights,
    traditional_gmv,
)
from doubleshrink.estimator import (
    ShrinkageProblem,
    bona_fide_loss,
    completed_square_loss,
    d1,
    d2,
    finite_sample_l2,
    finite_sample_loss,
    finite_sample_psi,
    fit_at_lambda,
    golden_section_max,
    loss_curve,
    loss_terms,
    optimal_psi_hat,
    optimize_lambda,
    oracle_loss,
    oracle_psi,
    target_relative_loss,
    uniform_lambda_grid,
)
from doubleshrink.exceptions import (
    InvalidParameterError,
    LossDegenerateError,
    NumericalError,
    OptimizationFailureError,
)
from doubleshrink.models import EstimatorOptions
from doubleshrink.simulate import gen_t5, t5_model
from doubleshrink.targets import equally_weighted


def identity_problem() -> ShrinkageProblem:
    """S = I with p = 2, n = 4 (c = 0.5) and the equally weighted target."""
    sample = CovarianceEstimate(np.eye(2), CovarianceKind.SAMPLE, n_obs=4)
    return ShrinkageProblem(sample, equally_weighted(2))


@pytest.fixture
def matched_sample(sigma: CovarianceEstimate) -> CovarianceEstimate:
    """Sample covariance of 40 draws from the ``sigma`` fixture."""
    model = t5_model(np.zeros(sigma.p), sigma)
    return sample_covariance(gen_t5(model, 40, seed=1))


class TestShrinkageProblem:
    """Tests for the preprocessed problem."""

    def test_moments_match_direct_solves(self, sample: CovarianceEstimate) -> None:
        """Spectral moments equal the explicit inverse quadratic forms."""
        target = equally_weighted(sample.p)
        problem = ShrinkageProblem(sample, target)
        inverse = np.linalg.inv(ridge_blend(sample, 0.3).matrix)
        ones = np.ones(sample.p)
        moments = problem.moments(0.3)
        assert moments.ones_inv_ones == pytest.approx(ones @ inverse @ ones, rel=1e-10)
        assert moments.target_inv_ones == pytest.approx(
            target.weights @ inverse @ ones, rel=1e-10
        )
        assert moments.ones_inv2_ones == pytest.approx(
            ones @ inverse @ inverse @ ones, rel=1e-10
        )

    def test_rejects_mismatched_target(self, sample: CovarianceEstimate) -> None:
        """The target must have one weight per asset."""
        with pytest.raises(InvalidParameterError):
            ShrinkageProblem(sample, equally_weighted(sample.p + 1))

    def test_concentration_override(self, sample: CovarianceEstimate) -> None:
        """An explicit c replaces p / n."""
        assert ShrinkageProblem(sample, equally_weighted(sample.p), c=0.9).c == 0.9


class TestLossFunctionals:
    """Tests for d1, d2 and the bona fide loss on a closed-form case."""

    def test_d1_identity_example(self) -> None:
        """S = I, lambda = .5, c = .5 gives d1 = 4/3."""
        assert d1(identity_problem(), 0.5) == pytest.approx(4.0 / 3.0, abs=1e-14)

    def test_d2_identity_example(self) -> None:
        """S = I, lambda = .5, c = .5 gives d2 = 64/21."""
        assert d2(identity_problem(), 0.5) == pytest.approx(64.0 / 21.0, abs=1e-13)

    def test_identity_loss_and_psi(self) -> None:
        """With S = I the loss is one and psi makes the final weights equal b."""
        problem = identity_problem()
        terms = loss_terms(problem, 0.5)
        assert terms.x == pytest.approx(4.0 / 3.0)
        assert terms.y == pytest.approx(16.0 / 9.0)
        assert bona_fide_loss(problem, 0.5) == pytest.approx(1.0, abs=1e-12)
        assert optimal_psi_hat(problem, 0.5) == pytest.approx(-3.0, abs=1e-11)

    def test_clamped_psi(self) -> None:
        """Clamping maps a negative psi to zero."""
        assert optimal_psi_hat(identity_problem(), 0.5, clamp=True) == 0.0

    def test_loss_is_psi_squared_times_denominator(self, sample: CovarianceEstimate) -> None:
        """L_hat = psi_hat^2 (1 - 2x + y) at every admissible lambda."""
        problem = ShrinkageProblem(sample, equally_weighted(sample.p))
        for lam in (0.1, 0.35, 0.6, 0.9):
            terms = loss_terms(problem, lam)
            psi = optimal_psi_hat(problem, lam)
            assert bona_fide_loss(problem, lam) == pytest.approx(
                psi**2 * terms.denominator, rel=1e-12
            )

    def test_zero_numerator(self, mocker) -> None:
        """x = 1 gives a zero loss and psi = 0."""
        problem = identity_problem()
        mocker.patch.object(
            estimator,
            "d1",
            side_effect=lambda prob, lam, kernels, moments: (
                prob.target_variance * moments.ones_inv_ones
            ),
        )
        assert bona_fide_loss(problem, 0.5) == 0.0
        assert optimal_psi_hat(problem, 0.5) == 0.0

    def test_non_positive_denominator_raises(self, mocker) -> None:
        """A denominator <= 0 is reported as LossDegenerateError."""
        problem = identity_problem()
        mocker.patch.object(estimator, "d2", return_value=0.0)
        # y = 0 and x = 4/3 leave 1 - 2x + y = -5/3
        with pytest.raises(LossDegenerateError):
            bona_fide_loss(problem, 0.5)
        with pytest.raises(LossDegenerateError):
            optimal_psi_hat(problem, 0.5)


class TestOptimizeLambda:
    """Tests for the lambda search."""

    def test_identity_returns_target(self) -> None:
        """With S = I and b = 1/p every lambda yields the equally weighted portfolio."""
        sample = CovarianceEstimate(np.eye(5), CovarianceKind.SAMPLE, n_obs=10)
        solution = optimize_lambda(sample, equally_weighted(5))
        np.testing.assert_allclose(solution.final_weights.weights, np.full(5, 0.2), atol=1e-10)
        assert solution.loss == pytest.approx(1.0, abs=1e-10)

    def test_solution_is_consistent(self, sample: CovarianceEstimate) -> None:
        """Final weights combine ridge and target with psi_star and sum to one."""
        target = equally_weighted(sample.p)
        solution = optimize_lambda(sample, target)
        low, high = estimator.DEFAULT_BOUNDS
        assert low <= solution.lambda_star <= high
        expected = (
            solution.psi_star * solution.ridge_weights.weights
            + (1.0 - solution.psi_star) * target.weights
        )
        np.testing.assert_allclose(solution.final_weights.weights, expected, atol=1e-12)
        assert solution.final_weights.weights.sum() == pytest.approx(1.0, abs=1e-10)
        problem = ShrinkageProblem(sample, target)
        assert solution.loss == pytest.approx(bona_fide_loss(problem, solution.lambda_star))

    def test_refinement_never_worse_than_grid(self, sample: CovarianceEstimate) -> None:
        """The refined lambda is at least as good as every grid point."""
        target = equally_weighted(sample.p)
        problem = ShrinkageProblem(sample, target)
        options = EstimatorOptions(grid_size=32)
        solution = optimize_lambda(sample, target, options)
        grid_best = max(
            bona_fide_loss(problem, float(lam)) for lam in np.linspace(0.01, 0.99, 32)
        )
        assert solution.loss >= grid_best - 1e-12

    def test_grid_only(self, sample: CovarianceEstimate) -> None:
        """Without refinement lambda_star is a grid point inside the bounds."""
        options = EstimatorOptions(grid_size=16, refine=False, lambda_bounds=(0.2, 0.8))
        solution = optimize_lambda(sample, equally_weighted(sample.p), options)
        grid = np.linspace(0.2, 0.8, 16)
        assert np.min(np.abs(grid - solution.lambda_star)) < 1e-15

    def test_singular_sample(self, wide_panel) -> None:
        """c > 1 uses the narrower default bounds and still returns weights."""
        sample = sample_covariance(wide_panel)
        solution = optimize_lambda(sample, equally_weighted(sample.p))
        assert solution.lambda_star <= estimator.SINGULAR_BOUNDS[1]
        assert np.all(np.isfinite(solution.final_weights.weights))

    def test_skips_degenerate_points(self, sample: CovarianceEstimate, mocker) -> None:
        """Degenerate grid points are dropped and reported."""
        original = estimator.bona_fide_loss

        def flaky(problem: ShrinkageProblem, lam: float) -> float:
            if lam < 0.3:
                raise LossDegenerateError(lam, -1.0)
            return original(problem, lam)

        mocker.patch.object(estimator, "bona_fide_loss", side_effect=flaky)
        solution = optimize_lambda(sample, equally_weighted(sample.p))
        assert solution.skipped_lambdas
        assert all(lam < 0.3 for lam in solution.skipped_lambdas)
        assert solution.lambda_star >= 0.3

    def test_all_degenerate_raises(self, sample: CovarianceEstimate, mocker) -> None:
        """If no grid point is admissible the fit fails."""
        mocker.patch.object(
            estimator, "bona_fide_loss", side_effect=LossDegenerateError(0.5, -1.0)
        )
        with pytest.raises(OptimizationFailureError):
            optimize_lambda(sample, equally_weighted(sample.p))

    def test_diagnostics(self, sample: CovarianceEstimate) -> None:
        """The solution reports the pieces of the loss at lambda_star."""
        solution = optimize_lambda(sample, equally_weighted(sample.p))
        for key in ("d1", "d2", "x", "y", "loss_denominator"):
            assert math.isfinite(solution.diagnostics[key])
        assert solution.diagnostics["loss_denominator"] > 0.0


class TestFitAtLambda:
    """Tests for the fixed-lambda fit."""

    def test_lambda_one_is_linear_shrinkage(self, sample: CovarianceEstimate) -> None:
        """At lambda = 1 the ridge weights are the traditional GMV weights."""
        target = equally_weighted(sample.p)
        solution = fit_at_lambda(sample, target, 1.0)
        gmv = traditional_gmv(sample)
        np.testing.assert_allclose(solution.ridge_weights.weights, gmv.weights, atol=1e-10)
        combined = combine_weights(gmv, target, solution.psi_star)
        np.testing.assert_allclose(solution.final_weights.weights, combined.weights, atol=1e-10)

    def test_lambda_one_singular(self, wide_panel) -> None:
        """Lambda = 1 is refused when S is singular."""
        sample = sample_covariance(wide_panel)
        with pytest.raises(NumericalError):
            fit_at_lambda(sample, equally_weighted(sample.p), 1.0)


class TestLossCurve:
    """Tests for the lambda sweep."""

    def test_grid(self) -> None:
        """The uniform grid is i / (k + 1)."""
        np.testing.assert_allclose(uniform_lambda_grid(3), [0.25, 0.5, 0.75])
        with pytest.raises(InvalidParameterError):
            uniform_lambda_grid(0)

    def test_degenerate_point_flagged(self, wide_panel) -> None:
        """A singular S at lambda = 1 yields a NaN point marked degenerate."""
        sample = sample_covariance(wide_panel)
        points = loss_curve(sample, equally_weighted(sample.p), [0.5, 1.0])
        assert len(points) == 2
        assert points[1].degenerate
        assert math.isnan(points[1].bona_fide_loss)
        assert math.isnan(points[1].psi_hat)

    def test_matches_pointwise_loss(self, sample: CovarianceEstimate) -> None:
        """Curve values agree with direct evaluations."""
        target = equally_weighted(sample.p)
        problem = ShrinkageProblem(sample, target)
        for point in loss_curve(sample, target, uniform_lambda_grid(5)):
            assert point.bona_fide_loss == pytest.approx(bona_fide_loss(problem, point.lam))
            assert point.eta == pytest.approx(1.0 / point.lam - 1.0)
            assert point.oracle_loss is None

    def test_oracle_columns(
        self, sigma: CovarianceEstimate, matched_sample: CovarianceEstimate
    ) -> None:
        """With sigma the oracle and finite-sample columns are filled."""
        target = equally_weighted(sigma.p)
        points = loss_curve(matched_sample, target, [0.3, 0.7], sigma=sigma)
        for point in points:
            assert point.oracle_loss is not None
            assert 0.0 <= point.oracle_loss <= 1.0
            assert point.finite_sample_loss is not None
            assert 0.0 <= point.finite_sample_loss <= 1.0 + 1e-12


class TestOracleQuantities:
    """Tests for the population-covariance counterparts."""

    @pytest.mark.parametrize("c", [0.25, 0.75, 1.5, 2.7])
    def test_oracle_loss_in_unit_interval(self, sigma: CovarianceEstimate, c: float) -> None:
        """The asymptotic loss lies in [0, 1] for every lambda."""
        target = equally_weighted(sigma.p)
        for lam in (0.05, 0.3, 0.6, 0.95):
            assert 0.0 <= oracle_loss(sigma, target, lam, c) <= 1.0

    def test_oracle_loss_equals_psi_times_numerator(self, sigma: CovarianceEstimate) -> None:
        """L_2 = psi (1 - x) for the oracle as for the bona fide loss."""
        target = equally_weighted(sigma.p)
        terms = estimator.oracle_terms(sigma, target, 0.4, 0.5)
        assert oracle_loss(sigma, target, 0.4, 0.5) == pytest.approx(
            oracle_psi(sigma, target, 0.4, 0.5) * (1.0 - terms.x)
        )

    def test_target_already_optimal(self) -> None:
        """With Sigma = I the 1/p target is the GMV, so no loss remains and psi is zero."""
        sigma = CovarianceEstimate(np.eye(5), CovarianceKind.TRUE)
        target = equally_weighted(5)
        terms = estimator.oracle_terms(sigma, target, 0.5, 0.5)
        assert terms.x == pytest.approx(1.0, abs=1e-12)
        assert 1.0 - 2.0 * terms.x + terms.y == pytest.approx(-terms.v_2, abs=1e-12)
        assert terms.v_2 < 0.0
        assert oracle_loss(sigma, target, 0.5, 0.5) == pytest.approx(0.0, abs=1e-12)
        assert oracle_psi(sigma, target, 0.5, 0.5) == pytest.approx(0.0, abs=1e-12)


class TestFiniteSample:
    """Tests for the finite-sample loss and psi."""

    def test_psi_minimizes_variance(
        self, sigma: CovarianceEstimate, matched_sample: CovarianceEstimate
    ) -> None:
        """The finite-sample psi minimizes the completed-square variance."""
        target = equally_weighted(sigma.p)
        ridge = ridge_blend(matched_sample, 0.4)
        weights = tikhonov_weights(ridge)
        psi = finite_sample_psi(sigma, ridge, target)
        best = completed_square_loss(sigma, weights, target, psi)
        for offset in (-0.2, -0.01, 0.01, 0.2):
            assert completed_square_loss(sigma, weights, target, psi + offset) > best

    def test_completed_square_equals_variance(
        self, sigma: CovarianceEstimate, matched_sample: CovarianceEstimate
    ) -> None:
        """The completed square is the variance of the combined weights."""
        target = equally_weighted(sigma.p)
        weights = tikhonov_weights(ridge_blend(matched_sample, 0.6))
        for psi in (-0.5, 0.3, 1.2):
            combined = combine_weights(weights, target, psi)
            assert completed_square_loss(sigma, weights, target, psi) == pytest.approx(
                finite_sample_loss(sigma, combined), rel=1e-10
            )

    def test_l2_is_relative_variance_reduction(
        self, sigma: CovarianceEstimate, matched_sample: CovarianceEstimate
    ) -> None:
        """1 - L_2 is the minimal variance as a fraction of b'Sigma b."""
        target = equally_weighted(sigma.p)
        ridge = ridge_blend(matched_sample, 0.5)
        weights = tikhonov_weights(ridge)
        psi = finite_sample_psi(sigma, ridge, target)
        minimum = completed_square_loss(sigma, weights, target, psi)
        target_variance = finite_sample_loss(sigma, target)
        assert finite_sample_l2(sigma, ridge, target) == pytest.approx(
            1.0 - minimum / target_variance, rel=1e-9
        )

    def test_target_relative_loss(self) -> None:
        """Sigma = diag(1, 4) and b = 1/2 gives L_b = 9/16."""
        sigma = CovarianceEstimate(np.diag([1.0, 4.0]), CovarianceKind.TRUE)
        assert target_relative_loss(sigma, PortfolioWeights(np.array([0.5, 0.5]))) == (
            pytest.approx(9.0 / 16.0, abs=1e-14)
        )


class TestGoldenSection:
    """Tests for the bracketed maximizer."""

    def test_finds_maximum(self) -> None:
        """A concave parabola is maximized at its vertex."""
        assert golden_section_max(lambda x: -((x - 0.3) ** 2), 0.0, 1.0, tol=1e-8) == (
            pytest.approx(0.3, abs=1e-7)
        )
