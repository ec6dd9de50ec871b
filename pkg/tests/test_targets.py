"""Tests for target portfolios and the strategy suite."""

import numpy as np
import pytest

from doubleshrink.core import (
    CovarianceEstimate,
    CovarianceKind,
    ReturnPanel,
    gmv_weights,
    sample_covariance,
    traditional_gmv,
)
from doubleshrink.exceptions import InvalidDataError, InvalidParameterError
from doubleshrink.models import EstimatorOptions, StrategyName, TargetKind, TargetSpec
from doubleshrink.targets import (
    benchmark_suite,
    build_target,
    custom_target,
    default_strategies,
    equal_correlation_target,
    equally_weighted,
    fit_strategy,
    mean_correlation,
)


def sample_of(matrix: np.ndarray, n_obs: int = 50) -> CovarianceEstimate:
    return CovarianceEstimate(matrix, CovarianceKind.SAMPLE, n_obs=n_obs)


class TestEquallyWeighted:
    """Tests for the 1/p target."""

    def test_weights(self) -> None:
        """Every weight is 1/p."""
        np.testing.assert_allclose(equally_weighted(4).weights, np.full(4, 0.25))

    def test_rejects_single_asset(self) -> None:
        """At least two assets are needed."""
        with pytest.raises(InvalidParameterError):
            equally_weighted(1)


class TestEqualCorrelation:
    """Tests for the constant-correlation GMV target."""

    def test_uncorrelated_is_inverse_variance(self) -> None:
        """With zero correlations the target is proportional to 1/variance."""
        variances = np.array([1.0, 2.0, 4.0])
        target = equal_correlation_target(sample_of(np.diag(variances)))
        expected = (1.0 / variances) / np.sum(1.0 / variances)
        np.testing.assert_allclose(target.weights, expected, atol=1e-5)

    def test_matches_explicit_model_gmv(self, sample: CovarianceEstimate) -> None:
        """The closed form equals the GMV of the rebuilt constant-correlation matrix."""
        rho = mean_correlation(sample)
        sd = np.sqrt(np.diag(sample.matrix))
        p = sample.p
        model = np.outer(sd, sd) * ((1.0 - rho) * np.eye(p) + rho * np.ones((p, p)))
        expected = gmv_weights(CovarianceEstimate(model, CovarianceKind.TRUE))
        np.testing.assert_allclose(
            equal_correlation_target(sample).weights, expected.weights, atol=1e-9
        )

    def test_permutation_equivariant(self, sample: CovarianceEstimate) -> None:
        """Reordering the assets reorders the weights."""
        order = np.random.default_rng(0).permutation(sample.p)
        permuted = sample_of(sample.matrix[np.ix_(order, order)])
        np.testing.assert_allclose(
            equal_correlation_target(permuted).weights,
            equal_correlation_target(sample).weights[order],
            atol=1e-12,
        )

    def test_clips_extreme_correlation(self) -> None:
        """Perfect correlation is pulled inside the positive definite range."""
        target = equal_correlation_target(sample_of(np.ones((3, 3))))
        np.testing.assert_allclose(target.weights, np.full(3, 1.0 / 3.0), atol=1e-8)

    def test_zero_variance_raises(self) -> None:
        """Correlations are undefined for a constant asset."""
        with pytest.raises(InvalidDataError):
            mean_correlation(sample_of(np.diag([1.0, 0.0, 2.0])))


class TestCustomTarget:
    """Tests for user-supplied targets."""

    def test_aligns_by_label(self) -> None:
        """Weights are reordered to the panel's asset order."""
        spec = TargetSpec(kind=TargetKind.CUSTOM, weights=[0.2, 0.8], asset_labels=["B", "A"])
        target = custom_target(spec, ["A", "B"], 2)
        np.testing.assert_allclose(target.weights, [0.8, 0.2])

    def test_missing_label_raises(self) -> None:
        """A panel asset without a weight is an error."""
        spec = TargetSpec(kind=TargetKind.CUSTOM, weights=[0.5, 0.5], asset_labels=["A", "C"])
        with pytest.raises(InvalidParameterError):
            custom_target(spec, ["A", "B"], 2)

    def test_length_mismatch_raises(self) -> None:
        """An unlabeled vector must have one weight per asset."""
        spec = TargetSpec(kind=TargetKind.CUSTOM, weights=[0.5, 0.25, 0.25])
        with pytest.raises(InvalidParameterError):
            custom_target(spec, None, 2)

    def test_build_target_dispatch(self, sample: CovarianceEstimate) -> None:
        """build_target picks the rule named by its TargetSpec."""
        assert build_target(TargetSpec(), sample).label == "ew"
        assert build_target(TargetSpec.parse("ec"), sample).label == "ec"


class TestStrategies:
    """Tests for strategy fitting and the benchmark suite."""

    def test_default_strategies(self) -> None:
        """BPS is only offered when c < 1."""
        assert StrategyName.BPS in default_strategies(0.5)
        assert StrategyName.BPS not in default_strategies(1.5)

    def test_traditional_and_target(self, sample: CovarianceEstimate) -> None:
        """Plain strategies return the plug-in GMV and the target itself."""
        target = equally_weighted(sample.p)
        traditional = fit_strategy(StrategyName.TRADITIONAL, sample, target)
        np.testing.assert_allclose(traditional.weights.weights, traditional_gmv(sample).weights)
        assert traditional.lambda_star is None
        held = fit_strategy(StrategyName.TARGET, sample, target)
        np.testing.assert_allclose(held.weights.weights, target.weights)
        assert held.weights.label == "target"

    def test_bps_pins_lambda(self, sample: CovarianceEstimate) -> None:
        """BPS is double shrinkage at lambda = 1."""
        fit = fit_strategy(StrategyName.BPS, sample, equally_weighted(sample.p))
        assert fit.lambda_star == 1.0
        assert fit.psi_star is not None

    def test_bps_rejected_for_singular(self, wide_panel: ReturnPanel) -> None:
        """BPS needs c < 1."""
        sample = sample_covariance(wide_panel)
        with pytest.raises(InvalidParameterError):
            fit_strategy(StrategyName.BPS, sample, equally_weighted(sample.p))

    def test_double_reports_intensities(self, sample: CovarianceEstimate) -> None:
        """The double strategy carries lambda_star and psi_star."""
        fit = fit_strategy(
            StrategyName.DOUBLE,
            sample,
            equally_weighted(sample.p),
            EstimatorOptions(grid_size=16),
        )
        assert fit.lambda_star is not None and 0.0 < fit.lambda_star < 1.0
        assert fit.weights.label == "double"

    def test_suite_omits_bps_when_singular(self, wide_panel: ReturnPanel) -> None:
        """The suite explains why BPS is missing for c >= 1."""
        suite = benchmark_suite(wide_panel, equally_weighted(wide_panel.p))
        assert "bps" in suite.omitted
        assert set(suite.weights()) == {"double", "traditional", "target"}

    def test_suite_with_bps(self, panel: ReturnPanel) -> None:
        """All four strategies are fitted when c < 1."""
        suite = benchmark_suite(panel, equally_weighted(panel.p))
        assert not suite.omitted
        assert set(suite.weights()) == {"double", "bps", "traditional", "target"}
