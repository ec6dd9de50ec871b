"""Target portfolios and the benchmark strategy suite.

Targets are the portfolio b the ridge GMV weights get shrunk toward. The
strategy helpers wrap every portfolio rule the simulations and backtests
compare behind one ``fit_strategy`` call.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from doubleshrink.core import (
    CovarianceEstimate,
    PortfolioWeights,
    ReturnPanel,
    sample_covariance,
    traditional_gmv,
)
from doubleshrink.estimator import fit_at_lambda, optimize_lambda
from doubleshrink.exceptions import InvalidDataError, InvalidParameterError
from doubleshrink.models import EstimatorOptions, StrategyName, TargetKind, TargetSpec

logger = logging.getLogger(__name__)

CORRELATION_MARGIN = 1e-6


def equally_weighted(p: int, label: str = "ew") -> PortfolioWeights:
    """The 1/p portfolio."""
    if p < 2:
        raise InvalidParameterError("p", p, "at least 2 assets")
    return PortfolioWeights(np.full(p, 1.0 / p), label)


def mean_correlation(sample: CovarianceEstimate) -> float:
    """Average off-diagonal sample correlation.

    Raises:
        InvalidDataError: If an asset has zero sample variance.
    """
    variances = np.diag(sample.matrix)
    if np.any(variances <= 0.0):
        asset = int(np.argmin(variances))
        raise InvalidDataError(f"Asset {asset} has zero sample variance; correlations undefined")
    scale = 1.0 / np.sqrt(variances)
    correlation = sample.matrix * np.outer(scale, scale)
    p = sample.p
    return float((correlation.sum() - np.trace(correlation)) / (p * (p - 1)))


def equal_correlation_target(sample: CovarianceEstimate, label: str = "ec") -> PortfolioWeights:
    """GMV weights of the constant-correlation covariance built from S.

    Keeps the sample variances and replaces every correlation by their mean,
    clipped into (-1/(p-1), 1) so the model matrix is positive definite. The
    inverse of an equicorrelation matrix has a closed form, so no p x p
    solve is needed.

    Raises:
        InvalidDataError: If an asset has zero sample variance.
    """
    p = sample.p
    rho = mean_correlation(sample)
    rho = float(np.clip(rho, -1.0 / (p - 1) + CORRELATION_MARGIN, 1.0 - CORRELATION_MARGIN))
    inv_sd = 1.0 / np.sqrt(np.diag(sample.matrix))
    # (D R D)^{-1} 1 = D^{-1} R^{-1} D^{-1} 1 with R = (1 - rho) I + rho 11'
    solved = (inv_sd - rho * inv_sd.sum() / (1.0 + (p - 1) * rho)) / (1.0 - rho)
    direction = inv_sd * solved
    return PortfolioWeights(direction / direction.sum(), label)


def custom_target(
    spec: TargetSpec, asset_labels: Optional[Sequence[str]], p: int
) -> PortfolioWeights:
    """Align a custom weight vector with the assets of a panel.

    Raises:
        InvalidParameterError: If the vector length or labels do not match.
    """
    weights = np.asarray(spec.weights, dtype=float)
    if spec.asset_labels is not None and asset_labels is not None:
        lookup = dict(zip(spec.asset_labels, weights))
        missing = [a for a in asset_labels if a not in lookup]
        if missing or len(lookup) != len(asset_labels):
            expected = f"exactly the panel assets {list(asset_labels)}"
            raise InvalidParameterError("custom target assets", sorted(lookup), expected)
        weights = np.array([lookup[a] for a in asset_labels])
    if weights.size != p:
        raise InvalidParameterError("custom target length", weights.size, f"{p} assets")
    return PortfolioWeights(weights, "custom")


def build_target(
    spec: TargetSpec,
    sample: CovarianceEstimate,
    asset_labels: Optional[Sequence[str]] = None,
) -> PortfolioWeights:
    """Build the target portfolio b for one estimation window."""
    if spec.kind is TargetKind.EQUALLY_WEIGHTED:
        return equally_weighted(sample.p)
    if spec.kind is TargetKind.EQUAL_CORRELATION:
        return equal_correlation_target(sample)
    return custom_target(spec, asset_labels, sample.p)


@dataclass(frozen=True)
class StrategyFit:
    """Weights of one strategy plus its shrinkage intensities, if any."""

    name: StrategyName
    weights: PortfolioWeights
    lambda_star: Optional[float] = None
    psi_star: Optional[float] = None


def default_strategies(c: float) -> list[StrategyName]:
    """Strategies compared by default; the BPS corner needs c < 1."""
    names = [StrategyName.DOUBLE, StrategyName.TRADITIONAL, StrategyName.TARGET]
    if c < 1.0:
        names.insert(1, StrategyName.BPS)
    return names


def fit_strategy(
    name: StrategyName,
    sample: CovarianceEstimate,
    target: PortfolioWeights,
    options: Optional[EstimatorOptions] = None,
) -> StrategyFit:
    """Fit one strategy on a sample covariance.

    Raises:
        InvalidParameterError: If BPS is requested with c >= 1.
        NumericalError: If the underlying estimator fails.
    """
    options = options or EstimatorOptions()
    if name is StrategyName.TRADITIONAL:
        return StrategyFit(name, traditional_gmv(sample))
    if name is StrategyName.TARGET:
        return StrategyFit(name, target.relabel(StrategyName.TARGET.value))
    if name is StrategyName.EQUALLY_WEIGHTED:
        return StrategyFit(name, equally_weighted(sample.p))
    if name is StrategyName.BPS:
        if sample.concentration >= 1.0:
            raise InvalidParameterError(
                "strategy", name.value, "c = p/n < 1 (S must be invertible)"
            )
        solution = fit_at_lambda(sample, target, 1.0, clamp_psi=options.clamp_psi)
        return StrategyFit(
            name, solution.final_weights.relabel(name.value), 1.0, solution.psi_star
        )
    solution = optimize_lambda(sample, target, options)
    return StrategyFit(
        name, solution.final_weights, solution.lambda_star, solution.psi_star
    )


@dataclass(frozen=True)
class BenchmarkSuite:
    """Every applicable strategy fitted on one panel."""

    fits: tuple[StrategyFit, ...]
    omitted: dict[str, str] = field(default_factory=dict)

    def weights(self) -> dict[str, PortfolioWeights]:
        return {fit.name.value: fit.weights for fit in self.fits}


def benchmark_suite(
    panel: ReturnPanel,
    target: PortfolioWeights,
    options: Optional[EstimatorOptions] = None,
) -> BenchmarkSuite:
    """Fit traditional, target, double and (when c < 1) BPS on one panel."""
    sample = sample_covariance(panel)
    omitted = {}
    if panel.concentration >= 1.0:
        omitted[StrategyName.BPS.value] = (
            f"c = {panel.concentration:.3g} >= 1: the sample covariance is singular"
        )
        logger.info("Omitting bps: %s", omitted[StrategyName.BPS.value])
    fits = tuple(
        fit_strategy(name, sample, target, options)
        for name in default_strategies(panel.concentration)
    )
    return BenchmarkSuite(fits, omitted)
