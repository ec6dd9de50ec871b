"""Smoke tests for the library pipeline end to end."""

from __future__ import annotations

from pathlib import Path

import numpy as np

import doubleshrink
from doubleshrink import data_manager
from doubleshrink.backtest import run_backtest
from doubleshrink.core import sample_covariance
from doubleshrink.estimator import optimize_lambda
from doubleshrink.models import BacktestConfig, EstimatorOptions, StrategyName, TargetSpec
from doubleshrink.targets import build_target


def test_version() -> None:
    """The package exposes a version string."""
    assert doubleshrink.__version__.count(".") == 2


def test_file_to_weights(returns_csv: Path) -> None:
    """A returns file flows through ingestion, target and fit."""
    panel = data_manager.ingest_returns(returns_csv)
    sample = sample_covariance(panel)
    target = build_target(TargetSpec.parse("ec"), sample, panel.asset_labels)
    solution = optimize_lambda(sample, target, EstimatorOptions(grid_size=16))

    assert solution.final_weights.p == panel.p
    assert np.isclose(solution.final_weights.weights.sum(), 1.0)


def test_file_to_backtest(returns_csv: Path) -> None:
    """A returns file can be backtested with the default strategies."""
    panel = data_manager.ingest_returns(returns_csv)
    config = BacktestConfig(
        window=100, rebalance_every=10, estimator=EstimatorOptions(grid_size=16)
    )
    report = run_backtest(panel, config)

    assert set(report.strategies) == {s.value for s in config.strategies}
    assert StrategyName.DOUBLE.value in report.strategies
    assert all(r.returns.size == 20 for r in report.strategies.values())
