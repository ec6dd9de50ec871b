"""Shared pytest fixtures for doubleshrink tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from doubleshrink import data_manager
from doubleshrink.core import CovarianceEstimate, ReturnPanel, sample_covariance
from doubleshrink.models import Scenario
from doubleshrink.simulate import draw_model, gen_t5, random_covariance, t5_model


@pytest.fixture
def rng() -> np.random.Generator:
    """Deterministic generator for ad hoc draws inside a test."""
    return np.random.default_rng(20240517)


@pytest.fixture
def sigma() -> CovarianceEstimate:
    """Random 8 x 8 population covariance with eigenvalues in [0.1, 10]."""
    return random_covariance(8, seed=7)


@pytest.fixture
def panel() -> ReturnPanel:
    """Gaussian-like t5 panel with p = 12 assets and n = 48 observations (c = 0.25)."""
    model = t5_model(np.zeros(12), random_covariance(12, seed=3))
    return gen_t5(model, 48, seed=11)


@pytest.fixture
def wide_panel() -> ReturnPanel:
    """Panel with more assets than observations (p = 30, n = 20, c = 1.5)."""
    model = draw_model(Scenario.T5, 30, seed=5)
    return gen_t5(model, 20, seed=6)


@pytest.fixture
def sample(panel: ReturnPanel) -> CovarianceEstimate:
    """Sample covariance of ``panel``."""
    return sample_covariance(panel)


@pytest.fixture
def returns_csv(tmp_path: Path) -> Path:
    """Date-major returns file with 6 tickers and 120 dates.

    Returns:
        Path to the CSV file.
    """
    model = draw_model(Scenario.T5, 6, seed=42)
    values = gen_t5(model, 120, seed=43).values * 0.01
    panel = ReturnPanel(
        values,
        asset_labels=("AAA", "BBB", "CCC", "DDD", "EEE", "FFF"),
        time_labels=tuple(f"2020-01-{i:03d}" for i in range(1, 121)),
    )
    return data_manager.export_returns(panel, tmp_path / "returns.csv")

