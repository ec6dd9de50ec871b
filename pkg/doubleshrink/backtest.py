"""Rolling-window out-of-sample backtests.

At each rebalance time t the strategies are fitted on the ``window`` most
recent returns ending at t and held over the following periods until the
next rebalance. Realized portfolio returns w'y_{t+1} are collected for
every period from the end of the first window to the end of the panel.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from doubleshrink.core import FloatArray, ReturnPanel, sample_covariance
from doubleshrink.exceptions import DoubleShrinkError, InvalidParameterError
from doubleshrink.models import (
    BacktestConfig,
    BacktestSummary,
    StrategyMetrics,
    StrategyName,
)
from doubleshrink.targets import build_target, equally_weighted, fit_strategy

logger = logging.getLogger(__name__)

TURNOVER_DEFINITION = (
    "sum over rebalances of sum_i |w_new,i - w_drift,i|, where w_drift are the previous "
    "weights grown by the holding-period asset returns and renormalized"
)


@dataclass(frozen=True)
class WeightCharacteristics:
    """Averages over rebalances of the weight-vector statistics.

    Attributes:
        avg_abs_weight: Mean of (1/p) sum_i |w_i|.
        avg_max_weight: Mean of max_i w_i.
        avg_min_weight: Mean of min_i w_i.
        avg_short_mass: Mean of sum_i w_i 1{w_i < 0}.
        short_fraction: Mean of (1/p) sum_i 1{w_i < 0}.
    """

    avg_abs_weight: float
    avg_max_weight: float
    avg_min_weight: float
    avg_short_mass: float
    short_fraction: float


def weight_characteristics(weight_history: Sequence[FloatArray]) -> WeightCharacteristics:
    """Summarize a history of weight vectors (one row per rebalance).

    Raises:
        InvalidParameterError: If the history is empty.
    """
    weights = np.atleast_2d(np.asarray(weight_history, dtype=float))
    if weights.size == 0:
        raise InvalidParameterError("weight history", 0, "at least one weight vector")
    short = weights < 0.0
    return WeightCharacteristics(
        avg_abs_weight=float(np.abs(weights).mean(axis=1).mean()),
        avg_max_weight=float(weights.max(axis=1).mean()),
        avg_min_weight=float(weights.min(axis=1).mean()),
        avg_short_mass=float(np.where(short, weights, 0.0).sum(axis=1).mean()),
        short_fraction=float(short.mean(axis=1).mean()),
    )


def drifted_weights(weights: FloatArray, growth: FloatArray) -> FloatArray:
    """Weights after holding through gross asset returns ``growth``.

    The input is returned unchanged when the grown portfolio value is not
    positive.
    """
    value = float(weights @ growth)
    if value > 0.0:
        return np.asarray(weights * growth / value)
    return weights


def turnover(
    weight_history: Sequence[FloatArray],
    holding_returns: Optional[Sequence[FloatArray]] = None,
) -> float:
    """Total turnover of a rebalancing history.

    Args:
        weight_history: Weights chosen at each rebalance, in order.
        holding_returns: Compounded asset returns between rebalance k and
            k + 1, one row per gap. Without them the previous weights are
            assumed not to drift.

    Returns:
        sum_k sum_i |w_k,i - drift(w_{k-1})_i|.
    """
    weights = np.asarray(weight_history, dtype=float)
    if weights.ndim != 2 or weights.shape[0] < 2:
        return 0.0
    total = 0.0
    for k in range(1, weights.shape[0]):
        previous = weights[k - 1]
        if holding_returns is not None:
            growth = 1.0 + np.asarray(holding_returns[k - 1], dtype=float)
            previous = drifted_weights(previous, growth)
        total += float(np.abs(weights[k] - previous).sum())
    return total


@dataclass
class StrategyReport:
    """Realized returns, weight history and metrics of one strategy."""

    name: StrategyName
    returns: FloatArray
    weight_history: list[FloatArray]
    holding_returns: list[FloatArray]
    rebalance_times: list[str]
    failed_windows: list[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(self.returns.mean())

    @property
    def sigma(self) -> float:
        """Sample standard deviation (ddof = 1) of the realized returns."""
        if self.returns.size < 2:
            return math.nan
        return float(self.returns.std(ddof=1))

    @property
    def sharpe(self) -> float:
        sigma = self.sigma
        return self.mean / sigma if sigma > 0.0 else math.nan

    @property
    def turnover(self) -> float:
        return turnover(self.weight_history, self.holding_returns)

    @property
    def characteristics(self) -> WeightCharacteristics:
        return weight_characteristics(self.weight_history)

    def metrics(self, include_returns: bool = False) -> StrategyMetrics:
        traits = self.characteristics
        return StrategyMetrics(
            sigma=_finite_or_none(self.sigma),
            mean=_finite_or_none(self.mean),
            sharpe=_finite_or_none(self.sharpe),
            turnover=self.turnover,
            avg_abs_weight=traits.avg_abs_weight,
            avg_max_weight=traits.avg_max_weight,
            avg_min_weight=traits.avg_min_weight,
            avg_short_mass=traits.avg_short_mass,
            short_fraction=traits.short_fraction,
            periods=int(self.returns.size),
            rebalances=len(self.weight_history),
            failed_windows=list(self.failed_windows),
            returns=[float(r) for r in self.returns] if include_returns else [],
        )


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


@dataclass
class BacktestReport:
    """Reports of every strategy run over one panel."""

    config: BacktestConfig
    panel: ReturnPanel
    strategies: dict[str, StrategyReport]

    def to_frame(self) -> pd.DataFrame:
        """One row of metrics per strategy."""
        records = []
        for name, report in self.strategies.items():
            metrics = report.metrics().model_dump(exclude={"returns", "failed_windows"})
            records.append({"strategy": name, **metrics, "failed": len(report.failed_windows)})
        return pd.DataFrame.from_records(records)

    def returns_frame(self) -> pd.DataFrame:
        """Realized returns, one column per strategy, indexed by period."""
        periods = self.panel.time_labels[self.config.window :]
        data = {name: report.returns for name, report in self.strategies.items()}
        return pd.DataFrame(data, index=pd.Index(periods, name="date"))

    def summary(self) -> BacktestSummary:
        return BacktestSummary(
            window=self.config.window,
            rebalance_every=self.config.rebalance_every,
            p=self.panel.p,
            periods=self.panel.n - self.config.window,
            target=self.config.target.kind,
            turnover_definition=TURNOVER_DEFINITION,
            strategies={
                name: report.metrics(include_returns=True)
                for name, report in self.strategies.items()
            },
        )


def _run_strategy(
    panel: ReturnPanel, config: BacktestConfig, name: StrategyName
) -> StrategyReport:
    window = config.window
    returns = np.empty(panel.n - window)
    history: list[FloatArray] = []
    holding: list[FloatArray] = []
    rebalance_times: list[str] = []
    failed: list[str] = []
    current: Optional[FloatArray] = None
    growth = np.ones(panel.p)

    for step, t in enumerate(range(window - 1, panel.n - 1)):
        if step % config.rebalance_every == 0:
            label = panel.time_labels[t]
            try:
                sample = sample_covariance(panel.window(t, window))
                target = build_target(config.target, sample, panel.asset_labels)
                weights = fit_strategy(name, sample, target, config.estimator).weights.weights
            except DoubleShrinkError as exc:
                failed.append(label)
                fallback = "equal weights" if current is None else "previous weights"
                logger.warning("%s failed at %s (%s); holding %s", name.value, label, exc, fallback)
                if current is None:
                    weights = equally_weighted(panel.p).weights
                else:
                    weights = drifted_weights(current, growth)
            if current is not None:
                holding.append(growth - 1.0)
            growth = np.ones(panel.p)
            current = weights
            history.append(np.array(weights))
            rebalance_times.append(label)

        assert current is not None
        realized = panel.values[:, t + 1]
        returns[step] = float(current @ realized)
        growth = growth * (1.0 + realized)

    return StrategyReport(name, returns, history, holding, rebalance_times, failed)


def run_backtest(
    panel: ReturnPanel,
    config: BacktestConfig,
    threads: int = 1,
) -> BacktestReport:
    """Backtest every configured strategy on one return panel.

    Args:
        panel: Returns, assets x time.
        config: Window length, rebalancing stride, strategies and target.
        threads: Strategies are run concurrently on this many threads.

    Raises:
        InvalidParameterError: If the panel has fewer than window + 1 periods.
    """
    if panel.n < config.window + 1:
        raise InvalidParameterError(
            "window", config.window, f"at most {panel.n - 1} for a panel of {panel.n} periods"
        )
    logger.info(
        "Backtesting %s over %d periods (window %d, rebalance every %d)",
        ", ".join(s.value for s in config.strategies),
        panel.n - config.window,
        config.window,
        config.rebalance_every,
    )
    names = list(dict.fromkeys(config.strategies))
    if threads > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(names))) as pool:
            reports = list(pool.map(lambda name: _run_strategy(panel, config, name), names))
    else:
        reports = [_run_strategy(panel, config, name) for name in names]
    return BacktestReport(config, panel, {r.name.value: r for r in reports})
