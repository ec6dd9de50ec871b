"""Data models for doubleshrink configuration and persisted records.

Everything a user configures (scenarios, backtests, estimator options, run
files) or that is written to disk as JSON is a pydantic model. Numerical
results that only live in memory are plain dataclasses next to the code that
produces them.
"""

from __future__ import annotations

from enum import Enum
from typing import Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

WEIGHT_SUM_TOL = 1e-10


class Scenario(str, Enum):
    """Data-generating processes of the simulation study."""

    T5 = "t5"
    CAPM = "capm"
    CCC_GARCH = "ccc"
    VAR1 = "var1"


class TargetKind(str, Enum):
    """How the shrinkage target portfolio b is built."""

    EQUALLY_WEIGHTED = "ew"
    EQUAL_CORRELATION = "ec"
    CUSTOM = "custom"


class StrategyName(str, Enum):
    """Portfolio strategies available to simulations and backtests."""

    TRADITIONAL = "traditional"
    TARGET = "target"
    DOUBLE = "double"
    BPS = "bps"
    EQUALLY_WEIGHTED = "ew"


class TargetSpec(BaseModel):
    """Selection of the target portfolio.

    Attributes:
        kind: Equally weighted, equal correlation, or a custom vector.
        weights: The custom weight vector (custom kind only).
        asset_labels: Asset labels matching ``weights``, used to align the
            custom vector with a return panel.
    """

    kind: TargetKind = TargetKind.EQUALLY_WEIGHTED
    weights: Optional[list[float]] = None
    asset_labels: Optional[list[str]] = None

    @model_validator(mode="after")
    def _check_custom(self) -> TargetSpec:
        if self.kind is TargetKind.CUSTOM:
            if not self.weights:
                raise ValueError("custom target requires a weight vector")
            total = sum(self.weights)
            if abs(total - 1.0) > WEIGHT_SUM_TOL * max(1.0, sum(abs(w) for w in self.weights)):
                raise ValueError(f"custom target weights sum to {total!r}, not 1")
            if self.asset_labels is not None and len(self.asset_labels) != len(self.weights):
                raise ValueError("custom target labels and weights differ in length")
        return self

    @classmethod
    def parse(cls, text: str) -> TargetSpec:
        """Parse the ``ew`` / ``ec`` shorthands used on the command line.

        ``custom:<csv>`` needs file access and is resolved by
        ``data_manager.load_custom_target``.
        """
        value = text.strip().lower()
        if value == TargetKind.EQUALLY_WEIGHTED.value:
            return cls(kind=TargetKind.EQUALLY_WEIGHTED)
        if value == TargetKind.EQUAL_CORRELATION.value:
            return cls(kind=TargetKind.EQUAL_CORRELATION)
        raise ValueError(f"Unknown target '{text}'. Use 'ew', 'ec' or 'custom:<csv>'.")


class EstimatorOptions(BaseModel):
    """Options of the lambda search and of psi post-processing.

    Attributes:
        grid_size: Number of uniform grid points scanned before refinement.
        refine: Run golden-section refinement around the grid maximum.
        clamp_psi: Clip psi to [0, 1] (off by default; raw values match the
            asymptotic theory).
        lambda_bounds: Search interval; defaults depend on p/n.
        tolerance: Refinement tolerance in lambda.
    """

    grid_size: int = Field(default=64, ge=16)
    refine: bool = True
    clamp_psi: bool = False
    lambda_bounds: Optional[tuple[float, float]] = None
    tolerance: float = Field(default=1e-6, gt=0.0)

    @field_validator("lambda_bounds")
    @classmethod
    def _check_bounds(cls, value: Optional[tuple[float, float]]) -> Optional[tuple[float, float]]:
        if value is not None:
            low, high = value
            if not 0.0 < low < high < 1.0:
                raise ValueError("lambda_bounds must satisfy 0 < low < high < 1")
        return value


class ScenarioConfig(BaseModel):
    """One cell of the relative-loss simulation experiment.

    Attributes:
        scenario: Data-generating process.
        p: Number of assets.
        n: Number of observations per replication.
        seed: Base seed; replication i uses the stream derived from (seed, i).
        replications: Number of Monte Carlo replications.
        burn_in: Discarded warm-up periods (GARCH and VAR only).
        target: Target portfolio used by the shrinkage strategies.
        strategies: Strategies to evaluate; None picks the defaults for p/n.
        estimator: Options forwarded to the double shrinkage fit.
    """

    scenario: Scenario = Scenario.T5
    p: int = Field(default=100, ge=2)
    n: int = Field(default=200, ge=3)
    seed: int = Field(default=0, ge=0, lt=2**64)
    replications: int = Field(default=50, ge=1)
    burn_in: int = Field(default=500, ge=0)
    target: TargetSpec = Field(default_factory=TargetSpec)
    strategies: Optional[list[StrategyName]] = None
    estimator: EstimatorOptions = Field(default_factory=EstimatorOptions)

    @property
    def concentration(self) -> float:
        """The concentration ratio c = p/n."""
        return self.p / self.n


class BacktestConfig(BaseModel):
    """Rolling-window backtest settings.

    Attributes:
        window: Estimation window length n.
        rebalance_every: Periods between rebalances.
        strategies: Strategies to run over the same panel.
        target: Target portfolio used by the shrinkage strategies.
        transaction_log: Keep the per-rebalance weight history in the report.
        estimator: Options forwarded to the double shrinkage fit.
    """

    window: int = Field(default=250, ge=3)
    rebalance_every: int = Field(default=1, ge=1)
    strategies: list[StrategyName] = Field(
        default_factory=lambda: [
            StrategyName.DOUBLE,
            StrategyName.TRADITIONAL,
            StrategyName.TARGET,
        ]
    )
    target: TargetSpec = Field(default_factory=TargetSpec)
    transaction_log: bool = False
    estimator: EstimatorOptions = Field(default_factory=EstimatorOptions)


class RunConfig(BaseModel):
    """Settings read from a ``--config`` JSON file.

    Flat: command-line flags override individual keys, and the
    command-specific configs are derived from the merged result.
    """

    seed: int = Field(default=0, ge=0, lt=2**64)
    threads: Optional[int] = Field(default=None, ge=1)
    target: str = "ew"
    grid_size: int = Field(default=64, ge=16)
    refine: bool = True
    clamp_psi: bool = False
    lambda_bounds: Optional[tuple[float, float]] = None
    scenario: Scenario = Scenario.T5
    p: int = Field(default=100, ge=2)
    n: int = Field(default=200, ge=3)
    replications: int = Field(default=50, ge=1)
    burn_in: int = Field(default=500, ge=0)
    window: int = Field(default=250, ge=3)
    rebalance_every: int = Field(default=1, ge=1)
    strategies: Optional[list[StrategyName]] = None
    output_format: Literal["csv", "json"] = "csv"

    def estimator_options(self) -> EstimatorOptions:
        """Build the estimator options from the merged settings."""
        return EstimatorOptions(
            grid_size=self.grid_size,
            refine=self.refine,
            clamp_psi=self.clamp_psi,
            lambda_bounds=self.lambda_bounds,
        )

    def scenario_config(self, target: TargetSpec) -> ScenarioConfig:
        """Build the simulation config from the merged settings."""
        return ScenarioConfig(
            scenario=self.scenario,
            p=self.p,
            n=self.n,
            seed=self.seed,
            replications=self.replications,
            burn_in=self.burn_in,
            target=target,
            strategies=self.strategies,
            estimator=self.estimator_options(),
        )

    def backtest_config(self, target: TargetSpec, transaction_log: bool) -> BacktestConfig:
        """Build the backtest config from the merged settings."""
        config = BacktestConfig(
            window=self.window,
            rebalance_every=self.rebalance_every,
            target=target,
            transaction_log=transaction_log,
            estimator=self.estimator_options(),
        )
        if self.strategies:
            config.strategies = list(self.strategies)
        return config


class SolutionRecord(BaseModel):
    """JSON record written by ``fit``."""

    p: int
    n: int
    concentration: float
    target: TargetKind
    lambda_star: float
    psi_star: float
    loss: float
    loss_in_range: bool
    clamp_psi: bool
    kernels: dict[str, float]
    diagnostics: dict[str, float]
    skipped_lambdas: list[float] = Field(default_factory=list)


class StrategyLossSummary(BaseModel):
    """Distribution of relative losses of one strategy over replications."""

    mean: Optional[float] = None
    median: Optional[float] = None
    q05: Optional[float] = None
    q25: Optional[float] = None
    q75: Optional[float] = None
    q95: Optional[float] = None
    replications: int = 0
    failures: int = 0


class ExperimentSummary(BaseModel):
    """JSON summary of one simulation cell."""

    scenario: Scenario
    p: int
    n: int
    concentration: float
    seed: int
    replications: int
    target: TargetKind
    strategies: dict[str, StrategyLossSummary]


class StrategyMetrics(BaseModel):
    """Out-of-sample metrics of one backtested strategy."""

    sigma: Optional[float] = None
    mean: Optional[float] = None
    sharpe: Optional[float] = None
    turnover: float = 0.0
    avg_abs_weight: float
    avg_max_weight: float
    avg_min_weight: float
    avg_short_mass: float
    short_fraction: float
    periods: int
    rebalances: int
    failed_windows: list[str] = Field(default_factory=list)
    returns: list[float] = Field(default_factory=list)


class BacktestSummary(BaseModel):
    """JSON record written by ``backtest``."""

    window: int
    rebalance_every: int
    p: int
    periods: int
    target: TargetKind
    turnover_definition: str
    strategies: dict[str, StrategyMetrics]
