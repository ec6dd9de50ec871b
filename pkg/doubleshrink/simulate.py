"""Simulation scenarios and the relative-loss experiment.

Four data-generating processes are supported: Student t with 5 degrees of
freedom, a one-factor CAPM, CCC-GARCH(1,1) and a diagonal VAR(1). Each
replication draws its own true model and panel from an independent random
stream derived from (seed, replication index), so results do not depend on
thread count or scheduling.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import pandas as pd
from scipy import linalg

from doubleshrink.core import (
    CovarianceEstimate,
    CovarianceKind,
    FloatArray,
    PortfolioWeights,
    ReturnPanel,
    gmv_weights,
    sample_covariance,
)
from doubleshrink.estimator import target_relative_loss
from doubleshrink.exceptions import DoubleShrinkError, InvalidDataError, InvalidParameterError
from doubleshrink.models import (
    ExperimentSummary,
    Scenario,
    ScenarioConfig,
    StrategyLossSummary,
    StrategyName,
)
from doubleshrink.targets import build_target, default_strategies, fit_strategy

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]

T_DOF = 5
EIGENVALUE_RANGE = (0.1, 10.0)
MEAN_RANGE = (-0.1, 0.1)
BETA_RANGE = (-1.0, 1.0)
GARCH_ALPHA_RANGE = (0.0, 0.1)
GARCH_BETA_RANGE = (0.6, 0.7)
VAR_GAMMA_RANGE = (-0.9, 0.9)
DEFAULT_BURN_IN = 500


def random_covariance(p: int, seed: SeedLike = None) -> CovarianceEstimate:
    """Random population covariance Q diag(l) Q'.

    Q is Haar distributed (QR of a Gaussian matrix with sign correction) and
    the eigenvalues l are log-uniform on [0.1, 10].
    """
    rng = np.random.default_rng(seed)
    gaussian = rng.standard_normal((p, p))
    q, r = np.linalg.qr(gaussian)
    q = q * np.sign(np.diag(r))
    low, high = EIGENVALUE_RANGE
    eigenvalues = np.exp(rng.uniform(np.log(low), np.log(high), size=p))
    matrix = (q * eigenvalues) @ q.T
    return CovarianceEstimate(0.5 * (matrix + matrix.T), CovarianceKind.TRUE)


def symmetric_root(matrix: FloatArray) -> FloatArray:
    """Symmetric square root through the eigendecomposition."""
    eigenvalues, eigenvectors = linalg.eigh(matrix, check_finite=False)
    return np.asarray((eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T)


@dataclass(frozen=True)
class TrueModel:
    """Parameters of one data-generating process.

    Attributes:
        scenario: Which process generates the returns.
        mu: Mean vector.
        sigma: Innovation covariance of the process.
        unconditional_sigma: Covariance of the generated returns, the one
            used to evaluate portfolios. Sigma + beta beta' for CAPM and the
            stationary covariance for VAR(1); sigma otherwise.
        beta: Factor loadings (CAPM).
        alpha0, alpha1, beta1: GARCH(1,1) parameters per asset (CCC).
        correlation: Constant conditional correlation matrix (CCC).
        gamma: Diagonal autoregressive coefficients (VAR).
    """

    scenario: Scenario
    mu: FloatArray
    sigma: CovarianceEstimate
    unconditional_sigma: CovarianceEstimate
    beta: Optional[FloatArray] = None
    alpha0: Optional[FloatArray] = None
    alpha1: Optional[FloatArray] = None
    beta1: Optional[FloatArray] = None
    correlation: Optional[FloatArray] = None
    gamma: Optional[FloatArray] = None

    @property
    def p(self) -> int:
        return self.sigma.p


def _vector(values: object, p: int, name: str) -> FloatArray:
    array = np.asarray(values, dtype=float)
    if array.shape != (p,):
        raise InvalidParameterError(name, array.shape, f"a vector of length {p}")
    return array


def t5_model(mu: FloatArray, sigma: CovarianceEstimate) -> TrueModel:
    """Scaled Student-t(5) innovations with covariance Sigma."""
    return TrueModel(Scenario.T5, _vector(mu, sigma.p, "mu"), sigma, sigma)


def capm_model(mu: FloatArray, sigma: CovarianceEstimate, beta: FloatArray) -> TrueModel:
    """One-factor model y = mu + beta z + Sigma^{1/2} x with a N(0,1) factor."""
    beta = _vector(beta, sigma.p, "beta")
    total = CovarianceEstimate(sigma.matrix + np.outer(beta, beta), CovarianceKind.TRUE)
    return TrueModel(Scenario.CAPM, _vector(mu, sigma.p, "mu"), sigma, total, beta=beta)


def ccc_garch_model(
    mu: FloatArray,
    sigma: CovarianceEstimate,
    alpha1: FloatArray,
    beta1: FloatArray,
) -> TrueModel:
    """CCC-GARCH(1,1) whose unconditional covariance is Sigma.

    alpha0 is set to diag(Sigma) (1 - alpha1 - beta1) so each unconditional
    variance matches Sigma; the conditional correlation is that of Sigma.

    Raises:
        InvalidDataError: If a GARCH process is not covariance stationary.
    """
    p = sigma.p
    alpha1 = _vector(alpha1, p, "alpha1")
    beta1 = _vector(beta1, p, "beta1")
    if np.any(alpha1 < 0.0) or np.any(beta1 < 0.0) or np.any(alpha1 + beta1 >= 1.0):
        raise InvalidDataError("GARCH parameters need alpha1, beta1 >= 0 and alpha1 + beta1 < 1")
    variances = np.diag(sigma.matrix)
    scale = 1.0 / np.sqrt(variances)
    correlation = sigma.matrix * np.outer(scale, scale)
    return TrueModel(
        Scenario.CCC_GARCH,
        _vector(mu, p, "mu"),
        sigma,
        sigma,
        alpha0=variances * (1.0 - alpha1 - beta1),
        alpha1=alpha1,
        beta1=beta1,
        correlation=correlation,
    )


def var1_model(mu: FloatArray, sigma: CovarianceEstimate, gamma: FloatArray) -> TrueModel:
    """Diagonal VAR(1) y_t = mu + Gamma (y_{t-1} - mu) + Sigma^{1/2} x_t.

    The stationary covariance solves V = Gamma V Gamma + Sigma, which for a
    diagonal Gamma is V_ij = Sigma_ij / (1 - gamma_i gamma_j).

    Raises:
        InvalidDataError: If some |gamma_i| >= 1.
    """
    gamma = _vector(gamma, sigma.p, "gamma")
    if np.any(np.abs(gamma) >= 1.0):
        raise InvalidDataError("VAR(1) coefficients must satisfy |gamma_i| < 1")
    stationary = sigma.matrix / (1.0 - np.outer(gamma, gamma))
    return TrueModel(
        Scenario.VAR1,
        _vector(mu, sigma.p, "mu"),
        sigma,
        CovarianceEstimate(stationary, CovarianceKind.TRUE),
        gamma=gamma,
    )


def draw_model(scenario: Scenario, p: int, seed: SeedLike = None) -> TrueModel:
    """Draw the random parameters of one scenario."""
    rng = np.random.default_rng(seed)
    mu = rng.uniform(*MEAN_RANGE, size=p)
    sigma = random_covariance(p, rng)
    if scenario is Scenario.T5:
        return t5_model(mu, sigma)
    if scenario is Scenario.CAPM:
        return capm_model(mu, sigma, rng.uniform(*BETA_RANGE, size=p))
    if scenario is Scenario.CCC_GARCH:
        alpha1 = rng.uniform(*GARCH_ALPHA_RANGE, size=p)
        beta1 = rng.uniform(*GARCH_BETA_RANGE, size=p)
        return ccc_garch_model(mu, sigma, alpha1, beta1)
    return var1_model(mu, sigma, rng.uniform(*VAR_GAMMA_RANGE, size=p))


def _check_n(n: int) -> None:
    if n < 3:
        raise InvalidParameterError("n", n, "at least 3 observations")


def gen_t5(model: TrueModel, n: int, seed: SeedLike = None) -> ReturnPanel:
    """y_t = mu + Sigma^{1/2} x_t with unit-variance Student-t(5) entries."""
    _check_n(n)
    rng = np.random.default_rng(seed)
    x = rng.standard_t(T_DOF, size=(model.p, n)) / math.sqrt(T_DOF / (T_DOF - 2))
    return ReturnPanel(model.mu[:, None] + symmetric_root(model.sigma.matrix) @ x)


def gen_capm(model: TrueModel, n: int, seed: SeedLike = None) -> ReturnPanel:
    """y_t = mu + beta z_t + Sigma^{1/2} x_t with Gaussian z and x."""
    _check_n(n)
    if model.beta is None:
        raise InvalidParameterError("model", model.scenario.value, "a CAPM model with loadings")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(n)
    x = rng.standard_normal((model.p, n))
    values = model.mu[:, None] + np.outer(model.beta, z) + symmetric_root(model.sigma.matrix) @ x
    return ReturnPanel(values)


def gen_ccc_garch(
    model: TrueModel, n: int, burn_in: int = DEFAULT_BURN_IN, seed: SeedLike = None
) -> ReturnPanel:
    """CCC-GARCH(1,1): eps_t = h_t^{1/2} * (C^{1/2} x_t), y_t = mu + eps_t.

    Conditional variances start at their unconditional values and the first
    ``burn_in`` periods are discarded.

    Raises:
        InvalidDataError: If the correlation matrix is not positive definite.
    """
    _check_n(n)
    if model.correlation is None or model.alpha0 is None:
        raise InvalidParameterError("model", model.scenario.value, "a CCC-GARCH model")
    assert model.alpha1 is not None and model.beta1 is not None
    try:
        root = linalg.cholesky(model.correlation, lower=True)
    except linalg.LinAlgError as exc:
        raise InvalidDataError("Conditional correlation matrix is not positive definite") from exc

    rng = np.random.default_rng(seed)
    total = n + burn_in
    shocks = root @ rng.standard_normal((model.p, total))
    h = np.diag(model.sigma.matrix).copy()
    eps = np.empty((model.p, total))
    for t in range(total):
        eps[:, t] = np.sqrt(h) * shocks[:, t]
        h = model.alpha0 + model.alpha1 * eps[:, t] ** 2 + model.beta1 * h
    return ReturnPanel(model.mu[:, None] + eps[:, burn_in:])


def gen_var1(
    model: TrueModel, n: int, burn_in: int = DEFAULT_BURN_IN, seed: SeedLike = None
) -> ReturnPanel:
    """Diagonal VAR(1) started from its stationary distribution, burn-in discarded."""
    _check_n(n)
    if model.gamma is None:
        raise InvalidParameterError("model", model.scenario.value, "a VAR(1) model")
    rng = np.random.default_rng(seed)
    total = n + burn_in
    start = symmetric_root(model.unconditional_sigma.matrix) @ rng.standard_normal(model.p)
    innovations = symmetric_root(model.sigma.matrix) @ rng.standard_normal((model.p, total))
    deviations = np.empty((model.p, total))
    previous = start
    for t in range(total):
        previous = model.gamma * previous + innovations[:, t]
        deviations[:, t] = previous
    return ReturnPanel(model.mu[:, None] + deviations[:, burn_in:])


def generate_panel(
    model: TrueModel, n: int, burn_in: int = DEFAULT_BURN_IN, seed: SeedLike = None
) -> ReturnPanel:
    """Dispatch to the generator of the model's scenario."""
    if model.scenario is Scenario.T5:
        return gen_t5(model, n, seed)
    if model.scenario is Scenario.CAPM:
        return gen_capm(model, n, seed)
    if model.scenario is Scenario.CCC_GARCH:
        return gen_ccc_garch(model, n, burn_in, seed)
    return gen_var1(model, n, burn_in, seed)


def true_gmv_weights(sigma: CovarianceEstimate) -> PortfolioWeights:
    """Population GMV portfolio, the benchmark of the relative loss."""
    return gmv_weights(sigma, label="true_gmv")


def relative_loss(sigma: CovarianceEstimate, weights: PortfolioWeights) -> float:
    """Out-of-sample variance relative to the population GMV variance, minus one."""
    return target_relative_loss(sigma, weights)


def replication_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for replication ``index`` of base ``seed``."""
    return np.random.SeedSequence([seed, index])


@dataclass(frozen=True)
class ExperimentRow:
    """Outcome of one strategy in one replication."""

    scenario: str
    p: int
    n: int
    c: float
    replication: int
    strategy: str
    relative_loss: float
    lambda_star: Optional[float] = None
    psi_star: Optional[float] = None
    error: Optional[str] = None


ROW_COLUMNS = [
    "scenario",
    "p",
    "n",
    "c",
    "replication",
    "strategy",
    "relative_loss",
    "lambda_star",
    "psi_star",
    "error",
]


def run_replication(
    config: ScenarioConfig,
    index: int,
    strategies: Sequence[StrategyName],
) -> list[ExperimentRow]:
    """Draw a model and a panel, fit every strategy and score it.

    A failing strategy produces a row with NaN loss and the error message;
    the other strategies of the replication still run.
    """
    rng = np.random.default_rng(replication_seed(config.seed, index))
    model = draw_model(config.scenario, config.p, rng)
    panel = generate_panel(model, config.n, config.burn_in, rng)
    sample = sample_covariance(panel)
    base = {
        "scenario": config.scenario.value,
        "p": config.p,
        "n": config.n,
        "c": config.concentration,
        "replication": index,
    }
    try:
        target = build_target(config.target, sample, panel.asset_labels)
    except DoubleShrinkError as exc:
        logger.warning("Replication %d: target failed: %s", index, exc)
        return [
            ExperimentRow(**base, strategy=name.value, relative_loss=math.nan, error=str(exc))
            for name in strategies
        ]

    rows = []
    for name in strategies:
        try:
            fit = fit_strategy(name, sample, target, config.estimator)
            loss = relative_loss(model.unconditional_sigma, fit.weights)
        except DoubleShrinkError as exc:
            logger.warning("Replication %d: %s failed: %s", index, name.value, exc)
            rows.append(
                ExperimentRow(**base, strategy=name.value, relative_loss=math.nan, error=str(exc))
            )
            continue
        rows.append(
            ExperimentRow(
                **base,
                strategy=name.value,
                relative_loss=loss,
                lambda_star=fit.lambda_star,
                psi_star=fit.psi_star,
            )
        )
    return rows


@dataclass
class ExperimentResult:
    """Rows of one experiment cell, ordered by replication then strategy."""

    config: ScenarioConfig
    strategies: list[StrategyName]
    rows: list[ExperimentRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(row) for row in self.rows], columns=ROW_COLUMNS)

    def summary(self) -> ExperimentSummary:
        """Mean, median and quantiles of the relative loss per strategy."""
        frame = self.to_frame()
        per_strategy = {}
        for name in self.strategies:
            losses = frame.loc[frame["strategy"] == name.value, "relative_loss"]
            valid = losses.dropna()
            failures = int(losses.size - valid.size)
            if valid.empty:
                per_strategy[name.value] = StrategyLossSummary(failures=failures)
                continue
            q = valid.quantile([0.05, 0.25, 0.75, 0.95])
            per_strategy[name.value] = StrategyLossSummary(
                mean=float(valid.mean()),
                median=float(valid.median()),
                q05=float(q.loc[0.05]),
                q25=float(q.loc[0.25]),
                q75=float(q.loc[0.75]),
                q95=float(q.loc[0.95]),
                replications=int(valid.size),
                failures=failures,
            )
        return ExperimentSummary(
            scenario=self.config.scenario,
            p=self.config.p,
            n=self.config.n,
            concentration=self.config.concentration,
            seed=self.config.seed,
            replications=self.config.replications,
            target=self.config.target.kind,
            strategies=per_strategy,
        )


def run_relative_loss_experiment(
    config: ScenarioConfig,
    threads: int = 1,
    progress: Optional[Callable[[int], None]] = None,
) -> ExperimentResult:
    """Run every replication of one cell, in parallel when ``threads`` > 1.

    Args:
        config: Scenario, dimensions, seed and strategies.
        threads: Worker threads; results are identical for any value.
        progress: Called with 1 after each finished replication.

    Returns:
        Rows sorted by replication index.
    """
    strategies = list(config.strategies or default_strategies(config.concentration))
    logger.info(
        "Running %s with p=%d, n=%d over %d replications",
        config.scenario.value,
        config.p,
        config.n,
        config.replications,
    )
    results: dict[int, list[ExperimentRow]] = {}
    if threads <= 1:
        for index in range(config.replications):
            results[index] = run_replication(config, index, strategies)
            if progress:
                progress(1)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                pool.submit(run_replication, config, index, strategies): index
                for index in range(config.replications)
            }
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                if progress:
                    progress(1)

    rows = [row for index in sorted(results) for row in results[index]]
    return ExperimentResult(config, strategies, rows)


PRESET_REPLICATIONS = {"ci": 20, "desk": 50, "full": 1000}
_FULL_SAMPLE_SIZES = (100, 200, 300, 400)
_FULL_CONCENTRATIONS = (0.25, 0.5, 0.75, 1.25, 1.5, 2.0, 2.7)


def preset_configs(name: str, base: ScenarioConfig) -> list[ScenarioConfig]:
    """Expand a named preset into experiment cells sharing ``base`` settings.

    ``ci`` is a small p=60, n=120 smoke run, ``desk`` is p=100, n=200, and
    ``full`` is the complete grid of sample sizes and concentration ratios.

    Raises:
        InvalidParameterError: If the preset is unknown.
    """
    if name not in PRESET_REPLICATIONS:
        raise InvalidParameterError("preset", name, f"one of {sorted(PRESET_REPLICATIONS)}")
    replications = PRESET_REPLICATIONS[name]
    if name == "ci":
        dims = [(60, 120)]
    elif name == "desk":
        dims = [(100, 200)]
    else:
        dims = [(round(c * n), n) for n in _FULL_SAMPLE_SIZES for c in _FULL_CONCENTRATIONS]
    return [
        base.model_copy(update={"p": p, "n": n, "replications": replications}) for p, n in dims
    ]
