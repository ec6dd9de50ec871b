"""Double shrinkage estimator of the GMV portfolio.

The estimator has two stages. The ridge stage replaces S by
S_lambda = lambda S + (1 - lambda) I. The linear stage then shrinks the
resulting GMV weights toward a target b with intensity psi. Lambda is
picked by maximizing a bona fide loss estimate computed from the sample
alone, and psi follows in closed form.

The oracle and finite-sample functions at the bottom need the population
covariance and exist to validate the bona fide quantities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from doubleshrink.core import (
    EPS,
    CovarianceEstimate,
    FloatArray,
    PortfolioWeights,
    SpdSolver,
    check_lambda,
    combine_weights,
    ridge_blend,
    tikhonov_weights,
)
from doubleshrink.exceptions import (
    InvalidParameterError,
    KernelDegenerateError,
    LossDegenerateError,
    NumericalError,
    OptimizationFailureError,
    SingularCovarianceError,
)
from doubleshrink.models import EstimatorOptions
from doubleshrink.rmt import (
    RmtFunctionals,
    SampleSpectrum,
    kernels_from_sample,
    omega_lambda,
    oracle_derivatives,
    oracle_v,
    population_eigenvalues,
)

logger = logging.getLogger(__name__)

CORRECTION_TOL = 1e-12
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_BOUNDS = (0.01, 0.99)
SINGULAR_BOUNDS = (0.01, 0.95)


def eta_of(lam: float) -> float:
    """Regularization eta = 1/lambda - 1."""
    return 1.0 / lam - 1.0


@dataclass(frozen=True)
class RidgeMoments:
    """Quadratic forms of the ridge blend used by the bona fide loss."""

    ones_inv_ones: float
    target_inv_ones: float
    ones_inv2_ones: float


@dataclass(frozen=True)
class LossTerms:
    """Pieces of the bona fide loss at one lambda.

    The loss is (1 - x)^2 / (1 - 2x + y) and psi is (1 - x) / (1 - 2x + y).
    """

    lam: float
    kernels: RmtFunctionals
    moments: RidgeMoments
    d1: float
    d2: float
    x: float
    y: float

    @property
    def denominator(self) -> float:
        return 1.0 - 2.0 * self.x + self.y

    @property
    def numerator(self) -> float:
        return 1.0 - self.x


class ShrinkageProblem:
    """Sample covariance, target and concentration ratio, preprocessed once.

    The eigendecomposition of S is computed at construction. Every later
    evaluation at a given lambda costs O(p), since S_lambda shares the
    eigenvectors of S.
    """

    def __init__(
        self,
        sample: CovarianceEstimate,
        target: PortfolioWeights,
        c: Optional[float] = None,
    ) -> None:
        if target.p != sample.p:
            raise InvalidParameterError("target length", target.p, f"{sample.p} to match S")
        self.sample = sample
        self.target = target
        self.spectrum = SampleSpectrum.from_covariance(sample)
        self.c = float(sample.concentration if c is None else c)
        if not (np.isfinite(self.c) and self.c > 0.0):
            raise InvalidParameterError("c", self.c, "a finite value > 0")

        b = target.weights
        self.target_variance = float(b @ sample.matrix @ b)
        if not self.target_variance > 0.0:
            raise SingularCovarianceError("the target portfolio has zero sample variance")
        self._ones = self.spectrum.project(np.ones(sample.p))
        self._target = self.spectrum.project(b)

    @property
    def p(self) -> int:
        return self.sample.p

    def moments(self, lam: float) -> RidgeMoments:
        """1'S_lambda^{-1}1, b'S_lambda^{-1}1 and 1'S_lambda^{-2}1.

        Raises:
            SingularCovarianceError: If lambda = 1 and S is singular.
        """
        check_lambda(lam)
        if lam == 1.0 and self.spectrum.is_singular():
            raise SingularCovarianceError("lambda = 1 needs a nonsingular sample covariance")
        inverse = 1.0 / (lam * self.spectrum.eigenvalues + (1.0 - lam))
        return RidgeMoments(
            ones_inv_ones=float(self._ones @ (inverse * self._ones)),
            target_inv_ones=float(self._target @ (inverse * self._ones)),
            ones_inv2_ones=float(self._ones @ (inverse**2 * self._ones)),
        )

    def kernels(self, lam: float) -> RmtFunctionals:
        """Sample kernels at eta = 1/lambda - 1."""
        check_lambda(lam)
        return kernels_from_sample(self.spectrum, eta_of(lam), self.c)


def d1(
    problem: ShrinkageProblem,
    lam: float,
    kernels: Optional[RmtFunctionals] = None,
    moments: Optional[RidgeMoments] = None,
) -> float:
    """Consistent estimator of b'Sigma Omega_lambda^{-1} 1.

    d1 = (1 / (lambda v_hat)) (1 - (1 - lambda) b'S_lambda^{-1} 1).
    """
    kernels = kernels or problem.kernels(lam)
    moments = moments or problem.moments(lam)
    return (1.0 - (1.0 - lam) * moments.target_inv_ones) / (lam * kernels.v_hat)


def d2(
    problem: ShrinkageProblem,
    lam: float,
    kernels: Optional[RmtFunctionals] = None,
    moments: Optional[RidgeMoments] = None,
) -> float:
    """Consistent estimator of 1'Omega_lambda^{-1} Sigma Omega_lambda^{-1} 1.

    Raises:
        KernelDegenerateError: If the correction denominator
            1 - (v_hat_1 / v_hat)(1/lambda - 1) vanishes.
    """
    kernels = kernels or problem.kernels(lam)
    moments = moments or problem.moments(lam)
    ratio = kernels.v_hat_1 / kernels.v_hat
    correction = 1.0 - ratio * (1.0 / lam - 1.0)
    if abs(correction) < CORRECTION_TOL:
        raise KernelDegenerateError(kernels.eta, f"d2 correction {correction:.3e} vanished")
    scale = lam * kernels.v_hat
    adjusted = moments.ones_inv2_ones - ratio * moments.ones_inv_ones / lam
    return moments.ones_inv_ones / scale - (1.0 - lam) / scale * adjusted / correction


def loss_terms(problem: ShrinkageProblem, lam: float) -> LossTerms:
    """Evaluate the kernels, moments, d1, d2 and the ratios x and y at lambda."""
    kernels = problem.kernels(lam)
    moments = problem.moments(lam)
    first = d1(problem, lam, kernels, moments)
    second = d2(problem, lam, kernels, moments)
    scale = problem.target_variance * moments.ones_inv_ones
    x = first / scale
    y = (1.0 - kernels.v_hat_2) * second / (scale * moments.ones_inv_ones)
    return LossTerms(lam=lam, kernels=kernels, moments=moments, d1=first, d2=second, x=x, y=y)


def bona_fide_loss(problem: ShrinkageProblem, lam: float) -> float:
    """Bona fide estimate of the asymptotic loss L_{n;2}(lambda).

    Raises:
        LossDegenerateError: If the denominator 1 - 2x + y is not positive.
    """
    terms = loss_terms(problem, lam)
    if not terms.denominator > 0.0:
        raise LossDegenerateError(lam, terms.denominator)
    return terms.numerator**2 / terms.denominator


def optimal_psi_hat(problem: ShrinkageProblem, lam: float, clamp: bool = False) -> float:
    """Bona fide linear shrinkage intensity (1 - x) / (1 - 2x + y).

    Raises:
        LossDegenerateError: If the denominator is not positive.
    """
    terms = loss_terms(problem, lam)
    if not terms.denominator > 0.0:
        raise LossDegenerateError(lam, terms.denominator)
    psi = terms.numerator / terms.denominator
    return float(np.clip(psi, 0.0, 1.0)) if clamp else psi


@dataclass(frozen=True)
class LossCurvePoint:
    """Bona fide, oracle and finite-sample quantities at one lambda."""

    lam: float
    eta: float
    bona_fide_loss: float
    psi_hat: float
    oracle_loss: Optional[float] = None
    oracle_psi: Optional[float] = None
    finite_sample_loss: Optional[float] = None
    finite_sample_psi: Optional[float] = None
    degenerate: bool = False


@dataclass(frozen=True)
class ShrinkageSolution:
    """Result of a double shrinkage fit.

    Attributes:
        lambda_star: Selected ridge intensity.
        psi_star: Linear shrinkage intensity at lambda_star.
        loss: Bona fide loss at lambda_star.
        ridge_weights: GMV weights of S_lambda_star.
        final_weights: psi_star * ridge + (1 - psi_star) * target.
        target: The target portfolio b.
        kernels: Sample kernels at lambda_star.
        diagnostics: d1, d2, moments and loss pieces at lambda_star.
        skipped_lambdas: Grid points dropped as degenerate.
        loss_in_range: False when the loss estimate left [0, 1].
    """

    lambda_star: float
    psi_star: float
    loss: float
    ridge_weights: PortfolioWeights
    final_weights: PortfolioWeights
    target: PortfolioWeights
    kernels: RmtFunctionals
    diagnostics: dict[str, float] = field(default_factory=dict)
    skipped_lambdas: tuple[float, ...] = ()
    loss_in_range: bool = True


def default_bounds(c: float) -> tuple[float, float]:
    """Lambda search interval; the upper end stays away from 1 when S is singular."""
    return SINGULAR_BOUNDS if c >= 1.0 else DEFAULT_BOUNDS


def _safe_loss(problem: ShrinkageProblem, lam: float) -> float:
    try:
        return bona_fide_loss(problem, lam)
    except NumericalError as exc:
        logger.debug("Skipping lambda=%.6g: %s", lam, exc)
        return -math.inf


def golden_section_max(
    func: Callable[[float], float],
    lower: float,
    upper: float,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> float:
    """Maximize a unimodal function on [lower, upper] by golden-section search.

    Returns:
        The midpoint of the final bracket.
    """
    a, b = lower, upper
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = func(x1), func(x2)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = func(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = func(x2)
    return 0.5 * (a + b)


def _solve_at(
    problem: ShrinkageProblem,
    lam: float,
    clamp_psi: bool,
    skipped: Sequence[float] = (),
) -> ShrinkageSolution:
    terms = loss_terms(problem, lam)
    if not terms.denominator > 0.0:
        raise LossDegenerateError(lam, terms.denominator)
    loss = terms.numerator**2 / terms.denominator
    psi = terms.numerator / terms.denominator
    if clamp_psi:
        psi = float(np.clip(psi, 0.0, 1.0))

    ridge = tikhonov_weights(ridge_blend(problem.sample, lam), label="ridge")
    final = combine_weights(ridge, problem.target, psi, label="double")
    in_range = 0.0 <= loss <= 1.0
    if not in_range:
        logger.warning("Bona fide loss %.6g at lambda=%.6g is outside [0, 1]", loss, lam)

    diagnostics = {
        "d1": terms.d1,
        "d2": terms.d2,
        "x": terms.x,
        "y": terms.y,
        "loss_denominator": terms.denominator,
        "target_sample_variance": problem.target_variance,
        "ones_inv_ones": terms.moments.ones_inv_ones,
        "target_inv_ones": terms.moments.target_inv_ones,
        "ones_inv2_ones": terms.moments.ones_inv2_ones,
    }
    return ShrinkageSolution(
        lambda_star=float(lam),
        psi_star=float(psi),
        loss=float(loss),
        ridge_weights=ridge,
        final_weights=final,
        target=problem.target,
        kernels=terms.kernels,
        diagnostics=diagnostics,
        skipped_lambdas=tuple(float(s) for s in skipped),
        loss_in_range=in_range,
    )


def optimize_lambda(
    sample: CovarianceEstimate,
    target: PortfolioWeights,
    options: Optional[EstimatorOptions] = None,
    c: Optional[float] = None,
) -> ShrinkageSolution:
    """Fit the double shrinkage estimator.

    Scans a uniform lambda grid, then refines around the best grid point by
    golden-section search. The refined point is kept only if it improves on
    the grid maximum. Degenerate grid points are skipped and reported.

    Args:
        sample: Sample covariance S.
        target: Target portfolio b.
        options: Grid size, bounds, refinement and psi clamping.
        c: Concentration ratio; defaults to p / n_obs of the sample.

    Returns:
        The fitted solution.

    Raises:
        OptimizationFailureError: If every grid point is degenerate.
    """
    options = options or EstimatorOptions()
    problem = ShrinkageProblem(sample, target, c)
    low, high = options.lambda_bounds or default_bounds(problem.c)
    grid = np.linspace(low, high, options.grid_size)
    values = np.array([_safe_loss(problem, float(lam)) for lam in grid])

    admissible = np.isfinite(values)
    skipped = grid[~admissible]
    if not admissible.any():
        raise OptimizationFailureError(
            f"Bona fide loss is degenerate on all {grid.size} grid points in [{low}, {high}]"
        )
    if skipped.size:
        logger.info("Skipped %d degenerate lambda grid points", skipped.size)

    best = int(np.argmax(values))
    lam_star, loss_star = float(grid[best]), float(values[best])
    if options.refine:
        lower = float(grid[max(best - 1, 0)])
        upper = float(grid[min(best + 1, grid.size - 1)])
        refined = golden_section_max(
            lambda lam: _safe_loss(problem, lam), lower, upper, options.tolerance
        )
        refined_loss = _safe_loss(problem, refined)
        if refined_loss > loss_star:
            lam_star, loss_star = refined, refined_loss

    logger.debug("lambda*=%.6g with bona fide loss %.6g", lam_star, loss_star)
    return _solve_at(problem, lam_star, options.clamp_psi, skipped)


def fit_at_lambda(
    sample: CovarianceEstimate,
    target: PortfolioWeights,
    lam: float,
    clamp_psi: bool = False,
    c: Optional[float] = None,
) -> ShrinkageSolution:
    """Double shrinkage at a fixed lambda.

    Lambda = 1 gives the pure linear shrinkage of the traditional GMV
    portfolio toward the target, which needs c < 1.
    """
    return _solve_at(ShrinkageProblem(sample, target, c), lam, clamp_psi)


def _or_nan(evaluate: Callable[[], float]) -> float:
    try:
        return evaluate()
    except NumericalError as exc:
        logger.debug("Validation quantity is degenerate: %s", exc)
        return math.nan


def loss_curve(
    sample: CovarianceEstimate,
    target: PortfolioWeights,
    lambdas: Sequence[float],
    c: Optional[float] = None,
    sigma: Optional[CovarianceEstimate] = None,
) -> list[LossCurvePoint]:
    """Evaluate the bona fide loss and psi over a lambda grid.

    Degenerate points are returned with NaN values and ``degenerate=True``.
    With ``sigma`` the oracle and finite-sample counterparts are filled in.
    """
    problem = ShrinkageProblem(sample, target, c)
    points = []
    for lam in lambdas:
        lam = float(lam)
        degenerate = False
        try:
            terms = loss_terms(problem, lam)
            if not terms.denominator > 0.0:
                raise LossDegenerateError(lam, terms.denominator)
            loss = terms.numerator**2 / terms.denominator
            psi = terms.numerator / terms.denominator
        except NumericalError as exc:
            logger.debug("Loss curve point lambda=%.6g is degenerate: %s", lam, exc)
            loss, psi, degenerate = math.nan, math.nan, True

        extra: dict[str, Optional[float]] = {}
        if sigma is not None:
            ridge = ridge_blend(sample, lam)
            extra = {
                "oracle_loss": _or_nan(lambda: oracle_loss(sigma, target, lam, problem.c)),
                "oracle_psi": _or_nan(lambda: oracle_psi(sigma, target, lam, problem.c)),
                "finite_sample_loss": _or_nan(lambda: finite_sample_l2(sigma, ridge, target)),
                "finite_sample_psi": _or_nan(lambda: finite_sample_psi(sigma, ridge, target)),
            }
        points.append(
            LossCurvePoint(
                lam=lam,
                eta=eta_of(lam),
                bona_fide_loss=loss,
                psi_hat=psi,
                degenerate=degenerate,
                **extra,
            )
        )
    return points


def uniform_lambda_grid(k: int) -> FloatArray:
    """The grid i / (k + 1) for i = 1..k, strictly inside (0, 1)."""
    if k < 1:
        raise InvalidParameterError("grid size", k, "a positive integer")
    return np.arange(1, k + 1) / (k + 1)


# Oracle and finite-sample quantities (population covariance known)


@dataclass(frozen=True)
class OracleTerms:
    """Deterministic-equivalent pieces of the asymptotic loss at one lambda."""

    lam: float
    eta: float
    v: float
    v_1: float
    v_2: float
    target_variance: float
    cross: float
    ones_omega_ones: float
    sandwich: float

    @property
    def x(self) -> float:
        return self.cross / (self.target_variance * self.ones_omega_ones)

    @property
    def y(self) -> float:
        return (1.0 - self.v_2) * self.sandwich / (
            self.target_variance * self.ones_omega_ones**2
        )


def oracle_terms(
    sigma: CovarianceEstimate,
    target: PortfolioWeights,
    lam: float,
    c: float,
) -> OracleTerms:
    """Solve for v at eta(lambda) and evaluate the quadratic forms in Omega_lambda."""
    check_lambda(lam)
    eta = eta_of(lam)
    eigenvalues = population_eigenvalues(sigma)
    v = oracle_v(eigenvalues, eta, c)
    functionals = oracle_derivatives(eigenvalues, eta, c, v)
    omega = omega_lambda(sigma, lam, v)
    direction = SpdSolver(omega.matrix).solve(np.ones(sigma.p))
    b = target.weights
    return OracleTerms(
        lam=lam,
        eta=eta,
        v=v,
        v_1=functionals.v_1,
        v_2=functionals.v_2,
        target_variance=float(b @ sigma.matrix @ b),
        cross=float(b @ sigma.matrix @ direction),
        ones_omega_ones=float(direction.sum()),
        sandwich=float(direction @ sigma.matrix @ direction),
    )


def oracle_loss(
    sigma: CovarianceEstimate, target: PortfolioWeights, lam: float, c: float
) -> float:
    """Asymptotic loss L_2(lambda) for a known population covariance."""
    terms = oracle_terms(sigma, target, lam, c)
    denominator = 1.0 - 2.0 * terms.x + terms.y
    if not denominator > 0.0:
        raise LossDegenerateError(lam, denominator)
    return (1.0 - terms.x) ** 2 / denominator


def oracle_psi(
    sigma: CovarianceEstimate, target: PortfolioWeights, lam: float, c: float
) -> float:
    """Asymptotically optimal psi for a known population covariance."""
    terms = oracle_terms(sigma, target, lam, c)
    denominator = 1.0 - 2.0 * terms.x + terms.y
    if not denominator > 0.0:
        raise LossDegenerateError(lam, denominator)
    return (1.0 - terms.x) / denominator


def finite_sample_loss(sigma: CovarianceEstimate, weights: PortfolioWeights) -> float:
    """Out-of-sample variance w' Sigma w."""
    w = weights.weights
    return float(w @ sigma.matrix @ w)


def _gap_terms(
    sigma: CovarianceEstimate, ridge: CovarianceEstimate, target: PortfolioWeights
) -> tuple[float, float, float]:
    """b'Sigma b, b'Sigma(b - w) and (b - w)'Sigma(b - w) for w the ridge GMV weights."""
    b = target.weights
    gap = b - tikhonov_weights(ridge).weights
    return (
        float(b @ sigma.matrix @ b),
        float(b @ sigma.matrix @ gap),
        float(gap @ sigma.matrix @ gap),
    )


def completed_square_loss(
    sigma: CovarianceEstimate,
    ridge_weights: PortfolioWeights,
    target: PortfolioWeights,
    psi: float,
) -> float:
    """Variance of psi * w + (1 - psi) * b written as a square in psi.

    D (psi - b'Sigma(b - w)/D)^2 - (b'Sigma(b - w))^2 / D + b'Sigma b with
    D = (b - w)'Sigma(b - w). Equals ``finite_sample_loss`` of the combined
    weights. When D = 0 the variance is b'Sigma b for every psi.
    """
    b = target.weights
    gap = b - ridge_weights.weights
    target_variance = float(b @ sigma.matrix @ b)
    cross = float(b @ sigma.matrix @ gap)
    spread = float(gap @ sigma.matrix @ gap)
    if spread <= EPS * target_variance:
        return target_variance
    return spread * (psi - cross / spread) ** 2 - cross**2 / spread + target_variance


def finite_sample_psi(
    sigma: CovarianceEstimate, ridge: CovarianceEstimate, target: PortfolioWeights
) -> float:
    """Oracle psi b'Sigma(b - w) / (b - w)'Sigma(b - w) minimizing the variance.

    Raises:
        LossDegenerateError: If the ridge weights coincide with the target.
    """
    _, cross, spread = _gap_terms(sigma, ridge, target)
    if not spread > 0.0:
        raise LossDegenerateError(ridge.lam or 1.0, spread)
    return cross / spread


def finite_sample_l2(
    sigma: CovarianceEstimate, ridge: CovarianceEstimate, target: PortfolioWeights
) -> float:
    """Finite-sample loss (b'Sigma(b - w))^2 / (b'Sigma b (b - w)'Sigma(b - w)).

    Raises:
        LossDegenerateError: If the ridge weights coincide with the target.
    """
    target_variance, cross, spread = _gap_terms(sigma, ridge, target)
    if not spread > 0.0:
        raise LossDegenerateError(ridge.lam or 1.0, spread)
    return cross**2 / (target_variance * spread)


def target_relative_loss(sigma: CovarianceEstimate, weights: PortfolioWeights) -> float:
    """Relative variance excess w'Sigma w / V_GMV - 1 = w'Sigma w 1'Sigma^{-1}1 - 1.

    Applied to the target b this is the loss L_b of holding the target
    instead of the population GMV portfolio.
    """
    w = weights.weights
    ones_inv_ones = SpdSolver(sigma.matrix).quad(np.ones(sigma.p))
    return float(w @ sigma.matrix @ w) * ones_inv_ones - 1.0
