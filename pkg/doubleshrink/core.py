"""Return panels, covariance estimates and GMV portfolio weights.

Panels are stored assets x time (p x n). The sample covariance uses the
divisor n, which is what the random-matrix kernels in ``rmt`` assume.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from doubleshrink.exceptions import (
    DegenerateSolutionError,
    InvalidDataError,
    InvalidParameterError,
    SingularCovarianceError,
)
from doubleshrink.models import WEIGHT_SUM_TOL

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

EPS = float(np.finfo(np.float64).eps)
SYMMETRY_TOL = 1e-12


def _frozen(values: ArrayLike) -> FloatArray:
    """Copy into a read-only float64 array."""
    array = np.array(values, dtype=np.float64, copy=True)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class ReturnPanel:
    """Asset returns stored assets x time.

    Attributes:
        values: Returns, shape (p, n).
        asset_labels: One label per row; defaults to ``asset_0`` ...
        time_labels: One label per column; defaults to ``0`` ...
    """

    values: FloatArray
    asset_labels: tuple[str, ...] = ()
    time_labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        values = _frozen(self.values)
        if values.ndim != 2:
            raise InvalidDataError(f"Return panel must be 2-dimensional, got shape {values.shape}")
        p, n = values.shape
        if p < 2:
            raise InvalidDataError(f"Return panel needs at least 2 assets, got {p}")
        if n < 3:
            raise InvalidDataError(f"Return panel needs at least 3 observations, got {n}")

        assets = tuple(str(a) for a in self.asset_labels) or tuple(f"asset_{i}" for i in range(p))
        times = tuple(str(t) for t in self.time_labels) or tuple(str(t) for t in range(n))
        if len(assets) != p:
            raise InvalidDataError(f"Got {len(assets)} asset labels for {p} assets")
        if len(times) != n:
            raise InvalidDataError(f"Got {len(times)} time labels for {n} observations")
        if len(set(assets)) != p:
            duplicates = sorted({a for a in assets if assets.count(a) > 1})
            raise InvalidDataError(f"Duplicate asset labels: {', '.join(duplicates)}")

        bad = np.argwhere(~np.isfinite(values))
        if bad.size:
            i, t = bad[0]
            raise InvalidDataError("Non-finite return", row=int(t), column=assets[int(i)])

        object.__setattr__(self, "values", values)
        object.__setattr__(self, "asset_labels", assets)
        object.__setattr__(self, "time_labels", times)

    @property
    def p(self) -> int:
        """Number of assets."""
        return int(self.values.shape[0])

    @property
    def n(self) -> int:
        """Number of observations."""
        return int(self.values.shape[1])

    @property
    def concentration(self) -> float:
        """The concentration ratio c = p/n."""
        return self.p / self.n

    def window(self, end: int, length: int) -> ReturnPanel:
        """Return the ``length`` columns ending at column ``end`` (inclusive).

        Raises:
            InvalidParameterError: If the window does not fit in the panel.
        """
        start = end - length + 1
        if start < 0 or end >= self.n:
            raise InvalidParameterError(
                "window", (start, end), f"column indices within [0, {self.n - 1}]"
            )
        return ReturnPanel(
            self.values[:, start : end + 1],
            self.asset_labels,
            self.time_labels[start : end + 1],
        )


class CovarianceKind(str, Enum):
    """Where a covariance matrix came from."""

    SAMPLE = "sample"
    RIDGE = "ridge"
    TRUE = "true"


@dataclass(frozen=True)
class CovarianceEstimate:
    """A symmetric p x p covariance matrix with provenance.

    Attributes:
        matrix: The matrix itself.
        kind: Sample, ridge blend or population covariance.
        lam: Ridge intensity (ridge kind only).
        n_obs: Number of observations behind a sample or ridge estimate.
    """

    matrix: FloatArray
    kind: CovarianceKind
    lam: Optional[float] = None
    n_obs: Optional[int] = None

    def __post_init__(self) -> None:
        matrix = _frozen(self.matrix)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise InvalidDataError(f"Covariance matrix must be square, got shape {matrix.shape}")
        if matrix.shape[0] < 2:
            raise InvalidDataError("Covariance matrix needs at least 2 assets")
        if not np.all(np.isfinite(matrix)):
            raise InvalidDataError("Covariance matrix contains non-finite entries")
        scale = max(1.0, float(np.abs(matrix).max()))
        if float(np.abs(matrix - matrix.T).max()) > SYMMETRY_TOL * scale:
            raise InvalidDataError("Covariance matrix is not symmetric")
        object.__setattr__(self, "matrix", matrix)

    @property
    def p(self) -> int:
        """Dimension of the matrix."""
        return int(self.matrix.shape[0])

    @property
    def concentration(self) -> float:
        """p / n_obs for estimates built from data.

        Raises:
            InvalidParameterError: If the number of observations is unknown.
        """
        if self.n_obs is None:
            raise InvalidParameterError("n_obs", None, "a sample size to derive c = p/n")
        return self.p / self.n_obs


@dataclass(frozen=True)
class PortfolioWeights:
    """Fully invested portfolio weights (they sum to one).

    Attributes:
        weights: One weight per asset.
        label: Name of the strategy that produced them.
    """

    weights: FloatArray
    label: str = "portfolio"

    def __post_init__(self) -> None:
        weights = _frozen(self.weights)
        if weights.ndim != 1 or weights.size < 2:
            raise InvalidDataError(f"Weights must be a vector of length >= 2, got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise InvalidDataError(f"Weights of '{self.label}' contain non-finite entries")
        total = float(weights.sum())
        if abs(total - 1.0) > WEIGHT_SUM_TOL * max(1.0, float(np.abs(weights).sum())):
            raise InvalidDataError(f"Weights of '{self.label}' sum to {total!r}, not 1")
        object.__setattr__(self, "weights", weights)

    @property
    def p(self) -> int:
        """Number of assets."""
        return int(self.weights.size)

    def relabel(self, label: str) -> PortfolioWeights:
        """Same weights under another strategy name."""
        return PortfolioWeights(self.weights, label)


class SpdSolver:
    """Cholesky factorization of a symmetric positive definite matrix.

    The factor is computed once and reused for every right-hand side, so
    ``solve`` and ``quad`` never form an explicit inverse.

    Raises:
        SingularCovarianceError: If the matrix is not numerically positive
            definite.
    """

    def __init__(self, matrix: FloatArray, rcond: Optional[float] = None) -> None:
        p = matrix.shape[0]
        try:
            self._factor = linalg.cho_factor(matrix, lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise SingularCovarianceError("matrix is not positive definite") from exc
        pivots = np.abs(np.diag(self._factor[0])) ** 2
        threshold = rcond if rcond is not None else p * EPS
        if pivots.min() <= threshold * pivots.max():
            raise SingularCovarianceError(
                f"Cholesky pivot ratio {pivots.min() / pivots.max():.3e} below {threshold:.3e}"
            )

    def solve(self, rhs: ArrayLike) -> FloatArray:
        """Solve A x = rhs."""
        return np.asarray(linalg.cho_solve(self._factor, rhs, check_finite=False))

    def quad(self, x: ArrayLike, y: Optional[ArrayLike] = None) -> float:
        """Return x' A^{-1} y (y defaults to x)."""
        left = np.asarray(x, dtype=np.float64)
        right = left if y is None else np.asarray(y, dtype=np.float64)
        return float(left @ self.solve(right))


def sample_covariance(panel: ReturnPanel) -> CovarianceEstimate:
    """Centered sample covariance with divisor n.

    Args:
        panel: Returns, assets x time.

    Returns:
        A sample covariance estimate carrying ``n_obs = panel.n``.
    """
    centered = panel.values - panel.values.mean(axis=1, keepdims=True)
    matrix = centered @ centered.T / panel.n
    return CovarianceEstimate(0.5 * (matrix + matrix.T), CovarianceKind.SAMPLE, n_obs=panel.n)


def check_lambda(lam: float) -> None:
    if not (np.isfinite(lam) and 0.0 < lam <= 1.0):
        raise InvalidParameterError("lambda", lam, "a value in (0, 1]")


def ridge_blend(sample: CovarianceEstimate, lam: float) -> CovarianceEstimate:
    """Tikhonov blend S_lambda = lambda * S + (1 - lambda) * I.

    Raises:
        InvalidParameterError: If lambda is outside (0, 1] or the input is not a
            sample covariance.
    """
    check_lambda(lam)
    if sample.kind is not CovarianceKind.SAMPLE:
        raise InvalidParameterError("covariance kind", sample.kind.value, "a sample covariance")
    matrix = lam * sample.matrix + (1.0 - lam) * np.eye(sample.p)
    return CovarianceEstimate(matrix, CovarianceKind.RIDGE, lam=float(lam), n_obs=sample.n_obs)


def gmv_weights(covariance: CovarianceEstimate, label: str = "gmv") -> PortfolioWeights:
    """GMV weights A^{-1} 1 / 1' A^{-1} 1 of a positive definite matrix.

    Raises:
        SingularCovarianceError: If the matrix is not positive definite.
    """
    ones = np.ones(covariance.p)
    direction = SpdSolver(covariance.matrix).solve(ones)
    return PortfolioWeights(direction / direction.sum(), label)


def tikhonov_weights(ridge: CovarianceEstimate, label: str = "ridge") -> PortfolioWeights:
    """GMV weights of a ridge blend, the first stage of double shrinkage."""
    return gmv_weights(ridge, label)


def traditional_gmv(sample: CovarianceEstimate, label: str = "traditional") -> PortfolioWeights:
    """Plug-in GMV weights S^+ 1 / 1' S^+ 1.

    A Cholesky solve is used when S is numerically full rank, otherwise the
    Moore-Penrose pseudo-inverse with relative eigenvalue cutoff p * eps.

    Raises:
        DegenerateSolutionError: If 1' S^+ 1 vanishes.
    """
    p = sample.p
    eigenvalues = linalg.eigvalsh(sample.matrix, check_finite=False)
    largest = float(np.abs(eigenvalues).max())
    ones = np.ones(p)

    direction: Optional[FloatArray] = None
    if eigenvalues.min() > p * EPS * largest:
        try:
            direction = SpdSolver(sample.matrix).solve(ones)
        except SingularCovarianceError:
            direction = None
    if direction is None:
        logger.debug("Sample covariance is rank deficient, using the pseudo-inverse")
        direction = linalg.pinvh(sample.matrix, atol=0.0, rtol=p * EPS) @ ones

    total = float(direction.sum())
    if not np.isfinite(total) or abs(total) <= EPS * float(np.abs(direction).sum()):
        raise DegenerateSolutionError(total)
    return PortfolioWeights(direction / total, label)


def combine_weights(
    ridge: Union[PortfolioWeights, FloatArray],
    target: Union[PortfolioWeights, FloatArray],
    psi: float,
    label: str = "double",
) -> PortfolioWeights:
    """Linear shrinkage psi * w + (1 - psi) * b.

    Raises:
        InvalidParameterError: If the vectors differ in length or psi is not
            finite.
    """
    w = ridge.weights if isinstance(ridge, PortfolioWeights) else np.asarray(ridge, dtype=float)
    b = target.weights if isinstance(target, PortfolioWeights) else np.asarray(target, dtype=float)
    if w.shape != b.shape:
        raise InvalidParameterError("target length", b.size, f"{w.size} to match the weights")
    if not np.isfinite(psi):
        raise InvalidParameterError("psi", psi, "a finite number")
    return PortfolioWeights(psi * w + (1.0 - psi) * b, label)
