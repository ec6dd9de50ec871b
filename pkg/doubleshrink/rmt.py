"""Random-matrix functionals of the ridge-regularized sample covariance.

Two families live here. The sample kernels (``v_hat`` and its two derivative
functionals) are computed from the spectrum of S alone and feed the bona fide
loss. The oracle functionals solve the deterministic fixed-point equation for
v(eta) given the population covariance and are only used for validation.

Throughout, eta = 1/lambda - 1 and c = p/n.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg, optimize

from doubleshrink.core import EPS, CovarianceEstimate, CovarianceKind, FloatArray
from doubleshrink.exceptions import (
    ConvergenceFailureError,
    InvalidParameterError,
    KernelDegenerateError,
    SingularCovarianceError,
)

logger = logging.getLogger(__name__)

FIXED_POINT_DAMPING = 0.5
FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 500
DERIVATIVE_DENOMINATOR_TOL = 1e-14


@dataclass(frozen=True)
class SampleSpectrum:
    """Eigendecomposition of a sample covariance, computed once per fit.

    Eigenvalues are ascending and clipped at zero (S is positive
    semi-definite; tiny negative values are roundoff).
    """

    eigenvalues: FloatArray
    eigenvectors: FloatArray
    n_obs: Optional[int] = None

    @classmethod
    def from_covariance(cls, sample: CovarianceEstimate) -> SampleSpectrum:
        """Decompose a covariance estimate with a symmetric eigensolver."""
        eigenvalues, eigenvectors = linalg.eigh(sample.matrix, check_finite=False)
        return cls(np.clip(eigenvalues, 0.0, None), eigenvectors, sample.n_obs)

    @property
    def p(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def concentration(self) -> float:
        if self.n_obs is None:
            raise InvalidParameterError("n_obs", None, "a sample size to derive c = p/n")
        return self.p / self.n_obs

    def is_singular(self) -> bool:
        """True when the smallest eigenvalue is below p * eps * largest."""
        largest = float(self.eigenvalues[-1])
        return bool(largest <= 0.0 or self.eigenvalues[0] <= self.p * EPS * largest)

    def resolvent_traces(self, eta: float) -> tuple[float, float]:
        """Normalized traces (1/p) tr((S + eta I)^{-1}) and (1/p) tr((S + eta I)^{-2})."""
        inverse = 1.0 / (self.eigenvalues + eta)
        return float(inverse.mean()), float((inverse**2).mean())

    def project(self, vector: FloatArray) -> FloatArray:
        """Coordinates of a vector in the eigenbasis."""
        return np.asarray(self.eigenvectors.T @ vector)


@dataclass(frozen=True)
class RmtFunctionals:
    """Sample kernels at one eta.

    Attributes:
        eta: Regularization 1/lambda - 1.
        c: Concentration ratio.
        t1: (1/p) tr((S + eta I)^{-1}).
        t2: (1/p) tr((S + eta I)^{-2}).
        v_hat: 1 - c (1 - eta t1).
        v_hat_1: v_hat c (t1 - eta t2).
        v_hat_2: 1 - 1/v_hat + eta v_hat_1 / v_hat^2.
    """

    eta: float
    c: float
    t1: float
    t2: float
    v_hat: float
    v_hat_1: float
    v_hat_2: float

    def as_dict(self) -> dict[str, float]:
        return {
            "eta": self.eta,
            "t1": self.t1,
            "t2": self.t2,
            "v_hat": self.v_hat,
            "v_hat_1": self.v_hat_1,
            "v_hat_2": self.v_hat_2,
        }


@dataclass(frozen=True)
class OracleFunctionals:
    """Deterministic equivalents at one eta for a known population covariance."""

    eta: float
    c: float
    v: float
    v_1: float
    v_2: float


def _check_eta_c(eta: float, c: float) -> None:
    if not (np.isfinite(eta) and eta >= 0.0):
        raise InvalidParameterError("eta", eta, "a finite value >= 0")
    if not (np.isfinite(c) and c > 0.0):
        raise InvalidParameterError("c", c, "a finite value > 0")


def kernels_from_sample(
    sample: Union[CovarianceEstimate, SampleSpectrum],
    eta: float,
    c: Optional[float] = None,
) -> RmtFunctionals:
    """Compute v_hat and its derivative functionals from the sample spectrum.

    Args:
        sample: Sample covariance, or its precomputed spectrum.
        eta: Regularization eta >= 0.
        c: Concentration ratio; defaults to p / n_obs of the sample.

    Returns:
        The kernels at ``eta``.

    Raises:
        SingularCovarianceError: If eta = 0 and S is singular.
        KernelDegenerateError: If v_hat is not positive.
    """
    spectrum = (
        sample if isinstance(sample, SampleSpectrum) else SampleSpectrum.from_covariance(sample)
    )
    if c is None:
        c = spectrum.concentration
    _check_eta_c(eta, c)
    if eta == 0.0 and spectrum.is_singular():
        raise SingularCovarianceError("eta = 0 needs a nonsingular sample covariance")

    t1, t2 = spectrum.resolvent_traces(eta)
    v_hat = 1.0 - c * (1.0 - eta * t1)
    if not v_hat > 0.0:
        raise KernelDegenerateError(eta, f"v_hat = {v_hat:.3e} is not positive")
    v_hat_1 = v_hat * c * (t1 - eta * t2)
    v_hat_2 = 1.0 - 1.0 / v_hat + eta * v_hat_1 / v_hat**2
    return RmtFunctionals(
        eta=float(eta), c=float(c), t1=t1, t2=t2, v_hat=v_hat, v_hat_1=v_hat_1, v_hat_2=v_hat_2
    )


def population_eigenvalues(sigma: CovarianceEstimate) -> FloatArray:
    """Eigenvalues of a population covariance, which must be positive definite.

    Raises:
        SingularCovarianceError: If an eigenvalue is not positive.
    """
    eigenvalues = linalg.eigvalsh(sigma.matrix, check_finite=False)
    if eigenvalues[0] <= sigma.p * EPS * eigenvalues[-1]:
        raise SingularCovarianceError("population covariance must be positive definite")
    return np.asarray(eigenvalues)


def _spectrum_of(sigma: Union[CovarianceEstimate, FloatArray]) -> FloatArray:
    if isinstance(sigma, CovarianceEstimate):
        return population_eigenvalues(sigma)
    return np.asarray(sigma, dtype=float)


def oracle_v(
    sigma: Union[CovarianceEstimate, FloatArray],
    eta: float,
    c: float,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
) -> float:
    """Solve v = 1 - c + c eta (1/p) tr((v Sigma + eta I)^{-1}) for v in (0, 1].

    Damped fixed-point iteration first; if it stalls, bisection on
    g(v) = v - rhs(v), which is increasing on (0, 1].

    Args:
        sigma: Population covariance, or its eigenvalues.
        eta: Regularization eta >= 0 (eta = 0 needs c < 1 and gives 1 - c).
        c: Concentration ratio.
        tol: Residual tolerance |v - rhs(v)|.
        max_iter: Iteration cap of each stage.

    Raises:
        ConvergenceFailureError: If neither stage reaches ``tol``.
    """
    _check_eta_c(eta, c)
    eigenvalues = _spectrum_of(sigma)
    if eta == 0.0:
        if c >= 1.0:
            raise KernelDegenerateError(eta, f"v = 1 - c is not positive for c = {c:.6g}")
        return 1.0 - c

    def rhs(v: float) -> float:
        return 1.0 - c + c * eta * float(np.mean(1.0 / (v * eigenvalues + eta)))

    v = max(1.0 - c, 0.5)
    residual = float("inf")
    for _ in range(max_iter):
        update = rhs(v)
        residual = abs(v - update)
        if residual < tol:
            return v
        v = (1.0 - FIXED_POINT_DAMPING) * v + FIXED_POINT_DAMPING * update
        if not 0.0 < v <= 1.0:
            break

    logger.debug(
        "Fixed-point iteration stalled at eta=%.6g (residual %.3e), bisecting", eta, residual
    )

    def gap(v: float) -> float:
        return v - rhs(v)

    low, high = 1e-10, 1.0
    if gap(high) == 0.0:
        return high
    if gap(low) > 0.0 or gap(high) < 0.0:
        raise ConvergenceFailureError(max_iter, residual)
    root, result = optimize.bisect(
        gap, low, high, xtol=1e-15, maxiter=max_iter, full_output=True, disp=False
    )
    residual = abs(gap(root))
    if not result.converged or residual >= tol:
        raise ConvergenceFailureError(result.iterations, residual)
    return float(root)


def oracle_derivatives(
    sigma: Union[CovarianceEstimate, FloatArray],
    eta: float,
    c: float,
    v: Optional[float] = None,
) -> OracleFunctionals:
    """Derivative functionals v_1 = dv/deta and v_2 at one eta.

    Args:
        sigma: Population covariance, or its eigenvalues.
        eta: Regularization eta >= 0.
        c: Concentration ratio.
        v: Fixed-point solution; solved for when omitted.

    Raises:
        KernelDegenerateError: If the implicit-derivative denominator vanishes.
    """
    eigenvalues = _spectrum_of(sigma)
    if v is None:
        v = oracle_v(eigenvalues, eta, c)
    inverse = 1.0 / (v * eigenvalues + eta)
    t = float(inverse.mean())
    t2 = float((inverse**2).mean())
    denominator = 1.0 - c + 2.0 * c * eta * t - c * eta**2 * t2
    if abs(denominator) < DERIVATIVE_DENOMINATOR_TOL:
        raise KernelDegenerateError(eta, f"derivative denominator {denominator:.3e} vanished")
    v_1 = v * c * (t - eta * t2) / denominator
    v_2 = 1.0 - 1.0 / v + eta * v_1 / v**2
    return OracleFunctionals(eta=float(eta), c=float(c), v=float(v), v_1=v_1, v_2=v_2)


def omega_lambda(sigma: CovarianceEstimate, lam: float, v: float) -> CovarianceEstimate:
    """Deterministic equivalent Omega_lambda = v lambda Sigma + (1 - lambda) I.

    Raises:
        InvalidParameterError: If lambda is outside (0, 1] or v is not positive.
    """
    if not (np.isfinite(lam) and 0.0 < lam <= 1.0):
        raise InvalidParameterError("lambda", lam, "a value in (0, 1]")
    if not (np.isfinite(v) and v > 0.0):
        raise InvalidParameterError("v", v, "a positive value")
    matrix = v * lam * sigma.matrix + (1.0 - lam) * np.eye(sigma.p)
    return CovarianceEstimate(matrix, CovarianceKind.TRUE, lam=float(lam))
