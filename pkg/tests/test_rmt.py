"""Tests for the random-matrix kernels and oracle functionals."""

import numpy as np
import pytest

from doubleshrink import rmt
from doubleshrink.core import CovarianceEstimate, CovarianceKind, sample_covariance
from doubleshrink.exceptions import (
    InvalidParameterError,
    KernelDegenerateError,
    SingularCovarianceError,
)
from doubleshrink.rmt import (
    SampleSpectrum,
    kernels_from_sample,
    omega_lambda,
    oracle_derivatives,
    oracle_v,
)


def identity_sample(p: int = 4, n: int = 8) -> CovarianceEstimate:
    return CovarianceEstimate(np.eye(p), CovarianceKind.SAMPLE, n_obs=n)


class TestSampleSpectrum:
    """Tests for the cached eigendecomposition."""

    def test_traces_match_direct_inverse(self, sample: CovarianceEstimate) -> None:
        """Normalized traces equal those of the explicit resolvent."""
        spectrum = SampleSpectrum.from_covariance(sample)
        resolvent = np.linalg.inv(sample.matrix + 0.7 * np.eye(sample.p))
        t1, t2 = spectrum.resolvent_traces(0.7)
        assert t1 == pytest.approx(np.trace(resolvent) / sample.p, rel=1e-10)
        assert t2 == pytest.approx(np.trace(resolvent @ resolvent) / sample.p, rel=1e-10)

    def test_singularity_detection(self, wide_panel) -> None:
        """A p > n sample is flagged singular, a full-rank one is not."""
        assert SampleSpectrum.from_covariance(sample_covariance(wide_panel)).is_singular()
        assert not SampleSpectrum.from_covariance(identity_sample()).is_singular()


class TestKernelsFromSample:
    """Tests for v_hat and its derivative functionals."""

    def test_identity_example(self) -> None:
        """S = I, c = 0.5, eta = 1: t1 = .5, t2 = .25, v = .75, v1 = .09375, v2 = -1/6."""
        kernels = kernels_from_sample(identity_sample(), eta=1.0, c=0.5)
        assert kernels.t1 == pytest.approx(0.5, abs=1e-15)
        assert kernels.t2 == pytest.approx(0.25, abs=1e-15)
        assert kernels.v_hat == pytest.approx(0.75, abs=1e-15)
        assert kernels.v_hat_1 == pytest.approx(0.09375, abs=1e-15)
        assert kernels.v_hat_2 == pytest.approx(-1.0 / 6.0, abs=1e-14)

    def test_eta_zero_gives_one_minus_c(self, sample: CovarianceEstimate) -> None:
        """At eta = 0 with S invertible, v_hat = 1 - c exactly."""
        kernels = kernels_from_sample(sample, 0.0)
        assert kernels.v_hat == 1.0 - sample.concentration
        assert kernels.v_hat_1 == pytest.approx(
            (1.0 - sample.concentration) * sample.concentration * kernels.t1
        )

    def test_eta_zero_singular_raises(self, wide_panel) -> None:
        """eta = 0 needs an invertible S."""
        with pytest.raises(SingularCovarianceError):
            kernels_from_sample(sample_covariance(wide_panel), 0.0)

    def test_v_hat_formula(self, sample: CovarianceEstimate) -> None:
        """v_hat equals 1 - c + c eta t1."""
        c = sample.concentration
        for eta in (0.01, 0.5, 3.0, 50.0):
            kernels = kernels_from_sample(sample, eta)
            assert kernels.v_hat == pytest.approx(1.0 - c + c * eta * kernels.t1, abs=1e-14)

    def test_v_hat_in_unit_interval(self, sample: CovarianceEstimate) -> None:
        """v_hat lies in (0, 1] for c < 1."""
        for eta in np.geomspace(1e-3, 1e3, 25):
            assert 0.0 < kernels_from_sample(sample, float(eta)).v_hat <= 1.0

    def test_positive_for_singular_sample(self, wide_panel) -> None:
        """With c > 1 and eta > 0, v_hat stays positive."""
        sample = sample_covariance(wide_panel)
        for eta in (0.05, 1.0, 20.0):
            assert kernels_from_sample(sample, eta).v_hat > 0.0

    def test_accepts_spectrum(self, sample: CovarianceEstimate) -> None:
        """A precomputed spectrum gives the same kernels."""
        spectrum = SampleSpectrum.from_covariance(sample)
        direct = kernels_from_sample(sample, 0.4)
        cached = kernels_from_sample(spectrum, 0.4)
        assert cached.v_hat == pytest.approx(direct.v_hat, abs=1e-15)

    def test_degenerate_v_hat(self) -> None:
        """A c so large that v_hat <= 0 raises KernelDegenerateError."""
        with pytest.raises(KernelDegenerateError):
            kernels_from_sample(identity_sample(), eta=0.1, c=20.0)

    def test_rejects_negative_eta(self, sample: CovarianceEstimate) -> None:
        """eta must be non-negative."""
        with pytest.raises(InvalidParameterError):
            kernels_from_sample(sample, -0.1)


class TestOracleV:
    """Tests for the fixed-point solution v(eta)."""

    def test_identity_closed_form(self) -> None:
        """Sigma = I, c = .5, eta = 1 solves v^2 + 0.5 v - 1 = 0."""
        v = oracle_v(CovarianceEstimate(np.eye(3), CovarianceKind.TRUE), 1.0, 0.5)
        assert v == pytest.approx((-0.5 + np.sqrt(4.25)) / 2.0, abs=1e-10)

    def test_scaled_identity_closed_form(self) -> None:
        """Sigma = 2I, c = .5, eta = 1 gives 2v^2 = 1."""
        v = oracle_v(CovarianceEstimate(2.0 * np.eye(3), CovarianceKind.TRUE), 1.0, 0.5)
        assert v == pytest.approx(1.0 / np.sqrt(2.0), abs=1e-10)

    def test_solves_equation(self, sigma: CovarianceEstimate) -> None:
        """The residual of the fixed-point equation is below 1e-12."""
        eigenvalues = np.linalg.eigvalsh(sigma.matrix)
        for c, eta in [(0.25, 0.1), (0.5, 1.0), (1.5, 0.3), (2.7, 5.0)]:
            v = oracle_v(sigma, eta, c)
            rhs = 1.0 - c + c * eta * np.mean(1.0 / (v * eigenvalues + eta))
            assert abs(v - rhs) < 1e-12
            assert 0.0 < v <= 1.0

    def test_increasing_in_eta(self, sigma: CovarianceEstimate) -> None:
        """v(eta) is increasing on a grid."""
        values = [oracle_v(sigma, float(eta), 0.75) for eta in np.geomspace(0.01, 100, 30)]
        assert np.all(np.diff(values) > 0.0)

    def test_eta_zero(self, sigma: CovarianceEstimate) -> None:
        """v(0) = 1 - c for c < 1 and is degenerate otherwise."""
        assert oracle_v(sigma, 0.0, 0.3) == pytest.approx(0.7)
        with pytest.raises(KernelDegenerateError):
            oracle_v(sigma, 0.0, 1.2)

    def test_bisection_fallback(self, sigma: CovarianceEstimate, mocker) -> None:
        """When fixed-point iteration stalls, bisection reaches the same root."""
        reference = oracle_v(sigma, 0.8, 0.6)
        mocker.patch("doubleshrink.rmt.FIXED_POINT_DAMPING", 0.0)
        bisect = mocker.spy(rmt.optimize, "bisect")
        v = oracle_v(sigma, 0.8, 0.6)
        assert bisect.call_count == 1
        assert v == pytest.approx(reference, abs=1e-11)


class TestOracleDerivatives:
    """Tests for v_1 = dv/deta and v_2."""

    @pytest.mark.parametrize(
        "c,eta",
        [(c, eta) for c in (0.2, 0.5, 0.9, 1.5, 2.5) for eta in (0.05, 0.4, 1.5, 6.0)],
    )
    def test_v1_matches_finite_difference(self, c: float, eta: float) -> None:
        """v_1 agrees with a central difference of v within 1e-6 (1 + |v_1|)."""
        sigma = np.linspace(0.2, 6.0, 10)
        h = 1e-5
        numeric = (oracle_v(sigma, eta + h, c) - oracle_v(sigma, eta - h, c)) / (2.0 * h)
        v_1 = oracle_derivatives(sigma, eta, c).v_1
        assert abs(v_1 - numeric) < 1e-6 * (1.0 + abs(v_1))

    def test_v2_non_positive(self, sigma: CovarianceEstimate) -> None:
        """v_2 <= 0, so 1 - v_2 >= 1."""
        for c in (0.3, 0.8, 1.7):
            for eta in (0.1, 1.0, 10.0):
                assert oracle_derivatives(sigma, eta, c).v_2 <= 1e-14

    def test_identity_values(self) -> None:
        """Sigma = I, c = .5, eta = 1 matches the closed-form derivative."""
        functionals = oracle_derivatives(np.ones(3), 1.0, 0.5)
        v = (-0.5 + np.sqrt(4.25)) / 2.0
        # v^2 + (eta - 1 + c) v - eta = 0 differentiated in eta
        expected = (1.0 - v) / (2.0 * v + 0.5)
        assert functionals.v_1 == pytest.approx(expected, rel=1e-9)


class TestOmegaLambda:
    """Tests for the deterministic equivalent of S_lambda."""

    def test_formula(self, sigma: CovarianceEstimate) -> None:
        """Omega = v lambda Sigma + (1 - lambda) I."""
        omega = omega_lambda(sigma, 0.4, 0.8)
        np.testing.assert_allclose(omega.matrix, 0.32 * sigma.matrix + 0.6 * np.eye(sigma.p))
        assert omega.kind is CovarianceKind.TRUE

    def test_rejects_bad_lambda(self, sigma: CovarianceEstimate) -> None:
        """lambda outside (0, 1] is refused."""
        with pytest.raises(InvalidParameterError):
            omega_lambda(sigma, 0.0, 0.5)
