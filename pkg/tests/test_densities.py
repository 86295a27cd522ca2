"""Unit tests for the transition kernels, checked against scipy.stats/quad."""

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad
from scipy.stats import norm

from risksched import (
    ChannelMatrix,
    ModelParams,
    folded_density,
    gauss,
    psi,
    trans_density,
    varphi,
)


def mk(**kw):
    base = dict(a=0.9, sigma2=1.0, lam=1.0, gamma=0.05, horizon=3, p01=0.3, p10=0.2)
    base.update(kw)
    return ModelParams(**base)


class TestKernels:
    def test_psi_hand_values(self):
        assert psi(0.0, 1.0) == 1.0
        assert psi(1.0, 0.5) == pytest.approx(math.exp(-1.0), rel=1e-15)
        assert_allclose(psi(np.array([1.0, -1.0]), 2.0), math.exp(-0.25))

    def test_psi_rejects_bad_sigma2(self):
        with pytest.raises(ValueError):
            psi(0.0, 0.0)

    def test_varphi_two_sided(self):
        v, s = 0.7, 1.3
        assert varphi(v, s, 1.0) == pytest.approx(psi(v - s, 1.0) + psi(v + s, 1.0), rel=1e-15)
        assert varphi(v, 0.0, 1.0) == pytest.approx(2.0 * psi(v, 1.0), rel=1e-15)
        # even in both arguments
        assert varphi(-v, s, 1.0) == varphi(v, s, 1.0)
        assert varphi(v, -s, 1.0) == varphi(v, s, 1.0)

    def test_gauss_matches_scipy_pdf(self):
        x = np.linspace(-3, 3, 7)
        assert_allclose(gauss(x, 0.4, 2.5), norm.pdf(x, loc=0.4, scale=math.sqrt(2.5)), rtol=1e-12)

    def test_gauss_unnormalized_peak_is_one(self):
        assert gauss(0.4, 0.4, 2.5, normalized=False) == 1.0

    def test_gauss_integrates_to_one(self):
        val, _ = quad(lambda x: gauss(x, -1.2, 0.7), -np.inf, np.inf)
        assert val == pytest.approx(1.0, abs=1e-10)


class TestChannelMatrix:
    def test_from_params(self):
        m = ChannelMatrix.from_params(mk(p01=0.3, p10=0.2))
        assert m[0, 1] == 0.3
        assert m[1, 1] == 0.8

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            ChannelMatrix(np.array([[0.5, 0.4], [0.2, 0.8]]))
        with pytest.raises(ValueError):
            ChannelMatrix(np.array([[1.2, -0.2], [0.2, 0.8]]))
        with pytest.raises(ValueError):
            ChannelMatrix(np.eye(3))


class TestTransDensity:
    def test_matches_channel_times_gaussian(self):
        p = mk(a=0.9, sigma2=1.0, p01=0.3, p10=0.2)
        dn = np.linspace(-2, 2, 5)
        # idle from delta=1.5: drift kernel centered at a*delta
        expected = 0.8 * norm.pdf(dn, loc=0.9 * 1.5, scale=1.0)
        assert_allclose(trans_density(dn, 1, 1.5, 1, 0, p), expected, rtol=1e-12)
        # delivery (u=1, c=1): center resets to 0
        expected = 0.2 * norm.pdf(dn, loc=0.0, scale=1.0)
        assert_allclose(trans_density(dn, 0, 1.5, 1, 1, p), expected, rtol=1e-12)

    def test_lost_attempt_keeps_drift_kernel(self):
        # u=1 in a bad channel is just u=0 plus an energy bill elsewhere
        p = mk()
        dn = np.linspace(-2, 2, 9)
        assert_allclose(
            trans_density(dn, 1, 0.7, 0, 1, p), trans_density(dn, 1, 0.7, 0, 0, p), rtol=0, atol=0
        )

    @pytest.mark.parametrize("c,c_next,u", [(2, 0, 0), (0, -1, 0), (0, 0, 3)])
    def test_rejects_non_binary_args(self, c, c_next, u):
        with pytest.raises(ValueError):
            trans_density(0.0, c_next, 0.0, c, u, mk())

    @pytest.mark.parametrize("c,u", [(0, 0), (0, 1), (1, 0), (1, 1)])
    def test_total_mass_is_one(self, c, u):
        p = mk()
        total = sum(
            quad(lambda dn: trans_density(dn, cn, 1.2, c, u, p), -np.inf, np.inf)[0]
            for cn in (0, 1)
        )
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_unnormalized_ratio(self):
        p = mk(sigma2=2.0)
        ratio = trans_density(0.3, 1, 1.0, 1, 0, p, normalized=False) / trans_density(
            0.3, 1, 1.0, 1, 0, p, normalized=True
        )
        assert ratio == pytest.approx(math.sqrt(2 * math.pi * 2.0), rel=1e-12)


class TestFoldedDensity:
    def test_two_sided_image_sum(self):
        p = mk(a=0.9, sigma2=1.0, p10=0.2)
        # |delta| chain from |delta|=1, idle, channel stays good:
        # p(dn) = (1-p10) * (pdf(dn - 0.9) + pdf(dn + 0.9))
        dn = 0.5
        expected = 0.8 * (norm.pdf(dn - 0.9) + norm.pdf(dn + 0.9))
        assert folded_density(dn, 1, 1.0, 1, 0, p) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("c,u", [(0, 0), (1, 0), (1, 1)])
    def test_total_mass_is_one(self, c, u):
        p = mk()
        total = sum(
            quad(lambda dn: folded_density(dn, cn, 0.8, c, u, p), 0.0, np.inf)[0]
            for cn in (0, 1)
        )
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_rejects_negative_arguments(self):
        with pytest.raises(ValueError):
            folded_density(-0.1, 1, 1.0, 1, 0, mk())
        with pytest.raises(ValueError):
            folded_density(0.1, 1, -1.0, 1, 0, mk())
