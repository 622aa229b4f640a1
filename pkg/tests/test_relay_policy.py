"""Relay frequency adjustment: Q, K, the (f_sd, f_rd) covariance and the gamma search."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsync.errors import NumericalDegeneracy
from coopsync.fisher import crb_optimal
from coopsync.model import ChannelResponse
from coopsync.relay_policy import (GAMMA_RANGE, compute_k, compute_q, difference_covariance, eta, flat_delta_opt,
                                   flat_q, freq_covariance, freq_information, optimize_gamma,
                                   relay_transmit_frequency)


def _linear_map_covariance(q, k, gamma, sigma_f_sq):
    """Exact covariance from the node offsets and the relay's shrunk estimate.

    f_hat_sr = w (q_r - q_s + e) with w = Q / (Q + K) and var(e) = 1 / (2Q).
    """
    w = q / (q + k)
    a = np.array([[-1.0, 0.0, 1.0, 0.0],
                  [-gamma * w, gamma * w - 1.0, 1.0, gamma * w]])
    return a @ np.diag([sigma_f_sq] * 3 + [1.0 / (2 * q)]) @ a.T


class TestQK:
    def test_n2_flat(self):
        assert compute_q([1, 1], [1.0]) == pytest.approx(2 * np.pi ** 2, rel=1e-12)

    @pytest.mark.parametrize("n", [4, 16, 64])
    def test_flat_matches_eta(self, n):
        snr = 3.0
        q = compute_q(np.ones(n), ChannelResponse.flat(snr))
        assert q == pytest.approx(flat_q(n, snr), rel=1e-10)
        assert q == pytest.approx(eta(n) * snr / 2, rel=1e-10)

    @pytest.mark.parametrize("noise,var,k", [(1.0, 1e-4, 2500.0), (2.0, 0.25, 2.0), (1.0, math.inf, 0.0)])
    def test_k_examples(self, noise, var, k):
        assert compute_k(noise, var) == k

    def test_k_zero_variance(self):
        with pytest.raises(NumericalDegeneracy):
            compute_k(1.0, 0.0)


class TestFreqCovariance:
    @pytest.mark.parametrize("gamma", [0.0, 0.5, 0.7, 1.0, 1.4])
    @pytest.mark.parametrize("q,k", [(300.0, 25.0), (1e4, 2500.0), (2.0, 2500.0)])
    def test_matches_linear_map(self, q, k, gamma):
        sigma = 1.0 / (4 * k)
        np.testing.assert_allclose(freq_covariance(q, k, gamma, sigma).matrix,
                                   _linear_map_covariance(q, k, gamma, sigma), rtol=1e-12)

    def test_gamma_zero_by_hand(self):
        # relay ignores its estimate: f_sd and f_rd share only the destination oscillator
        np.testing.assert_allclose(freq_covariance(10.0, 5.0, 0.0, 1e-4).matrix, [[2e-4, 1e-4], [1e-4, 2e-4]],
                                   rtol=1e-12)

    def test_perfect_relay_estimate(self):
        # K = 0 and gamma = 1: the relay locks exactly onto the source
        np.testing.assert_allclose(freq_covariance(1.0, 0.0, 1.0, 1e-4).matrix, 2e-4 * np.ones((2, 2)), rtol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(q=st.floats(1e-3, 1e6), k=st.floats(1e-3, 1e6), gamma=st.floats(0.0, 1.5))
    def test_information_is_inverse(self, q, k, gamma):
        sigma = 1.0 / (4 * k)
        cov = freq_covariance(q, k, gamma, sigma).matrix
        assert np.all(np.linalg.eigvalsh(cov) > 0)
        info = freq_information(q, k, gamma, sigma)
        np.testing.assert_allclose(info @ cov, np.eye(2), atol=1e-8)

    def test_no_prior_limits(self):
        np.testing.assert_array_equal(freq_information(10.0, 0.0, 0.5, math.inf), np.zeros((2, 2)))
        np.testing.assert_allclose(freq_information(10.0, 0.0, 1.0, math.inf, 1.0), [[20, -20], [-20, 20]])
        np.testing.assert_allclose(difference_covariance(10.0, 0.0, 1.0, math.inf), [[0.05, 0], [0, 0]])
        assert math.isinf(difference_covariance(10.0, 0.0, 0.3, math.inf)[0, 0])

    def test_transmit_frequency(self):
        assert relay_transmit_frequency(0.01, 0.004, 0.5) == pytest.approx(0.008)


class TestOptimizeGamma:
    def _flat(self, sigma_f_sq, snr=1.0, snr_sr=1.0, n=16):
        return flat_q(n, snr_sr), compute_k(1.0, sigma_f_sq), flat_delta_opt(n, n, snr, snr, snr)

    def test_diffuse_prior_gives_one(self):
        sigma = 1e4 / eta(16)
        q, k, d = self._flat(sigma)
        assert 0.95 <= optimize_gamma(q, k, sigma, d) <= 1.0

    def test_tight_prior_gives_half(self):
        sigma = 1e-4 / eta(16)
        q, k, d = self._flat(sigma)
        assert 0.48 <= optimize_gamma(q, k, sigma, d) <= 0.52

    @pytest.mark.parametrize("sigma_db", [-60, -40, -30, -20])
    @pytest.mark.parametrize("sr_db", [-10, 0, 10])
    def test_beats_dense_grid(self, sigma_db, sr_db):
        sigma = 10 ** (sigma_db / 10)
        q, k, d = self._flat(sigma, snr_sr=10 ** (sr_db / 10))
        g = optimize_gamma(q, k, sigma, d)
        assert GAMMA_RANGE[0] <= g <= GAMMA_RANGE[1]
        best = crb_optimal(d, freq_information(q, k, g, sigma)).total
        grid = [crb_optimal(d, freq_information(q, k, x, sigma)).total for x in np.linspace(0, 1.5, 301)]
        assert best <= min(grid) * (1 + 1e-12)

    @pytest.mark.parametrize("sigma_db", [-60, -50, -40, -30, -20])
    @pytest.mark.parametrize("sr_db", [-10, 0, 10])
    def test_unit_gain_penalty_is_small(self, sigma_db, sr_db):
        sigma = 10 ** (sigma_db / 10)
        q, k, d = self._flat(sigma, snr_sr=10 ** (sr_db / 10))
        g = optimize_gamma(q, k, sigma, d)
        opt = crb_optimal(d, freq_information(q, k, g, sigma)).total
        unit = crb_optimal(d, freq_information(q, k, 1.0, sigma)).total
        assert 0 <= 10 * math.log10(unit / opt) <= 0.3

    def test_deterministic(self):
        q, k, d = self._flat(1e-4)
        assert optimize_gamma(q, k, 1e-4, d) == optimize_gamma(q, k, 1e-4, d)
