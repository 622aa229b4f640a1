"""Relay frequency adjustment and the resulting (f_sd, f_rd) prior covariance.

The relay retunes to f_r - gamma * f_sr_hat. Its listening estimate enters the
destination's prior through two scalars: the effective signal power Q and the
prior weight K = sigma_r^2 / (4 sigma_f^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import NumericalDegeneracy, PolicyDegeneracy
from .fisher import FimBlocks, char_fn_diag, crb_optimal, fim_cooperation, gram_inverse
from .model import ChannelResponse, _samples, _taps, symmetric_index, toeplitz_matrix

GAMMA_RANGE = (0.0, 1.5)
GAMMA_STEP = 1e-3


@dataclass(frozen=True)
class ListeningSummary:
    q_power: float
    k_penalty: float
    f_sr_hat: float = 0.0

    def __post_init__(self):
        if self.q_power < 0 or self.k_penalty < 0:
            raise ValueError("Q and K must be non-negative")
        if self.q_power == 0 and self.k_penalty == 0:
            raise PolicyDegeneracy("Q and K cannot both be zero")


@dataclass(frozen=True)
class FreqCovariance:
    matrix: np.ndarray
    gamma: float


def compute_q(x_ell, h_sr) -> float:
    """Q = pi^2 ||P_perp D X h_sr||^2."""
    xs, taps = _samples(x_ell), _taps(h_sr)
    x_mat = toeplitz_matrix(xs, taps.size)
    dxh = symmetric_index(xs.size) * (x_mat @ taps)
    resid = dxh - x_mat @ (gram_inverse(x_mat) @ (x_mat.conj().T @ dxh))
    return float(np.pi ** 2 * np.vdot(resid, resid).real)


def compute_k(noise_var_relay: float, sigma_f_sq: float) -> float:
    if sigma_f_sq == 0:
        raise NumericalDegeneracy("K is undefined for sigma_f_sq = 0")
    if math.isinf(sigma_f_sq):
        return 0.0
    return noise_var_relay / (4.0 * sigma_f_sq)


def _ratios(q, k, gamma):
    s = q + k
    if not s > 0:
        raise NumericalDegeneracy("Q + K must be positive")
    return ((1 + gamma) * q + k) / s, 2 * ((1 - gamma + gamma ** 2) * q + k) / s


def freq_covariance(q: float, k: float, gamma: float, sigma_f_sq: float) -> FreqCovariance:
    """Covariance of (f_sd, f_rd) after the relay adjustment with gain gamma."""
    off, d22 = _ratios(q, k, gamma)
    mat = sigma_f_sq * np.array([[2.0, off], [off, d22]])
    return FreqCovariance(matrix=mat, gamma=gamma)


def _scaled_det(q, k, gamma):
    # det of (Q+K) * R / sigma_f^2, expanded to avoid cancellation near gamma = 1
    return 3 * q * q * (1 - gamma) ** 2 + q * k * (6 - 6 * gamma + 4 * gamma ** 2) + 3 * k * k


def freq_information(q: float, k: float, gamma: float, sigma_f_sq: float,
                     noise_var_relay: float | None = None) -> np.ndarray:
    """Prior Fisher information R_f^-1 of (f_sd, f_rd).

    For an infinite sigma_f_sq the limit is returned: zero unless gamma = 1,
    where the relay estimate still ties the two frequencies together and the
    information tends to zeta zeta^T * 2Q / sigma_r^2 with zeta = [1, -1].
    """
    if math.isinf(sigma_f_sq):
        if gamma != 1.0:
            return np.zeros((2, 2))
        if not noise_var_relay:
            raise NumericalDegeneracy("limit at gamma = 1 needs a positive relay noise variance")
        zeta = np.array([1.0, -1.0])
        return np.outer(zeta, zeta) * 2 * q / noise_var_relay
    if sigma_f_sq <= 0:
        raise NumericalDegeneracy("prior information is infinite for sigma_f_sq = 0")
    det = _scaled_det(q, k, gamma)
    if not det > 0:
        raise NumericalDegeneracy("frequency covariance is singular")
    s = q + k
    b12 = (1 + gamma) * q + k
    b22 = 2 * ((1 - gamma + gamma ** 2) * q + k)
    adj = np.array([[b22, -b12], [-b12, 2 * s]])
    return s / (sigma_f_sq * det) * adj


def relay_transmit_frequency(f_r: float, f_sr_hat: float, gamma: float) -> float:
    return f_r - gamma * f_sr_hat


def _trace_optimal(gamma, q, k, sigma_f_sq, delta_opt):
    info = freq_information(q, k, gamma, sigma_f_sq)
    return crb_optimal(delta_opt, info).total


def optimize_gamma(q: float, k: float, sigma_f_sq: float, delta_opt) -> float:
    """gamma minimizing trace((Delta_opt + R_f(gamma)^-1)^-1) on [0, 1.5].

    Dense grid (step 1e-3) followed by a bounded Brent refinement around the
    best grid point. Deterministic.
    """
    d = np.asarray(delta_opt, dtype=float)
    d = np.diag(d) if d.ndim == 2 else d
    lo, hi = GAMMA_RANGE
    grid = np.linspace(lo, hi, int(round((hi - lo) / GAMMA_STEP)) + 1)
    vals = np.full(grid.size, np.inf)
    for i, g in enumerate(grid):
        try:
            vals[i] = _trace_optimal(g, q, k, sigma_f_sq, d)
        except NumericalDegeneracy:
            pass
    if not np.any(np.isfinite(vals)):
        raise PolicyDegeneracy("frequency covariance degenerate over the whole gamma range")
    i = int(np.argmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if b <= a:
        return float(grid[i])

    def obj(g):
        try:
            return _trace_optimal(g, q, k, sigma_f_sq, d)
        except NumericalDegeneracy:
            return np.inf

    res = optimize.minimize_scalar(obj, bounds=(a, b), method="bounded", options={"xatol": 1e-9})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def flat_delta_opt(n_listen: int, n_coop: int, snr_sd_l: float, snr_sd_c: float, snr_rd: float) -> np.ndarray:
    """diag(Delta) for flat fading and constant-modulus training: eta_c S_sd_c + eta_l S_sd_l, eta_c S_rd."""
    return np.array([eta(n_coop) * snr_sd_c + eta(n_listen) * snr_sd_l, eta(n_coop) * snr_rd])


def eta(n: int) -> float:
    """(2/3) pi^2 N (N^2 - 1)."""
    return 2.0 / 3.0 * np.pi ** 2 * n * (n * n - 1)


def flat_q(n_listen: int, snr_sr: float, noise_var_relay: float = 1.0) -> float:
    """Q for flat fading with |h_sr|^2 = snr_sr * noise_var_relay."""
    return eta(n_listen) * snr_sr * noise_var_relay / 2.0


def cooperation_blocks(x_rd, snr_sd_c: float, snr_rd: float, snr_sr: float, sigma_f_sq: float, gamma: float,
                       snr_sd_l: float | None = None, x_sd=None, x_ell=None,
                       phase_sd: float = 0.0, phase_rd: float = 0.0) -> FimBlocks:
    """Expected FIM blocks for a flat-fading scenario with unit noise at every node.

    SNRs are linear. ``x_sd`` and ``x_ell`` default to all-ones sequences.
    """
    xr = _samples(x_rd)
    n_c = xr.size
    xs = _samples(x_sd) if x_sd is not None else np.ones(n_c)
    xl = _samples(x_ell) if x_ell is not None else np.ones(n_c)
    snr_sd_l = snr_sd_c if snr_sd_l is None else snr_sd_l
    q = compute_q(xl, ChannelResponse.flat(snr_sr))
    k = compute_k(1.0, sigma_f_sq)
    info = freq_information(q, k, gamma, sigma_f_sq, noise_var_relay=1.0)
    m = char_fn_diag(difference_covariance(q, k, gamma, sigma_f_sq, 1.0), n_c)
    return fim_cooperation(xs, xr, xl, ChannelResponse.flat(snr_sd_c, phase_sd),
                           ChannelResponse.flat(snr_rd, phase_rd), ChannelResponse.flat(snr_sd_l),
                           (1.0, 1.0), m, info)


def difference_covariance(q: float, k: float, gamma: float, sigma_f_sq: float,
                          noise_var_relay: float = 1.0) -> np.ndarray:
    """Covariance of (f_sd, f_rd) usable for the characteristic-function matrix.

    With no prior (infinite sigma_f_sq) only gamma = 1 keeps var(f_rd - f_sd)
    finite: it is the relay's estimation error variance sigma_r^2 / (2Q).
    """
    if not math.isinf(sigma_f_sq):
        return freq_covariance(q, k, gamma, sigma_f_sq).matrix
    if gamma == 1.0 and q > 0:
        v = noise_var_relay / (2 * q)
        return np.array([[v, 0.0], [0.0, 0.0]])
    return np.array([[np.inf, 0.0], [0.0, 0.0]])
