"""Signal model for the three-node source/relay/destination system.

Frequency offsets are normalized to the sample rate (cycles/sample). Every
link offset is receiver minus transmitter, f_ab = q_b - q_a, so the relay
adjustment f_r,Tx = f_r - gamma * f_sr_hat gives

    f_rd = f_sd - (1 - gamma) * f_sr + gamma * e_sr.

The phase ramp uses the centered index d_n = 2n - 1 - N (n = 1..N), i.e.
[V_f]_nn = exp(j*pi*d_n*f), so that dV/df = j*pi*D*V holds exactly. It differs
from exp(j*2*pi*f*n) only by a global phase, which the channel estimate
absorbs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidDimensions, InvalidParameter, UnsupportedDraw

MODULUS_TOL = 1e-12


@dataclass(frozen=True)
class TrainingSequence:
    """Known constant-modulus preamble."""

    samples: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=complex).ravel()
        if x.size < 2:
            raise InvalidDimensions(f"training sequence needs N >= 2, got {x.size}")
        if np.any(np.abs(np.abs(x) - 1.0) > MODULUS_TOL):
            raise InvalidParameter("training sequence samples must have unit modulus")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @classmethod
    def ones(cls, n: int) -> "TrainingSequence":
        return cls(np.ones(n))


@dataclass(frozen=True)
class ChannelResponse:
    """Sample-spaced channel impulse response of length P."""

    taps: np.ndarray

    def __post_init__(self):
        h = np.atleast_1d(np.asarray(self.taps, dtype=complex)).ravel()
        if h.size < 1:
            raise InvalidDimensions("channel needs at least one tap")
        h.setflags(write=False)
        object.__setattr__(self, "taps", h)

    def __len__(self):
        return self.taps.size

    @classmethod
    def flat(cls, snr: float, phase: float = 0.0) -> "ChannelResponse":
        """Single tap sqrt(snr) * exp(j*phase); noise variance taken as 1."""
        return cls(np.array([math.sqrt(snr) * np.exp(1j * phase)]))


@dataclass(frozen=True)
class OffsetPrior:
    """Oscillator model f_m = f_o + q_m with var(q_m) = sigma_f_sq.

    ``sigma_f_sq = math.inf`` means no prior information.
    """

    sigma_f_sq: float

    def __post_init__(self):
        if math.isnan(self.sigma_f_sq) or self.sigma_f_sq < 0:
            raise InvalidParameter("sigma_f_sq must be >= 0 or inf")

    @property
    def link_variance(self) -> float:
        return 2.0 * self.sigma_f_sq

    def link_covariance(self) -> np.ndarray:
        """Covariance of (f_sd, f_sr); the links share the source oscillator."""
        s = self.sigma_f_sq
        return np.array([[2 * s, s], [s, 2 * s]])


@dataclass(frozen=True)
class NodeOffsets:
    q_s: float
    q_r: float
    q_d: float

    @property
    def f_sd(self) -> float:
        return self.q_d - self.q_s

    @property
    def f_sr(self) -> float:
        return self.q_r - self.q_s

    def f_rd(self, relay_tx_shift: float = 0.0) -> float:
        """Relay-to-destination offset when the relay retunes by -relay_tx_shift.

        With the adjustment rule the shift is gamma * f_sr_hat.
        """
        return self.q_d - (self.q_r - relay_tx_shift)


def normalized_frequency(value: float) -> float:
    """Validate a normalized frequency (finite, |f| < 0.5)."""
    f = float(value)
    if not math.isfinite(f) or abs(f) >= 0.5:
        raise InvalidParameter(f"normalized frequency must be finite with |f| < 0.5, got {value}")
    return f


def _samples(x) -> np.ndarray:
    if isinstance(x, TrainingSequence):
        return x.samples
    return np.asarray(x, dtype=complex).ravel()


def _taps(h) -> np.ndarray:
    if isinstance(h, ChannelResponse):
        return h.taps
    return np.atleast_1d(np.asarray(h, dtype=complex)).ravel()


def symmetric_index(n: int) -> np.ndarray:
    """Vector of d_n = 2n - 1 - N for n = 1..N."""
    if n < 1:
        raise InvalidParameter("length must be >= 1")
    return 2.0 * np.arange(1, n + 1) - 1.0 - n


def symmetric_index_diag(n: int) -> np.ndarray:
    return np.diag(symmetric_index(n))


def ramp(f: float, n: int) -> np.ndarray:
    """Diagonal of the phase ramp V_f (vector form)."""
    return np.exp(1j * np.pi * symmetric_index(n) * f)


def phase_ramp(f: float, n: int) -> np.ndarray:
    return np.diag(ramp(f, n))


def toeplitz_matrix(x, p: int) -> np.ndarray:
    """N x P convolution matrix with [X]_{i,k} = x[i-k], zero outside 0..N-1."""
    xs = _samples(x)
    n = xs.size
    if p < 1 or p > n:
        raise InvalidDimensions(f"need 1 <= P <= N, got P={p}, N={n}")
    out = np.zeros((n, p), dtype=complex)
    for k in range(p):
        out[k:, k] = xs[: n - k]
    return out


def _noise(n: int, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    if noise_var < 0:
        raise InvalidParameter("noise_var must be >= 0")
    if noise_var == 0:
        return np.zeros(n, dtype=complex)
    scale = math.sqrt(noise_var / 2.0)
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def synth_listening(x, h, f: float, noise_var: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Received listening-phase vector y = V_f X h + w."""
    if noise_var < 0:
        raise InvalidParameter("noise_var must be >= 0")
    xs, taps = _samples(x), _taps(h)
    clean = ramp(f, xs.size) * (toeplitz_matrix(xs, taps.size) @ taps)
    if noise_var == 0:
        return clean
    return clean + _noise(xs.size, noise_var, rng)


def synth_cooperation(x_sd, x_rd, h_sd, h_rd, f_sd: float, f_rd: float,
                      noise_var: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Superposition V_sd X_sd h_sd + V_rd X_rd h_rd + w received at the destination."""
    xs, xr = _samples(x_sd), _samples(x_rd)
    hs, hr = _taps(h_sd), _taps(h_rd)
    if xs.size != xr.size:
        raise InvalidDimensions(f"sequence lengths differ: {xs.size} vs {xr.size}")
    if hs.size != hr.size:
        raise InvalidDimensions(f"channel lengths differ: {hs.size} vs {hr.size}")
    if noise_var < 0:
        raise InvalidParameter("noise_var must be >= 0")
    y = synth_listening(xs, hs, f_sd, 0.0) + synth_listening(xr, hr, f_rd, 0.0)
    if noise_var == 0:
        return y
    return y + _noise(xs.size, noise_var, rng)


def draw_offsets(prior: OffsetPrior | float, rng: np.random.Generator) -> NodeOffsets:
    """Draw i.i.d. Gaussian oscillator deviations for the three nodes."""
    s = prior.sigma_f_sq if isinstance(prior, OffsetPrior) else float(prior)
    if not math.isfinite(s):
        raise UnsupportedDraw("cannot draw offsets from an infinite-variance prior")
    q = math.sqrt(s) * rng.standard_normal(3)
    return NodeOffsets(q_s=float(q[0]), q_r=float(q[1]), q_d=float(q[2]))
