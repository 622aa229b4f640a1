"""Frequency estimators for the listening and cooperation phases.

All searches run a coarse grid and then refine locally to ``refine_tol``.
Noise variances are those of the receiving node; the destination uses the same
variance in both phases.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .errors import InvalidCovariance, InvalidParameter, NumericalDegeneracy
from .fisher import COND_LIMIT, crb_cooperation, fim_cooperation, gram_inverse
from .model import ChannelResponse, _samples, ramp, symmetric_index, toeplitz_matrix
from .relay_policy import FreqCovariance, freq_information

log = logging.getLogger(__name__)

MAX_LAG_CAP = 12


@dataclass(frozen=True)
class GridSpec:
    center: float
    half_width: float
    coarse_step: float
    refine_tol: float = 1e-7

    def __post_init__(self):
        if not (self.half_width > 0 and self.coarse_step > 0 and self.refine_tol > 0):
            raise InvalidParameter("grid widths and steps must be positive")
        if self.coarse_step > self.half_width:
            raise InvalidParameter("empty grid: coarse_step exceeds half_width")

    def points(self) -> np.ndarray:
        k = int(math.floor(self.half_width / self.coarse_step + 1e-9))
        return self.center + self.coarse_step * np.arange(-k, k + 1)

    @classmethod
    def default(cls, n: int, sigma_f_sq: float = math.inf, center: float = 0.0) -> "GridSpec":
        """Half width max(5 sqrt(2 sigma_f^2), 2/N) capped below Nyquist, step 1/(8N)."""
        step = 1.0 / (8 * n)
        width = max(5 * math.sqrt(2 * sigma_f_sq), 2.0 / n) if math.isfinite(sigma_f_sq) else 0.5
        width = min(width, 0.5 - step)
        return cls(center=center, half_width=width, coarse_step=step)


@dataclass(frozen=True)
class EstimateResult:
    f_hat: float | tuple[float, float]
    h_hat: object = None
    objective: float = 0.0
    degenerate: bool = False


@dataclass(frozen=True)
class FrequencyPrior:
    """Prior information about (f_sd, f_rd) as used by the cooperation estimators.

    ``info`` is R_f^-1 (or its limit), ``diag_info`` is diag(R_f)^-1.
    """

    info: np.ndarray
    diag_info: np.ndarray

    @classmethod
    def from_covariance(cls, cov) -> "FrequencyPrior":
        c = np.asarray(cov.matrix if isinstance(cov, FreqCovariance) else cov, dtype=float)
        if c.shape != (2, 2) or not np.allclose(c, c.T):
            raise InvalidCovariance("frequency covariance must be a symmetric 2x2 matrix")
        if np.all(np.isinf(np.diag(c))):
            return cls(np.zeros((2, 2)), np.zeros(2))
        w = np.linalg.eigvalsh(c)
        if w[0] < -1e-12 * max(abs(w[1]), 1e-300):
            raise InvalidCovariance("frequency covariance is not positive semidefinite")
        if np.linalg.cond(c) > COND_LIMIT:
            raise NumericalDegeneracy("singular frequency covariance; use FrequencyPrior.from_relay for the limit")
        return cls(np.linalg.inv(c), 1.0 / np.diag(c))

    @classmethod
    def from_relay(cls, q: float, k: float, gamma: float, sigma_f_sq: float,
                   noise_var_relay: float = 1.0) -> "FrequencyPrior":
        info = freq_information(q, k, gamma, sigma_f_sq, noise_var_relay)
        if math.isinf(sigma_f_sq):
            return cls(info, np.zeros(2))
        s = q + k
        d22 = 2 * ((1 - gamma + gamma ** 2) * q + k) / s
        return cls(info, 1.0 / (sigma_f_sq * np.array([2.0, d22])))

    @classmethod
    def flat(cls) -> "FrequencyPrior":
        return cls(np.zeros((2, 2)), np.zeros(2))


def _as_prior(prior) -> FrequencyPrior:
    if isinstance(prior, FrequencyPrior):
        return prior
    if prior is None:
        return FrequencyPrior.flat()
    return FrequencyPrior.from_covariance(prior)


def _penalty_weight(noise_var: float, prior_var: float) -> float:
    # sigma^2 f^2 / (2 var(f)); equals sigma^2 / (4 sigma_f^2) for var(f) = 2 sigma_f^2
    if math.isinf(prior_var):
        return 0.0
    return noise_var / (2.0 * prior_var)


def channel_ls(y, x, f: float, p: int = 1) -> ChannelResponse:
    """(X^H X)^-1 X^H V_f^H y."""
    xs = _samples(x)
    x_mat = toeplitz_matrix(xs, p)
    z = np.conj(ramp(f, xs.size)) * np.asarray(y)
    return ChannelResponse(gram_inverse(x_mat) @ (x_mat.conj().T @ z))


class _ProjectedEnergy:
    """||P_perp_X V_f^H y||^2 for one record, vectorized over f."""

    def __init__(self, y, x, p: int = 1):
        xs = _samples(x)
        self.y = np.asarray(y, dtype=complex)
        self.d = symmetric_index(xs.size)
        self.x_mat = toeplitz_matrix(xs, p)
        self.ginv = gram_inverse(self.x_mat)
        self.energy = float(np.vdot(self.y, self.y).real)

    def __call__(self, f):
        f = np.atleast_1d(np.asarray(f, dtype=float))
        z = np.exp(-1j * np.pi * np.outer(f, self.d)) * self.y
        b = z @ self.x_mat.conj()
        return self.energy - np.einsum("gi,ij,gj->g", b.conj(), self.ginv, b).real


def _search_1d(objective, grid: GridSpec) -> tuple[float, float]:
    pts = grid.points()
    vals = objective(pts)
    i = int(np.argmin(vals))
    lo, hi = pts[i] - grid.coarse_step, pts[i] + grid.coarse_step
    res = optimize.minimize_scalar(lambda f: float(objective(f)[0]), bounds=(lo, hi), method="bounded",
                                   options={"xatol": grid.refine_tol})
    if res.fun <= vals[i]:
        return float(res.x), float(res.fun)
    return float(pts[i]), float(vals[i])


def map_listening(y, x, noise_var: float, sigma_f_sq: float = math.inf, grid: GridSpec | None = None,
                  p: int = 1) -> EstimateResult:
    """MAP estimate argmin ||P_perp V_f^H y||^2 + sigma^2 f^2 / (4 sigma_f^2).

    With an infinite sigma_f_sq this is the ML estimator.
    """
    xs = _samples(x)
    grid = grid or GridSpec.default(xs.size, sigma_f_sq)
    proj = _ProjectedEnergy(y, xs, p)
    w = _penalty_weight(noise_var, 2 * sigma_f_sq)
    f_hat, obj = _search_1d(lambda f: proj(f) + w * np.atleast_1d(f) ** 2, grid)
    return EstimateResult(f_hat=f_hat, h_hat=channel_ls(y, xs, f_hat, p), objective=obj)


class _CooperationObjective:
    """Negative log posterior of (f_sd, f_rd) up to constants, times sigma_d^2."""

    def __init__(self, y_c, y_sdl, x_sd, x_rd, x_ell, noise_var_d, prior: FrequencyPrior, p: int = 1):
        xs, xr = _samples(x_sd), _samples(x_rd)
        self.n = xs.size
        self.p = p
        self.y = np.asarray(y_c, dtype=complex)
        self.d = symmetric_index(self.n)
        self.X1, self.X2 = toeplitz_matrix(xs, p), toeplitz_matrix(xr, p)
        self.energy = float(np.vdot(self.y, self.y).real)
        self.listen = _ProjectedEnergy(y_sdl, x_ell, p) if y_sdl is not None else None
        self.weight = 0.5 * noise_var_d * prior.info
        g11 = self.X1.conj().T @ self.X1
        g22 = self.X2.conj().T @ self.X2
        self.g11, self.g22 = g11, g22

    def _coop(self, fs, fr):
        """||P_perp_{X(f)} y_c||^2 on the outer product of fs and fr."""
        fs, fr = np.atleast_1d(fs), np.atleast_1d(fr)
        p = self.p
        c1 = (np.exp(-1j * np.pi * np.outer(fs, self.d)) * self.y) @ self.X1.conj()  # (A, p)
        c2 = (np.exp(-1j * np.pi * np.outer(fr, self.d)) * self.y) @ self.X2.conj()  # (B, p)
        diff = fr[None, :] - fs[:, None]  # (A, B)
        rot = np.exp(1j * np.pi * diff[..., None] * self.d)  # (A, B, N)
        g12 = np.einsum("ni,abn,nj->abij", self.X1.conj(), rot, self.X2)
        na, nb = fs.size, fr.size
        gram = np.empty((na, nb, 2 * p, 2 * p), dtype=complex)
        gram[..., :p, :p] = self.g11
        gram[..., p:, p:] = self.g22
        gram[..., :p, p:] = g12
        gram[..., p:, :p] = np.conj(np.swapaxes(g12, -1, -2))
        c = np.empty((na, nb, 2 * p), dtype=complex)
        c[..., :p] = c1[:, None, :]
        c[..., p:] = c2[None, :, :]
        sol = np.linalg.solve(gram, c[..., None])[..., 0]
        return self.energy - np.einsum("abi,abi->ab", c.conj(), sol).real

    def grid(self, fs, fr):
        fs, fr = np.atleast_1d(fs), np.atleast_1d(fr)
        val = self._coop(fs, fr)
        if self.listen is not None:
            val = val + self.listen(fs)[:, None]
        w = self.weight
        val = val + w[0, 0] * fs[:, None] ** 2 + 2 * w[0, 1] * fs[:, None] * fr[None, :] + w[1, 1] * fr[None, :] ** 2
        return val

    def __call__(self, f):
        return float(self.grid(f[0], f[1])[0, 0])


def _quadratic_step(v, h):
    """Newton step from a quadratic fit to a 3x3 stencil of spacing h (None if not convex)."""
    g = np.array([v[2, 1] - v[0, 1], v[1, 2] - v[1, 0]]) / (2 * h)
    hxx = (v[2, 1] - 2 * v[1, 1] + v[0, 1]) / h ** 2
    hyy = (v[1, 2] - 2 * v[1, 1] + v[1, 0]) / h ** 2
    hxy = (v[2, 2] - v[2, 0] - v[0, 2] + v[0, 0]) / (4 * h ** 2)
    det = hxx * hyy - hxy ** 2
    if not (hxx > 0 and det > 0):
        return None
    return -np.array([hyy * g[0] - hxy * g[1], hxx * g[1] - hxy * g[0]]) / det


def _refine_2d(objective: "_CooperationObjective", start, step: float, tol: float, max_iter: int = 200):
    """Joint parabolic refinement on a shrinking 3x3 stencil.

    Each pass fits a full quadratic (cross term included) and takes the
    clipped Newton step; a stencil point that beats it is taken instead. The
    stencil halves whenever the center survives.
    """
    x = np.asarray(start, dtype=float)
    h = step / 2
    offs = np.array([-1.0, 0.0, 1.0])
    best = None
    for _ in range(max_iter):
        v = objective.grid(x[0] + h * offs, x[1] + h * offs)
        best = float(v[1, 1])
        cand, cand_val = x, best
        i, j = np.unravel_index(int(np.argmin(v)), v.shape)
        if v[i, j] < cand_val:
            cand, cand_val = x + h * np.array([offs[i], offs[j]]), float(v[i, j])
        delta = _quadratic_step(v, h)
        if delta is not None:
            delta = np.clip(delta, -h, h)
            trial = x + delta
            val = objective(trial)
            if val < cand_val:
                cand, cand_val = trial, val
        moved = float(np.max(np.abs(cand - x)))
        x, best = cand, cand_val
        if moved < h / 2:
            if h <= tol:
                break
            h = max(h / 2, tol / 2) if moved > tol else max(h / 4, tol / 2)
    return x, best


def map_cooperation(y_c, y_sdl, x_sd, x_rd, x_ell, noise_var_d: float, prior=None,
                    grid: GridSpec | None = None, p: int = 1) -> EstimateResult:
    """Joint MAP estimate of (f_sd, f_rd) by a full 2-D coarse grid plus local refinement.

    ``prior`` is a FrequencyPrior, a FreqCovariance, a 2x2 covariance, or None
    for no prior information.
    """
    prior = _as_prior(prior)
    xs = _samples(x_sd)
    grid = grid or GridSpec.default(xs.size)
    obj = _CooperationObjective(y_c, y_sdl, x_sd, x_rd, x_ell, noise_var_d, prior, p)
    pts = grid.points()
    vals = obj.grid(pts, pts)
    i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
    start = np.array([pts[i], pts[j]])
    f, fun = _refine_2d(obj, start, grid.coarse_step, grid.refine_tol)
    if fun > vals[i, j]:
        f, fun = start, float(vals[i, j])
    g_hat = _joint_channels(y_c, x_sd, x_rd, f[0], f[1], p)
    return EstimateResult(f_hat=(float(f[0]), float(f[1])), h_hat=g_hat, objective=fun)


def _joint_channels(y_c, x_sd, x_rd, f_sd, f_rd, p: int = 1):
    xs, xr = _samples(x_sd), _samples(x_rd)
    big = np.hstack([ramp(f_sd, xs.size)[:, None] * toeplitz_matrix(xs, p),
                     ramp(f_rd, xr.size)[:, None] * toeplitz_matrix(xr, p)])
    g = gram_inverse(big) @ (big.conj().T @ np.asarray(y_c))
    return ChannelResponse(g[:p]), ChannelResponse(g[p:])


def diag_prior_crb(x_sd, x_rd, x_ell, h_sd, h_rd, h_sdl, noise_var_d: float, prior: FrequencyPrior,
                   m_diag=None) -> np.ndarray:
    """C~_f: cooperation CRB with the prior replaced by diag(R_f)^-1 (2x2)."""
    n = _samples(x_sd).size
    m = np.ones(n) if m_diag is None else m_diag
    blocks = fim_cooperation(x_sd, x_rd, x_ell, h_sd, h_rd, h_sdl, noise_var_d, m, np.diag(prior.diag_info))
    return crb_cooperation(blocks).covariance.real


def combine_estimates(f_tilde, c_tilde, prior: FrequencyPrior) -> np.ndarray:
    """R_f (R_f + C~)^-1 f~, written as (I + C~ R_f^-1)^-1 f~ so singular or infinite R_f work."""
    a = np.eye(2) + np.asarray(c_tilde) @ prior.info
    return np.linalg.solve(a, np.asarray(f_tilde, dtype=float))


def ml1d_cooperation(y_c, y_sdl, x_sd, x_rd, x_ell, noise_var_d: float, prior=None,
                     grid: GridSpec | None = None, c_tilde=None, p: int = 1) -> EstimateResult:
    """Two independent 1-D searches (diagonal prior penalties) then least-squares combining.

    ``c_tilde`` defaults to the diagonal-prior CRB evaluated at the LS channel
    estimates.
    """
    prior = _as_prior(prior)
    xs, xr = _samples(x_sd), _samples(x_rd)
    grid = grid or GridSpec.default(xs.size)
    var_sd = math.inf if prior.diag_info[0] == 0 else 1.0 / prior.diag_info[0]
    var_rd = math.inf if prior.diag_info[1] == 0 else 1.0 / prior.diag_info[1]

    rd_proj = _ProjectedEnergy(y_c, xr, p)
    w_rd = _penalty_weight(noise_var_d, var_rd)
    f_rd, _ = _search_1d(lambda f: rd_proj(f) + w_rd * np.atleast_1d(f) ** 2, grid)

    sd_proj = _ProjectedEnergy(y_c, xs, p)
    l_proj = _ProjectedEnergy(y_sdl, x_ell, p) if y_sdl is not None else None
    w_sd = _penalty_weight(noise_var_d, var_sd)

    def sd_obj(f):
        v = sd_proj(f) + w_sd * np.atleast_1d(f) ** 2
        return v + l_proj(f) if l_proj is not None else v

    f_sd, _ = _search_1d(sd_obj, grid)
    f_tilde = np.array([f_sd, f_rd])
    h_sd, h_rd = _joint_channels(y_c, xs, xr, f_sd, f_rd, p)
    h_sdl = channel_ls(y_sdl, x_ell, f_sd, p) if y_sdl is not None else ChannelResponse(np.zeros(p))
    if c_tilde is None:
        c_tilde = diag_prior_crb(xs, xr, x_ell, h_sd, h_rd, h_sdl, noise_var_d, prior)
    f_hat = combine_estimates(f_tilde, c_tilde, prior)
    return EstimateResult(f_hat=(float(f_hat[0]), float(f_hat[1])), h_hat=(h_sd, h_rd, h_sdl))


def max_lag_rule(n: int, sigma_f_sq: float = 1e-4) -> int:
    """min(floor(N/2), 12)."""
    if n < 2:
        raise InvalidParameter("N must be >= 2")
    return min(n // 2, MAX_LAG_CAP)


def _lag_sum(y, x, max_lag: int) -> complex:
    z = np.asarray(y, dtype=complex) * np.conj(_samples(x))
    n = z.size
    if not 1 <= max_lag < n:
        raise InvalidParameter(f"max_lag must satisfy 1 <= M < N, got M={max_lag}, N={n}")
    total = 0j
    for k in range(1, max_lag + 1):
        total += np.vdot(z[:-k], z[k:]) / (n - k)
    return total


def correlation_frequency(records, max_lag: int) -> tuple[float, bool]:
    """Raw correlation estimate arg(sum_k R[k]) / (pi (M+1)) pooled over (y, x) records.

    Unambiguous for |f| < 1/(M+1). Returns (estimate, degenerate); a zero lag
    sum gives (0.0, True).
    """
    total = sum(_lag_sum(y, x, max_lag) for y, x in records)
    if total == 0:
        return 0.0, True
    return float(np.angle(total) / (np.pi * (max_lag + 1))), False


def _no_prior_crb(records, f: float, noise_var: float) -> float:
    info = 0.0
    for y, x in records:
        xs = _samples(x)
        h = channel_ls(y, xs, f).taps[0]
        d = symmetric_index(xs.size)
        # flat fading: P_perp D x h with x constant modulus
        dx = d * xs
        resid = dx - xs * (np.vdot(xs, dx) / xs.size)
        info += 2 * np.pi ** 2 / noise_var * abs(h) ** 2 * float(np.vdot(resid, resid).real)
    return math.inf if info == 0 else 1.0 / info


def shrink(f_raw: float, sigma_f_sq: float, crb_no_prior: float) -> float:
    """Scale toward zero by 2 sigma_f^2 / (2 sigma_f^2 + c_f^2)."""
    if math.isinf(sigma_f_sq):
        return f_raw
    if math.isinf(crb_no_prior):
        return 0.0
    return 2 * sigma_f_sq / (2 * sigma_f_sq + crb_no_prior) * f_raw


def corr_estimate(y, x, sigma_f_sq: float = math.inf, max_lag: int | None = None, noise_var: float = 1.0,
                  extra_records=(), crb_no_prior: float | None = None) -> float:
    """Correlation frequency estimate of a flat-fading record with prior shrinkage.

    ``extra_records`` are further (y, x) pairs observing the same frequency;
    their lag correlations are pooled. ``crb_no_prior`` is the c_f^2 used for
    shrinkage; by default it is evaluated at the LS channel estimate.
    """
    records = [(y, x), *extra_records]
    for _, xr in records:
        if np.ndim(xr) > 1:
            raise InvalidParameter("correlation estimator supports flat fading only")
    n = _samples(x).size
    m = max_lag_rule(n) if max_lag is None else max_lag
    f_raw, degenerate = correlation_frequency(records, m)
    if degenerate:
        log.debug("correlation sum vanished; returning 0")
        return 0.0
    if crb_no_prior is None:
        crb_no_prior = _no_prior_crb(records, f_raw, noise_var)
    return shrink(f_raw, sigma_f_sq, crb_no_prior)


def _project_out(y, u):
    u = np.asarray(u, dtype=complex)
    return y - u * (np.vdot(u, y) / np.vdot(u, u))


def corr_cooperation_twostep(y_c, y_sdl, x_sd, x_rd, x_ell, noise_var_d: float, prior=None,
                             sigma_f_sq: float = math.inf, max_lag: int | None = None,
                             adaptive: bool = True, use_listening: bool = True, c_tilde=None,
                             crb_no_prior=(None, None)) -> EstimateResult:
    """Correlation estimates of (f_sd, f_rd), optionally refined by projecting out the other signal.

    Step 1 estimates each frequency treating the other signal as noise. With
    ``adaptive`` the interferer is rebuilt at its step-1 frequency, projected
    out of y_c, and the correlation estimator runs a second time; the pair is
    then combined with the prior as in the 1-D ML estimator. Without it the
    shrunk step-1 estimates are returned as they are.
    """
    prior = _as_prior(prior)
    xs, xr = _samples(x_sd), _samples(x_rd)
    y_c = np.asarray(y_c, dtype=complex)
    m = max_lag_rule(xs.size) if max_lag is None else max_lag
    listen = [(y_sdl, x_ell)] if (use_listening and y_sdl is not None) else []

    c_sd, c_rd = crb_no_prior
    f_sd = corr_estimate(y_c, xs, sigma_f_sq, m, noise_var_d, listen, c_sd)
    f_rd = corr_estimate(y_c, xr, sigma_f_sq, m, noise_var_d, crb_no_prior=c_rd)
    if not adaptive:
        return EstimateResult(f_hat=(float(f_sd), float(f_rd)))
    y_sd_only = _project_out(y_c, ramp(f_rd, xr.size) * xr)
    y_rd_only = _project_out(y_c, ramp(f_sd, xs.size) * xs)
    f_sd, f_rd = (corr_estimate(y_sd_only, xs, sigma_f_sq, m, noise_var_d, listen, c_sd),
                  corr_estimate(y_rd_only, xr, sigma_f_sq, m, noise_var_d, crb_no_prior=c_rd))
    f_tilde = np.array([f_sd, f_rd])
    h_sd, h_rd = _joint_channels(y_c, xs, xr, f_sd, f_rd)
    h_sdl = channel_ls(y_sdl, x_ell, f_sd) if y_sdl is not None else ChannelResponse(np.zeros(1))
    if c_tilde is None:
        c_tilde = diag_prior_crb(xs, xr, x_ell, h_sd, h_rd, h_sdl, noise_var_d, prior)
    f_hat = combine_estimates(f_tilde, c_tilde, prior)
    return EstimateResult(f_hat=(float(f_hat[0]), float(f_hat[1])), h_hat=(h_sd, h_rd, h_sdl))
