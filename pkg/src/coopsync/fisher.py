"""Fisher information blocks and Cramer-Rao bounds for both phases.

Parameter order for the cooperation phase is (f_sd, f_rd, h_sd_c, h_rd, h_sd_l).
Bounds are in cycles^2/sample^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import InvalidCovariance, InvalidDimensions, InvalidParameter, NumericalDegeneracy, SingularDesign
from .model import _samples, _taps, symmetric_index, toeplitz_matrix

COND_LIMIT = 1e12

VARIANTS = ("listening", "cooperation-exact", "cooperation-worstcase", "cooperation-optimal")


@dataclass(frozen=True)
class CrbReport:
    crb_fsd: float
    crb_frd: float | None = None
    variant: str = "listening"
    covariance: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def total(self) -> float:
        return self.crb_fsd + (self.crb_frd or 0.0)


@dataclass(frozen=True)
class FimBlocks:
    """Blocks of the expected cooperation-phase FIM.

    ``delta_cross`` keeps the complex cross term (2 pi^2/sigma_d^2) A_sd^H M D^2 A_rd
    whose real part is delta[0, 1]; the worst-case bound needs its magnitude.
    """

    delta: np.ndarray
    lam: np.ndarray
    xi: np.ndarray
    prior_fim: np.ndarray
    delta_cross: complex = 0.0

    def full(self) -> np.ndarray:
        """Assemble the complex-parameter FIM [[D, L, conj L], [L^T, 0, Xi^T], [L^H, Xi, 0]]."""
        nf, nh = self.lam.shape
        out = np.zeros((nf + 2 * nh, nf + 2 * nh), dtype=complex)
        out[:nf, :nf] = self.delta + self.prior_fim
        out[:nf, nf:nf + nh] = self.lam
        out[:nf, nf + nh:] = self.lam.conj()
        out[nf:nf + nh, :nf] = self.lam.T
        out[nf + nh:, :nf] = self.lam.conj().T
        out[nf:nf + nh, nf + nh:] = self.xi.T
        out[nf + nh:, nf:nf + nh] = self.xi
        return out


def _guarded_inv(a: np.ndarray, what: str = "information matrix") -> np.ndarray:
    a = np.atleast_2d(a)
    if not np.all(np.isfinite(a)):
        raise NumericalDegeneracy(f"{what} has non-finite entries")
    if np.linalg.cond(a) > COND_LIMIT:
        raise NumericalDegeneracy(f"{what} is singular or ill-conditioned")
    return np.linalg.inv(a)


def gram_inverse(x_mat: np.ndarray) -> np.ndarray:
    """(X^H X)^-1 with a rank check on the training matrix."""
    g = x_mat.conj().T @ x_mat
    if np.linalg.cond(g) > COND_LIMIT:
        raise SingularDesign("training matrix does not have full column rank")
    return np.linalg.inv(g)


def orth_projector(x_mat: np.ndarray) -> np.ndarray:
    """P_perp = I - X (X^H X)^-1 X^H."""
    x_mat = np.atleast_2d(x_mat)
    if x_mat.shape[0] < x_mat.shape[1]:
        x_mat = x_mat.T
    return np.eye(x_mat.shape[0]) - x_mat @ gram_inverse(x_mat) @ x_mat.conj().T


def prior_fisher_info(sigma_sq: float) -> float:
    """Fisher information of the least-informative (Gaussian) prior with variance sigma_sq."""
    if not sigma_sq > 0:
        raise InvalidParameter("prior variance must be > 0")
    if math.isinf(sigma_sq):
        return 0.0
    return 1.0 / sigma_sq


def gaussian_fisher_quadrature(sigma_sq: float) -> float:
    """Fisher information of N(0, sigma_sq) by numerical integration of the score."""
    s = math.sqrt(sigma_sq)

    def integrand(z):
        p = math.exp(-0.5 * z * z / sigma_sq) / (s * math.sqrt(2 * math.pi))
        return (z / sigma_sq) ** 2 * p

    val, _ = integrate.quad(integrand, -40 * s, 40 * s, epsabs=0, epsrel=1e-12, limit=200)
    return val


def frequency_information(x, h, noise_var: float) -> float:
    """Data-only Fisher information (2 pi^2 / sigma^2) ||P_perp D X h||^2 of one link."""
    xs, taps = _samples(x), _taps(h)
    x_mat = toeplitz_matrix(xs, taps.size)
    dxh = symmetric_index(xs.size) * (x_mat @ taps)
    resid = dxh - x_mat @ (gram_inverse(x_mat) @ (x_mat.conj().T @ dxh))
    energy = float(np.vdot(resid, resid).real)
    if energy <= 1e-12 * float(np.vdot(dxh, dxh).real):
        energy = 0.0  # projected away up to rounding
    return 2 * np.pi ** 2 / noise_var * energy


def crb_listening(x, h, noise_var: float, sigma_f_sq: float = math.inf) -> CrbReport:
    """Worst-case (Gaussian prior) CRB of a single listening-phase link."""
    if not noise_var > 0:
        raise InvalidParameter("noise_var must be > 0")
    info = frequency_information(x, h, noise_var)
    if not math.isinf(sigma_f_sq):
        info += prior_fisher_info(2.0 * sigma_f_sq)
    if not info > 0:
        raise NumericalDegeneracy("no information about the frequency (zero signal and flat prior)")
    return CrbReport(crb_fsd=1.0 / info, variant="listening")


def char_fn_diag(freq_cov, n: int) -> np.ndarray:
    """Diagonal matrix M with M_nn = Phi_{f_rd - f_sd}(pi d_n) under a Gaussian prior.

    ``freq_cov`` is the 2x2 covariance of (f_sd, f_rd); an infinite covariance
    makes M vanish.
    """
    c = np.asarray(getattr(freq_cov, "matrix", freq_cov), dtype=float)
    if c.shape != (2, 2):
        raise InvalidDimensions("frequency covariance must be 2x2")
    if not np.allclose(c, c.T, rtol=1e-12, atol=0):
        raise InvalidCovariance("frequency covariance must be symmetric")
    v = c[0, 0] + c[1, 1] - 2 * c[0, 1]
    if v < -1e-12 * max(abs(c[0, 0]) + abs(c[1, 1]), 1e-300):
        raise InvalidCovariance("variance of f_rd - f_sd is negative (covariance not PSD)")
    v = max(v, 0.0)
    t = np.pi * symmetric_index(n)
    if math.isinf(v):
        return np.diag(np.where(t == 0, 1.0, 0.0))
    return np.diag(np.exp(-0.5 * t * t * v))


def char_fn_quadrature(variance: float, t: float) -> complex:
    """E[exp(j t z)] for z ~ N(0, variance) by direct numerical integration."""
    if variance == 0:
        return 1.0 + 0j
    s = math.sqrt(variance)

    def pdf(z):
        return math.exp(-0.5 * z * z / variance) / (s * math.sqrt(2 * math.pi))

    re, _ = integrate.quad(lambda z: math.cos(t * z) * pdf(z), -12 * s, 12 * s, limit=400, epsabs=1e-13)
    im, _ = integrate.quad(lambda z: math.sin(t * z) * pdf(z), -12 * s, 12 * s, limit=400, epsabs=1e-13)
    return complex(re, im)


def fim_cooperation(x_sd, x_rd, x_ell, h_sd, h_rd, h_sdl, noise_vars, m_diag, prior_fim) -> FimBlocks:
    """Expected FIM blocks for (f_sd, f_rd) from both destination observations.

    ``noise_vars`` is (sigma_d^2 for y_c, sigma^2 for y_sd_l); a scalar applies
    to both. ``m_diag`` replaces V_sd^H V_rd in every cross term; pass the
    actual product for the conditional (known-frequency) FIM.
    """
    if np.ndim(noise_vars) == 0:
        var_c = var_l = float(noise_vars)
    else:
        var_c, var_l = (float(v) for v in noise_vars)
    if not (var_c > 0 and var_l > 0):
        raise InvalidParameter("noise variances must be > 0")

    xs, xr, xl = _samples(x_sd), _samples(x_rd), _samples(x_ell)
    hs, hr, hl = _taps(h_sd), _taps(h_rd), _taps(h_sdl)
    if xs.size != xr.size:
        raise InvalidDimensions("cooperation sequences must have equal length")
    p = hs.size
    if hr.size != p or hl.size != p:
        raise InvalidDimensions("all channels must have the same length P")
    nc, nl = xs.size, xl.size
    m = np.asarray(m_diag)
    m = np.diag(m) if m.ndim == 2 else m.astype(complex)
    if m.size != nc:
        raise InvalidDimensions("characteristic-function diagonal must match N_c")

    X1, X2, X3 = toeplitz_matrix(xs, p), toeplitz_matrix(xr, p), toeplitz_matrix(xl, p)
    dc, dl = symmetric_index(nc), symmetric_index(nl)
    a1, a2, a3 = X1 @ hs, X2 @ hr, X3 @ hl
    pi2 = np.pi ** 2

    delta = np.zeros((2, 2))
    delta[0, 0] = 2 * pi2 / var_c * np.sum(np.abs(dc * a1) ** 2) + 2 * pi2 / var_l * np.sum(np.abs(dl * a3) ** 2)
    delta[1, 1] = 2 * pi2 / var_c * np.sum(np.abs(dc * a2) ** 2)
    cross = 2 * pi2 / var_c * np.vdot(a1, m * dc * dc * a2)
    delta[0, 1] = delta[1, 0] = cross.real

    xi = np.zeros((3 * p, 3 * p), dtype=complex)
    xi[:p, :p] = X1.conj().T @ X1 / var_c
    xi[p:2 * p, p:2 * p] = X2.conj().T @ X2 / var_c
    xi[:p, p:2 * p] = X1.conj().T @ (m[:, None] * X2) / var_c
    xi[p:2 * p, :p] = xi[:p, p:2 * p].conj().T
    xi[2 * p:, 2 * p:] = X3.conj().T @ X3 / var_l

    lam = np.zeros((2, 3 * p), dtype=complex)
    lam[0, :p] = -1j * np.pi / var_c * (a1.conj() @ (dc[:, None] * X1))
    lam[0, p:2 * p] = -1j * np.pi / var_c * (a1.conj() @ ((m * dc)[:, None] * X2))
    lam[0, 2 * p:] = -1j * np.pi / var_l * (a3.conj() @ (dl[:, None] * X3))
    lam[1, :p] = -1j * np.pi / var_c * (a2.conj() @ ((m.conj() * dc)[:, None] * X1))
    lam[1, p:2 * p] = -1j * np.pi / var_c * (a2.conj() @ (dc[:, None] * X2))

    return FimBlocks(delta=delta, lam=lam, xi=xi, prior_fim=np.asarray(prior_fim, dtype=float).reshape(2, 2),
                     delta_cross=complex(cross))


def _nuisance_term(blocks: FimBlocks) -> np.ndarray:
    """Lambda Xi^-1 Lambda^H (complex 2x2)."""
    if np.linalg.cond(blocks.xi) > COND_LIMIT:
        raise SingularDesign("channel block Xi is singular")
    return blocks.lam @ np.linalg.solve(blocks.xi, blocks.lam.conj().T)


def _report(info: np.ndarray, variant: str) -> CrbReport:
    cov = _guarded_inv(info)
    d = np.diag(cov).real
    if np.any(d <= 0):
        raise NumericalDegeneracy("bound is not positive; information matrix is not positive definite")
    return CrbReport(crb_fsd=float(d[0]), crb_frd=float(d[1]), variant=variant, covariance=cov)


def crb_cooperation(blocks: FimBlocks) -> CrbReport:
    """Schur-complement CRB (Delta - 2 Re{L Xi^-1 L^H} + F_f)^-1."""
    info = blocks.delta - 2 * _nuisance_term(blocks).real + blocks.prior_fim
    return _report(info, "cooperation-exact")


def crb_worstcase(blocks: FimBlocks) -> CrbReport:
    """CRB maximized over the relative channel phase (off-diagonals pushed negative)."""
    nuis = np.abs(_nuisance_term(blocks))
    delta = np.diag(np.diag(blocks.delta)).astype(float)
    delta[0, 1] = delta[1, 0] = -abs(blocks.delta_cross)
    info = delta - 2 * nuis + blocks.prior_fim
    return _report(info, "cooperation-worstcase")


def crb_optimal(delta_diag, prior_fim) -> CrbReport:
    """Best CRB over constant-modulus sequences, (diag(Delta) + F_f)^-1.

    Prior information is added, as in every other bound.
    """
    d = np.asarray(delta_diag, dtype=float)
    if d.ndim == 2:
        if abs(d[0, 1]) > 0 or abs(d[1, 0]) > 0:
            raise InvalidParameter("delta_diag must be diagonal")
        d = np.diag(d)
    info = np.diag(d) + np.asarray(prior_fim, dtype=float).reshape(2, 2)
    return _report(info, "cooperation-optimal")
