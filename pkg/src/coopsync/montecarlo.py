"""Monte Carlo MSE curves and bound sweeps.

Trial t at sweep point p draws everything from
``numpy.random.default_rng([seed, p, t])`` in a fixed order (node offsets,
four channel phases, relay noise, listening noise at the destination,
cooperation noise). Estimators consume no randomness, so the draws do not
depend on which estimators run or on how trials are spread over workers.
Per-trial errors are stored by index and reduced with numpy's pairwise sum,
which makes the result bit-identical for any worker count.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import CoopSyncError, InvalidParameter
from .estimators import (FrequencyPrior, GridSpec, corr_cooperation_twostep, corr_estimate, map_cooperation,
                         map_listening, max_lag_rule, ml1d_cooperation)
from .fisher import crb_cooperation, crb_listening, crb_optimal, crb_worstcase
from .model import ChannelResponse, draw_offsets, synth_cooperation, synth_listening
from .relay_policy import (compute_k, cooperation_blocks, eta, flat_delta_opt, flat_q, freq_information,
                           optimize_gamma)
from .scenario import Scenario
from .sequences import sylvester_sequence

log = logging.getLogger(__name__)

LISTENING_ESTIMATORS = ("map", "corr")
THREADS_ENV = "COOPSYNC_THREADS"


@dataclass(frozen=True)
class MsePoint:
    sweep_value: float
    estimator: str
    mse_fsd: float
    mse_frd: float
    crb_fsd: float
    crb_frd: float
    bias_fsd: float
    bias_frd: float
    trials: int
    failures: int = 0

    @property
    def mse_total(self) -> float:
        return self.mse_fsd + self.mse_frd

    @property
    def crb_total(self) -> float:
        return self.crb_fsd + self.crb_frd


@dataclass(frozen=True)
class MseCurve:
    """Rows ordered by sweep value, then estimator name.

    For listening curves the f_sr error sits in the ``fsd`` columns and the
    ``frd`` columns are zero. ``optimal`` holds the trace of the optimal
    bound at each sweep point when it applies.
    """

    sweep_param: str
    points: tuple
    optimal: tuple = ()

    def estimator(self, name: str) -> list:
        return [p for p in self.points if p.estimator == name]

    def totals(self, name: str) -> np.ndarray:
        return np.array([p.mse_total for p in self.estimator(name)])

    def bound_totals(self, name: str) -> np.ndarray:
        return np.array([p.crb_total for p in self.estimator(name)])


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise InvalidParameter(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise InvalidParameter(f"{THREADS_ENV} must be a non-negative integer, got {raw!r}")
    return n or (os.cpu_count() or 1)


def relay_sequence(s: Scenario) -> np.ndarray:
    if s.x_rd == "ones":
        return np.ones(s.n_coop)
    return sylvester_sequence(s.n_coop).entries


def resolve_gamma(s: Scenario) -> float:
    if s.gamma_policy == "zero":
        return 0.0
    if s.gamma_policy == "fixed":
        return s.gamma
    q, k = flat_q(s.n_listen, s.snr_sr), compute_k(1.0, s.sigma_f_sq)
    return optimize_gamma(q, k, s.sigma_f_sq, flat_delta_opt(s.n_listen, s.n_coop, s.snr_sdl, s.snr_sd, s.snr_rd))


def point_bounds(s: Scenario, gamma: float | None = None) -> dict:
    """Worst-case, expected (zero relative phase) and optimal bounds for a flat-fading point."""
    g = resolve_gamma(s) if gamma is None else gamma
    blocks = cooperation_blocks(relay_sequence(s), s.snr_sd, s.snr_rd, s.snr_sr, s.sigma_f_sq, g,
                                snr_sd_l=s.snr_sdl, x_ell=np.ones(s.n_listen))
    q, k = flat_q(s.n_listen, s.snr_sr), compute_k(1.0, s.sigma_f_sq)
    info = freq_information(q, k, g, s.sigma_f_sq, noise_var_relay=1.0)
    delta = flat_delta_opt(s.n_listen, s.n_coop, s.snr_sdl, s.snr_sd, s.snr_rd)
    listen = crb_listening(np.ones(s.n_listen), ChannelResponse.flat(s.snr_sr), 1.0, s.sigma_f_sq)
    return {
        "worstcase": crb_worstcase(blocks),
        "cooperation": crb_cooperation(blocks),
        "optimal": crb_optimal(delta, info),
        "listening": listen,
        "gamma": g,
    }


@dataclass(frozen=True)
class _PointSetup:
    scenario: Scenario
    point: int
    gamma: float
    prior: FrequencyPrior
    grid: GridSpec
    relay_grid: GridSpec
    x_sd: np.ndarray
    x_rd: np.ndarray
    x_ell: np.ndarray
    max_lag: int
    c_nominal: tuple
    c_relay: float | None


def _setup(s: Scenario, point: int) -> _PointSetup:
    if not math.isfinite(s.sigma_f_sq):
        raise InvalidParameter("simulation needs a finite sigma_f_sq to draw offsets")
    gamma = resolve_gamma(s)
    q, k = flat_q(s.n_listen, s.snr_sr), compute_k(1.0, s.sigma_f_sq)
    if s.shrinkage == "nominal":
        c_nom = (1.0 / (eta(s.n_listen) * s.snr_sdl + eta(s.n_coop) * s.snr_sd), 1.0 / (eta(s.n_coop) * s.snr_rd))
        c_relay = 1.0 / (eta(s.n_listen) * s.snr_sr)
    else:
        c_nom, c_relay = (None, None), None
    return _PointSetup(
        scenario=s, point=point, gamma=gamma,
        prior=FrequencyPrior.from_relay(q, k, gamma, s.sigma_f_sq, 1.0),
        grid=GridSpec.default(s.n_coop, s.sigma_f_sq),
        relay_grid=GridSpec.default(s.n_listen, s.sigma_f_sq),
        x_sd=np.ones(s.n_coop), x_rd=relay_sequence(s), x_ell=np.ones(s.n_listen),
        max_lag=s.max_lag or max_lag_rule(s.n_coop, s.sigma_f_sq),
        c_nominal=c_nom, c_relay=c_relay,
    )


def _trial_rng(seed: int, point: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, point, trial])


def _draw_links(setup: _PointSetup, rng):
    s = setup.scenario
    offsets = draw_offsets(s.sigma_f_sq, rng)
    phase = rng.uniform(0.0, 2 * np.pi, 4)
    y_sr = synth_listening(setup.x_ell, ChannelResponse.flat(s.snr_sr, phase[0]), offsets.f_sr, 1.0, rng)
    return offsets, phase, y_sr


def _relay_estimate(setup: _PointSetup, y_sr, name: str) -> float:
    s = setup.scenario
    if name == "corr":
        lag = s.max_lag or max_lag_rule(s.n_listen, s.sigma_f_sq)
        return corr_estimate(y_sr, setup.x_ell, s.sigma_f_sq, lag, 1.0, crb_no_prior=setup.c_relay)
    return map_listening(y_sr, setup.x_ell, 1.0, s.sigma_f_sq, setup.relay_grid).f_hat


def _listening_trial(setup: _PointSetup, trial: int) -> np.ndarray:
    s = setup.scenario
    rng = _trial_rng(s.seed, setup.point, trial)
    offsets, _, y_sr = _draw_links(setup, rng)
    out = np.full(len(LISTENING_ESTIMATORS), np.nan)
    for i, name in enumerate(LISTENING_ESTIMATORS):
        try:
            out[i] = _relay_estimate(setup, y_sr, name) - offsets.f_sr
        except (CoopSyncError, np.linalg.LinAlgError) as exc:
            log.debug("listening trial %d, %s failed: %s", trial, name, exc)
    return out


def _cooperation_trial(setup: _PointSetup, trial: int) -> np.ndarray:
    s = setup.scenario
    rng = _trial_rng(s.seed, setup.point, trial)
    offsets, phase, y_sr = _draw_links(setup, rng)
    y_sdl = synth_listening(setup.x_ell, ChannelResponse.flat(s.snr_sdl, phase[1]), offsets.f_sd, 1.0, rng)
    out = np.full((len(s.estimators), 2), np.nan)
    try:
        f_sr_hat = _relay_estimate(setup, y_sr, s.relay_estimator)
    except (CoopSyncError, np.linalg.LinAlgError) as exc:
        log.debug("trial %d: relay estimate failed: %s", trial, exc)
        return out
    f_rd = offsets.f_rd(setup.gamma * f_sr_hat)
    y_c = synth_cooperation(setup.x_sd, setup.x_rd, ChannelResponse.flat(s.snr_sd, phase[2]),
                            ChannelResponse.flat(s.snr_rd, phase[3]), offsets.f_sd, f_rd, 1.0, rng)
    truth = np.array([offsets.f_sd, f_rd])
    args = (y_c, y_sdl, setup.x_sd, setup.x_rd, setup.x_ell, 1.0, setup.prior)
    for i, name in enumerate(s.estimators):
        try:
            if name == "map2d":
                res = map_cooperation(*args, grid=setup.grid)
            elif name == "ml1d":
                res = ml1d_cooperation(*args, grid=setup.grid)
            else:
                res = corr_cooperation_twostep(*args, sigma_f_sq=s.sigma_f_sq, max_lag=setup.max_lag,
                                               adaptive=(name == "corr"), crb_no_prior=setup.c_nominal)
            out[i] = np.asarray(res.f_hat, dtype=float) - truth
        except (CoopSyncError, np.linalg.LinAlgError) as exc:
            log.debug("trial %d, %s failed: %s", trial, name, exc)
    return out


def _run_chunk(kind: str, setup: _PointSetup, trials: range) -> np.ndarray:
    fn = _listening_trial if kind == "listening" else _cooperation_trial
    return np.stack([fn(setup, t) for t in trials])


def _run_point(kind: str, setup: _PointSetup, pool: ProcessPoolExecutor | None, workers: int) -> np.ndarray:
    n = setup.scenario.trials
    if pool is None:
        return _run_chunk(kind, setup, range(n))
    size = max(1, math.ceil(n / (4 * workers)))
    chunks = [range(a, min(a + size, n)) for a in range(0, n, size)]
    return np.concatenate(list(pool.map(_run_chunk, [kind] * len(chunks), [setup] * len(chunks), chunks)))


def _aggregate(errors: np.ndarray) -> tuple:
    """errors: (trials, 2) with NaN rows for failed trials."""
    ok = ~np.any(np.isnan(errors), axis=1)
    good = errors[ok]
    n = good.shape[0]
    if n == 0:
        return (math.nan, math.nan), (math.nan, math.nan), 0, errors.shape[0]
    mse = np.sum(good ** 2, axis=0) / n
    bias = np.sum(good, axis=0) / n
    return tuple(mse), tuple(bias), n, errors.shape[0] - n


def _simulate(kind: str, scenario: Scenario, workers: int | None) -> MseCurve:
    workers = worker_count() if workers is None else workers
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 and scenario.trials > 1 else None
    rows, optimal = [], []
    try:
        for idx, (value, s) in enumerate(zip(scenario.values, scenario.points())):
            setup = _setup(s, idx)
            bounds = point_bounds(s, setup.gamma)
            errs = _run_point(kind, setup, pool, workers)
            if kind == "listening":
                names = LISTENING_ESTIMATORS
                crb = (bounds["listening"].crb_fsd, 0.0)
                errs = np.stack([errs, np.zeros_like(errs)], axis=-1)
            else:
                names = s.estimators
                crb = (bounds["worstcase"].crb_fsd, bounds["worstcase"].crb_frd)
                optimal.append(bounds["optimal"].total)
            for j, name in enumerate(names):
                mse, bias, n_ok, n_fail = _aggregate(errs[:, j, :])
                if n_fail:
                    log.warning("%s at %s=%g: %d of %d trials failed", name, s.param, value, n_fail, s.trials)
                rows.append(MsePoint(float(value), name, float(mse[0]), float(mse[1]), float(crb[0]), float(crb[1]),
                                     float(bias[0]), float(bias[1]), n_ok, n_fail))
    finally:
        if pool is not None:
            pool.shutdown()
    rows.sort(key=lambda r: (r.sweep_value, r.estimator))
    return MseCurve(scenario.param, tuple(rows), tuple(optimal))


def run_listening(scenario: Scenario, workers: int | None = None) -> MseCurve:
    """MSE of the relay's f_sr estimate (MAP and correlation) against the listening bound."""
    return _simulate("listening", scenario, workers)


def run_cooperation(scenario: Scenario, workers: int | None = None) -> MseCurve:
    """Full two-phase pipeline; bound columns carry the worst-case CRB at the scenario's gamma."""
    return _simulate("cooperation", scenario, workers)


def crb_sweep(scenario: Scenario) -> MseCurve:
    """Bound selected by ``scenario.bound`` at every sweep point (no trials)."""
    rows = []
    for value, s in zip(scenario.values, scenario.points()):
        rep = point_bounds(s)[s.bound]
        crb_frd = 0.0 if rep.crb_frd is None else float(rep.crb_frd)  # listening: single link
        rows.append(MsePoint(float(value), "bound", math.nan, math.nan, float(rep.crb_fsd), crb_frd,
                             math.nan, math.nan, 0, 0))
    return MseCurve(scenario.param, tuple(rows))


@dataclass(frozen=True)
class GammaPoint:
    sweep_value: float
    gamma_opt: float
    crb_total_opt: float
    crb_total_gamma1: float

    @property
    def penalty_db(self) -> float:
        return 10 * math.log10(self.crb_total_gamma1 / self.crb_total_opt)


def gamma_sweep(scenario: Scenario) -> list[GammaPoint]:
    """gamma* and the optimal-bound penalty of gamma = 1 at each sweep point."""
    out = []
    for value, s in zip(scenario.values, scenario.points()):
        q, k = flat_q(s.n_listen, s.snr_sr), compute_k(1.0, s.sigma_f_sq)
        delta = flat_delta_opt(s.n_listen, s.n_coop, s.snr_sdl, s.snr_sd, s.snr_rd)
        g = optimize_gamma(q, k, s.sigma_f_sq, delta)
        opt = crb_optimal(delta, freq_information(q, k, g, s.sigma_f_sq, 1.0)).total
        one = crb_optimal(delta, freq_information(q, k, 1.0, s.sigma_f_sq, 1.0)).total
        out.append(GammaPoint(float(value), g, opt, one))
    return out
