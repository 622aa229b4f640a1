"""Scenario files for the simulator.

A scenario is plain ``key = value`` text grouped under ``[section]`` headers.
``#`` starts a comment. Every key is optional; an empty file gives the
defaults below. Link SNRs are tied to the source-destination SNR through dB
offsets so that sweeping ``snr_sd_db`` moves every link together.

    [system]
    n_listen = 16            # listening-phase length N_l
    n_coop = 16              # cooperation-phase length N_c
    sigma_f_sq = 1e-4        # oscillator variance per node, or inf

    [links]
    snr_sd_db = 0            # cooperation-phase S_sd (reference SNR)
    snr_sdl_offset_db = 0    # listening-phase S_sd relative to snr_sd_db
    snr_rd_offset_db = 0     # S_rd relative to snr_sd_db
    snr_sr_offset_db = 10    # S_sr relative to snr_sd_db

    [relay]
    gamma_policy = fixed     # fixed | optimal | zero
    gamma = 1                # used by the fixed policy
    relay_estimator = map    # map | corr

    [training]
    x_rd = sylvester         # sylvester | ones

    [estimation]
    estimators = map2d, ml1d, corr, corr-nonadaptive
    shrinkage = nominal      # nominal | estimated
    max_lag = 0              # 0 selects min(N/2, 12)

    [bounds]
    bound = worstcase        # worstcase | optimal | cooperation | listening

    [run]
    trials = 2000
    seed = 0
    search_iterations = 10000

    [sweep]
    param = snr_sd_db        # snr_sd_db | snr_sr_offset_db | sigma_f_sq_db | n | gamma
    values = -20:30:5        # START:STOP:STEP (inclusive) or a comma list
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter

ESTIMATOR_NAMES = ("map2d", "ml1d", "corr", "corr-nonadaptive")
SWEEP_PARAMS = ("snr_sd_db", "snr_sr_offset_db", "sigma_f_sq_db", "n", "gamma")
CHOICES = {
    "gamma_policy": ("fixed", "optimal", "zero"),
    "relay_estimator": ("map", "corr"),
    "x_rd": ("sylvester", "ones"),
    "shrinkage": ("nominal", "estimated"),
    "bound": ("worstcase", "optimal", "cooperation", "listening"),
    "param": SWEEP_PARAMS,
}


class ScenarioError(InvalidParameter):
    """Scenario validation failure tied to a key and, when known, a line."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        super().__init__(message)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class Scenario:
    n_listen: int = 16
    n_coop: int = 16
    sigma_f_sq: float = 1e-4
    snr_sd_db: float = 0.0
    snr_sdl_offset_db: float = 0.0
    snr_rd_offset_db: float = 0.0
    snr_sr_offset_db: float = 10.0
    gamma_policy: str = "fixed"
    gamma: float = 1.0
    relay_estimator: str = "map"
    x_rd: str = "sylvester"
    estimators: tuple = ESTIMATOR_NAMES
    shrinkage: str = "nominal"
    max_lag: int = 0
    bound: str = "worstcase"
    trials: int = 2000
    seed: int = 0
    search_iterations: int = 10000
    param: str = "snr_sd_db"
    values: tuple = tuple(float(v) for v in range(-20, 31, 5))

    def __post_init__(self):
        validate(self)

    # linear SNRs at the current sweep point
    @property
    def snr_sd(self) -> float:
        return 10 ** (self.snr_sd_db / 10)

    @property
    def snr_sdl(self) -> float:
        return 10 ** ((self.snr_sd_db + self.snr_sdl_offset_db) / 10)

    @property
    def snr_rd(self) -> float:
        return 10 ** ((self.snr_sd_db + self.snr_rd_offset_db) / 10)

    @property
    def snr_sr(self) -> float:
        return 10 ** ((self.snr_sd_db + self.snr_sr_offset_db) / 10)

    def at(self, value: float) -> "Scenario":
        """Copy with the swept parameter set to ``value``."""
        if self.param == "n":
            n = int(round(value))
            return dataclasses.replace(self, n_listen=n, n_coop=n)
        if self.param == "sigma_f_sq_db":
            return dataclasses.replace(self, sigma_f_sq=10 ** (value / 10))
        return dataclasses.replace(self, **{self.param: float(value)})

    def points(self) -> list["Scenario"]:
        return [self.at(v) for v in self.values]


SECTIONS = {
    "system": ("n_listen", "n_coop", "sigma_f_sq"),
    "links": ("snr_sd_db", "snr_sdl_offset_db", "snr_rd_offset_db", "snr_sr_offset_db"),
    "relay": ("gamma_policy", "gamma", "relay_estimator"),
    "training": ("x_rd",),
    "estimation": ("estimators", "shrinkage", "max_lag"),
    "bounds": ("bound",),
    "run": ("trials", "seed", "search_iterations"),
    "sweep": ("param", "values"),
}
KEY_SECTION = {k: s for s, keys in SECTIONS.items() for k in keys}
FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(Scenario)}
SCALAR_KEYS = tuple(k for k in KEY_SECTION if k not in ("estimators", "values"))


def validate(s: Scenario) -> None:
    def bad(key, msg):
        raise ScenarioError(f"{key}: {msg}", key=key)

    for key in ("n_listen", "n_coop"):
        if getattr(s, key) < 2:
            bad(key, "must be >= 2")
    if math.isnan(s.sigma_f_sq) or s.sigma_f_sq <= 0:
        bad("sigma_f_sq", "must be > 0 (inf allowed)")
    for key in ("snr_sd_db", "snr_sdl_offset_db", "snr_rd_offset_db", "snr_sr_offset_db", "gamma"):
        if not math.isfinite(getattr(s, key)):
            bad(key, "must be finite")
    for key, allowed in CHOICES.items():
        if getattr(s, key) not in allowed:
            bad(key, f"must be one of {', '.join(allowed)}")
    if not s.estimators:
        bad("estimators", "needs at least one estimator")
    for name in s.estimators:
        if name not in ESTIMATOR_NAMES:
            bad("estimators", f"unknown estimator {name!r}")
    if len(set(s.estimators)) != len(s.estimators):
        bad("estimators", "duplicate estimator")
    if s.max_lag < 0 or (s.max_lag and s.max_lag >= s.n_coop):
        bad("max_lag", "must be 0 (auto) or in [1, n_coop)")
    if s.trials < 1:
        bad("trials", "must be >= 1")
    if not 0 <= s.seed < 2 ** 64:
        bad("seed", "must be a 64-bit unsigned integer")
    if s.search_iterations < 0:
        bad("search_iterations", "must be >= 0")
    if not s.values:
        bad("values", "sweep needs at least one value")
    if not all(math.isfinite(v) for v in s.values):
        bad("values", "sweep values must be finite")
    if s.param == "gamma" and s.gamma_policy != "fixed":
        bad("param", "a gamma sweep needs gamma_policy = fixed")
    if s.param == "n" and any(v != round(v) or v < 2 for v in s.values):
        bad("values", "n sweep needs integers >= 2")


def parse_range(text: str, key: str = "values", line: int | None = None) -> tuple:
    """'START:STOP:STEP' (inclusive stop) or a comma-separated list of numbers."""
    text = text.strip()
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if step == 0 or (stop - start) / step < 0:
                raise ScenarioError(f"{key}: empty range {text!r}", key=key, line=line)
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(float(v) for v in np.round(start + step * np.arange(count), 12))
        return tuple(float(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ScenarioError(f"{key}: expected START:STOP:STEP or a number list, got {text!r}",
                            key=key, line=line) from None


def _convert(key: str, raw: str, line: int | None):
    kind = FIELD_TYPES[key]
    try:
        if key == "values":
            return parse_range(raw, key, line)
        if key == "estimators":
            return tuple(p.strip() for p in raw.split(",") if p.strip())
        if kind == "int":
            return int(raw, 0)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ScenarioError(f"{key}: expected {kind}, got {raw!r}", key=key, line=line) from None


def parse_scenario(text: str, overrides: dict | None = None) -> Scenario:
    """Parse scenario text; ``overrides`` maps keys to raw string values applied last."""
    values: dict = {}
    lines: dict = {}
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        stripped = raw_line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]") or stripped[1:-1].strip() not in SECTIONS:
                raise ScenarioError(f"unknown section {stripped}", line=lineno)
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ScenarioError(f"expected key = value, got {stripped!r}", line=lineno)
        key, raw = (p.strip() for p in stripped.split("=", 1))
        if key not in KEY_SECTION:
            raise ScenarioError(f"unknown key {key!r}", key=key, line=lineno)
        if section is not None and KEY_SECTION[key] != section:
            raise ScenarioError(f"key {key!r} belongs in [{KEY_SECTION[key]}], not [{section}]",
                                key=key, line=lineno)
        if key in values:
            raise ScenarioError(f"duplicate key {key!r}", key=key, line=lineno)
        values[key] = _convert(key, raw, lineno)
        lines[key] = lineno
    for key, raw in (overrides or {}).items():
        if key not in KEY_SECTION:
            raise ScenarioError(f"unknown key {key!r}", key=key)
        values[key] = _convert(key, str(raw), None)
        lines.pop(key, None)
    try:
        return Scenario(**values)
    except ScenarioError as exc:
        exc.line = lines.get(exc.key)
        if exc.line is not None:
            exc.args = (f"line {exc.line}: {exc.args[0]}",)
        raise


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_scenario(s: Scenario) -> str:
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        out.extend(f"{k} = {_fmt(getattr(s, k))}" for k in keys)
        out.append("")
    return "\n".join(out)


def scenario_hash(s: Scenario) -> str:
    return hashlib.sha256(serialize_scenario(s).encode("utf-8")).hexdigest()[:16]
