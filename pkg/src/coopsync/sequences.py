"""Binary relay training sequences: Sylvester construction and searches.

Candidates are scored by the trace of the worst-case cooperation CRB for a
flat-fading reference scenario with all-ones source and listening sequences.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameter, NumericalDegeneracy, SearchRefused
from .fisher import crb_worstcase
from .relay_policy import cooperation_blocks

MAX_EXHAUSTIVE = 16
CLAIMED_MAX = 128


@dataclass(frozen=True)
class BinarySequence:
    entries: np.ndarray
    extrapolated: bool = False

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float).ravel()
        if not np.all(np.abs(e) == 1.0):
            raise InvalidParameter("binary sequence entries must be +1 or -1")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def __len__(self):
        return self.entries.size


@dataclass(frozen=True)
class SearchCriterion:
    """Reference operating point for scoring x_rd (linear SNRs)."""

    snr_sd: float = 1.0
    snr_rd: float = 1.0
    snr_sr: float = 1.0
    sigma_f_sq: float = 1e-4
    gamma: float = 1.0
    cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __call__(self, x_rd) -> float:
        x = np.asarray(getattr(x_rd, "entries", x_rd), dtype=float)
        blocks = cooperation_blocks(x, self.snr_sd, self.snr_rd, self.snr_sr, self.sigma_f_sq, self.gamma)
        try:
            return crb_worstcase(blocks).total
        except NumericalDegeneracy:
            return math.inf


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def sylvester_sequence(n: int) -> BinarySequence:
    """[a_{m-1}; -J a_{m-1}] with a_1 = [1, -1] and a_m = [a_{m-1}, -a_{m-1}]."""
    if n < 4 or not _is_power_of_two(n):
        raise InvalidParameter(f"Sylvester sequence needs N = 2^m >= 4, got {n}")
    a = np.array([1.0, -1.0])
    while a.size < n // 2:
        a = np.concatenate([a, -a])
    return BinarySequence(np.concatenate([a, -a[::-1]]), extrapolated=n > CLAIMED_MAX)


def _canonical(x: np.ndarray) -> np.ndarray:
    # representative of the {x, -x} class: first entry +1
    return x if x[0] > 0 else -x


def exhaustive_search(n: int, criterion: SearchCriterion | None = None) -> BinarySequence:
    """Minimize the criterion over all 2^(N-1) negation classes of length-N binary sequences.

    Ties go to the lexicographically smallest canonical representative
    (first entry +1, ordering with -1 < +1).
    """
    if n > MAX_EXHAUSTIVE:
        raise SearchRefused(f"exhaustive search limited to N <= {MAX_EXHAUSTIVE}; use randomized_search")
    if n < 2:
        raise InvalidParameter("N must be >= 2")
    crit = criterion or SearchCriterion()
    best, best_val = None, math.inf
    for tail in itertools.product((-1.0, 1.0), repeat=n - 1):
        x = np.array((1.0,) + tail)
        val = crit(x)
        if val < best_val:
            best, best_val = x, val
    return BinarySequence(best)


def randomized_search(n: int, iterations: int, rng: np.random.Generator,
                      criterion: SearchCriterion | None = None, return_stats: bool = False):
    """Best of `iterations` uniform random sequences plus the Sylvester candidate.

    With ``return_stats`` also returns the fraction of random draws that beat
    the Sylvester sequence.
    """
    if iterations < 0:
        raise InvalidParameter("iterations must be >= 0")
    crit = criterion or SearchCriterion()
    syl = sylvester_sequence(n)
    best, best_val = _canonical(syl.entries), crit(syl.entries)
    syl_val, beats = best_val, 0
    for _ in range(iterations):
        x = _canonical(rng.choice((-1.0, 1.0), size=n))
        val = crit(x)
        beats += val < syl_val
        if val < best_val or (val == best_val and tuple(x) < tuple(best)):
            best, best_val = x, val
    out = BinarySequence(best, extrapolated=n > CLAIMED_MAX)
    if return_stats:
        return out, (beats / iterations if iterations else 0.0)
    return out
