"""Heralded photon statistics: coincidence tallies, conditional g2, rates."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .memory import ClickTable, NoiseParams, TrialRecord, herald_probability
from .tomography import InsufficientDataError


@dataclass(frozen=True)
class CoincidenceTally:
    """Counts of heralds (N1), herald+D2 (N12), herald+D3 (N13) and triples (N123).

    One read window per trial is the coincidence window.
    """

    n_trials: int = 0
    N1: int = 0
    N12: int = 0
    N13: int = 0
    N123: int = 0

    def __post_init__(self):
        if not (self.N123 <= min(self.N12, self.N13) and max(self.N12, self.N13) <= self.N1 <= self.n_trials):
            raise ValueError(f"inconsistent tally {self}")

    def __add__(self, other: "CoincidenceTally") -> "CoincidenceTally":
        return CoincidenceTally(
            self.n_trials + other.n_trials,
            self.N1 + other.N1,
            self.N12 + other.N12,
            self.N13 + other.N13,
            self.N123 + other.N123,
        )

    @property
    def herald_rate(self) -> float:
        return self.N1 / self.n_trials if self.n_trials else 0.0

    def swapped(self) -> "CoincidenceTally":
        """Same tally with D2 and D3 relabeled."""
        return CoincidenceTally(self.n_trials, self.N1, self.N13, self.N12, self.N123)


def tally(records) -> CoincidenceTally:
    """Tally a :class:`ClickTable` or a list of :class:`TrialRecord`."""
    if not isinstance(records, ClickTable):
        records = list(records)
        if not records:
            return CoincidenceTally()
        if isinstance(records[0], TrialRecord):
            records = ClickTable.from_records(records)
    h = records.d1 > 0
    a = h & (records.d2 > 0)
    b = h & (records.d3 > 0)
    return CoincidenceTally(
        n_trials=len(records),
        N1=int(h.sum()),
        N12=int(a.sum()),
        N13=int(b.sum()),
        N123=int((a & b).sum()),
    )


@dataclass(frozen=True)
class G2Estimate:
    g2: float
    err: float
    tally: CoincidenceTally

    def summary(self) -> dict:
        t = self.tally
        return {
            "g2": self.g2, "err": self.err, "N1": t.N1, "N12": t.N12, "N13": t.N13,
            "N123": t.N123, "herald_rate": t.herald_rate,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def conditional_g2(t: CoincidenceTally) -> G2Estimate:
    """``g2 = N123 N1 / (N12 N13)`` with independent Poisson errors on all four counts.

    With no triples the relative error of N123 is taken from one count.
    """
    if t.N12 == 0 or t.N13 == 0:
        raise InsufficientDataError("g2 needs at least one herald+D2 and one herald+D3 coincidence")
    g2 = t.N123 * t.N1 / (t.N12 * t.N13)
    scale = t.N1 / (t.N12 * t.N13)
    rel = 1 / t.N1 + (1 / t.N12 + 1 / t.N13)  # grouped so D2 <-> D3 is exact
    if t.N123 > 0:
        err = g2 * math.sqrt(1 / t.N123 + rel)
    else:
        err = scale
    return G2Estimate(g2, err, t)


def bootstrap_g2(records: ClickTable, n_resamples: int = 1000, seed: int = 0) -> float:
    """Standard deviation of g2 over multinomial resamples of heralded trial classes."""
    h = records.d1 > 0
    a = records.d2[h] > 0
    b = records.d3[h] > 0
    classes = np.array([(a & b).sum(), (a & ~b).sum(), (~a & b).sum(), (~a & ~b).sum()])
    n = int(classes.sum())
    rng = np.random.default_rng(seed)
    draws = rng.multinomial(n, classes / n, size=n_resamples)
    both, only2, only3, _ = draws.T
    n12 = both + only2
    n13 = both + only3
    ok = (n12 > 0) & (n13 > 0)
    g2 = both[ok] * n / (n12[ok] * n13[ok])
    return float(np.std(g2, ddof=1))


@dataclass(frozen=True)
class RateProjection:
    probability: float
    rate: float


def success_rate_projection(noise: NoiseParams, trials_per_second: float) -> RateProjection:
    """Heralded storage probability per trial and the resulting storage rate."""
    if trials_per_second < 0:
        raise ValueError("trials_per_second must be non-negative")
    p = herald_probability(noise)
    return RateProjection(p, p * trials_per_second)
