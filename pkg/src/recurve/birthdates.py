"""Uniform-birthdate augmentation for records with the origin stripped.

When a record keeps only integer event ages, each event pins the birthdate
to a year-long half-open interval; intersecting those with the eligibility
window gives the support of the conditional birthdate distribution, taken
uniform over integer days.  Sampling K pseudo-birthdates and averaging the
at-risk indicator yields a smoothed risk process in [0, 1].
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .dataset import AGE_CAP, DAYS_PER_YEAR, ExtractionWindow, SubjectRecord, at_risk
from .errors import InconsistentRecordError, ValidationError

DEFAULT_K = 100


@dataclass(frozen=True)
class BirthdateSupport:
    """Support of the conditional birthdate law, in day ordinals.

    ``intervals`` holds half-open (lo, hi] float intervals; the admissible
    birthdates are the integer day ordinals they contain.
    """

    intervals: tuple[tuple[float, float], ...]

    def days(self) -> np.ndarray:
        """All admissible integer day ordinals, ascending."""
        out = []
        for lo, hi in self.intervals:
            first = math.floor(lo) + 1
            last = math.floor(hi)
            if last >= first:
                out.append(np.arange(first, last + 1))
        if not out:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(out))

    def dates(self) -> list[dt.date]:
        return [dt.date.fromordinal(int(d)) for d in self.days()]


def birthdate_support(s: SubjectRecord, w: ExtractionWindow) -> BirthdateSupport:
    """Intersect eligibility and per-event year intervals for the birthdate.

    Eligibility requires birth within (w.left − 18y, w.right]; each event at
    date T with recorded integer age A requires birth in (T − (A+1)y, T − Ay]
    so that the floored age at the visit equals A.
    """
    if s.birthdate is not None:
        raise ValidationError(f"subject {s.id}: birthdate already known")
    if not s.events:
        raise ValidationError(f"subject {s.id}: no events to bound the birthdate")
    lo = w.left.toordinal() - AGE_CAP * DAYS_PER_YEAR
    hi = float(w.right.toordinal())
    for visit, age in s.events:
        t = visit.toordinal()
        lo = max(lo, t - (age + 1) * DAYS_PER_YEAR)
        hi = min(hi, t - age * DAYS_PER_YEAR)
    if math.floor(hi) < math.floor(lo) + 1:
        raise InconsistentRecordError(
            f"subject {s.id}: event ages admit no common birthdate"
        )
    return BirthdateSupport(intervals=((lo, hi),))


def sample_birthdates(supp: BirthdateSupport, K: int, seed) -> list[dt.date]:
    """Draw K i.i.d. birthdates uniformly over the support's integer days."""
    if K < 1:
        raise ValueError("K must be at least 1")
    days = supp.days()
    if days.size == 0:
        raise ValidationError("empty birthdate support")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, days.size, size=K)
    return [dt.date.fromordinal(int(days[i])) for i in picks]


def smoothed_at_risk(s: SubjectRecord, samples, u: float) -> float:
    """Average at-risk indicator over sampled birthdates; lies in [0, 1]."""
    if not samples:
        raise ValidationError("no birthdate samples supplied")
    hits = sum(at_risk(s, b, u) for b in samples)
    return hits / len(samples)


def expand_missing(s: SubjectRecord, w: ExtractionWindow, K: int, seed):
    """Pseudo-records for a birthdate-free subject: (weight, birth ordinals).

    Each of the K sampled birthdates contributes a copy of the record with
    weight 1/K; event ages are recomputed per draw by the caller.
    """
    supp = birthdate_support(s, w)
    births = sample_birthdates(supp, K, seed)
    ordinals = np.array([b.toordinal() for b in births], dtype=np.int64)
    return 1.0 / K, ordinals
