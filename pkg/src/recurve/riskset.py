"""Shared risk-set engine behind the estimating equations.

Individual (possibly pseudo-) records are reduced to weighted age intervals
grouped into cells of identical covariate vectors, so risk-set moments at an
age cost one weighted lookup per cell.  Events are kept as flat arrays with
a pointer to their covariate row and originating unit.  The same event
arrays can be paired with either an individual-level risk provider or a
population-count provider.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .birthdates import DEFAULT_K, expand_missing
from .dataset import COEF_NAMES, CohortDataset, censoring_interval, encode
from .errors import (
    EmptyIntervalError,
    EmptyPopulationError,
    EmptyRiskSetError,
    ValidationError,
)


@dataclass(frozen=True)
class EventArrays:
    """Flat event-side arrays, sorted by age.

    ``cell`` indexes ``vmat`` rows; ``unit`` indexes original records so
    per-unit scores can be aggregated for the robust variance.
    """

    age: np.ndarray
    w: np.ndarray
    cell: np.ndarray
    unit: np.ndarray
    vmat: np.ndarray
    n_units: int

    @property
    def vrows(self) -> np.ndarray:
        """Covariate row for every event, shape (n_events, p)."""
        return self.vmat[self.cell]

    def window(self, lo: float, hi: float) -> slice:
        """Index slice of events with lo < age < hi (ages are sorted)."""
        i = int(np.searchsorted(self.age, lo, side="right"))
        j = int(np.searchsorted(self.age, hi, side="left"))
        return slice(i, j)


class SegmentRisk:
    """Weighted at-risk totals per covariate cell from age intervals.

    Each contributing interval (lo, hi] with weight w adds w to its cell's
    total at ages u with lo < u <= hi.  Lookup uses sorted endpoints and
    weight prefix sums.
    """

    empty_error = EmptyRiskSetError

    def __init__(self, covariates: np.ndarray, cells: list[tuple[np.ndarray, np.ndarray, np.ndarray]]):
        self.covariates = np.asarray(covariates, dtype=float)
        self._cells = []
        lo_min, hi_max = np.inf, -np.inf
        for lo, hi, w in cells:
            order_lo = np.argsort(lo, kind="stable")
            order_hi = np.argsort(hi, kind="stable")
            lo_sorted = lo[order_lo]
            hi_sorted = hi[order_hi]
            cum_lo = np.concatenate(([0.0], np.cumsum(w[order_lo])))
            cum_hi = np.concatenate(([0.0], np.cumsum(w[order_hi])))
            self._cells.append((lo_sorted, hi_sorted, cum_lo, cum_hi))
            if lo.size:
                lo_min = min(lo_min, float(lo.min()))
                hi_max = max(hi_max, float(hi.max()))
        self._bounds = (lo_min, hi_max)

    @property
    def n_cells(self) -> int:
        return len(self._cells)

    def weights_at(self, u) -> np.ndarray:
        """Total at-risk weight per cell at each age; shape (len(u), n_cells)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty((u.size, self.n_cells))
        for c, (lo_sorted, hi_sorted, cum_lo, cum_hi) in enumerate(self._cells):
            started = cum_lo[np.searchsorted(lo_sorted, u, side="left")]
            ended = cum_hi[np.searchsorted(hi_sorted, u, side="left")]
            out[:, c] = started - ended
        return out

    def support_bounds(self) -> tuple[float, float]:
        """(earliest interval start, latest interval end) across all cells."""
        return self._bounds


class CensusCells:
    """At-risk totals taken from population counts by integer age.

    ``counts[c, k]`` is the population of covariate cell c at ages in
    (k, k+1]; fractional person-year counts are allowed.
    """

    empty_error = EmptyPopulationError

    def __init__(self, covariates: np.ndarray, counts: np.ndarray):
        covariates = np.asarray(covariates, dtype=float)
        counts = np.asarray(counts, dtype=float)
        if counts.ndim != 2 or counts.shape[0] != covariates.shape[0]:
            raise ValidationError("counts must be (n_cells, n_ages) aligned with covariates")
        if np.any(counts < 0):
            raise ValidationError("population counts must be nonnegative")
        self.covariates = covariates
        self.counts = counts

    @property
    def n_cells(self) -> int:
        return self.counts.shape[0]

    def weights_at(self, u) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        # ages in (k, k+1] map to column k; integer ages belong to k-1
        cols = np.ceil(u).astype(int) - 1
        cols = np.clip(cols, 0, self.counts.shape[1] - 1)
        return self.counts[:, cols].T

    def support_bounds(self) -> tuple[float, float]:
        totals = self.counts.sum(axis=0)
        nz = np.nonzero(totals)[0]
        if nz.size == 0:
            raise EmptyPopulationError("census has no population at any age")
        return float(nz[0]), float(nz[-1] + 1)


@dataclass(frozen=True)
class RiskData:
    """Event arrays plus a risk provider, ready for estimation."""

    events: EventArrays
    provider: object
    coef_names: tuple[str, ...]

    @property
    def n_units(self) -> int:
        return self.events.n_units

    def with_provider(self, provider) -> "RiskData":
        """Same events centered against a different risk provider."""
        return RiskData(events=self.events, provider=provider, coef_names=self.coef_names)


def default_design(record, birth_ordinal: float):
    """One epoch spanning the record's whole risk interval."""
    c_left, c_right = censoring_interval(record, birth_ordinal)
    return [(c_left, c_right, encode(record).stacked())]


def build_risk_data(
    dataset: CohortDataset,
    design=None,
    coef_names: tuple[str, ...] = COEF_NAMES,
    k_missing: int = DEFAULT_K,
    seed: int = 0,
) -> RiskData:
    """Reduce a cohort to event arrays and a segment risk provider.

    ``design(record, birth_ordinal)`` returns [(lo, hi, V), ...] epochs that
    partition the record's risk interval by covariate value; the default is
    a single epoch with the dummy encoding.  Records without a birthdate are
    expanded into ``k_missing`` pseudo-records of weight 1/k_missing with
    birthdates drawn from their support; draws with an empty risk interval
    contribute nothing and are not renormalized.
    """
    if design is None:
        design = default_design

    cell_index: dict[bytes, int] = {}
    cell_rows: list[np.ndarray] = []
    cell_lo: list[list[float]] = []
    cell_hi: list[list[float]] = []
    cell_w: list[list[float]] = []

    ev_age: list[float] = []
    ev_w: list[float] = []
    ev_cell: list[int] = []
    ev_unit: list[int] = []

    def cell_of(v: np.ndarray) -> int:
        key = np.asarray(v, dtype=float).tobytes()
        idx = cell_index.get(key)
        if idx is None:
            idx = len(cell_rows)
            cell_index[key] = idx
            cell_rows.append(np.asarray(v, dtype=float))
            cell_lo.append([])
            cell_hi.append([])
            cell_w.append([])
        return idx

    for unit, record in enumerate(dataset.subjects):
        if record.birthdate is not None:
            weight = 1.0
            births = np.array([record.birthdate.toordinal()], dtype=np.int64)
        else:
            if not record.events:
                raise ValidationError(
                    f"subject {record.id}: no birthdate and no events to bound it"
                )
            weight, births = expand_missing(
                record, record.window, k_missing, np.random.SeedSequence((seed, unit))
            )
        visit_ords = np.array([v.toordinal() for v, _ in record.events], dtype=np.int64)
        for b in births:
            try:
                epochs = design(record, float(b))
            except EmptyIntervalError:
                continue
            for lo, hi, v in epochs:
                if hi <= lo:
                    continue
                c = cell_of(v)
                cell_lo[c].append(lo)
                cell_hi[c].append(hi)
                cell_w[c].append(weight)
            if visit_ords.size:
                ages = (visit_ords - float(b)) / 365.25
                for age in ages:
                    for lo, hi, v in epochs:
                        if lo < age <= hi:
                            ev_age.append(age)
                            ev_w.append(weight)
                            ev_cell.append(cell_of(v))
                            ev_unit.append(unit)
                            break
                    # events outside every epoch are not under observation

    if not cell_rows:
        raise ValidationError("dataset produced no risk intervals")
    vmat = np.vstack(cell_rows)
    cells = [
        (np.asarray(cell_lo[c]), np.asarray(cell_hi[c]), np.asarray(cell_w[c]))
        for c in range(len(cell_rows))
    ]
    provider = SegmentRisk(vmat, cells)

    age = np.asarray(ev_age, dtype=float)
    order = np.argsort(age, kind="stable")
    events = EventArrays(
        age=age[order],
        w=np.asarray(ev_w, dtype=float)[order],
        cell=np.asarray(ev_cell, dtype=np.int32)[order],
        unit=np.asarray(ev_unit, dtype=np.int32)[order],
        vmat=vmat,
        n_units=len(dataset.subjects),
    )
    return RiskData(events=events, provider=provider, coef_names=tuple(coef_names))
