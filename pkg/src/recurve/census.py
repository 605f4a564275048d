"""Population-count augmentation of the risk-set moments.

When the cohort is zero-truncated, its own risk sums over-represent heavy
users.  Substituting general-population counts per covariate cell and
integer age for the cohort at-risk sums recenters the estimating function
on the population target.  Counts are treated as constant within each age
year: ages in (k, k+1] read column k.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dataset import EARLY, LATE, REGIONS, SEXES
from .errors import ParseError, ValidationError
from .estimator import (
    KernelSpec,
    LocalFit,
    SolverConfig,
    provider_moments,
    estimating_function,
    solve_local,
)
from .riskset import CensusCells, RiskData, build_risk_data

DECADES = (EARLY, LATE)
N_AGES = 18

_CENSUS_COLUMNS = ("decade", "sex", "region", "age", "count")


@dataclass(frozen=True)
class CensusTable:
    """Population counts indexed by (decade, sex, region, integer age).

    ``counts`` has shape (2, 2, 3, 18) in the axis order above; fractional
    person-year counts are accepted.
    """

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=float)
        if counts.shape != (2, 2, 3, N_AGES):
            raise ValidationError(
                f"census counts must have shape (2, 2, 3, {N_AGES})"
            )
        if not np.all(np.isfinite(counts)):
            raise ValidationError("census counts must be finite")
        if np.any(counts < 0):
            raise ValidationError("census counts must be nonnegative")
        object.__setattr__(self, "counts", counts)

    def count(self, decade: str, sex: str, region: str, age: int) -> float:
        return float(
            self.counts[
                DECADES.index(decade), SEXES.index(sex), REGIONS.index(region), age
            ]
        )

    def cells(self, decades: tuple[str, ...] = DECADES) -> CensusCells:
        """Risk provider over the demographic cells of the given decades.

        Cell covariates use the standard stacked encoding, with the decade
        axis as the binary x.
        """
        rows = []
        mats = []
        for d in decades:
            di = DECADES.index(d)
            x = 1.0 if d == LATE else 0.0
            for gi, _ in enumerate(SEXES):
                for ri, _ in enumerate(REGIONS):
                    z = np.array([float(gi), float(ri == 1), float(ri == 2)])
                    rows.append(np.concatenate(([x], z, x * z)))
                    mats.append(self.counts[di, gi, ri])
        return CensusCells(np.vstack(rows), np.vstack(mats))


def ingest_census_csv(path) -> CensusTable:
    """Read population counts; the full 216-cell grid must appear once each."""
    counts = np.full((2, 2, 3, N_AGES), np.nan)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _CENSUS_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ParseError(f"missing columns: {', '.join(missing)}")
        for row_num, row in enumerate(reader, start=2):
            decade = row["decade"].strip().lower()
            sex = row["sex"].strip().upper()
            region = row["region"].strip().lower()
            if decade not in DECADES:
                raise ParseError(f"row {row_num}: unknown decade {row['decade']!r}")
            if sex not in SEXES:
                raise ParseError(f"row {row_num}: unknown sex {row['sex']!r}")
            if region not in REGIONS:
                raise ParseError(f"row {row_num}: unknown region {row['region']!r}")
            try:
                age = int(row["age"])
                count = float(row["count"])
            except (TypeError, ValueError) as exc:
                raise ParseError(f"row {row_num}: bad age or count") from exc
            if not 0 <= age < N_AGES:
                raise ParseError(f"row {row_num}: age {age} outside 0..17")
            if count < 0:
                raise ValidationError(f"row {row_num}: negative count")
            idx = (DECADES.index(decade), SEXES.index(sex), REGIONS.index(region), age)
            if not np.isnan(counts[idx]):
                raise ValidationError(
                    f"duplicate cell ({decade}, {sex}, {region}, {age})"
                )
            counts[idx] = count
    if np.any(np.isnan(counts)):
        holes = np.argwhere(np.isnan(counts))
        names = [
            f"({DECADES[d]}, {SEXES[g]}, {REGIONS[r]}, {k})"
            for d, g, r, k in holes[:5]
        ]
        raise ValidationError(
            f"{holes.shape[0]} missing census cells, e.g. {', '.join(names)}"
        )
    return CensusTable(counts=counts)


def export_census_csv(table: CensusTable, path) -> None:
    """Write counts in the ingest schema; round-trips through ingest."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CENSUS_COLUMNS)
        for di, d in enumerate(DECADES):
            for gi, g in enumerate(SEXES):
                for ri, r in enumerate(REGIONS):
                    for age in range(N_AGES):
                        value = table.counts[di, gi, ri, age]
                        text = repr(int(value)) if value == int(value) else repr(value)
                        writer.writerow([d, g, r, age, text])


def _as_cells(census) -> CensusCells:
    if isinstance(census, CensusCells):
        return census
    if isinstance(census, CensusTable):
        return census.cells()
    raise ValidationError("census must be a CensusTable or CensusCells")


def s_moments_census(phi, u: float, a: float, census):
    """Population-count moments S0, S1, S2 at age u, expansion point a."""
    if not 0.0 < u < 18.0:
        raise ValidationError(f"age {u} outside (0, 18)")
    return provider_moments(phi, u, a, _as_cells(census))


def estimating_function_population(phi, a: float, cohort: RiskData, census, spec: KernelSpec):
    """Score with cohort event terms centered by census moments."""
    data = cohort.with_provider(_as_cells(census))
    return estimating_function(phi, a, data, spec)


def solve_local_population(
    a: float,
    cohort: RiskData,
    census,
    spec: KernelSpec,
    cfg: SolverConfig | None = None,
    phi0=None,
    active=None,
    offset_fn=None,
) -> LocalFit:
    """Local solve with census centering; variance from event-side scores."""
    data = cohort.with_provider(_as_cells(census))
    return solve_local(a, data, spec, cfg, phi0=phi0, active=active, offset_fn=offset_fn)


@dataclass(frozen=True)
class AcReport:
    """Comparison of census counts against cohort at-risk counts.

    ``count_violations`` lists cells where the census count falls below the
    cohort's own at-risk count; ``constancy_violations`` lists cells whose
    cohort at-risk count moves more than the threshold fraction within one
    age year, undermining the counts-constant-within-age-year approximation.
    """

    count_violations: tuple = ()
    constancy_violations: tuple = ()
    threshold: float = 0.1

    @property
    def ok(self) -> bool:
        return not self.count_violations and not self.constancy_violations

    def summary(self) -> str:
        lines = [
            f"census check: {len(self.count_violations)} undercount cells, "
            f"{len(self.constancy_violations)} constancy violations "
            f"(threshold {self.threshold:g})"
        ]
        for d, g, r, k, m, c in self.count_violations[:10]:
            lines.append(
                f"  undercount ({d}, {g}, {r}, age {k}): census {m:g} < cohort {c:g}"
            )
        for d, g, r, k, spread in self.constancy_violations[:10]:
            lines.append(
                f"  within-year swing ({d}, {g}, {r}, age {k}): {spread:.1%}"
            )
        return "\n".join(lines)


_PROBES = (0.25, 0.5, 0.75)


def validate_ac(census: CensusTable, cohort, threshold: float = 0.1) -> AcReport:
    """Report-only check of the census-augmentation assumptions."""
    if not isinstance(cohort, RiskData):
        cohort = build_risk_data(cohort)
    provider = cohort.provider
    cells = census.cells()
    # match cohort covariate cells to census cells by their encoded vectors
    cov_rows = {tuple(v): i for i, v in enumerate(provider.covariates)}
    count_bad = []
    const_bad = []
    for ci, v in enumerate(cells.covariates):
        cohort_cell = cov_rows.get(tuple(v))
        d = DECADES[0] if v[0] == 0 else DECADES[1]
        g = SEXES[int(v[1])]
        r = REGIONS[1] if v[2] else (REGIONS[2] if v[3] else REGIONS[0])
        for k in range(N_AGES):
            probes = np.array([k + frac for frac in _PROBES])
            if cohort_cell is None:
                at_risk = np.zeros(len(_PROBES))
            else:
                at_risk = provider.weights_at(probes)[:, cohort_cell]
            peak = float(at_risk.max())
            m = cells.counts[ci, k]
            if m + 1e-9 < peak:
                count_bad.append((d, g, r, k, m, peak))
            if peak > 0:
                spread = float((at_risk.max() - at_risk.min()) / at_risk.mean())
                if spread > threshold:
                    const_bad.append((d, g, r, k, spread))
    return AcReport(
        count_violations=tuple(count_bad),
        constancy_violations=tuple(const_bad),
        threshold=threshold,
    )
