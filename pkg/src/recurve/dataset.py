"""Data model for doubly censored recurrent event cohorts.

Subjects are observed only while their calendar extraction window overlaps
ages (0, 18).  Ages are real-valued years computed as day differences over
365.25; the two-month reporting unit enters only when converting bandwidths,
grids, and baseline slopes.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyIntervalError, ParseError, ValidationError

DAYS_PER_YEAR = 365.25
AGE_CAP = 18.0
TIME_UNIT_YEARS = 1.0 / 6.0  # two months; used for reported baseline slopes

EARLY = "early"
LATE = "late"

SEXES = ("F", "M")
REGIONS = ("other", "edmonton", "calgary")

#: Order of the stacked covariate vector (x, z, x*z) with reference
#: categories female / other region / early decade.
COEF_NAMES = (
    "late",
    "male",
    "edmonton",
    "calgary",
    "late_male",
    "late_edmonton",
    "late_calgary",
)


def years_between(start: dt.date, end: dt.date) -> float:
    """Elapsed time from ``start`` to ``end`` in fractional years."""
    return (end.toordinal() - start.toordinal()) / DAYS_PER_YEAR


def _as_ordinal(day) -> float:
    """Accept a date or a raw day ordinal and return a float ordinal."""
    if isinstance(day, dt.date):
        return float(day.toordinal())
    return float(day)


@dataclass(frozen=True)
class ExtractionWindow:
    """A calendar interval [left, right] from which records were pulled."""

    left: dt.date
    right: dt.date
    label: str

    def __post_init__(self):
        if self.left >= self.right:
            raise ValidationError(
                f"window {self.label!r}: left bound {self.left} must precede "
                f"right bound {self.right}"
            )

    def contains(self, day: dt.date) -> bool:
        return self.left <= day <= self.right


@dataclass(frozen=True)
class SubjectRecord:
    """One extraction record: factor covariates, optional birthdate, events.

    ``events`` holds (visit_date, age_years_int) pairs; the integer age is
    what administrative pulls retain even when the birthdate is stripped.
    A record with no events is a presence-only row (risk-set member).
    """

    id: str
    sex: str
    region: str
    decade: str
    birthdate: dt.date | None
    events: tuple[tuple[dt.date, int], ...]
    window: ExtractionWindow

    def validate(self) -> None:
        if self.sex not in SEXES:
            raise ValidationError(f"subject {self.id}: unknown sex {self.sex!r}")
        if self.region not in REGIONS:
            raise ValidationError(f"subject {self.id}: unknown region {self.region!r}")
        if self.decade != self.window.label:
            raise ValidationError(
                f"subject {self.id}: decade {self.decade!r} does not match "
                f"window label {self.window.label!r}"
            )
        for visit, age in self.events:
            if not (0 <= age <= 17) or int(age) != age:
                raise ValidationError(
                    f"subject {self.id}: event age {age!r} outside 0..17"
                )
            if not self.window.contains(visit):
                raise ValidationError(
                    f"subject {self.id}: visit {visit} outside window "
                    f"[{self.window.left}, {self.window.right}]"
                )
            if self.birthdate is not None:
                exact = years_between(self.birthdate, visit)
                if int(np.floor(exact)) != age:
                    raise ValidationError(
                        f"subject {self.id}: visit {visit} implies age "
                        f"{int(np.floor(exact))}, recorded {age}"
                    )

    def event_ages(self, birth) -> np.ndarray:
        """Event ages in years for a given birthdate (date or ordinal)."""
        b = _as_ordinal(birth)
        return np.array(
            [(visit.toordinal() - b) / DAYS_PER_YEAR for visit, _ in self.events]
        )


@dataclass(frozen=True)
class CovariateVector:
    """Stacked design vector (x, z, x*z); x flags the late decade."""

    x: float
    z: np.ndarray
    xz: np.ndarray

    def __post_init__(self):
        if len(self.z) != 3 or len(self.xz) != 3:
            raise ValidationError("z and xz must each have length 3")
        if not np.allclose(self.xz, self.x * self.z):
            raise ValidationError("xz must equal x*z elementwise")
        if self.z[1] and self.z[2]:
            raise ValidationError("at most one region indicator may be set")

    def stacked(self) -> np.ndarray:
        return np.concatenate(([self.x], self.z, self.xz))


def encode(record: SubjectRecord) -> CovariateVector:
    """Dummy-encode factors with references female / other / early."""
    x = 1.0 if record.decade == LATE else 0.0
    z = np.array(
        [
            1.0 if record.sex == "M" else 0.0,
            1.0 if record.region == "edmonton" else 0.0,
            1.0 if record.region == "calgary" else 0.0,
        ]
    )
    return CovariateVector(x=x, z=z, xz=x * z)


def censoring_interval(record: SubjectRecord, birth) -> tuple[float, float]:
    """Age interval (c_left, c_right] during which the record is observable.

    ``birth`` may be a date or a day ordinal.  Raises EmptyIntervalError when
    the window ends before the subject is born or starts after age 18.
    """
    b = _as_ordinal(birth)
    w = record.window
    c_left = max(0.0, (w.left.toordinal() - b) / DAYS_PER_YEAR)
    c_right = min(AGE_CAP, (w.right.toordinal() - b) / DAYS_PER_YEAR)
    if c_right <= c_left:
        raise EmptyIntervalError(
            f"subject {record.id}: empty risk interval for birthdate {birth}"
        )
    return c_left, c_right


def at_risk(record: SubjectRecord, birth, u: float) -> int:
    """Indicator that the record is under observation at age u.

    The interval is open on the left and closed on the right; a degenerate
    interval yields 0 rather than an error.
    """
    if not (0.0 < u < AGE_CAP):
        raise ValueError(f"age {u} outside (0, {AGE_CAP})")
    b = _as_ordinal(birth)
    w = record.window
    c_left = max(0.0, (w.left.toordinal() - b) / DAYS_PER_YEAR)
    c_right = min(AGE_CAP, (w.right.toordinal() - b) / DAYS_PER_YEAR)
    return int(c_left < u <= c_right)


@dataclass(frozen=True)
class CohortDataset:
    """An immutable, validated collection of subject records."""

    subjects: tuple[SubjectRecord, ...]
    windows: dict[str, ExtractionWindow]
    time_unit_years: float = TIME_UNIT_YEARS
    age_cap: float = AGE_CAP

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))
        seen = set()
        for label, window in self.windows.items():
            if label != window.label:
                raise ValidationError(
                    f"window map key {label!r} does not match label {window.label!r}"
                )
        if EARLY in self.windows and LATE in self.windows:
            if self.windows[EARLY].right > self.windows[LATE].left:
                raise ValidationError("early window must end before the late one begins")
        for s in self.subjects:
            if s.id in seen:
                raise ValidationError(f"duplicate subject id {s.id!r}")
            seen.add(s.id)
            if s.decade not in self.windows:
                raise ValidationError(
                    f"subject {s.id}: decade {s.decade!r} has no extraction window"
                )
            s.validate()

    def __len__(self) -> int:
        return len(self.subjects)

    def subset(self, decade: str) -> "CohortDataset":
        """Records belonging to one extraction window."""
        kept = tuple(s for s in self.subjects if s.decade == decade)
        return CohortDataset(
            subjects=kept,
            windows={decade: self.windows[decade]},
            time_unit_years=self.time_unit_years,
            age_cap=self.age_cap,
        )


def combine(*datasets: CohortDataset) -> CohortDataset:
    """Pool datasets whose records are treated as independent units."""
    subjects: list[SubjectRecord] = []
    windows: dict[str, ExtractionWindow] = {}
    for ds in datasets:
        subjects.extend(ds.subjects)
        for label, window in ds.windows.items():
            if label in windows and windows[label] != window:
                raise ValidationError(f"conflicting definitions for window {label!r}")
            windows[label] = window
    return CohortDataset(subjects=tuple(subjects), windows=windows)


def _parse_date(text: str, row_num: int, column: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError as exc:
        raise ParseError(f"row {row_num}: bad {column} {text!r}: {exc}") from exc


_COLUMNS = ("id", "sex", "region", "decade", "birthdate", "visit_date", "age_years")


def ingest_csv(path, windows: dict[str, ExtractionWindow]) -> CohortDataset:
    """Read a cohort CSV and return a validated dataset.

    Expected columns: id, sex, region, decade, birthdate (may be empty),
    visit_date, age_years.  Rows sharing an id form one record; a row with
    empty visit fields declares a subject with no events.
    """
    rows: dict[str, dict] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in _COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise ParseError(f"missing columns: {', '.join(missing)}")
        for row_num, row in enumerate(reader, start=2):
            sid = (row["id"] or "").strip()
            if not sid:
                raise ParseError(f"row {row_num}: empty id")
            sex = row["sex"].strip().upper()
            region = row["region"].strip().lower()
            decade = row["decade"].strip().lower()
            birth_text = (row["birthdate"] or "").strip()
            birth = _parse_date(birth_text, row_num, "birthdate") if birth_text else None
            visit_text = (row["visit_date"] or "").strip()
            age_text = (row["age_years"] or "").strip()
            if visit_text or age_text:
                if not (visit_text and age_text):
                    raise ParseError(
                        f"row {row_num}: visit_date and age_years must appear together"
                    )
                visit = _parse_date(visit_text, row_num, "visit_date")
                try:
                    age = int(age_text)
                except ValueError as exc:
                    raise ParseError(f"row {row_num}: bad age_years {age_text!r}") from exc
                event = (visit, age)
            else:
                event = None
            if sid not in rows:
                rows[sid] = {
                    "sex": sex,
                    "region": region,
                    "decade": decade,
                    "birthdate": birth,
                    "events": [],
                }
                order.append(sid)
            else:
                head = rows[sid]
                if (head["sex"], head["region"], head["decade"], head["birthdate"]) != (
                    sex,
                    region,
                    decade,
                    birth,
                ):
                    raise ParseError(
                        f"row {row_num}: subject {sid} attributes differ across rows"
                    )
            if event is not None:
                rows[sid]["events"].append(event)

    subjects = []
    for sid in order:
        info = rows[sid]
        if info["decade"] not in windows:
            raise ValidationError(
                f"subject {sid}: decade {info['decade']!r} has no extraction window"
            )
        subjects.append(
            SubjectRecord(
                id=sid,
                sex=info["sex"],
                region=info["region"],
                decade=info["decade"],
                birthdate=info["birthdate"],
                events=tuple(sorted(info["events"])),
                window=windows[info["decade"]],
            )
        )
    return CohortDataset(subjects=tuple(subjects), windows=dict(windows))


def export_csv(dataset: CohortDataset, path) -> None:
    """Write a dataset in the ingest schema; round-trips through ingest_csv."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_COLUMNS)
        for s in dataset.subjects:
            birth = s.birthdate.isoformat() if s.birthdate is not None else ""
            if s.events:
                for visit, age in sorted(s.events):
                    writer.writerow(
                        [s.id, s.sex, s.region, s.decade, birth, visit.isoformat(), age]
                    )
            else:
                writer.writerow([s.id, s.sex, s.region, s.decade, birth, "", ""])
