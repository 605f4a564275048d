"""Monte Carlo harness for the window-extraction analysis designs.

Synthetic subjects are born across three decades, experience recurrent
events on ages (0, 18] from a proportional-rates truth, and are then pulled
into administrative extracts: per-decade samples with and without the
at-least-one-event requirement, a linked two-decade sample, and the full
sample of everyone under observation across the combined window.  Each
replicate re-fits a battery of analysis designs on those extracts; the
study aggregates sample means, sample SEs, and the two estimated-SE
flavours across replicates.

Analysis identifiers follow the family.setting.index convention: the A
family targets the event-conditioned cohorts themselves, the B family
targets the whole population (full samples, census-based denominators).
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import datetime as dt
import math
import os
from dataclasses import dataclass

import numpy as np

from .birthdates import DEFAULT_K
from .census import CensusTable, export_census_csv
from .dataset import (
    DAYS_PER_YEAR,
    EARLY,
    LATE,
    TIME_UNIT_YEARS,
    CohortDataset,
    ExtractionWindow,
    SubjectRecord,
    censoring_interval,
    combine,
    export_csv,
)
from .errors import RecurveError, ValidationError
from .estimator import KernelSpec, SolverConfig
from .models import ModelSpec, fit_model, stratified_fit
from .riskset import build_risk_data

#: Calendar extraction windows of the two administrative pulls.
WINDOW_EARLY = ExtractionWindow(dt.date(2002, 4, 1), dt.date(2010, 3, 31), EARLY)
WINDOW_LATE = ExtractionWindow(dt.date(2010, 4, 1), dt.date(2017, 3, 31), LATE)

UNION = "union"
#: The linked sample and the full sample span both pulls as one window.
WINDOW_UNION = ExtractionWindow(WINDOW_EARLY.left, WINDOW_LATE.right, UNION)

BIRTH_FIRST = dt.date(1984, 4, 1)
BIRTH_LAST = dt.date(2017, 3, 31)

#: Setting 1: the time-varying exposure switches on at each subject's age
#: on this date (the opening of the late window).
EXPOSURE_CHANGE_DATE = WINDOW_LATE.left
#: Setting 2: the fixed exposure flags subjects born on/after this date.
GENERATION_CUT_DATE = dt.date(2001, 3, 31)

P_MALE = 0.6

#: Last representable event day: ages are stored day-grained and capped so
#: the integer age at the visit stays within 0..17.
MAX_EVENT_DAY = int(math.ceil(18.0 * DAYS_PER_YEAR)) - 1

#: Column blocks of the stacked design used by the combined fits; region
#: columns are degenerate in simulated data and stay inactive.
COMBINED_BLOCKS = {"alpha": (0,), "beta": (1,), "gamma": (4,)}
REDUCED_BLOCKS = {"beta": (1,)}
STRAT_PARAMS = ("beta_early", "beta_late", "lambda0_early", "lambda0_late")
FULL_PARAMS = ("alpha", "beta", "gamma", "lambda0")
REDUCED_PARAMS = ("beta", "lambda0")


@dataclass(frozen=True)
class Truth:
    """Generative parameters; lambda0 is per two-month reporting unit."""

    lambda0: float
    alpha: float
    beta: float
    gamma: float


@dataclass(frozen=True)
class SimConfig:
    """Study configuration: scenario, scale, seeding, extraction fidelity."""

    setting: int = 1
    case: int = 2
    n: int = 50_000
    reps: int = 300
    seed: int = 20170401
    threads: int = 1
    degrade_early: bool = True
    k_missing: int = DEFAULT_K
    analyses: tuple[str, ...] = ()

    def __post_init__(self):
        if self.setting not in (1, 2):
            raise ValidationError("setting must be 1 or 2")
        if self.case not in (1, 2):
            raise ValidationError("case must be 1 or 2")
        if self.n < 1 or self.reps < 1:
            raise ValidationError("n and reps must be positive")
        if self.threads < 1:
            raise ValidationError("threads must be positive")
        object.__setattr__(self, "analyses", tuple(self.analyses))
        known = available_analyses(self.setting)
        for aid in self.analyses:
            if aid not in known:
                raise ValidationError(
                    f"unknown analysis {aid!r}; expected one of {', '.join(known)}"
                )

    def truth(self) -> Truth:
        if self.setting == 2:
            return Truth(lambda0=0.002, alpha=0.6, beta=0.7, gamma=0.35)
        if self.case == 1:
            return Truth(lambda0=0.002, alpha=0.0, beta=0.7, gamma=0.0)
        return Truth(lambda0=0.002, alpha=0.3, beta=0.7, gamma=0.15)

    def selected_analyses(self) -> tuple[str, ...]:
        return self.analyses or available_analyses(self.setting)


def available_analyses(setting: int) -> tuple[str, ...]:
    return tuple(
        [f"A.{setting}.{k}" for k in range(1, 4)]
        + [f"B.{setting}.{k}" for k in range(1, 7)]
    )


@dataclass(frozen=True)
class Population:
    """One synthetic draw: births, sex flags, and per-subject event days."""

    birth: np.ndarray  # int64 birth ordinals
    male: np.ndarray  # int8 0/1
    event_days: tuple[np.ndarray, ...]  # per subject, int64 days since birth


def generate_population(cfg: SimConfig, rng: np.random.Generator) -> Population:
    """Draw births, sexes, and recurrent event ages from the truth model.

    Events follow a piecewise-constant rate on age with a single change
    point (setting 1: the subject's age when the late window opens;
    setting 2: no change, the exposure is the birth-generation flag), drawn
    by inverting the cumulative rate.  Event ages are stored as whole days
    since birth, rounded up, and capped to keep integer ages within 0..17.
    """
    truth = cfg.truth()
    n = cfg.n
    birth = rng.integers(
        BIRTH_FIRST.toordinal(), BIRTH_LAST.toordinal() + 1, size=n, dtype=np.int64
    )
    male = (rng.random(n) < P_MALE).astype(np.int8)

    per_year = truth.lambda0 / TIME_UNIT_YEARS
    z = male.astype(float)
    if cfg.setting == 1:
        change_age = (EXPOSURE_CHANGE_DATE.toordinal() - birth) / DAYS_PER_YEAR
        t1 = np.clip(change_age, 0.0, 18.0)
    else:
        gen = (birth >= GENERATION_CUT_DATE.toordinal()).astype(float)
        t1 = np.where(gen > 0, 0.0, 18.0)
    rate0 = per_year * np.exp(truth.beta * z)
    rate1 = per_year * np.exp(truth.alpha + (truth.beta + truth.gamma) * z)
    total = rate0 * t1 + rate1 * (18.0 - t1)

    counts = rng.poisson(total)
    owner = np.repeat(np.arange(n), counts)
    u = rng.uniform(0.0, 1.0, size=owner.size) * total[owner]
    knee = (rate0 * t1)[owner]
    ages = np.where(
        u <= knee,
        u / rate0[owner],
        t1[owner] + (u - knee) / rate1[owner],
    )
    days = np.ceil(ages * DAYS_PER_YEAR).astype(np.int64)
    keep = days <= MAX_EVENT_DAY
    owner = owner[keep]
    days = days[keep]

    order = np.argsort(owner, kind="stable")
    owner = owner[order]
    days = days[order]
    bounds = np.searchsorted(owner, np.arange(n + 1))
    event_days = tuple(
        np.sort(days[bounds[i] : bounds[i + 1]]) for i in range(n)
    )
    return Population(birth=birth, male=male, event_days=event_days)


@dataclass(frozen=True)
class Cohorts:
    """The six extraction samples drawn from one population replicate."""

    full: CohortDataset
    early: CohortDataset
    late: CohortDataset
    early1: CohortDataset
    late1: CohortDataset
    union1: CohortDataset


def _record(pop: Population, i: int, suffix: str, window: ExtractionWindow,
            days: np.ndarray, keep_birth: bool) -> SubjectRecord:
    birth = int(pop.birth[i])
    events = tuple(
        (dt.date.fromordinal(birth + int(d)), int(d / DAYS_PER_YEAR)) for d in days
    )
    return SubjectRecord(
        id=f"s{i}{suffix}",
        sex="M" if pop.male[i] else "F",
        region="other",
        decade=window.label,
        birthdate=dt.date.fromordinal(birth) if keep_birth else None,
        events=events,
        window=window,
    )


def _window_mask(pop: Population, window: ExtractionWindow) -> np.ndarray:
    """Subjects whose age interval overlaps the window (at-risk at all)."""
    wl, wr = window.left.toordinal(), window.right.toordinal()
    c_left = np.maximum(0.0, (wl - pop.birth) / DAYS_PER_YEAR)
    c_right = np.minimum(18.0, (wr - pop.birth) / DAYS_PER_YEAR)
    return c_right > c_left


def _events_in(pop: Population, i: int, window: ExtractionWindow) -> np.ndarray:
    days = pop.event_days[i]
    visit = pop.birth[i] + days
    keep = (visit >= window.left.toordinal()) & (visit <= window.right.toordinal())
    return days[keep]


def extract_cohorts(cfg: SimConfig, pop: Population) -> Cohorts:
    """Build the six extraction samples from one population draw.

    Per-decade samples come in an untruncated form (every subject at risk
    in the window, true birthdates) and an event-conditioned form (only
    subjects with a window event; early birthdates stripped when the
    extraction is degraded).  The linked sample conditions on an event
    anywhere across both windows and keeps identities; the full sample is
    every subject at risk during either pull, observed over the combined
    window with no event requirement.
    """
    n = cfg.n
    early_ok = _window_mask(pop, WINDOW_EARLY)
    late_ok = _window_mask(pop, WINDOW_LATE)
    union_ok = _window_mask(pop, WINDOW_UNION)

    full, early, late, early1, late1, union1 = [], [], [], [], [], []
    for i in range(n):
        if union_ok[i]:
            u_all = _events_in(pop, i, WINDOW_UNION)
            full.append(_record(pop, i, "", WINDOW_UNION, u_all, True))
        e_days = _events_in(pop, i, WINDOW_EARLY) if early_ok[i] else None
        l_days = _events_in(pop, i, WINDOW_LATE) if late_ok[i] else None
        if e_days is not None:
            early.append(_record(pop, i, "e", WINDOW_EARLY, e_days, True))
            if e_days.size:
                early1.append(
                    _record(
                        pop, i, "E", WINDOW_EARLY, e_days,
                        keep_birth=not cfg.degrade_early,
                    )
                )
        if l_days is not None:
            late.append(_record(pop, i, "l", WINDOW_LATE, l_days, True))
            if l_days.size:
                late1.append(_record(pop, i, "L", WINDOW_LATE, l_days, True))
        if (e_days is not None and e_days.size) or (l_days is not None and l_days.size):
            u_days = _events_in(pop, i, WINDOW_UNION)
            union1.append(_record(pop, i, "u", WINDOW_UNION, u_days, True))

    return Cohorts(
        full=CohortDataset(tuple(full), {UNION: WINDOW_UNION}),
        early=CohortDataset(tuple(early), {EARLY: WINDOW_EARLY}),
        late=CohortDataset(tuple(late), {LATE: WINDOW_LATE}),
        early1=CohortDataset(tuple(early1), {EARLY: WINDOW_EARLY}),
        late1=CohortDataset(tuple(late1), {LATE: WINDOW_LATE}),
        union1=CohortDataset(tuple(union1), {UNION: WINDOW_UNION}),
    )


def strip_birthdates(dataset: CohortDataset) -> CohortDataset:
    """Copy of the dataset with every birthdate removed (integer ages stay)."""
    subjects = tuple(
        dataclasses.replace(s, birthdate=None) for s in dataset.subjects
    )
    return CohortDataset(subjects, dict(dataset.windows))


def census_from_population(
    pop: Population, split: str = "decade"
) -> CensusTable:
    """Exact person-year counts by cell and integer age from the population.

    ``split="decade"`` counts person-years inside each extraction window
    separately (the decade axis is the calendar pull).  ``split="generation"``
    repurposes the decade axis as the birth-generation flag and counts
    person-years over the union window.  Counts land in the female/male rows
    of the reference region.
    """
    counts = np.zeros((2, 2, 3, 18))
    ages = np.arange(18.0)
    if split == "decade":
        plan = [(0, WINDOW_EARLY, None), (1, WINDOW_LATE, None)]
        group = np.zeros(pop.birth.size, dtype=np.int64)
    elif split == "generation":
        plan = [(0, WINDOW_UNION, 0), (1, WINDOW_UNION, 1)]
        group = (pop.birth >= GENERATION_CUT_DATE.toordinal()).astype(np.int64)
    else:
        raise ValidationError("split must be 'decade' or 'generation'")

    for slot, window, want in plan:
        wl, wr = window.left.toordinal(), window.right.toordinal()
        c_left = np.maximum(0.0, (wl - pop.birth) / DAYS_PER_YEAR)
        c_right = np.minimum(18.0, (wr - pop.birth) / DAYS_PER_YEAR)
        sel = c_right > c_left
        if want is not None:
            sel = sel & (group == want)
        cl = c_left[sel][:, None]
        cr = c_right[sel][:, None]
        overlap = np.clip(
            np.minimum(cr, ages[None, :] + 1.0) - np.maximum(cl, ages[None, :]),
            0.0,
            None,
        )
        m = pop.male[sel]
        counts[slot, 0, 0, :] += overlap[m == 0].sum(axis=0)
        counts[slot, 1, 0, :] += overlap[m == 1].sum(axis=0)
    return CensusTable(counts=counts)


def true_model_design(setting: int):
    """Design callback encoding the generative exposure on the x slot.

    Setting 1 splits the observable age interval at the subject's age when
    the late window opens (x switches 0 to 1); setting 2 uses a single
    interval with x fixed at the birth-generation flag.  z keeps the
    standard sex/region encoding; interactions are x*z.
    """

    def design(record: SubjectRecord, birth) -> list[tuple[float, float, np.ndarray]]:
        c_left, c_right = censoring_interval(record, birth)
        z = np.array(
            [
                1.0 if record.sex == "M" else 0.0,
                1.0 if record.region == "edmonton" else 0.0,
                1.0 if record.region == "calgary" else 0.0,
            ]
        )
        zero = np.concatenate(([0.0], z, 0.0 * z))
        one = np.concatenate(([1.0], z, z))
        b = float(birth) if not isinstance(birth, dt.date) else float(birth.toordinal())
        if setting == 1:
            t = (EXPOSURE_CHANGE_DATE.toordinal() - b) / DAYS_PER_YEAR
            t = min(max(t, 0.0), 18.0)
            return [
                (c_left, min(c_right, t), zero),
                (max(c_left, t), c_right, one),
            ]
        flag = b >= float(GENERATION_CUT_DATE.toordinal())
        return [(c_left, c_right, one if flag else zero)]

    return design


@dataclass(frozen=True)
class AnalysisResult:
    """One analysis on one replicate: (param, estimate, se_model, se_robust)."""

    rows: tuple[tuple[str, float, float, float], ...]
    converged: bool
    note: str = ""


def analysis_params(aid: str, cfg: SimConfig) -> tuple[str, ...]:
    family, _, index = _parse_aid(aid, cfg)
    if (family, index) in (("A", 1), ("B", 1), ("B", 2)):
        return STRAT_PARAMS
    if (family, index) == ("A", 3) and cfg.setting == 1 and cfg.case == 1:
        return REDUCED_PARAMS
    return FULL_PARAMS


def _parse_aid(aid: str, cfg: SimConfig) -> tuple[str, int, int]:
    parts = aid.split(".")
    if (
        len(parts) != 3
        or parts[0] not in ("A", "B")
        or not parts[1].isdigit()
        or not parts[2].isdigit()
    ):
        raise ValidationError(f"malformed analysis id {aid!r}")
    family, setting, index = parts[0], int(parts[1]), int(parts[2])
    if setting != cfg.setting:
        raise ValidationError(
            f"analysis {aid} is for setting {setting}, run is setting {cfg.setting}"
        )
    if (family == "A" and index not in (1, 2, 3)) or (
        family == "B" and index not in range(1, 7)
    ):
        raise ValidationError(f"unknown analysis id {aid!r}")
    return family, setting, index


class _RepContext:
    """Lazily built per-replicate inputs shared across analyses."""

    def __init__(self, cfg: SimConfig, pop: Population, ab_seed: int):
        self.cfg = cfg
        self.pop = pop
        self.ab_seed = ab_seed
        self.cohorts = extract_cohorts(cfg, pop)
        self.solver = SolverConfig()
        self.kernel = KernelSpec()
        self._census: dict[str, CensusTable] = {}
        self._combined: dict[str, CohortDataset] = {}

    def census(self, split: str) -> CensusTable:
        if split not in self._census:
            self._census[split] = census_from_population(self.pop, split)
        return self._census[split]

    def combined(self, which: str) -> CohortDataset:
        if which not in self._combined:
            if which == "truncated":
                self._combined[which] = combine(self.cohorts.early1, self.cohorts.late1)
            else:
                self._combined[which] = combine(self.cohorts.early, self.cohorts.late)
        return self._combined[which]


def _coef_row(name: str, fit, block: str) -> tuple[str, float, float, float]:
    g = fit.constant_coefs[block]
    se_model = (
        float(np.sqrt(g.cov_model[0, 0])) if g.cov_model is not None else np.nan
    )
    return (name, float(g.theta[0]), se_model, float(np.sqrt(g.cov[0, 0])))


def _rate(fit) -> float:
    return fit.baseline.per_unit_rate() if fit.baseline is not None else np.nan


def _strat_rows(fits) -> tuple[tuple[str, float, float, float], ...]:
    early_fit, late_fit = fits
    rows = [
        _coef_row("beta_early", early_fit, "beta"),
        _coef_row("beta_late", late_fit, "beta"),
        ("lambda0_early", _rate(early_fit), np.nan, np.nan),
        ("lambda0_late", _rate(late_fit), np.nan, np.nan),
    ]
    return tuple(rows)


def _combined_rows(fit, reduced: bool) -> tuple[tuple[str, float, float, float], ...]:
    blocks = ("beta",) if reduced else ("alpha", "beta", "gamma")
    rows = [_coef_row(block, fit, block) for block in blocks]
    rows.append(("lambda0", _rate(fit), np.nan, np.nan))
    return tuple(rows)


def run_analysis(aid: str, ctx: _RepContext) -> AnalysisResult:
    """Fit one analysis design on one replicate's extractions."""
    cfg = ctx.cfg
    family, _, index = _parse_aid(aid, cfg)
    spec_full = ModelSpec(alpha="C", beta="C", gamma="C")
    common = dict(cfg=ctx.solver, kernel=ctx.kernel)

    if (family, index) in (("A", 1), ("B", 1), ("B", 2)):
        if (family, index) == ("A", 1):
            data, census = ctx.combined("truncated"), None
        elif (family, index) == ("B", 1):
            data, census = ctx.combined("untruncated"), None
        else:
            data, census = ctx.combined("truncated"), ctx.census("decade")
        fits = stratified_fit(
            data, census=census, varying=False,
            k_missing=cfg.k_missing, seed=ctx.ab_seed, **common,
        )
        ok = all(f.converged for f in fits)
        note = "; ".join(filter(None, (f.message for f in fits)))
        return AnalysisResult(rows=_strat_rows(fits), converged=ok, note=note)

    if (family, index) == ("A", 2):
        fit = fit_model(
            spec_full, ctx.combined("truncated"), block_columns=COMBINED_BLOCKS,
            k_missing=cfg.k_missing, seed=ctx.ab_seed, **common,
        )
        return AnalysisResult(_combined_rows(fit, False), fit.converged, fit.message)

    if (family, index) == ("B", 3):
        fit = fit_model(
            spec_full, ctx.combined("untruncated"), block_columns=COMBINED_BLOCKS,
            k_missing=cfg.k_missing, seed=ctx.ab_seed, **common,
        )
        return AnalysisResult(_combined_rows(fit, False), fit.converged, fit.message)

    if (family, index) == ("B", 4):
        fit = fit_model(
            dataclasses.replace(spec_full, target="population"),
            ctx.combined("truncated"),
            census=ctx.census("decade"),
            block_columns=COMBINED_BLOCKS,
            k_missing=cfg.k_missing, seed=ctx.ab_seed, **common,
        )
        return AnalysisResult(_combined_rows(fit, False), fit.converged, fit.message)

    # True-exposure designs on the linked or full samples.
    design = true_model_design(cfg.setting)
    if (family, index) == ("A", 3):
        dataset = ctx.cohorts.union1
        reduced = cfg.setting == 1 and cfg.case == 1
        risk = build_risk_data(dataset, design=design)
        spec = (
            ModelSpec(alpha=None, beta="C", gamma=None)
            if reduced
            else spec_full
        )
        fit = fit_model(
            spec, risk,
            block_columns=REDUCED_BLOCKS if reduced else COMBINED_BLOCKS,
            **common,
        )
        return AnalysisResult(_combined_rows(fit, reduced), fit.converged, fit.message)

    if (family, index) == ("B", 5):
        risk = build_risk_data(ctx.cohorts.full, design=design)
        fit = fit_model(spec_full, risk, block_columns=COMBINED_BLOCKS, **common)
        return AnalysisResult(_combined_rows(fit, False), fit.converged, fit.message)

    if (family, index) == ("B", 6):
        risk = build_risk_data(ctx.cohorts.union1, design=design)
        split = "decade" if cfg.setting == 1 else "generation"
        fit = fit_model(
            dataclasses.replace(spec_full, target="population"),
            risk,
            census=ctx.census(split),
            block_columns=COMBINED_BLOCKS,
            **common,
        )
        return AnalysisResult(_combined_rows(fit, False), fit.converged, fit.message)

    raise ValidationError(f"unknown analysis id {aid!r}")


def run_replicate(cfg: SimConfig, rep: int) -> dict[str, AnalysisResult]:
    """Generate one population replicate and run the selected analyses."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep,)))
    ab_seed = int(
        np.random.SeedSequence(cfg.seed, spawn_key=(rep, 1)).generate_state(1)[0]
    )
    pop = generate_population(cfg, rng)
    ctx = _RepContext(cfg, pop, ab_seed)
    out: dict[str, AnalysisResult] = {}
    for aid in cfg.selected_analyses():
        try:
            out[aid] = run_analysis(aid, ctx)
        except RecurveError as exc:
            params = analysis_params(aid, cfg)
            out[aid] = AnalysisResult(
                rows=tuple((p, np.nan, np.nan, np.nan) for p in params),
                converged=False,
                note=str(exc),
            )
    return out


def _replicate_worker(args: tuple[SimConfig, int]) -> tuple[int, dict]:
    cfg, rep = args
    return rep, run_replicate(cfg, rep)


@dataclass(frozen=True)
class AnalysisSummary:
    """Across-replicate aggregates for one analysis design."""

    analysis: str
    params: tuple[str, ...]
    smean: np.ndarray
    sse: np.ndarray
    ese_model: np.ndarray
    ese_robust: np.ndarray
    n_ok: int
    n_failed: int
    note: str = ""


@dataclass(frozen=True)
class StudyResult:
    """All analysis aggregates of one study plus the configuration."""

    config: SimConfig
    summaries: tuple[AnalysisSummary, ...]

    def summary(self, aid: str) -> AnalysisSummary:
        for s in self.summaries:
            if s.analysis == aid:
                return s
        raise KeyError(aid)


def _column_mean(values: np.ndarray) -> np.ndarray:
    out = np.full(values.shape[1], np.nan)
    for j in range(values.shape[1]):
        col = values[:, j]
        col = col[np.isfinite(col)]
        if col.size:
            out[j] = col.mean()
    return out


def _column_sd(values: np.ndarray) -> np.ndarray:
    out = np.full(values.shape[1], np.nan)
    for j in range(values.shape[1]):
        col = values[:, j]
        col = col[np.isfinite(col)]
        if col.size > 1:
            out[j] = col.std(ddof=1)
    return out


def replicate_study(cfg: SimConfig) -> StudyResult:
    """Run all replicates (optionally across processes) and aggregate.

    Per-replicate seeds depend only on (seed, rep), and aggregation walks
    replicates in index order, so results are identical for any thread
    count.
    """
    jobs = [(cfg, rep) for rep in range(cfg.reps)]
    results: list[dict[str, AnalysisResult] | None] = [None] * cfg.reps
    if cfg.threads == 1:
        for job in jobs:
            rep, res = _replicate_worker(job)
            results[rep] = res
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            for rep, res in pool.map(_replicate_worker, jobs):
                results[rep] = res

    summaries = []
    for aid in cfg.selected_analyses():
        params = analysis_params(aid, cfg)
        k = len(params)
        est = np.full((cfg.reps, k), np.nan)
        se_m = np.full((cfg.reps, k), np.nan)
        se_r = np.full((cfg.reps, k), np.nan)
        ok = np.zeros(cfg.reps, dtype=bool)
        notes = []
        for rep, res in enumerate(results):
            ar = res[aid]
            ok[rep] = ar.converged
            if ar.note and len(notes) < 3:
                notes.append(f"rep {rep}: {ar.note}")
            if not ar.converged:
                continue
            got = {name: (e, a, b) for name, e, a, b in ar.rows}
            for j, p in enumerate(params):
                e, a, b = got[p]
                est[rep, j], se_m[rep, j], se_r[rep, j] = e, a, b
        kept = est[ok]
        summaries.append(
            AnalysisSummary(
                analysis=aid,
                params=params,
                smean=_column_mean(kept),
                sse=_column_sd(kept),
                ese_model=_column_mean(se_m[ok]),
                ese_robust=_column_mean(se_r[ok]),
                n_ok=int(ok.sum()),
                n_failed=int((~ok).sum()),
                note="; ".join(notes),
            )
        )
    return StudyResult(config=cfg, summaries=tuple(summaries))


_TRUTH_BY_PARAM = {
    "alpha": lambda t: t.alpha,
    "beta": lambda t: t.beta,
    "gamma": lambda t: t.gamma,
    "lambda0": lambda t: t.lambda0,
    "beta_early": lambda t: t.beta,
    "beta_late": lambda t: t.beta + t.gamma,
    "lambda0_early": lambda t: t.lambda0,
    "lambda0_late": lambda t: t.lambda0 * math.exp(t.alpha),
}

_STUDY_COLUMNS = (
    "analysis",
    "param",
    "truth",
    "smean",
    "sse",
    "ese_model",
    "ese_robust",
    "n_ok",
    "n_failed",
)


def write_study_csv(study: StudyResult, path) -> None:
    """Write the aggregate table; numbers use full precision."""
    truth = study.config.truth()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(_STUDY_COLUMNS)
        for s in study.summaries:
            for j, p in enumerate(s.params):
                writer.writerow(
                    [
                        s.analysis,
                        p,
                        f"{_TRUTH_BY_PARAM[p](truth):.10g}",
                        _num(s.smean[j]),
                        _num(s.sse[j]),
                        _num(s.ese_model[j]),
                        _num(s.ese_robust[j]),
                        s.n_ok,
                        s.n_failed,
                    ]
                )


def _num(v: float) -> str:
    return f"{v:.10g}" if np.isfinite(v) else ""


def read_study_csv(path) -> list[dict]:
    """Read back a study table; numeric fields are parsed (NaN for blanks)."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = dict(row)
            for key in ("truth", "smean", "sse", "ese_model", "ese_robust"):
                parsed[key] = float(row[key]) if row[key] else float("nan")
            for key in ("n_ok", "n_failed"):
                parsed[key] = int(row[key])
            rows.append(parsed)
    return rows


def _fmt(v: float) -> str:
    return f"{v:.4f}" if np.isfinite(v) else ""


def format_study_text(study: StudyResult) -> str:
    """Aligned per-analysis blocks of SMean/SSE/ESE rows."""
    cfg = study.config
    truth = cfg.truth()
    lines = [
        "window-extraction simulation study",
        (
            f"setting {cfg.setting}"
            + (f" case {cfg.case}" if cfg.setting == 1 else "")
            + f": alpha={truth.alpha:g} beta={truth.beta:g} gamma={truth.gamma:g}"
            + f" lambda0={truth.lambda0:g} per unit"
        ),
        f"n={cfg.n} reps={cfg.reps} seed={cfg.seed}",
        "",
    ]
    for s in study.summaries:
        width = max(12, max(len(p) for p in s.params) + 2)
        header = f"{s.analysis:<10}" + "".join(f"{p:>{width}}" for p in s.params)
        lines.append(header)
        for label, vec in (
            ("SMean", s.smean),
            ("SSE", s.sse),
            ("ESE(a)", s.ese_model),
            ("ESE(b)", s.ese_robust),
        ):
            lines.append(
                f"{label:<10}" + "".join(f"{_fmt(v):>{width}}" for v in vec)
            )
        if s.n_failed:
            lines.append(f"failed replicates: {s.n_failed} of {cfg.reps}")
            if s.note:
                lines.append(f"notes: {s.note}")
        lines.append("")
    return "\n".join(lines)


def dump_replicate(cfg: SimConfig, rep: int, out_dir) -> list[str]:
    """Write one replicate's raw extractions and censuses as CSV files."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(rep,)))
    pop = generate_population(cfg, rng)
    cohorts = extract_cohorts(cfg, pop)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name in ("full", "early", "late", "early1", "late1", "union1"):
        path = os.path.join(out_dir, f"cohort_{name}.csv")
        export_csv(getattr(cohorts, name), path)
        written.append(path)
    for split in ("decade", "generation"):
        path = os.path.join(out_dir, f"census_{split}.csv")
        export_census_csv(census_from_population(pop, split), path)
        written.append(path)
    return written
