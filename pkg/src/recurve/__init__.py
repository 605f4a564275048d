"""Marginal rate regression for doubly censored recurrent event cohorts.

The package fits proportional-rates models with constant or age-varying
coefficient blocks on administratively extracted cohorts: subjects observed
only inside calendar windows, entered only if an event was recorded, with
birthdates optionally missing up to an integer age.  Census counts can
replace cohort risk sets to target the general population, and a Monte
Carlo harness replays the whole extraction-and-analysis pipeline.
"""

from .birthdates import (
    DEFAULT_K,
    BirthdateSupport,
    birthdate_support,
    expand_missing,
    sample_birthdates,
    smoothed_at_risk,
)
from .census import (
    AcReport,
    CensusTable,
    estimating_function_population,
    export_census_csv,
    ingest_census_csv,
    s_moments_census,
    solve_local_population,
    validate_ac,
)
from .dataset import (
    AGE_CAP,
    COEF_NAMES,
    DAYS_PER_YEAR,
    EARLY,
    LATE,
    TIME_UNIT_YEARS,
    CohortDataset,
    CovariateVector,
    ExtractionWindow,
    SubjectRecord,
    at_risk,
    censoring_interval,
    combine,
    encode,
    export_csv,
    ingest_csv,
    years_between,
)
from .errors import (
    EmptyIntervalError,
    EmptyPopulationError,
    EmptyRiskSetError,
    EmptyWindowError,
    EstimationError,
    InconsistentRecordError,
    ParseError,
    RecurveError,
    SingularityError,
    ValidationError,
)
from .estimator import (
    FitCurve,
    GlobalFit,
    KernelSpec,
    LocalFit,
    SolverConfig,
    curve_rows,
    default_grid,
    estimating_function,
    fit_curve,
    information_matrix,
    kernel_weight,
    s_moments,
    sandwich_variance,
    solve_constant,
    solve_local,
)
from .models import (
    BaselineCurve,
    FittedModel,
    ModelSpec,
    aic,
    breslow_baseline,
    default_block_columns,
    fit_model,
    log_likelihood,
    read_baseline_csv,
    stratified_fit,
    write_baseline_csv,
)
from .riskset import CensusCells, EventArrays, RiskData, SegmentRisk, build_risk_data
from .simulate import (
    Cohorts,
    Population,
    SimConfig,
    StudyResult,
    Truth,
    available_analyses,
    census_from_population,
    dump_replicate,
    extract_cohorts,
    format_study_text,
    generate_population,
    read_study_csv,
    replicate_study,
    run_analysis,
    run_replicate,
    strip_birthdates,
    true_model_design,
    write_study_csv,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
