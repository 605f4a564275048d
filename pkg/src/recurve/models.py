"""Model lattice over constant/varying coefficient blocks.

A model declares, per coefficient block (the x effect, the z effects, and
the x-by-z interactions), whether the coefficient is constant over age or
age-varying, plus the population the risk denominators target.  Constant
blocks solve the flat-weight score, varying blocks the kernel-local score;
mixed declarations alternate the two solves with the other block held fixed
as an offset.  A fitted model carries a step-function baseline, a working
log-likelihood, and an AIC whose varying-block dimension is a smoother
hat-trace.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass

import numpy as np

from .birthdates import DEFAULT_K
from .census import CensusTable, _as_cells
from .dataset import EARLY, LATE, TIME_UNIT_YEARS, CohortDataset
from .errors import (
    EmptyPopulationError,
    EmptyRiskSetError,
    EmptyWindowError,
    EstimationError,
    SingularityError,
    ValidationError,
)
from .estimator import (
    EPANECHNIKOV_AT0,
    EPANECHNIKOV_L2,
    FitCurve,
    GlobalFit,
    KernelSpec,
    LocalFit,
    SolverConfig,
    default_grid,
    fit_curve,
    provider_moments,
    solve_constant,
)
from .riskset import CensusCells, RiskData, build_risk_data

BLOCKS = ("alpha", "beta", "gamma")

COHORT_TARGET = "cohort"
POPULATION_TARGET = "population"

_RECOVERABLE = (
    EmptyWindowError,
    EmptyRiskSetError,
    EmptyPopulationError,
    EstimationError,
    SingularityError,
)


@dataclass(frozen=True)
class ModelSpec:
    """Constant/varying declaration per coefficient block plus the target.

    Each of ``alpha`` (x effect), ``beta`` (z effects), ``gamma`` (x-by-z
    interactions) is "C", "V", or None to omit the block entirely (used by
    stratified and reduced fits).  The canonical lattice is the eight
    three-letter names from CCC to VVV.
    """

    alpha: str | None = "C"
    beta: str | None = "C"
    gamma: str | None = "C"
    target: str = COHORT_TARGET

    def __post_init__(self):
        for block in BLOCKS:
            kind = getattr(self, block)
            if kind not in ("C", "V", None):
                raise ValidationError(f"{block} must be 'C', 'V', or None")
        if all(getattr(self, block) is None for block in BLOCKS):
            raise ValidationError("model must declare at least one block")
        if self.target not in (COHORT_TARGET, POPULATION_TARGET):
            raise ValidationError(
                f"target must be {COHORT_TARGET!r} or {POPULATION_TARGET!r}"
            )

    @classmethod
    def parse(cls, name: str, target: str = COHORT_TARGET) -> "ModelSpec":
        name = name.strip().upper()
        if len(name) != 3 or any(c not in "CV" for c in name):
            raise ValidationError(
                f"model name must be three letters from {{C,V}}, got {name!r}"
            )
        return cls(alpha=name[0], beta=name[1], gamma=name[2], target=target)

    @property
    def name(self) -> str:
        return "".join(getattr(self, block) or "-" for block in BLOCKS)

    def blocks(self) -> tuple[tuple[str, str], ...]:
        """Declared (block, kind) pairs in canonical order."""
        return tuple(
            (block, getattr(self, block))
            for block in BLOCKS
            if getattr(self, block) is not None
        )


def default_block_columns(spec: ModelSpec, coef_names) -> dict[str, tuple[int, ...]]:
    """Map declared blocks to covariate columns by naming convention.

    Column 0 is the x indicator; columns named with the x column's name as
    a prefix ("late_male", ...) are interactions; the rest are z effects.
    A model with only a beta block claims every column (z-only designs).
    """
    names = tuple(coef_names)
    declared = dict(spec.blocks())
    if set(declared) == {"beta"}:
        return {"beta": tuple(range(len(names)))}
    prefix = names[0] + "_"
    gamma_cols = tuple(j for j, n in enumerate(names) if n.startswith(prefix))
    beta_cols = tuple(
        j for j in range(1, len(names)) if j not in gamma_cols
    )
    full = {"alpha": (0,), "beta": beta_cols, "gamma": gamma_cols}
    out = {}
    for block in declared:
        cols = full[block]
        if not cols:
            raise ValidationError(
                f"no covariate columns available for the {block} block"
            )
        out[block] = cols
    return out


@dataclass(frozen=True)
class BaselineCurve:
    """Step-function cumulative baseline with jumps at event ages."""

    ages: np.ndarray
    jumps: np.ndarray
    tau: tuple[float, float]
    time_unit_years: float = TIME_UNIT_YEARS

    def __post_init__(self):
        ages = np.asarray(self.ages, dtype=float)
        jumps = np.asarray(self.jumps, dtype=float)
        if ages.shape != jumps.shape or ages.ndim != 1:
            raise ValidationError("baseline ages and jumps must align")
        if ages.size and np.any(np.diff(ages) <= 0):
            raise ValidationError("baseline jump ages must be increasing")
        if not np.all(np.isfinite(jumps)) or np.any(jumps < 0):
            raise ValidationError("baseline jumps must be finite and nonnegative")
        object.__setattr__(self, "ages", ages)
        object.__setattr__(self, "jumps", jumps)

    def _cum(self, a) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if self.ages.size == 0:
            return np.zeros(a.shape)
        csum = np.concatenate([[0.0], np.cumsum(self.jumps)])
        return csum[np.searchsorted(self.ages, a, side="right")]

    def value(self, a, origin: float | None = None):
        """Cumulative baseline at ages a, measured from the origin.

        The default origin is the left evaluation bound; pass 0.0 for the
        absolute cumulative function.
        """
        origin = self.tau[0] if origin is None else float(origin)
        out = self._cum(a) - self._cum(origin)
        return float(out[0]) if np.isscalar(a) or np.ndim(a) == 0 else out

    def average_slope(self) -> float:
        """Mean increase per year of age across the evaluation window."""
        span = self.tau[1] - self.tau[0]
        return float(self.value(self.tau[1], origin=self.tau[0])) / span

    def per_unit_rate(self) -> float:
        """Average slope expressed per reporting time unit (two months)."""
        return self.average_slope() * self.time_unit_years


@dataclass(frozen=True)
class FittedModel:
    """A solved model: block estimates, baseline, fit quality, diagnostics."""

    spec: ModelSpec
    active: tuple[int, ...]
    coef_names: tuple[str, ...]
    block_columns: dict[str, tuple[int, ...]]
    constant_coefs: dict[str, GlobalFit]
    varying_joint: FitCurve | None
    varying_curves: dict[str, FitCurve]
    baseline: "BaselineCurve | None"
    loglik: float | None
    aic: float | None
    effective_dof: float | None
    backfit_iters: int
    converged: bool
    tau: tuple[float, float]
    kernel: KernelSpec
    census_cells: CensusCells | None = None
    message: str = ""

    def theta_at(self, u) -> np.ndarray:
        """Model coefficients at ages u, shape (len(u), len(active)).

        Columns follow ``active`` order: constant blocks are tiled, varying
        blocks interpolate their fitted curve with flat extension beyond
        the evaluation window.
        """
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty((u.size, len(self.active)))
        pos = {c: j for j, c in enumerate(self.active)}
        for block, gfit in self.constant_coefs.items():
            for k, col in enumerate(self.block_columns[block]):
                out[:, pos[col]] = gfit.theta[k]
        if self.varying_joint is not None:
            var_cols = self._varying_columns()
            mat = self.varying_joint.theta_at(u)
            for k, col in enumerate(var_cols):
                out[:, pos[col]] = mat[:, k]
        return out

    def _varying_columns(self) -> tuple[int, ...]:
        cols: list[int] = []
        for block, kind in self.spec.blocks():
            if kind == "V":
                cols.extend(self.block_columns[block])
        return tuple(sorted(cols))

    def constant_table(self):
        """Rows (name, estimate, robust SE, model SE) for constant blocks."""
        rows = []
        for block, _ in self.spec.blocks():
            gfit = self.constant_coefs.get(block)
            if gfit is None:
                continue
            se = np.sqrt(np.diag(gfit.cov))
            se_m = (
                np.sqrt(np.diag(gfit.cov_model))
                if gfit.cov_model is not None
                else np.full(se.shape, np.nan)
            )
            for k, col in enumerate(self.block_columns[block]):
                rows.append(
                    {
                        "block": block,
                        "coef_name": self.coef_names[self.active.index(col)],
                        "estimate": float(gfit.theta[k]),
                        "stderr": float(se[k]),
                        "stderr_model": float(se_m[k]),
                    }
                )
        return rows


def _ensure_risk(data, k_missing: int = DEFAULT_K, seed: int = 0) -> RiskData:
    if isinstance(data, RiskData):
        return data
    if isinstance(data, CohortDataset):
        return build_risk_data(data, k_missing=k_missing, seed=seed)
    raise ValidationError("data must be a CohortDataset or RiskData")


def _resolve_cells(census, census_decades) -> CensusCells:
    if isinstance(census, CensusTable):
        return census.cells(census_decades if census_decades is not None else (EARLY, LATE))
    return _as_cells(census)


def _split_global(gfit: GlobalFit, positions: list[int]) -> GlobalFit:
    ix = np.ix_(positions, positions)
    return GlobalFit(
        theta=gfit.theta[positions],
        cov=gfit.cov[ix],
        newton_iters=gfit.newton_iters,
        converged=gfit.converged,
        cov_model=gfit.cov_model[ix] if gfit.cov_model is not None else None,
        message=gfit.message,
    )


def _slice_curve(curve: FitCurve, positions: list[int], names: tuple[str, ...]) -> FitCurve:
    ix = np.ix_(positions, positions)
    fits = tuple(
        LocalFit(
            a=f.a,
            theta=f.theta[positions],
            theta_dot=f.theta_dot[positions] if f.theta_dot is not None else None,
            cov=f.cov[ix],
            newton_iters=f.newton_iters,
            converged=f.converged,
            cov_model=f.cov_model[ix] if f.cov_model is not None else None,
            message=f.message,
        )
        for f in curve.fits
    )
    return FitCurve(grid=curve.grid, fits=fits, tau=curve.tau, coef_names=names)


def _constant_offset(provider, const_cols: list[int], theta_c: np.ndarray):
    vec = provider.covariates[:, const_cols] @ theta_c

    def offset(_uniq):
        return vec

    return offset


def _curve_offset(provider, var_cols: list[int], curve: FitCurve):
    cov_t = provider.covariates[:, var_cols].T

    def offset(uniq):
        return curve.theta_at(uniq) @ cov_t

    return offset


def _curve_delta(new: FitCurve, old: FitCurve | None) -> float:
    if old is None:
        return np.inf
    a = new.theta_matrix()
    b = old.theta_matrix()
    mask = np.isfinite(a) & np.isfinite(b)
    if not mask.any():
        return np.inf
    return float(np.max(np.abs(a[mask] - b[mask])))


def fit_model(
    spec: ModelSpec,
    data,
    census=None,
    cfg: SolverConfig | None = None,
    kernel: KernelSpec | None = None,
    block_columns: dict[str, tuple[int, ...]] | None = None,
    census_decades: tuple[str, ...] | None = None,
    k_missing: int = DEFAULT_K,
    seed: int = 0,
) -> FittedModel:
    """Fit one model of the lattice.

    Constant blocks use the flat-weight score over the evaluation window;
    varying blocks the kernel-local score on the default grid; mixed
    declarations alternate the two with the other part fixed as an offset
    until the largest coefficient change falls under cfg.backfit_tol.
    A population-target spec requires census counts for the denominators
    (and a cohort-target spec forbids them).
    """
    cfg = cfg or SolverConfig()
    kernel = kernel or KernelSpec()
    cohort_risk = _ensure_risk(data, k_missing=k_missing, seed=seed)

    if spec.target == POPULATION_TARGET and census is None:
        raise ValidationError("population-target fit requires census counts")
    if spec.target == COHORT_TARGET and census is not None:
        raise ValidationError("census counts supplied for a cohort-target fit")
    cells = _resolve_cells(census, census_decades) if census is not None else None
    est_risk = cohort_risk.with_provider(cells) if cells is not None else cohort_risk

    blocks = (
        dict(block_columns)
        if block_columns is not None
        else default_block_columns(spec, est_risk.coef_names)
    )
    declared = dict(spec.blocks())
    missing = set(declared) - set(blocks)
    if missing:
        raise ValidationError(f"no column mapping for blocks: {sorted(missing)}")
    const_cols = sorted(
        c for b, kind in declared.items() if kind == "C" for c in blocks[b]
    )
    var_cols = sorted(
        c for b, kind in declared.items() if kind == "V" for c in blocks[b]
    )
    if set(const_cols) & set(var_cols):
        raise ValidationError("blocks assign a column to both constant and varying")
    active = tuple(sorted(const_cols + var_cols))
    coef_names = tuple(est_risk.coef_names[c] for c in active)
    grid = default_grid(cfg)

    def positions(cols, within):
        return [within.index(c) for c in cols]

    constant_coefs: dict[str, GlobalFit] = {}
    varying_joint: FitCurve | None = None
    backfit_iters = 0
    backfit_ok = True
    notes: list[str] = []

    if not var_cols:
        gfit = solve_constant(est_risk, cfg, active=const_cols)
        for block, kind in declared.items():
            if kind == "C":
                constant_coefs[block] = _split_global(
                    gfit, positions(blocks[block], const_cols)
                )
        component_ok = gfit.converged
        if not gfit.converged:
            notes.append(gfit.message or "constant solve did not converge")
    elif not const_cols:
        varying_joint = fit_curve(grid, est_risk, kernel, cfg, active=var_cols)
        component_ok = not varying_joint.failed_ages()
    else:
        try:
            init = solve_constant(est_risk, cfg, active=active)
            theta_c = init.theta[[active.index(c) for c in const_cols]].copy()
        except _RECOVERABLE:
            theta_c = np.zeros(len(const_cols))
        curve: FitCurve | None = None
        gfit = None
        deltas: list[float] = []
        for cycle in range(cfg.backfit_max_cycles):
            new_curve = fit_curve(
                grid,
                est_risk,
                kernel,
                cfg,
                active=var_cols,
                offset_fn=_constant_offset(est_risk.provider, const_cols, theta_c),
            )
            gfit = solve_constant(
                est_risk,
                cfg,
                theta0=theta_c,
                active=const_cols,
                offset_fn=_curve_offset(est_risk.provider, var_cols, new_curve),
            )
            delta = max(
                float(np.max(np.abs(gfit.theta - theta_c))),
                _curve_delta(new_curve, curve),
            )
            theta_c = gfit.theta.copy()
            curve = new_curve
            deltas.append(delta)
            backfit_iters = cycle + 1
            if delta < cfg.backfit_tol:
                break
        backfit_ok = bool(deltas) and deltas[-1] < cfg.backfit_tol
        if not backfit_ok:
            notes.append(
                "backfit did not converge; per-cycle deltas: "
                + ", ".join(f"{d:.3e}" for d in deltas)
            )
        varying_joint = curve
        for block, kind in declared.items():
            if kind == "C":
                constant_coefs[block] = _split_global(
                    gfit, positions(blocks[block], const_cols)
                )
        component_ok = gfit.converged and not varying_joint.failed_ages()
        if not gfit.converged:
            notes.append(gfit.message or "constant solve did not converge")

    if varying_joint is not None and varying_joint.failed_ages():
        notes.append(
            "local fits failed at ages: "
            + ", ".join(f"{a:g}" for a in varying_joint.failed_ages())
        )

    varying_curves: dict[str, FitCurve] = {}
    if varying_joint is not None:
        for block, kind in declared.items():
            if kind == "V":
                pos = positions(blocks[block], var_cols)
                names = tuple(est_risk.coef_names[c] for c in blocks[block])
                varying_curves[block] = _slice_curve(varying_joint, pos, names)

    model = FittedModel(
        spec=spec,
        active=active,
        coef_names=coef_names,
        block_columns={b: tuple(blocks[b]) for b in declared},
        constant_coefs=constant_coefs,
        varying_joint=varying_joint,
        varying_curves=varying_curves,
        baseline=None,
        loglik=None,
        aic=None,
        effective_dof=None,
        backfit_iters=backfit_iters,
        converged=bool(component_ok and backfit_ok),
        tau=(cfg.tau_left, cfg.tau_right),
        kernel=kernel,
        census_cells=cells,
        message="; ".join(notes),
    )

    try:
        baseline = breslow_baseline(model, cohort_risk, census=cells, cfg=cfg)
        model = dataclasses.replace(model, baseline=baseline)
        loglik = log_likelihood(model, cohort_risk)
        dof = _effective_dof(model, cohort_risk, cfg)
        model = dataclasses.replace(
            model,
            loglik=loglik,
            effective_dof=dof,
            aic=2.0 * dof - 2.0 * loglik,
        )
    except _RECOVERABLE as exc:
        model = dataclasses.replace(
            model,
            converged=False,
            message="; ".join(filter(None, [model.message, f"post-fit: {exc}"])),
        )
    return model


def stratified_fit(
    cohort: CohortDataset,
    census: CensusTable | None = None,
    cfg: SolverConfig | None = None,
    kernel: KernelSpec | None = None,
    varying: bool = False,
    k_missing: int = DEFAULT_K,
    seed: int = 0,
) -> tuple[FittedModel, FittedModel]:
    """Independent per-decade fits of the z effects and baselines.

    Each stratum gets a beta-only model (constant or varying) on the z
    columns that actually vary within the stratum; census counts, when
    given, provide that stratum's population denominators.
    """
    fits = []
    for label in (EARLY, LATE):
        sub = cohort.subset(label)
        if not sub.subjects:
            raise ValidationError(f"{label} stratum is empty")
        risk = build_risk_data(sub, k_missing=k_missing, seed=seed)
        vmat = risk.provider.covariates
        z_cols = tuple(
            j
            for j in range(1, vmat.shape[1])
            if not risk.coef_names[j].startswith(risk.coef_names[0] + "_")
            and np.ptp(vmat[:, j]) > 0
        )
        if not z_cols:
            raise ValidationError(
                f"{label} stratum has no varying z covariates to estimate"
            )
        spec = ModelSpec(
            alpha=None,
            beta="V" if varying else "C",
            gamma=None,
            target=POPULATION_TARGET if census is not None else COHORT_TARGET,
        )
        fits.append(
            fit_model(
                spec,
                risk,
                census=census.cells((label,)) if census is not None else None,
                cfg=cfg,
                kernel=kernel,
                block_columns={"beta": z_cols},
            )
        )
    return fits[0], fits[1]


def breslow_baseline(
    fit: FittedModel,
    data,
    census=None,
    cfg: SolverConfig | None = None,
) -> BaselineCurve:
    """Step-function cumulative baseline with jumps at observed event ages.

    Each jump is the event mass at that age divided by the risk-weighted
    exponentiated linear predictor, with coefficients held at their window
    endpoint values outside the evaluation window.  Population-target fits
    divide by the census moments instead of the cohort risk set.
    """
    cfg = cfg or SolverConfig()
    risk = _ensure_risk(data)
    if census is None:
        census = fit.census_cells
    if fit.spec.target == POPULATION_TARGET and census is None:
        raise ValidationError("population-target baseline requires census counts")
    provider = _as_cells(census) if census is not None else risk.provider

    ev = risk.events
    tau = (cfg.tau_left, cfg.tau_right)
    if ev.age.size == 0:
        return BaselineCurve(ages=np.array([]), jumps=np.array([]), tau=tau)
    uniq, inv = np.unique(ev.age, return_inverse=True)
    mass = np.bincount(inv, weights=ev.w, minlength=uniq.size)
    theta = fit.theta_at(uniq)
    lin = theta @ provider.covariates[:, list(fit.active)].T
    weights = provider.weights_at(uniq)
    den = (weights * np.exp(lin)).sum(axis=1)
    bad = ~np.isfinite(den) | (den <= 0)
    if bad.any():
        raise EstimationError(
            f"zero risk denominator at event age {uniq[np.argmax(bad)]:.6g}"
        )
    return BaselineCurve(ages=uniq, jumps=mass / den, tau=tau)


def log_likelihood(fit: FittedModel, data) -> float:
    """Working Poisson log-likelihood of the data under the fitted model.

    Event terms contribute w*(linear predictor + log baseline jump); the
    compensator integrates the fitted rate over the risk measure that built
    the baseline (cohort risk sets, or census moments for population
    targets).
    """
    if fit.baseline is None:
        raise ValidationError("log-likelihood requires a fitted baseline")
    risk = _ensure_risk(data)
    ev = risk.events
    if ev.age.size == 0:
        return 0.0
    base = fit.baseline
    provider = (
        fit.census_cells
        if fit.spec.target == POPULATION_TARGET and fit.census_cells is not None
        else risk.provider
    )
    cols = list(fit.active)

    uniq, inv = np.unique(ev.age, return_inverse=True)
    idx = np.searchsorted(base.ages, uniq)
    matched = (idx < base.ages.size) & np.isclose(
        base.ages[np.minimum(idx, base.ages.size - 1)], uniq
    )
    jumps = np.where(matched, base.jumps[np.minimum(idx, base.ages.size - 1)], 0.0)
    if np.any(jumps[inv][ev.w > 0] <= 0):
        bad = uniq[np.argmax(~matched | (jumps <= 0))]
        raise EstimationError(f"zero baseline jump at observed event age {bad:.6g}")

    theta_ev = fit.theta_at(uniq)
    lin_ev = np.einsum("ij,ij->i", theta_ev[inv], ev.vmat[ev.cell][:, cols])
    term1 = float(np.sum(ev.w * (lin_ev + np.log(jumps[inv]))))

    theta_j = fit.theta_at(base.ages)
    lin_j = theta_j @ provider.covariates[:, cols].T
    weights = provider.weights_at(base.ages)
    den = (weights * np.exp(lin_j)).sum(axis=1)
    term2 = float(np.sum(base.jumps * den))
    return term1 - term2


def _effective_dof(fit: FittedModel, risk: RiskData, cfg: SolverConfig) -> float:
    """Constant-block count plus the varying-block smoother hat-trace.

    Each event inside the evaluation window contributes its kernel
    self-weight K(0)/h sandwiched by the local information inverse at the
    nearest grid age, evaluated at that age's fitted coefficients.
    """
    dof = float(sum(len(fit.block_columns[b]) for b, k in fit.spec.blocks() if k == "C"))
    curve = fit.varying_joint
    if curve is None:
        return dof

    var_cols = fit._varying_columns()
    const_cols = sorted(
        c for b, k in fit.spec.blocks() if k == "C" for c in fit.block_columns[b]
    )
    provider = (
        fit.census_cells
        if fit.spec.target == POPULATION_TARGET and fit.census_cells is not None
        else risk.provider
    )
    offset_fn = None
    if const_cols:
        theta_c = np.concatenate(
            [fit.constant_coefs[b].theta for b, k in fit.spec.blocks() if k == "C"]
        )
        order = np.argsort(
            [c for b, k in fit.spec.blocks() if k == "C" for c in fit.block_columns[b]]
        )
        offset_fn = _constant_offset(provider, const_cols, theta_c[order])

    ev = risk.events
    sel = (ev.age >= cfg.tau_left) & (ev.age <= cfg.tau_right)
    if not sel.any():
        return dof
    ages = ev.age[sel]
    w = ev.w[sel]
    vev = ev.vmat[ev.cell[sel]][:, list(var_cols)]

    grid = curve.grid
    pos = np.searchsorted(grid, ages)
    pos = np.clip(pos, 1, grid.size - 1)
    nearest = np.where(
        np.abs(ages - grid[pos - 1]) <= np.abs(grid[pos] - ages), pos - 1, pos
    )

    h = fit.kernel.bandwidth_h
    k0 = EPANECHNIKOV_AT0 / h
    trace = 0.0
    for gi in np.unique(nearest):
        lf = curve.fits[gi]
        if not lf.converged or lf.cov_model is None:
            continue
        minv = lf.cov_model * h / EPANECHNIKOV_L2
        phi = (
            lf.theta
            if lf.theta_dot is None
            else np.concatenate([lf.theta, lf.theta_dot])
        )
        mask = nearest == gi
        for u in np.unique(ages[mask]):
            s0, s1, _ = provider_moments(
                phi, float(u), float(lf.a), provider, active=var_cols, offset_fn=offset_fn
            )
            mhat = np.asarray(s1)[: len(var_cols)] / s0
            umask = mask & (ages == u)
            r = vev[umask] - mhat
            trace += k0 * float(np.sum(w[umask] * np.einsum("ij,jk,ik->i", r, minv, r)))
    return dof + trace


def aic(fit: FittedModel) -> float:
    """Akaike criterion 2*dof - 2*loglik from the stored fit quality."""
    if fit.loglik is None or fit.effective_dof is None:
        raise ValidationError("fit has no stored log-likelihood/dof")
    return 2.0 * fit.effective_dof - 2.0 * fit.loglik


def write_baseline_csv(baseline: BaselineCurve, path) -> None:
    """Write jump ages, jump sizes, and the cumulative from age 0."""
    cum = 0.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(("age", "jump", "cumulative"))
        for age, jump in zip(baseline.ages, baseline.jumps):
            cum += jump
            writer.writerow((f"{age:.10g}", f"{jump:.10g}", f"{cum:.10g}"))


def read_baseline_csv(path, tau: tuple[float, float] = (1.0, 17.0)) -> BaselineCurve:
    """Rebuild a baseline curve from its CSV form (tau comes from config)."""
    ages, jumps = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            ages.append(float(row["age"]))
            jumps.append(float(row["jump"]))
    return BaselineCurve(ages=np.array(ages), jumps=np.array(jumps), tau=tau)
