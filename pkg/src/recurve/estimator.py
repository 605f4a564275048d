"""Kernel local-polynomial solution of the rate-model estimating equations.

At a target age a, the coefficient path theta(.) is approximated by
theta(u) ~ theta(a) + (u - a) theta'(a), and phi = (theta, theta') solves a
kernel-weighted score equation over observed events.  Newton iteration uses
the exact derivative matrix, which doubles as the meat-and-bread information
of the sandwich variance.  A flat-weight (kernel-free) variant estimates
constant coefficients over the whole evaluation window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyWindowError,
    EstimationError,
    SingularityError,
    ValidationError,
)
from .riskset import RiskData

EPANECHNIKOV_L2 = 0.6  # integral of K(x)^2 over [-1, 1]
EPANECHNIKOV_AT0 = 0.75  # K(0)

TAU_LEFT = 1.0
TAU_RIGHT = 17.0
GRID_STEP = 1.0 / 6.0


@dataclass(frozen=True)
class KernelSpec:
    """Epanechnikov kernel with bandwidth in age-years."""

    bandwidth_h: float = 1.0
    kind: str = "epanechnikov"

    def __post_init__(self):
        if self.kind != "epanechnikov":
            raise ValidationError(f"unsupported kernel kind {self.kind!r}")
        if not self.bandwidth_h > 0:
            raise ValidationError("bandwidth must be positive")


def kernel_weight(spec: KernelSpec, u, a: float):
    """Scaled kernel (1/h) K((u-a)/h); zero outside the bandwidth."""
    d = (np.asarray(u, dtype=float) - a) / spec.bandwidth_h
    w = np.where(np.abs(d) <= 1.0, 0.75 * (1.0 - d * d) / spec.bandwidth_h, 0.0)
    return w if w.ndim else float(w)


@dataclass(frozen=True)
class SolverConfig:
    """Newton and window settings shared across fits."""

    tol: float = 1e-8
    max_iters: int = 50
    max_halvings: int = 20
    degree: int = 1
    tau_left: float = TAU_LEFT
    tau_right: float = TAU_RIGHT
    grid_step: float = GRID_STEP
    check_support: bool = True
    backfit_tol: float = 1e-6
    backfit_max_cycles: int = 25

    def __post_init__(self):
        if self.degree not in (0, 1):
            raise ValidationError("degree must be 0 or 1")
        if not self.tau_left < self.tau_right:
            raise ValidationError("tau_left must be below tau_right")


def default_grid(cfg: SolverConfig) -> np.ndarray:
    """Evenly spaced evaluation ages covering [tau_left, tau_right]."""
    n = int(round((cfg.tau_right - cfg.tau_left) / cfg.grid_step))
    return np.linspace(cfg.tau_left, cfg.tau_right, n + 1)


@dataclass(frozen=True)
class LocalFit:
    """Pointwise fit at one age: coefficients, slopes, and variances.

    ``cov`` is the robust sandwich covariance of theta(a); ``cov_model`` the
    model-based one (inverse information, kernel-variance scaled for local
    fits).  Failed ages carry NaN estimates and converged=False.
    """

    a: float
    theta: np.ndarray
    theta_dot: np.ndarray | None
    cov: np.ndarray
    newton_iters: int
    converged: bool
    cov_model: np.ndarray | None = None
    message: str = ""


@dataclass(frozen=True)
class GlobalFit:
    """Constant-coefficient fit over the whole evaluation window."""

    theta: np.ndarray
    cov: np.ndarray
    newton_iters: int
    converged: bool
    cov_model: np.ndarray | None = None
    message: str = ""


@dataclass(frozen=True)
class FitCurve:
    """Local fits along a grid of ages."""

    grid: np.ndarray
    fits: tuple[LocalFit, ...]
    tau: tuple[float, float]
    coef_names: tuple[str, ...]

    def theta_matrix(self) -> np.ndarray:
        """Estimates per grid age, NaN where the fit failed; (n_grid, p)."""
        return np.vstack([f.theta for f in self.fits])

    def theta_at(self, u) -> np.ndarray:
        """Interpolated coefficients at ages u, clamped at the grid ends.

        Only converged grid ages contribute; interpolation bridges failures.
        """
        ok = [i for i, f in enumerate(self.fits) if f.converged]
        if not ok:
            raise EstimationError("no converged fits available for interpolation")
        xs = self.grid[ok]
        mat = self.theta_matrix()[ok]
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty((u.size, mat.shape[1]))
        for j in range(mat.shape[1]):
            out[:, j] = np.interp(u, xs, mat[:, j])
        return out

    def failed_ages(self) -> list[float]:
        return [f.a for f in self.fits if not f.converged]


def _active_columns(data: RiskData, active) -> np.ndarray:
    p_full = data.provider.covariates.shape[1]
    if active is None:
        return np.arange(p_full)
    active = np.asarray(active, dtype=int)
    if active.size == 0 or np.any(active < 0) or np.any(active >= p_full):
        raise ValidationError("active column indices out of range")
    return active


@dataclass
class _Parts:
    finite: bool
    U: np.ndarray | None = None
    Pi: np.ndarray | None = None
    Sigma: np.ndarray | None = None
    uniq: np.ndarray | None = None
    inv: np.ndarray | None = None
    mhat: np.ndarray | None = None
    S0: np.ndarray | None = None

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.U)))

    @property
    def norm2(self) -> float:
        return float(np.linalg.norm(self.U))


def _system(
    phi: np.ndarray,
    a,
    ages: np.ndarray,
    kw: np.ndarray,
    cells: np.ndarray,
    units: np.ndarray,
    data: RiskData,
    active: np.ndarray,
    offset_fn,
    degree: int,
    strict: bool = False,
    want_sigma: bool = False,
) -> _Parts:
    """Score, derivative matrix, and optional robust meat at one phi.

    Risk-side sums are taken cell-by-cell at the unique event ages; the
    event side is accumulated from the flat arrays.  ``strict`` turns a
    zero risk denominator into the provider's empty error instead of an
    invalid-step signal.
    """
    provider = data.provider
    Ca = provider.covariates[:, active]
    p = Ca.shape[1]
    vev = data.events.vmat[cells][:, active]

    uniq, inv = np.unique(ages, return_inverse=True)
    m = uniq.size
    R = provider.weights_at(uniq)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        logits = np.broadcast_to((Ca @ phi[:p])[None, :], (m, Ca.shape[0])).copy()
        if degree == 1:
            d = uniq - a
            logits += np.outer(d, Ca @ phi[p:])
        if offset_fn is not None:
            logits = logits + offset_fn(uniq)
        E = np.exp(logits)
        RE = R * E
        S0 = RE.sum(axis=1)
        if strict and (not np.all(np.isfinite(S0)) or np.any(S0 <= 0)):
            if np.all(np.isfinite(S0)):
                bad = uniq[np.argmax(S0 <= 0)]
                raise provider.empty_error(f"zero total risk weight at age {bad:.6g}")
            raise EstimationError("risk-set moments are not finite")
        if not np.all(np.isfinite(S0)) or np.any(S0 <= 0):
            return _Parts(finite=False)
        mhat = (RE @ Ca) / S0[:, None]
        c0 = np.bincount(inv, weights=kw, minlength=m)
        P = RE / S0[:, None]

        def curvature(ck: np.ndarray) -> np.ndarray:
            g = ck @ P
            G = Ca.T @ (g[:, None] * Ca)
            H = (mhat * ck[:, None]).T @ mhat
            return G - H

        U_top = kw @ vev - c0 @ mhat
        M0 = curvature(c0)
        if degree == 1:
            de = ages - a
            c1 = np.bincount(inv, weights=kw * de, minlength=m)
            c2 = np.bincount(inv, weights=kw * de * de, minlength=m)
            U = np.concatenate([U_top, (kw * de) @ vev - c1 @ mhat])
            M1 = curvature(c1)
            M2 = curvature(c2)
            Pi = np.block([[M0, M1], [M1, M2]])
        else:
            U = U_top
            Pi = M0

    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(Pi))):
        return _Parts(finite=False)

    Sigma = None
    if want_sigma:
        res = vev - mhat[inv]
        q = kw[:, None] * res
        if degree == 1:
            q = np.hstack([q, (ages - a)[:, None] * q])
        present, uinv = np.unique(units, return_inverse=True)
        Qu = np.zeros((present.size, q.shape[1]))
        np.add.at(Qu, uinv, q)
        n = data.events.n_units
        qbar = Qu.sum(axis=0) / n
        Sigma = Qu.T @ Qu - n * np.outer(qbar, qbar)

    return _Parts(finite=True, U=U, Pi=Pi, Sigma=Sigma, uniq=uniq, inv=inv, mhat=mhat, S0=S0)


def _event_terms(data: RiskData, a: float, spec: KernelSpec):
    ev = data.events
    h = spec.bandwidth_h
    sl = ev.window(a - h, a + h)
    ages = ev.age[sl]
    if ages.size == 0:
        raise EmptyWindowError(f"no events within bandwidth {h:g} of age {a:g}")
    kw = kernel_weight(spec, ages, a) * ev.w[sl]
    return ages, kw, ev.cell[sl], ev.unit[sl]


def _flat_terms(data: RiskData):
    """Every observed event, unit kernel weight: terms of the global score."""
    ev = data.events
    if ev.age.size == 0:
        raise EmptyWindowError("no events to fit")
    return ev.age, ev.w.copy(), ev.cell, ev.unit


def provider_moments(phi, u: float, a: float, provider, active=None, offset_fn=None):
    """Risk-set moments S0, S1, S2 at one age u for expansion point a.

    The design vector is V* = (V, (u-a) V) when phi has twice the covariate
    length, or plain V for a constant (degree-0) parameterization.  Works
    against any risk provider (individual intervals or population counts).
    """
    Ca = provider.covariates
    if active is not None:
        Ca = Ca[:, np.asarray(active, dtype=int)]
    p = Ca.shape[1]
    phi = np.asarray(phi, dtype=float)
    if phi.size == p:
        degree = 0
    elif phi.size == 2 * p:
        degree = 1
    else:
        raise ValidationError(f"phi must have length {p} or {2 * p}")
    R = provider.weights_at(np.array([u]))[0]
    d = u - a
    logit = Ca @ phi[:p]
    if degree == 1:
        logit = logit + d * (Ca @ phi[p:])
    if offset_fn is not None:
        off = np.asarray(offset_fn(np.array([u])))
        logit = logit + (off[0] if off.ndim == 2 else off)
    re = R * np.exp(logit)
    S0 = float(re.sum())
    if S0 <= 0:
        raise provider.empty_error(f"zero total risk weight at age {u:.6g}")
    Vstar = Ca if degree == 0 else np.hstack([Ca, d * Ca])
    S1 = re @ Vstar
    S2 = Vstar.T @ (re[:, None] * Vstar)
    return S0, S1, S2


def s_moments(phi, u: float, a: float, cohort: RiskData, active=None, offset_fn=None):
    """Cohort risk-set moments; see provider_moments."""
    active = _active_columns(cohort, active)
    return provider_moments(phi, u, a, cohort.provider, active=active, offset_fn=offset_fn)


def estimating_function(phi, a: float, cohort: RiskData, spec: KernelSpec, active=None, offset_fn=None):
    """Kernel-weighted score at phi for the expansion age a."""
    active = _active_columns(cohort, active)
    phi = np.asarray(phi, dtype=float)
    p = active.size
    if phi.size == p:
        degree = 0
    elif phi.size == 2 * p:
        degree = 1
    else:
        raise ValidationError(f"phi must have length {p} or {2 * p}")
    ages, kw, cells, units = _event_terms(cohort, a, spec)
    parts = _system(phi, a, ages, kw, cells, units, cohort, active, offset_fn, degree, strict=True)
    if not parts.finite:
        raise EstimationError(f"estimating function not finite at age {a:g}")
    return parts.U


def information_matrix(phi, a: float, cohort: RiskData, spec: KernelSpec, active=None, offset_fn=None):
    """Minus the derivative of the score with respect to phi."""
    active = _active_columns(cohort, active)
    phi = np.asarray(phi, dtype=float)
    degree = 1 if phi.size == 2 * active.size else 0
    ages, kw, cells, units = _event_terms(cohort, a, spec)
    parts = _system(phi, a, ages, kw, cells, units, cohort, active, offset_fn, degree, strict=True)
    if not parts.finite:
        raise EstimationError(f"information not finite at age {a:g}")
    return parts.Pi


def _newton(system, dim: int, cfg: SolverConfig, phi0, where: str):
    """Damped Newton iteration on the score; returns (phi, parts, iters, ok)."""
    if phi0 is None:
        phi = np.zeros(dim)
    else:
        phi = np.asarray(phi0, dtype=float).copy()
        if phi.size != dim:
            raise ValidationError(f"phi0 must have length {dim}")
    parts = system(phi, strict=True)
    if not parts.finite:
        phi = np.zeros(dim)
        parts = system(phi, strict=True)
        if not parts.finite:
            raise EstimationError(f"estimating function not finite {where}")
    iters = 0
    while parts.sup_norm >= cfg.tol and iters < cfg.max_iters:
        try:
            step = np.linalg.solve(parts.Pi, parts.U)
        except np.linalg.LinAlgError as exc:
            raise SingularityError(f"singular information matrix {where}") from exc
        if not np.all(np.isfinite(step)):
            raise SingularityError(f"singular information matrix {where}")
        base = parts.norm2
        scale = 1.0
        best = None
        for _ in range(cfg.max_halvings + 1):
            cand = phi + scale * step
            cparts = system(cand)
            if cparts.finite:
                if cparts.norm2 < base:
                    best = (cand, cparts)
                    break
                if best is None or cparts.norm2 < best[1].norm2:
                    best = (cand, cparts)
            scale *= 0.5
        if best is None:
            raise EstimationError(f"no finite Newton step {where}")
        phi, parts = best
        iters += 1
    return phi, parts, iters, parts.sup_norm < cfg.tol


def _symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def _variances(parts: _Parts, p: int, degree: int, where: str, kernel_factor: float | None):
    """Robust sandwich and model-based covariances of theta from the parts."""
    try:
        Pi_inv = np.linalg.inv(parts.Pi)
    except np.linalg.LinAlgError as exc:
        raise SingularityError(f"singular information matrix {where}") from exc
    cov_phi = Pi_inv @ parts.Sigma @ Pi_inv
    cov = _symmetrize(cov_phi[:p, :p])
    block = _symmetrize(Pi_inv[:p, :p])
    cov_model = kernel_factor * block if kernel_factor is not None else block
    return cov, cov_model


def solve_local(
    a: float,
    cohort: RiskData,
    spec: KernelSpec,
    cfg: SolverConfig | None = None,
    phi0=None,
    active=None,
    offset_fn=None,
) -> LocalFit:
    """Newton solve of the local score at age a; coefficients are phi[:p]."""
    cfg = cfg or SolverConfig()
    active = _active_columns(cohort, active)
    p = active.size
    degree = cfg.degree
    ages, kw, cells, units = _event_terms(cohort, a, spec)

    def system(x, strict=False, want_sigma=False):
        return _system(
            x, a, ages, kw, cells, units, cohort, active, offset_fn, degree,
            strict=strict, want_sigma=want_sigma,
        )

    phi, _, iters, converged = _newton(system, p * (degree + 1), cfg, phi0, f"at age {a:g}")
    parts = system(phi, strict=True, want_sigma=True)
    cov, cov_model = _variances(
        parts, p, degree, f"at age {a:g}", EPANECHNIKOV_L2 / spec.bandwidth_h
    )
    return LocalFit(
        a=a,
        theta=phi[:p],
        theta_dot=phi[p:] if degree == 1 else None,
        cov=cov,
        newton_iters=iters,
        converged=converged,
        cov_model=cov_model,
        message="" if converged else "newton did not reach tolerance",
    )


def solve_constant(
    cohort: RiskData,
    cfg: SolverConfig | None = None,
    theta0=None,
    active=None,
    offset_fn=None,
) -> GlobalFit:
    """Flat-weight (kernel-free) constant-coefficient fit over all events.

    Unlike the local kernel fits, the global score aggregates every observed
    event age; the solver-config age bounds only govern kernel estimation
    and reporting grids.
    """
    cfg = cfg or SolverConfig()
    active = _active_columns(cohort, active)
    p = active.size
    ages, kw, cells, units = _flat_terms(cohort)

    def system(x, strict=False, want_sigma=False):
        return _system(
            x, None, ages, kw, cells, units, cohort, active, offset_fn, 0,
            strict=strict, want_sigma=want_sigma,
        )

    theta, _, iters, converged = _newton(system, p, cfg, theta0, "in constant fit")
    parts = system(theta, strict=True, want_sigma=True)
    cov, cov_model = _variances(parts, p, 0, "in constant fit", None)
    return GlobalFit(
        theta=theta,
        cov=cov,
        newton_iters=iters,
        converged=converged,
        cov_model=cov_model,
        message="" if converged else "newton did not reach tolerance",
    )


def sandwich_variance(
    fit: LocalFit,
    cohort: RiskData,
    spec: KernelSpec,
    cfg: SolverConfig | None = None,
    active=None,
    offset_fn=None,
) -> np.ndarray:
    """Robust covariance of theta(a) recomputed at a converged fit."""
    if not fit.converged:
        raise ValidationError("variance requested for a non-converged fit")
    cfg = cfg or SolverConfig()
    active = _active_columns(cohort, active)
    p = active.size
    degree = 0 if fit.theta_dot is None else 1
    phi = fit.theta if degree == 0 else np.concatenate([fit.theta, fit.theta_dot])
    ages, kw, cells, units = _event_terms(cohort, fit.a, spec)
    parts = _system(
        phi, fit.a, ages, kw, cells, units, cohort, active, offset_fn, degree,
        strict=True, want_sigma=True,
    )
    cov, _ = _variances(parts, p, degree, f"at age {fit.a:g}", None)
    return cov


def _failed_fit(a: float, p: int, degree: int, message: str) -> LocalFit:
    nan_vec = np.full(p, np.nan)
    nan_mat = np.full((p, p), np.nan)
    return LocalFit(
        a=a,
        theta=nan_vec,
        theta_dot=nan_vec.copy() if degree == 1 else None,
        cov=nan_mat,
        newton_iters=0,
        converged=False,
        cov_model=nan_mat.copy(),
        message=message,
    )


def check_window_support(data: RiskData, cfg: SolverConfig) -> None:
    """Require observable risk strictly outside both window endpoints."""
    lo, hi = data.provider.support_bounds()
    if not (lo < cfg.tau_left and hi > cfg.tau_right):
        raise ValidationError(
            f"risk support ({lo:.4g}, {hi:.4g}) does not extend beyond the "
            f"evaluation window [{cfg.tau_left:g}, {cfg.tau_right:g}]"
        )


def fit_curve(
    grid,
    cohort: RiskData,
    spec: KernelSpec,
    cfg: SolverConfig | None = None,
    active=None,
    offset_fn=None,
) -> FitCurve:
    """Solve the local score along a grid with warm starts.

    Per-age failures are recorded as non-converged NaN fits and do not abort
    the remaining ages.  Warm starts only shorten iteration counts; the root
    found at each age is pinned by the tolerance, not the start.
    """
    cfg = cfg or SolverConfig()
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be a strictly increasing vector of ages")
    if grid[0] < cfg.tau_left - 1e-12 or grid[-1] > cfg.tau_right + 1e-12:
        raise ValidationError("grid must lie inside the evaluation window")
    if cfg.check_support:
        check_window_support(cohort, cfg)
    active_idx = _active_columns(cohort, active)
    p = active_idx.size
    names = tuple(cohort.coef_names[i] for i in active_idx)

    fits: list[LocalFit] = []
    phi_prev = None
    recoverable = (EmptyWindowError, EstimationError, SingularityError)
    for a in grid:
        try:
            fit = solve_local(a, cohort, spec, cfg, phi0=phi_prev, active=active_idx, offset_fn=offset_fn)
        except recoverable as exc:
            fit = None
            if phi_prev is not None:
                try:
                    fit = solve_local(a, cohort, spec, cfg, phi0=None, active=active_idx, offset_fn=offset_fn)
                except recoverable as exc2:
                    exc = exc2
            if fit is None:
                fits.append(_failed_fit(float(a), p, cfg.degree, str(exc)))
                continue
        fits.append(fit)
        if fit.converged:
            phi_prev = (
                fit.theta
                if fit.theta_dot is None
                else np.concatenate([fit.theta, fit.theta_dot])
            )
    return FitCurve(
        grid=grid,
        fits=tuple(fits),
        tau=(cfg.tau_left, cfg.tau_right),
        coef_names=names,
    )


def curve_rows(curve: FitCurve):
    """Flatten a curve into CSV-ready row dicts with pointwise 95% bands."""
    rows = []
    for fit in curve.fits:
        se = np.sqrt(np.diag(fit.cov)) if fit.cov is not None else np.full(len(curve.coef_names), np.nan)
        for j, name in enumerate(curve.coef_names):
            est = fit.theta[j]
            rows.append(
                {
                    "age": fit.a,
                    "coef_name": name,
                    "estimate": est,
                    "stderr": se[j],
                    "ci_lo": est - 1.959963984540054 * se[j],
                    "ci_hi": est + 1.959963984540054 * se[j],
                    "converged": fit.converged,
                }
            )
    return rows
