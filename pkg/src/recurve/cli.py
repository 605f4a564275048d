"""Command-line front end: fitting, baselines, simulation, census checks.

Exit codes: 0 on success with full convergence, 2 when a fit completed
only partially (some solves did not converge), 1 on any error including
usage problems.  All randomness flows from the single --seed flag; outputs
carry no timestamps, so identical configurations produce identical bytes.

A flat key=value configuration file (--config) can supply any long flag's
value; explicit command-line flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import sys

import numpy as np

from .birthdates import DEFAULT_K
from .census import ingest_census_csv, validate_ac
from .dataset import EARLY, LATE, ExtractionWindow, ingest_csv
from .errors import RecurveError
from .estimator import KernelSpec, SolverConfig, curve_rows, default_grid
from .models import ModelSpec, fit_model, write_baseline_csv
from .simulate import (
    UNION,
    WINDOW_EARLY,
    WINDOW_LATE,
    WINDOW_UNION,
    SimConfig,
    available_analyses,
    dump_replicate,
    format_study_text,
    replicate_study,
    write_study_csv,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 2


class UsageError(Exception):
    """Bad flags, bad config keys, or malformed argument values."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); route through exit 1
        raise UsageError(f"{self.prog}: {message}")


def _read_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(
                        f"{path}:{lineno}: expected key=value, got {line!r}"
                    )
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    return out


def _fill_from_config(args: argparse.Namespace, parser_keys: set[str]) -> None:
    """Plug config-file values into flags the command line left unset."""
    if not getattr(args, "config", None):
        return
    values = _read_config(args.config)
    for key, raw in values.items():
        attr = key.replace("-", "_")
        if attr not in parser_keys:
            raise UsageError(f"unknown config key {key!r}")
        if getattr(args, attr, None) is None:
            setattr(args, attr, raw)


def _to_int(value, flag: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{flag} expects an integer, got {value!r}") from exc


def _to_float(value, flag: str) -> float:
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{flag} expects a number, got {value!r}") from exc


def _to_bool(value, flag: str) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"{flag} expects a boolean, got {value!r}")


def _default_windows() -> dict[str, ExtractionWindow]:
    return {
        EARLY: WINDOW_EARLY,
        LATE: WINDOW_LATE,
        UNION: WINDOW_UNION,
    }


def _parse_window(text: str) -> ExtractionWindow:
    try:
        label, span = text.split("=", 1)
        left, right = span.split("..", 1)
        return ExtractionWindow(
            dt.date.fromisoformat(left.strip()),
            dt.date.fromisoformat(right.strip()),
            label.strip().lower(),
        )
    except (ValueError, RecurveError) as exc:
        raise UsageError(
            f"--window expects LABEL=YYYY-MM-DD..YYYY-MM-DD, got {text!r}: {exc}"
        ) from exc


def _windows_from(args) -> dict[str, ExtractionWindow]:
    windows = _default_windows()
    for text in args.window or ():
        w = _parse_window(text)
        windows[w.label] = w
    return windows


def _expand_analyses(text: str) -> tuple[str, ...]:
    """Expand comma-separated ids with .. ranges (B.2.1..B.2.6)."""
    out: list[str] = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if ".." in token:
            lo, hi = token.split("..", 1)
            lo_parts, hi_parts = lo.strip().split("."), hi.strip().split(".")
            if (
                len(lo_parts) != 3
                or len(hi_parts) != 3
                or lo_parts[:2] != hi_parts[:2]
                or not lo_parts[2].isdigit()
                or not hi_parts[2].isdigit()
            ):
                raise UsageError(f"bad analysis range {token!r}")
            for k in range(int(lo_parts[2]), int(hi_parts[2]) + 1):
                out.append(f"{lo_parts[0]}.{lo_parts[1]}.{k}")
        else:
            out.append(token)
    return tuple(out)


_SETTINGS = {"s1case1": (1, 1), "s1case2": (1, 2), "s2": (2, 1)}


def _solver_from(args) -> SolverConfig:
    tau_left = _to_float(args.tau_left if args.tau_left is not None else 1.0, "--tau-left")
    tau_right = _to_float(
        args.tau_right if args.tau_right is not None else 17.0, "--tau-right"
    )
    grid_step = _to_float(
        args.grid_step if args.grid_step is not None else 1.0 / 6.0, "--grid-step"
    )
    return SolverConfig(tau_left=tau_left, tau_right=tau_right, grid_step=grid_step)


def _write_results_text(path, fit, curve_path, baseline_path) -> None:
    lines = [
        f"model {fit.spec.name}",
        f"target {fit.spec.target}",
        f"converged {str(fit.converged).lower()}",
        f"backfit_iters {fit.backfit_iters}",
    ]
    for key, value in (
        ("loglik", fit.loglik),
        ("aic", fit.aic),
        ("effective_dof", fit.effective_dof),
    ):
        lines.append(f"{key} {value:.10g}" if value is not None else f"{key} unavailable")
    for row in fit.constant_table():
        lines.append(
            f"coef {row['coef_name']} block {row['block']} "
            f"estimate {row['estimate']:.10g} se {row['stderr']:.10g} "
            f"se_model {row['stderr_model']:.10g}"
        )
    for block, curve in fit.varying_curves.items():
        lines.append(
            f"curve block {block} coefs {','.join(curve.coef_names)} "
            f"ages {curve.grid[0]:.10g}..{curve.grid[-1]:.10g} file {curve_path}"
        )
    if fit.baseline is not None:
        lines.append(f"baseline per_unit_rate {fit.baseline.per_unit_rate():.10g}")
        lines.append(f"baseline file {baseline_path}")
    if fit.message:
        lines.append(f"note {fit.message}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


_CURVE_COLUMNS = ("age", "coef_name", "estimate", "stderr", "ci_lo", "ci_hi", "converged")


def _write_curve_csv(path, fit, cfg: SolverConfig) -> None:
    """Long-format per-age coefficient table; constants are tiled."""
    rows = []
    if fit.varying_joint is not None:
        rows.extend(curve_rows(fit.varying_joint))
    grid = fit.varying_joint.grid if fit.varying_joint is not None else default_grid(cfg)
    for crow in fit.constant_table():
        se = crow["stderr"]
        for a in grid:
            rows.append(
                {
                    "age": a,
                    "coef_name": crow["coef_name"],
                    "estimate": crow["estimate"],
                    "stderr": se,
                    "ci_lo": crow["estimate"] - 1.959963984540054 * se,
                    "ci_hi": crow["estimate"] + 1.959963984540054 * se,
                    "converged": fit.converged,
                }
            )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CURVE_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("age", "estimate", "stderr", "ci_lo", "ci_hi"):
                out[key] = f"{row[key]:.10g}" if np.isfinite(row[key]) else ""
            out["converged"] = str(bool(row["converged"])).lower()
            writer.writerow(out)


def read_curve_csv(path) -> list[dict]:
    """Read back a curve CSV; numbers parsed, blanks become NaN."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            parsed = dict(row)
            for key in ("age", "estimate", "stderr", "ci_lo", "ci_hi"):
                parsed[key] = float(row[key]) if row[key] else float("nan")
            parsed["converged"] = row["converged"] == "true"
            rows.append(parsed)
    return rows


def _add_common_fit_flags(p: _Parser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--data", help="cohort CSV path")
    p.add_argument("--census", help="census CSV path (population target)")
    p.add_argument("--model", help="three-letter block spec, e.g. CCC or CVV")
    p.add_argument("--target", help="cohort (default) or population")
    p.add_argument("--bandwidth", help="kernel bandwidth in years (default 1)")
    p.add_argument("--tau-left", help="left evaluation bound (default 1)")
    p.add_argument("--tau-right", help="right evaluation bound (default 17)")
    p.add_argument("--grid-step", help="grid spacing in years (default 1/6)")
    p.add_argument("--k-missing", help="birthdate draws per missing record (default 100)")
    p.add_argument("--seed", help="seed for birthdate augmentation (default 0)")
    p.add_argument(
        "--window",
        action="append",
        help="LABEL=START..END extraction window (repeatable; overrides defaults)",
    )


def _build_parser() -> _Parser:
    parser = _Parser(prog="recurve", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p_fit = sub.add_parser("fit", help="fit one model and write results files")
    _add_common_fit_flags(p_fit)
    p_fit.add_argument("--out-prefix", help="output path prefix (default fit)")

    p_base = sub.add_parser("baseline", help="fit a model and write only its baseline")
    _add_common_fit_flags(p_base)
    p_base.add_argument("--out", help="baseline CSV path (default baseline.csv)")

    p_sim = sub.add_parser("simulate", help="run a replicate study")
    p_sim.add_argument("--config", help="flat key=value config file")
    p_sim.add_argument("--setting", help="s1case1, s1case2, or s2")
    p_sim.add_argument("--n", help="subjects per replicate (default 50000)")
    p_sim.add_argument("--reps", help="replicates (default 300)")
    p_sim.add_argument("--seed", help="study seed (default 20170401)")
    p_sim.add_argument("--threads", help="worker processes; 1 reproduces any N")
    p_sim.add_argument("--analyses", help="comma list of ids; ranges like B.1.1..B.1.6")
    p_sim.add_argument(
        "--degrade-early",
        help="strip early-pull birthdates: true (default) or false",
    )
    p_sim.add_argument("--out-prefix", help="output path prefix (default study)")
    p_sim.add_argument("--dump-data", help="directory for one replicate's raw datasets")
    p_sim.add_argument("--dump-rep", help="replicate index to dump (default 0)")

    p_val = sub.add_parser(
        "validate-census", help="check census coverage against a cohort"
    )
    p_val.add_argument("--config", help="flat key=value config file")
    p_val.add_argument("--data", help="cohort CSV path")
    p_val.add_argument("--census", help="census CSV path")
    p_val.add_argument("--threshold", help="relative slack for the coverage check")
    p_val.add_argument(
        "--window",
        action="append",
        help="LABEL=START..END extraction window (repeatable; overrides defaults)",
    )
    return parser


def _parser_keys(parser: _Parser, command: str) -> set[str]:
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        sub = action.choices.get(command)
        if sub is not None:
            return {
                a.dest for a in sub._actions if a.dest not in ("help",)  # noqa: SLF001
            }
    return set()


def _prepare_fit(args):
    if not args.data:
        raise UsageError("--data is required")
    if not args.model:
        raise UsageError("--model is required")
    target = (args.target or "cohort").strip().lower()
    if target not in ("cohort", "population"):
        raise UsageError(f"--target must be cohort or population, got {args.target!r}")
    if target == "population" and not args.census:
        raise UsageError("--census is required when --target population")
    if target == "cohort" and args.census:
        raise UsageError("--census only applies to --target population")
    spec = ModelSpec.parse(args.model, target=target)
    windows = _windows_from(args)
    data = ingest_csv(args.data, windows)
    census = ingest_census_csv(args.census) if args.census else None
    cfg = _solver_from(args)
    kernel = KernelSpec(
        bandwidth_h=_to_float(
            args.bandwidth if args.bandwidth is not None else 1.0, "--bandwidth"
        )
    )
    k_missing = _to_int(
        args.k_missing if args.k_missing is not None else DEFAULT_K, "--k-missing"
    )
    seed = _to_int(args.seed if args.seed is not None else 0, "--seed")
    fit = fit_model(
        spec, data, census=census, cfg=cfg, kernel=kernel,
        k_missing=k_missing, seed=seed,
    )
    return fit, cfg


def _cmd_fit(args) -> int:
    fit, cfg = _prepare_fit(args)
    prefix = args.out_prefix or "fit"
    curve_path = f"{prefix}_curve.csv"
    baseline_path = f"{prefix}_baseline.csv"
    results_path = f"{prefix}_results.txt"
    _write_curve_csv(curve_path, fit, cfg)
    if fit.baseline is not None:
        write_baseline_csv(fit.baseline, baseline_path)
    _write_results_text(results_path, fit, curve_path, baseline_path)
    print(f"results {results_path}")
    print(f"curve {curve_path}")
    if fit.baseline is not None:
        print(f"baseline {baseline_path}")
    return EXIT_OK if fit.converged else EXIT_PARTIAL


def _cmd_baseline(args) -> int:
    fit, _ = _prepare_fit(args)
    if fit.baseline is None:
        raise RecurveError(f"baseline unavailable: {fit.message or 'fit failed'}")
    out = args.out or "baseline.csv"
    write_baseline_csv(fit.baseline, out)
    print(f"baseline {out}")
    return EXIT_OK if fit.converged else EXIT_PARTIAL


def _cmd_simulate(args) -> int:
    token = (args.setting or "s1case2").strip().lower()
    if token not in _SETTINGS:
        raise UsageError(
            f"--setting must be one of {', '.join(sorted(_SETTINGS))}, got {token!r}"
        )
    setting, case = _SETTINGS[token]
    analyses = _expand_analyses(args.analyses) if args.analyses else ()
    try:
        cfg = SimConfig(
            setting=setting,
            case=case,
            n=_to_int(args.n if args.n is not None else 50_000, "--n"),
            reps=_to_int(args.reps if args.reps is not None else 300, "--reps"),
            seed=_to_int(args.seed if args.seed is not None else 20170401, "--seed"),
            threads=_to_int(args.threads if args.threads is not None else 1, "--threads"),
            degrade_early=_to_bool(
                args.degrade_early if args.degrade_early is not None else True,
                "--degrade-early",
            ),
            analyses=analyses,
        )
    except RecurveError as exc:
        raise UsageError(str(exc)) from exc

    if args.dump_data:
        rep = _to_int(args.dump_rep if args.dump_rep is not None else 0, "--dump-rep")
        for path in dump_replicate(cfg, rep, args.dump_data):
            print(f"dumped {path}")

    study = replicate_study(cfg)
    prefix = args.out_prefix or "study"
    csv_path = f"{prefix}.csv"
    text_path = f"{prefix}.txt"
    write_study_csv(study, csv_path)
    text = format_study_text(study)
    with open(text_path, "w", encoding="utf-8") as fh:
        fh.write(text)
    sys.stdout.write(text)
    print(f"table {csv_path}")
    print(f"text {text_path}")
    failed = sum(s.n_failed for s in study.summaries)
    return EXIT_PARTIAL if failed else EXIT_OK


def _cmd_validate_census(args) -> int:
    if not args.data or not args.census:
        raise UsageError("--data and --census are required")
    windows = _windows_from(args)
    cohort = ingest_csv(args.data, windows)
    census = ingest_census_csv(args.census)
    threshold = _to_float(
        args.threshold if args.threshold is not None else 0.1, "--threshold"
    )
    report = validate_ac(census, cohort, threshold=threshold)
    print(report.summary())
    return EXIT_OK if report.ok else EXIT_ERROR


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("a command is required (fit, baseline, simulate, validate-census)")
        _fill_from_config(args, _parser_keys(parser, args.command))
        if args.command == "fit":
            return _cmd_fit(args)
        if args.command == "baseline":
            return _cmd_baseline(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        return _cmd_validate_census(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except RecurveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
