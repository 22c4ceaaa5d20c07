"""Command-line front end: run tests on CSV data, reproduce simulation tables."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .regression import residualize_group_mean, residualize_linear, residualize_nw
from .resampling import ResamplingPlan, TestReport, bootstrap_test_l, \
    ci_permutation_test, covariate_permutation_test, hkz_test, permutation_test_l
from .sample import DegenerateSampleError, DegenerateVarianceError, \
    ExperimentSample, InputError
from .simulation import DGPConfig, MonteCarloResult, TestConfig, VariationFlags, \
    NOCOV_FAMILIES, run_size_power, size_adjusted_power
from .stats import t_stat_test

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DEGENERATE = 2
EXIT_INTERNAL = 3

_MISSING = {"", "na", "nan", "null", "none"}

_METHOD_NAMES = {
    "boot": "bootstrap",
    "perm": "permutation",
    "ciperm": "ci_permutation",
    "covperm": "covariate_permutation",
}


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in _MISSING


def _parse_number(cell: str, column: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError:
        raise InputError(
            f"line {line}: cannot parse {column!r} value {cell.strip()!r} as a number"
        )


def ingest_csv(path: str, outcome: str, treatment: str,
               covariates: list[str] | None = None):
    """Read an experiment sample from a headed CSV file.

    Rows with a missing outcome or treatment are dropped and counted per
    column, as are rows missing a selected covariate. Unparseable numbers
    and treatment values other than 0/1 abort with the offending line
    number.

    Returns
    -------
    (ExperimentSample, dict)
        The typed sample and a per-column count of dropped rows.
    """
    covariates = covariates or []
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}")
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path} is empty")
        header = [h.strip() for h in header]
        wanted = [outcome, treatment, *covariates]
        missing_cols = [c for c in wanted if c not in header]
        if missing_cols:
            raise InputError(f"columns not found in {path}: {missing_cols}")
        idx = {c: header.index(c) for c in wanted}

        outcomes, treatments, rows_x = [], [], []
        drops = {c: 0 for c in wanted}
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise InputError(f"line {line}: expected {len(header)} fields, "
                                 f"got {len(row)}")
            cells = {c: row[idx[c]] for c in wanted}
            dropped = False
            for c in wanted:
                if _is_missing(cells[c]):
                    drops[c] += 1
                    dropped = True
                    break
            if dropped:
                continue
            d = _parse_number(cells[treatment], treatment, line)
            if d not in (0.0, 1.0):
                raise InputError(
                    f"line {line}: treatment must be 0 or 1, got {cells[treatment].strip()!r}"
                )
            outcomes.append(_parse_number(cells[outcome], outcome, line))
            treatments.append(int(d))
            if covariates:
                rows_x.append([_parse_number(cells[c], c, line) for c in covariates])

    if not outcomes:
        raise InputError(f"{path}: no usable rows after dropping incomplete ones")
    x = np.asarray(rows_x) if covariates else None
    try:
        sample = ExperimentSample(np.asarray(outcomes), np.asarray(treatments), x)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}")
    return sample, drops


def write_sample_csv(sample: ExperimentSample, path: str,
                     outcome: str = "outcome", treatment: str = "treatment",
                     covariates: list[str] | None = None) -> None:
    """Write a sample back to CSV with full float precision."""
    q = sample.n_covariates
    names = covariates or [f"x{k + 1}" for k in range(q)]
    if len(names) != q:
        raise ValueError("covariate name count does not match the sample")
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow([outcome, treatment, *names])
        for i in range(sample.n):
            row = [repr(float(sample.outcomes[i])), int(sample.treatments[i])]
            if q:
                row += [repr(float(v)) for v in sample.covariates[i]]
            writer.writerow(row)


def ecp_pct(ecp: float) -> float:
    """ECP in percentage points, two decimals, ties to even."""
    return round(100.0 * ecp, 2)


def _report_payload(report: TestReport, args) -> dict:
    payload = {
        "statistic": report.statistic_kind,
        "theta": args.theta,
        "observed": report.observed,
        "ecp_pct": ecp_pct(report.ecp),
        "p_value": report.p_value,
        "reject": report.reject,
        "alpha": args.alpha,
        "method": _METHOD_NAMES[args.method],
        "B": report.B_effective,
        "seed": args.seed,
    }
    if args.method == "ciperm":
        payload["m"] = args.m
        payload["ci_level"] = args.ci_level
        payload["tau_grid"] = list(report.tau_grid)
    if args.method == "covperm":
        payload["residualization"] = args.residualization
    payload["diagnostics"] = report.diagnostics
    return payload


def _emit(payload: dict, out: str | None, fmt: str) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2, default=str) + "\n"
    else:
        flat = {k: (json.dumps(v) if isinstance(v, (dict, list)) else v)
                for k, v in payload.items()}
        import io
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(flat))
        writer.writeheader()
        writer.writerow(flat)
        text = buf.getvalue()
    if out:
        with open(out, "w", encoding="utf-8") as handle:
            handle.write(text)
    else:
        sys.stdout.write(text)


def _cmd_test(args) -> int:
    covs = args.covariates or []
    if args.stat in ("d_theta",) and not covs:
        raise InputError("--stat d_theta requires --covariates")
    sample, drops = ingest_csv(args.input, args.outcome, args.treatment, covs)

    if args.stat == "tstat":
        z, p = t_stat_test(sample, args.theta)
        payload = {
            "statistic": "tstat",
            "theta": args.theta,
            "observed": z,
            "ecp_pct": ecp_pct(0.5 * math.erfc(-z / math.sqrt(2.0))),
            "p_value": p,
            "reject": p <= args.alpha,
            "alpha": args.alpha,
            "method": "asymptotic",
            "B": 0,
            "seed": args.seed,
            "diagnostics": {"dropped_rows": drops},
        }
        _emit(payload, args.out, args.format)
        return EXIT_OK

    method = _METHOD_NAMES[args.method]
    plan = ResamplingPlan(method=method, replicates=args.B, seed=args.seed,
                          grid_size=args.m, ci_level=args.ci_level,
                          alpha=args.alpha)
    if method == "bootstrap":
        if args.stat == "l_theta":
            report = bootstrap_test_l(sample, args.theta, plan)
        elif args.stat == "hkz":
            report = hkz_test(sample, args.theta, plan)
        else:
            raise InputError(f"--method boot does not support --stat {args.stat}")
    elif method == "permutation":
        if args.stat == "l_theta":
            report = permutation_test_l(sample, args.theta, plan)
        elif args.stat == "hkz":
            report = hkz_test(sample, args.theta, plan)
        else:
            raise InputError(f"--method perm does not support --stat {args.stat}")
    elif method == "ci_permutation":
        if args.stat not in ("l_theta", "hkz"):
            raise InputError(f"--method ciperm does not support --stat {args.stat}")
        report = ci_permutation_test(sample, args.stat, args.theta, plan)
    else:
        if args.stat != "d_theta":
            raise InputError(f"--method covperm requires --stat d_theta")
        report = covariate_permutation_test(sample, args.theta, plan,
                                            residualization=args.residualization,
                                            unit_shift=args.unit_shift)
    report.diagnostics["dropped_rows"] = drops
    _emit(_report_payload(report, args), args.out, args.format)
    return EXIT_OK


def _cmd_residualize(args) -> int:
    covs = args.covariates or []
    sample, drops = ingest_csv(args.input, args.outcome, args.treatment, covs)
    if args.residualization == "group_mean":
        resid = residualize_group_mean(sample)
    elif args.residualization == "nadaraya_watson":
        if not covs:
            raise InputError("nadaraya_watson residualization requires --covariates")
        resid = residualize_nw(sample)
    else:
        resid = residualize_linear(sample)
    out = args.out or "-"
    rows = [("residual", "treatment")]
    rows += [(repr(float(r)), int(d))
             for r, d in zip(resid.residuals, resid.treatments)]
    if out == "-":
        writer = csv.writer(sys.stdout)
        writer.writerows(rows)
    else:
        with open(out, "w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerows(rows)
    if drops and any(drops.values()):
        print(f"dropped rows: {drops}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Simulation presets

_DEFAULT_SIZES = {
    "table1": (50, 80, 100, 200, 1000),
    "table2": (50, 100, 400, 800, 1000),
    "table3": (200, 500, 1000, 2000, 5000),
    "table4": (50, 100, 400, 800, 1000),
}


def build_preset_cells(preset: str, sizes, B: int):
    """Cell grid for one of the paper-style table layouts."""
    cells = []
    if preset == "table1":
        tests = [TestConfig("l_theta", "boot", B=B),
                 TestConfig("l_theta", "perm", B=B),
                 TestConfig("l_theta", "ciperm", B=B),
                 TestConfig("hkz", "boot", B=B),
                 TestConfig("hkz", "perm", B=B),
                 TestConfig("hkz", "ciperm", B=B)]
        for family in NOCOV_FAMILIES:
            for n in sizes:
                for tc in tests:
                    cells.append((DGPConfig(family=family, n=n), tc))
    elif preset == "table2":
        tests = [TestConfig("l_theta", "ciperm", B=B),
                 TestConfig("hkz", "ciperm", B=B)]
        for family in NOCOV_FAMILIES:
            for sigma in (0.2, 0.5):
                for n in sizes:
                    for tc in tests:
                        cells.append(
                            (DGPConfig(family=family, n=n, sigma_tau=sigma), tc))
    elif preset == "table3":
        variations = [VariationFlags(False, False), VariationFlags(False, True),
                      VariationFlags(True, False), VariationFlags(True, True)]
        for n in sizes:
            for flags in variations:
                cells.append((DGPConfig(family="covariate_linear", n=n,
                                        variation=flags),
                              TestConfig("d_theta", "covperm", B=B)))
    elif preset == "table4":
        for family in NOCOV_FAMILIES:
            for sigma in (0.2, 0.5):
                for n in sizes:
                    for stat in ("l_theta", "hkz"):
                        cells.append((DGPConfig(family=family, n=n,
                                                sigma_tau=sigma),
                                      TestConfig(stat, "perm", B=B)))
    else:
        raise InputError(f"unknown preset {preset!r}")
    return cells


def _text_table(result: MonteCarloResult) -> str:
    """Panel layout: one block per (family, sigma/variation), rows by n."""
    rows = result.rows()
    tests = sorted({r["test_id"] for r in rows})
    panels = sorted({(r["family"], r["sigma_tau"], r["variation"]) for r in rows})
    lines = []
    for family, sigma, variation in panels:
        tag = f"family={family}"
        if sigma:
            tag += f" sigma_tau={sigma}"
        if variation:
            tag += f" variation={variation}"
        lines.append(tag)
        lines.append("  ".join(["n".rjust(6)] + [t.rjust(18) for t in tests]))
        ns = sorted({r["n"] for r in rows
                     if (r["family"], r["sigma_tau"], r["variation"])
                     == (family, sigma, variation)})
        for n in ns:
            cells = []
            for t in tests:
                match = [r for r in rows
                         if (r["family"], r["sigma_tau"], r["variation"], r["n"],
                             r["test_id"]) == (family, sigma, variation, n, t)]
                cells.append(f"{100 * match[0]['rejection_rate']:.1f}"
                             if match else "")
            lines.append("  ".join([str(n).rjust(6)]
                                   + [c.rjust(18) for c in cells]))
        lines.append("")
    return "\n".join(lines)


def _cmd_simulate(args) -> int:
    sizes = args.sizes or _DEFAULT_SIZES[args.preset]
    if not sizes:
        raise InputError("empty size grid")
    cells = build_preset_cells(args.preset, sizes, args.B)
    if not cells:
        raise InputError("simulation grid is empty")
    runner = size_adjusted_power if args.preset == "table4" else run_size_power
    result = runner(cells, args.replications, master_seed=args.seed)

    rows = result.rows()
    base = args.out or "simulation"
    with open(base + ".json", "w", encoding="utf-8") as handle:
        json.dump({"master_seed": result.master_seed, "cells": rows}, handle,
                  indent=2)
    with open(base + ".csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    if args.text:
        with open(base + ".txt", "w", encoding="utf-8") as handle:
            handle.write(_text_table(result))
    print(f"wrote {base}.json and {base}.csv ({len(rows)} cells)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument plumbing

def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _str_list(text: str) -> list[str]:
    return [tok.strip() for tok in text.split(",") if tok.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetfx",
        description="Characteristic-function tests for treatment effect "
                    "heterogeneity in randomized experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    test = sub.add_parser("test", help="run a test on a CSV experiment file")
    test.add_argument("--config", help="TOML file with default option values")
    test.add_argument("--input", help="CSV file with a header row")
    test.add_argument("--outcome", help="outcome column name")
    test.add_argument("--treatment", help="treatment column name (values 0/1)")
    test.add_argument("--covariates", type=_str_list,
                      help="comma-separated covariate column names")
    test.add_argument("--stat", choices=("l_theta", "hkz", "d_theta", "tstat"))
    test.add_argument("--method", choices=("boot", "perm", "ciperm", "covperm"))
    test.add_argument("--theta", type=float)
    test.add_argument("--B", type=int, dest="B")
    test.add_argument("--alpha", type=float)
    test.add_argument("--m", type=int)
    test.add_argument("--ci-level", type=float, dest="ci_level")
    test.add_argument("--seed", type=int)
    test.add_argument("--residualization",
                      choices=("linear_interaction", "nadaraya_watson"))
    test.add_argument("--unit-shift", action="store_true", dest="unit_shift",
                      default=None,
                      help="use per-unit treatment shifts in the covariate test")
    test.add_argument("--out", help="output path (default: stdout)")
    test.add_argument("--format", choices=("json", "csv"))

    res = sub.add_parser("residualize", help="write regression residuals to CSV")
    res.add_argument("--config")
    res.add_argument("--input")
    res.add_argument("--outcome")
    res.add_argument("--treatment")
    res.add_argument("--covariates", type=_str_list)
    res.add_argument("--residualization",
                     choices=("linear_interaction", "nadaraya_watson",
                              "group_mean"))
    res.add_argument("--out")

    sim = sub.add_parser("simulate", help="reproduce the simulation tables")
    sim.add_argument("--config")
    sim.add_argument("--preset", choices=tuple(_DEFAULT_SIZES), required=True)
    sim.add_argument("--sizes", type=_int_list,
                     help="comma-separated sample sizes (default: paper grid)")
    sim.add_argument("--replications", type=int)
    sim.add_argument("--B", type=int, dest="B")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", help="output path prefix (default: simulation)")
    sim.add_argument("--text", action="store_true",
                     help="also write a panel-layout text table")
    return parser


_DEFAULTS = {
    "covariates": None,
    "stat": "l_theta",
    "method": "perm",
    "theta": 2.0,
    "B": 2000,
    "alpha": 0.05,
    "m": 21,
    "ci_level": 0.999,
    "seed": 0,
    "residualization": "linear_interaction",
    "unit_shift": False,
    "out": None,
    "format": "json",
    "replications": 2000,
    "sizes": None,
    "input": None,
    "outcome": None,
    "treatment": None,
}


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset options from the TOML config file, then hard defaults."""
    file_values = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, "rb") as handle:
                file_values = tomllib.load(handle)
        except OSError as exc:
            raise InputError(f"cannot open config {config_path}: {exc}")
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"cannot parse config {config_path}: {exc}")
    for key, value in file_values.items():
        key = key.replace("-", "_")
        if hasattr(args, key) and getattr(args, key) is None:
            if key == "covariates" and isinstance(value, str):
                value = _str_list(value)
            if key == "sizes" and isinstance(value, str):
                value = _int_list(value)
            setattr(args, key, value)
    for key, value in _DEFAULTS.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    return args


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args = _apply_config(args)
        if args.command == "test":
            if not args.input or not args.outcome or not args.treatment:
                raise InputError("test requires --input, --outcome and --treatment")
            return _cmd_test(args)
        if args.command == "residualize":
            if not args.input or not args.outcome or not args.treatment:
                raise InputError(
                    "residualize requires --input, --outcome and --treatment")
            return _cmd_residualize(args)
        return _cmd_simulate(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateSampleError, DegenerateVarianceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
