"""Command-line frontend: config parsing, experiment dispatch, report files.

Each subcommand maps onto one study driver.  A run writes ``report.json``
and ``tables.csv`` (plus ``plot.svg`` when the rows form a mesh ladder)
into the output directory, prints one line per recorded failure, and
exits 0 on success, 1 when the report carries failures, 2 on usage or
config errors.

Config files are plain ``key = value`` lines.  ``#`` starts a comment;
``[section]`` headers may group lines but the keyspace stays flat, so a
key may appear at most once per file.  Values parse by shape: commas
build tuples, semicolons separate tuples of tuples, ``true``/``false``
become booleans, ``none`` becomes null, and numeric tokens become int or
float (``inf`` and ``nan`` stay strings so reports remain valid JSON).
Every config key doubles as a ``--kebab-case`` flag overriding the file
value; ``out`` selects the output directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import pathlib
import sys

import numpy as np

from . import verify
from .mesh import generate_unit_square, save_mesh

__all__ = [
    "SCHEMA_VERSION",
    "CliError",
    "coerce_value",
    "parse_config",
    "emit",
    "run",
    "main",
]

SCHEMA_VERSION = 1


class CliError(Exception):
    """Usage or config problem; maps to exit code 2."""


# subcommand -> (driver, flag/key schema); keys double as --kebab-case flags
_EXPERIMENTS = {
    "solve": (verify.solve_study, verify._SOLVE_DEFAULTS),
    "conv": (verify.conv_study, verify._CONV_DEFAULTS),
    "best-approx": (verify.best_approx_ratio, verify._BEST_DEFAULTS),
    "interior": (verify.interior_study, verify._INTERIOR_DEFAULTS),
    "resolvent": (verify.resolvent_trend, verify._RESOLVENT_DEFAULTS),
    "maxreg": (verify.maxreg_check, verify._MAXREG_DEFAULTS),
    "greens": (verify.greens_norm_scan, verify._GREENS_DEFAULTS),
    "lemmas": (verify.lemma_suite, verify._LEMMA_DEFAULTS),
    "lemma42": (verify.lemma42_report, verify._LEMMA42_DEFAULTS),
}


def _coerce_token(tok: str):
    text = tok.strip()
    low = text.lower()
    if low == "none":
        return None
    if low == "true":
        return True
    if low == "false":
        return False
    try:
        return int(text)
    except ValueError:
        pass
    # inf/nan tokens stay strings: reports must serialize to strict JSON
    if low not in ("inf", "+inf", "-inf", "nan"):
        try:
            return float(text)
        except ValueError:
            pass
    return text


def coerce_value(raw: str):
    """Parse one config value: scalar, comma tuple, or semicolon groups."""
    if ";" in raw:
        groups = [g for g in raw.split(";") if g.strip()]
        return tuple(coerce_value(g) for g in groups)
    if "," in raw:
        toks = [t for t in raw.split(",") if t.strip()]
        return tuple(_coerce_token(t) for t in toks)
    return _coerce_token(raw)


def _shape_like(value, default):
    """Lift a parsed value to the container shape of the driver default."""
    if isinstance(default, tuple):
        nested = bool(default) and isinstance(default[0], tuple)
        if not isinstance(value, tuple):
            value = (value,)
        if nested and value and not isinstance(value[0], tuple):
            value = (value,)
    return value


def parse_config(path) -> dict:
    """Read a flat ``key = value`` config file into raw string values."""
    try:
        text = pathlib.Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            continue
        if "=" not in body:
            raise CliError(f"{path}:{lineno}: expected key = value, got {body!r}")
        key, raw = body.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise CliError(f"{path}:{lineno}: empty key")
        if key in values:
            raise CliError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = raw.strip()
    return values


def _report_dict(report: verify.ExperimentReport) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "experiment": report.experiment,
        "config": report.config,
        "rows": report.rows,
        "fits": report.fits,
        "provenance": report.provenance,
    }


def _write_json(report, path: pathlib.Path) -> None:
    payload = json.dumps(_report_dict(report), indent=2, allow_nan=False)
    path.write_text(payload + "\n")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(report, path: pathlib.Path) -> None:
    keys = sorted({k for row in report.rows for k in row["metrics"]})
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["h", "k", "q", "r", *keys, "flags"])
        for row in report.rows:
            cells = [_cell(row[c]) for c in ("h", "k", "q", "r")]
            cells += [_cell(row["metrics"].get(key)) for key in keys]
            cells.append(";".join(row["flags"]))
            writer.writerow(cells)


def _ladder_series(rows) -> dict:
    """Positive metrics observed at >= 2 distinct mesh sizes, one per h."""
    series = {}
    keys = sorted({k for row in rows for k in row["metrics"]})
    for key in keys:
        pts = []
        seen = set()
        unique = True
        for row in rows:
            h, val = row["h"], row["metrics"].get(key)
            if not isinstance(h, float) or not isinstance(val, float):
                continue
            if h <= 0.0 or val <= 0.0 or not math.isfinite(val):
                continue
            if h in seen:
                unique = False
                break
            seen.add(h)
            pts.append((h, val))
        if unique and len(pts) >= 2:
            series[key] = sorted(pts)
    return series


def _write_plot(report, series: dict, path: pathlib.Path) -> None:
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    # hashed ids, plain text, and no Date stamp keep the SVG byte-reproducible
    matplotlib.rcParams["svg.hashsalt"] = "heatwave"
    matplotlib.rcParams["svg.fonttype"] = "none"
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for key in sorted(series):
        hs = np.array([p[0] for p in series[key]])
        vals = np.array([p[1] for p in series[key]])
        ax.loglog(hs, vals, marker="o", label=key)
        slope, logc = np.polyfit(np.log(hs), np.log(vals), 1)
        ax.loglog(
            hs,
            np.exp(logc) * hs**slope,
            linestyle="--",
            color="0.4",
            linewidth=0.9,
        )
    ax.set_xlabel("h")
    ax.set_ylabel("value")
    ax.set_title(report.experiment)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=7)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit(report: verify.ExperimentReport, out_dir) -> None:
    """Write report.json, tables.csv, and plot.svg (ladders) to out_dir."""
    out = pathlib.Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(report, out / "report.json")
        _write_csv(report, out / "tables.csv")
        series = _ladder_series(report.rows)
        if series:
            _write_plot(report, series, out / "plot.svg")
    except OSError as exc:
        raise CliError(f"cannot write report to {out_dir}: {exc}") from None


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heatwave",
        description="space-time heat equation studies and report generation",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name, (_, defaults) in _EXPERIMENTS.items():
        p = sub.add_parser(name, help=f"run the {name} study")
        p.add_argument("--config", default=None, help="config file path")
        p.add_argument("--out", default=None, help="output directory (default: out)")
        for key in defaults:
            p.add_argument(
                "--" + key.replace("_", "-"),
                dest=key,
                default=None,
                metavar="V",
                help=f"override {key}",
            )
    mesh = sub.add_parser("mesh", help="generate a structured unit-square mesh")
    mesh.add_argument("--n", type=int, default=8, help="cells per side")
    mesh.add_argument("--out", default="mesh.txt", help="mesh file path")
    return parser


def _run_experiment(args) -> int:
    driver, defaults = _EXPERIMENTS[args.command]
    cfg: dict = {}
    out_dir = "out"
    if args.config is not None:
        for key, raw in parse_config(args.config).items():
            if key == "out":
                out_dir = raw
                continue
            if key not in defaults:
                raise CliError(
                    f"{args.config}: unknown key {key!r} for {args.command}"
                )
            cfg[key] = _shape_like(coerce_value(raw), defaults[key])
    for key, default in defaults.items():
        raw = getattr(args, key)
        if raw is not None:
            cfg[key] = _shape_like(coerce_value(raw), default)
    if args.out is not None:
        out_dir = args.out
    report = driver(cfg)
    emit(report, out_dir)
    for line in report.failures:
        print(f"FAIL: {line}", file=sys.stderr)
    print(
        f"{report.experiment}: {len(report.rows)} rows, "
        f"{len(report.failures)} failures -> {out_dir}"
    )
    return 1 if report.failures else 0


def _run_mesh(args) -> int:
    mesh = generate_unit_square(args.n)
    try:
        save_mesh(mesh, args.out)
    except OSError as exc:
        raise CliError(f"cannot write mesh to {args.out}: {exc}") from None
    print(f"mesh: {len(mesh.vertices)} vertices, {len(mesh.cells)} cells -> {args.out}")
    return 0


def run(argv=None) -> int:
    """Parse argv and execute one subcommand; returns the exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        if args.command == "mesh":
            return _run_mesh(args)
        return _run_experiment(args)
    except CliError as exc:
        print(f"heatwave: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"heatwave: {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
