"""Batch command line: ``arekf-sim run|compare|sweep``.

Exit status: 0 on success, 1 on configuration or usage errors, 2 when any
scenario diverged (partial outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .config import ConfigError, ScenarioConfig, apply_overrides, load_config
from .simulation import MetricsReport, SimTrace, run_scenario

log = logging.getLogger("arekf_sim")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2

FILTER_NAMES = ("ekf", "arekf")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    config_path: Optional[Path] = None
    out_dir: Path = Path("out")
    seeds: Optional[list] = None
    overrides: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    filter: Optional[str] = None
    emit_trace: bool = True
    emit_metrics: bool = True
    emit_figures: bool = True

    def load(self) -> ScenarioConfig:
        config = load_config(self.config_path) if self.config_path else ScenarioConfig()
        overrides = dict(self.overrides)
        if self.filter:
            overrides["filter"] = self.filter
            if self.filter != "both" and "controller_source" not in overrides and config.controller_source != "true":
                overrides["controller_source"] = self.filter
        return apply_overrides(config, overrides) if overrides else config

    def scenarios(self) -> list[tuple[str, ScenarioConfig]]:
        """``(label, config)`` pairs for every seed / grid combination."""
        base = self.load()
        seeds = self.seeds if self.seeds is not None else [base.seed]
        keys = sorted(self.grid)
        combos = list(itertools.product(*(self.grid[k] for k in keys))) if keys else [()]
        out = []
        for combo in combos:
            cfg = apply_overrides(base, dict(zip(keys, combo))) if keys else base
            tag = "_".join(f"{k}={v}" for k, v in zip(keys, combo))
            for seed in seeds:
                label = f"{tag}_seed{seed}" if tag else f"seed{seed}"
                out.append((label, apply_overrides(cfg, {"seed": seed})))
        return out


# -- output -----------------------------------------------------------------

def trace_columns(n: int = 2) -> list[str]:
    cols = ["t"] + [f"q{i}" for i in range(1, n + 1)] + [f"dq{i}" for i in range(1, n + 1)]
    for name in FILTER_NAMES:
        cols += [f"q{i}_hat_{name}" for i in range(1, n + 1)]
        cols += [f"dq{i}_hat_{name}" for i in range(1, n + 1)]
    cols += [f"sigma{i}" for i in range(1, n + 1)]
    cols += [f"u{i}" for i in range(1, n + 1)]
    cols += [f"d{i}" for i in range(1, n + 1)]
    return cols + ["V"]


def _fmt(v) -> str:
    return repr(float(v))


def _write_rows(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([_fmt(v) for v in row])


def _estimate(trace: SimTrace, name: str) -> np.ndarray:
    if name in trace.estimates:
        return trace.estimates[name]
    return np.full_like(trace.x_true, np.nan)


def write_trace_csv(trace: SimTrace, path: Path):
    n = trace.sigma.shape[1]
    cols = [trace.t] + list(trace.x_true.T)
    for name in FILTER_NAMES:
        cols += list(_estimate(trace, name).T)
    cols += list(trace.sigma.T) + list(trace.u.T) + list(trace.d.T) + [trace.V]
    _write_rows(path, trace_columns(n), cols)


def write_figure_csvs(trace: SimTrace, out: Path):
    """Series behind the state-estimate, sliding-variable and torque plots."""
    n = trace.sigma.shape[1]
    est = {name: _estimate(trace, name) for name in FILTER_NAMES}
    figures = [(2, 0, "q1"), (3, n, "dq1"), (4, 1, "q2"), (5, n + 1, "dq2")]
    for fig, idx, label in figures:
        _write_rows(
            out / f"fig{fig}.csv",
            ["t", f"{label}_true", f"{label}_ekf", f"{label}_arekf"],
            [trace.t, trace.x_true[:, idx], est["ekf"][:, idx], est["arekf"][:, idx]],
        )
    err = trace.x_true[:, :n] - trace.q_ref
    _write_rows(
        out / "fig6.csv",
        ["t"] + [f"e{i}" for i in range(1, n + 1)] + [f"sigma{i}" for i in range(1, n + 1)] + ["sigma_norm"],
        [trace.t] + list(err.T) + list(trace.sigma.T) + [np.linalg.norm(trace.sigma, axis=1)],
    )
    _write_rows(out / "fig7.csv", ["t"] + [f"u{i}" for i in range(1, n + 1)], [trace.t] + list(trace.u.T))


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _nanmean(values):
    arr = np.asarray([np.nan if v is None else v for v in values], dtype=float)
    if arr.size == 0 or np.all(np.isnan(arr)):
        return None
    return float(np.nanmean(arr))


def aggregate(reports: Sequence[MetricsReport]) -> dict:
    out = {"runs": len(reports), "diverged": sum(r.diverged for r in reports), "filters": {}}
    names = sorted({k for r in reports for k in r.filters})
    for name in names:
        rows = [r.filters[name] for r in reports if name in r.filters]
        rmse = np.asarray([m.rmse for m in rows], dtype=float)
        out["filters"][name] = {
            "rmse": [float(v) for v in np.nanmean(rmse, axis=0)],
            "nees": _nanmean([m.nees for m in rows]),
        }
    out["tracking_rmse"] = [float(v) for v in np.nanmean([r.tracking_rmse for r in reports], axis=0)]
    out["settling_time"] = _nanmean([r.settling_time for r in reports])
    out["reach_time"] = _nanmean([r.reach_time for r in reports])
    out["max_abs_u"] = float(max(r.max_abs_u for r in reports))
    return out


def _run_all(manifest: RunManifest, scenarios) -> list[tuple[str, ScenarioConfig, SimTrace, MetricsReport]]:
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    single = len(scenarios) == 1
    results = []
    for label, cfg in scenarios:
        trace, report = run_scenario(cfg)
        target = manifest.out_dir if single else manifest.out_dir / label
        target.mkdir(parents=True, exist_ok=True)
        if manifest.emit_trace:
            write_trace_csv(trace, target / "trace.csv")
        if manifest.emit_figures:
            write_figure_csvs(trace, target)
        if report.diverged:
            log.warning("%s diverged at step %s: %s", label, report.failed_step, report.error)
        results.append((label, cfg, trace, report))
    return results


def _metrics_payload(results) -> dict:
    if len(results) == 1:
        label, cfg, _, report = results[0]
        return {"seed": cfg.seed, **report.to_dict()}
    runs = [{"label": label, "seed": cfg.seed, **report.to_dict()} for label, cfg, _, report in results]
    return {"runs": runs, "aggregate": aggregate([r[3] for r in results])}


def run_command(manifest: RunManifest) -> int:
    results = _run_all(manifest, manifest.scenarios())
    if manifest.emit_metrics:
        write_json(manifest.out_dir / "metrics.json", _metrics_payload(results))
    return EXIT_DIVERGED if any(r[3].diverged for r in results) else EXIT_OK


def sweep_command(manifest: RunManifest) -> int:
    if not manifest.seeds and not manifest.grid:
        raise UsageError("sweep needs --seeds or --grid")
    return run_command(manifest)


def comparison_table(agg: dict) -> str:
    ekf, arekf = agg["filters"]["ekf"], agg["filters"]["arekf"]
    labels = ["q1", "q2", "dq1", "dq2"] if len(ekf["rmse"]) == 4 else [f"x{i}" for i in range(len(ekf["rmse"]))]
    lines = [f"{'metric':<12}{'EKF':>16}{'AREKF':>16}"]
    for i, label in enumerate(labels):
        lines.append(f"{'rmse ' + label:<12}{ekf['rmse'][i]:>16.6g}{arekf['rmse'][i]:>16.6g}")
    fmt = lambda v: "n/a" if v is None else f"{v:.6g}"  # noqa: E731
    lines.append(f"{'nees':<12}{fmt(ekf['nees']):>16}{fmt(arekf['nees']):>16}")
    lines.append(f"settling time (s): {fmt(agg['settling_time'])}   reach time (s): {fmt(agg['reach_time'])}")
    lines.append(f"runs: {agg['runs']}   diverged: {agg['diverged']}")
    return "\n".join(lines)


def compare_command(manifest: RunManifest, stream=None) -> int:
    stream = stream or sys.stdout
    scenarios = manifest.scenarios()
    if any(cfg.filter != "both" for _, cfg in scenarios):
        raise UsageError("compare needs both filters enabled (filter: both)")
    results = _run_all(manifest, scenarios)
    reports = [r[3] for r in results]
    agg = aggregate(reports)
    payload = {
        "aggregate": agg,
        "runs": [{"label": label, "seed": cfg.seed, **rep.to_dict()} for label, cfg, _, rep in results],
    }
    write_json(manifest.out_dir / "comparison.json", payload)
    if manifest.emit_metrics:
        write_json(manifest.out_dir / "metrics.json", _metrics_payload(results))
    print(comparison_table(agg), file=stream)
    return EXIT_DIVERGED if any(r.diverged for r in reports) else EXIT_OK


# -- argument parsing ---------------------------------------------------------

def parse_seeds(text: str) -> list[int]:
    """``"20"`` -> seeds 0..19; ``"3,5,8"`` -> that list."""
    text = text.strip()
    try:
        if "," in text:
            return [int(s) for s in text.split(",") if s.strip()]
        count = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list {text!r}") from None
    if count < 1:
        raise argparse.ArgumentTypeError("seed count must be positive")
    return list(range(count))


def _key_value(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arekf-sim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run one scenario (or one per seed)"),
        ("compare", "EKF vs AREKF summary table and comparison.json"),
        ("sweep", "run a seed / parameter grid"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="YAML scenario file (defaults if omitted)")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seeds", type=parse_seeds, help="seed count N (0..N-1) or comma list")
        p.add_argument("--set", dest="overrides", type=_key_value, action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key (repeatable)")
        p.add_argument("--filter", choices=("ekf", "arekf", "both"))
        p.add_argument("--no-figures", action="store_true", help="skip fig*.csv")
        if name == "sweep":
            p.add_argument("--grid", type=_key_value, action="append", default=[],
                           metavar="KEY=V1,V2", help="parameter axis (repeatable)")
    return parser


def manifest_from_args(args) -> RunManifest:
    grid = {}
    for key, values in getattr(args, "grid", []) or []:
        grid[key] = [yaml.safe_load(v) for v in values.split(",")]
    return RunManifest(
        config_path=args.config,
        out_dir=args.out,
        seeds=args.seeds,
        overrides=dict(args.overrides),
        grid=grid,
        filter=args.filter,
        emit_figures=not args.no_figures,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    commands = {"run": run_command, "compare": compare_command, "sweep": sweep_command}
    try:
        manifest = manifest_from_args(args)
        return commands[args.command](manifest)
    except (ConfigError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
