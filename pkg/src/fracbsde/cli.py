"""Command-line entry point: ``fracbsde run|validate|list-experiments``.

Configs are YAML mappings. Top-level keys:

    experiment, H, T, K, dt, N, degree, picard: {max, tol}, seed, workers,
    output_dir, params: {experiment-specific}

Unknown keys are rejected. ``FRACBSDE_OUTPUT_DIR`` overrides ``output_dir``.
Exit status: 0 all criteria pass, 1 some criterion fails, 2 error.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, FracBSDEError
from .experiments import EXPERIMENTS, PARAM_DEFAULTS, Outcome
from .kernel import validate_hurst
from .timegrid import TimeGrid

OUTPUT_ENV = "FRACBSDE_OUTPUT_DIR"

_TOP_KEYS = {"experiment", "H", "T", "K", "dt", "N", "degree", "picard", "seed", "workers",
             "output_dir", "params"}
_PICARD_KEYS = {"max", "tol"}


@dataclass
class ExperimentConfig:
    experiment: str
    H: float = 0.75
    T: float = 1.0
    K: float = 0.0
    dt: float = 1.0 / 64
    N: int = 20000
    degree: int = 2
    picard_max: int = 50
    tol: float = 1e-6
    seed: int = 20240101
    workers: int = 1
    output_dir: str = "results"
    params: dict = field(default_factory=dict)

    def canonical(self) -> dict:
        """Effective config in the file layout (workers excluded: it never changes results)."""
        d = asdict(self)
        d["picard"] = {"max": d.pop("picard_max"), "tol": d.pop("tol")}
        d.pop("workers")
        d.pop("output_dir")
        return d


def _number(raw: dict, key: str, kind, default):
    if key not in raw:
        return default
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key}: expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        return int(v)
    return float(v)


def config_from_mapping(raw) -> ExperimentConfig:
    """Validate a parsed mapping and fill defaults."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of keys to values")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    name = raw.get("experiment")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment: must be one of {', '.join(EXPERIMENTS)}, got {name!r}")
    cfg = ExperimentConfig(experiment=name)
    cfg.H = _number(raw, "H", float, cfg.H)
    cfg.T = _number(raw, "T", float, cfg.T)
    cfg.K = _number(raw, "K", float, cfg.K)
    cfg.dt = _number(raw, "dt", float, cfg.T / 64)
    cfg.N = _number(raw, "N", int, cfg.N)
    cfg.degree = _number(raw, "degree", int, cfg.degree)
    cfg.seed = _number(raw, "seed", int, cfg.seed)
    cfg.workers = _number(raw, "workers", int, cfg.workers)
    picard = raw.get("picard", {}) or {}
    if not isinstance(picard, dict):
        raise ConfigError("picard: expected a mapping")
    bad = set(picard) - _PICARD_KEYS
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join('picard.' + b for b in sorted(bad))}")
    cfg.picard_max = _number(picard, "max", int, cfg.picard_max)
    cfg.tol = _number(picard, "tol", float, cfg.tol)
    if "output_dir" in raw:
        cfg.output_dir = str(raw["output_dir"])

    params = raw.get("params", {}) or {}
    if not isinstance(params, dict):
        raise ConfigError("params: expected a mapping")
    defaults = copy.deepcopy(PARAM_DEFAULTS[name])
    bad = set(params) - set(defaults)
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join('params.' + b for b in sorted(bad))}")
    defaults.update(params)
    cfg.params = defaults
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    try:
        validate_hurst(cfg.H)
        for H in cfg.params.get("H_values") or []:
            validate_hurst(H)
    except FracBSDEError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.T <= 0:
        raise ConfigError("T must be positive")
    if cfg.K < 0:
        raise ConfigError("K must be nonnegative")
    if cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    try:
        TimeGrid(cfg.T, cfg.K, cfg.dt)
    except FracBSDEError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.degree < 0:
        raise ConfigError("degree must be nonnegative")
    if cfg.N <= cfg.degree + 1:
        raise ConfigError("N must exceed degree + 1")
    if cfg.picard_max < 1:
        raise ConfigError("picard.max must be at least 1")
    if cfg.tol <= 0:
        raise ConfigError("picard.tol must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    for key in ("delta",):
        if key in cfg.params:
            d = float(cfg.params[key])
            if d < 0:
                raise ConfigError("delta must be nonnegative")
            if abs(d / cfg.dt - round(d / cfg.dt)) > 1e-9:
                raise ConfigError("delta must be a multiple of dt")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    return config_from_mapping(raw if raw is not None else {})


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(_fmt(v) for v in r) + "\n")


def output_dir(cfg: ExperimentConfig) -> Path:
    base = os.environ.get(OUTPUT_ENV) or cfg.output_dir
    return Path(base) / cfg.experiment


def write_outputs(cfg: ExperimentConfig, outcome: Outcome) -> Path:
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, table in outcome.tables.items():
        fname = f"{name}.csv"
        write_csv(out / fname, table.header, table.rows)
        files.append(fname)
    write_csv(
        out / "criteria.csv",
        ["criterion", "value", "relation", "threshold", "margin", "passed"],
        [[c.name, c.value, c.relation, c.threshold, c.margin, c.passed] for c in outcome.criteria],
    )
    files.append("criteria.csv")
    manifest = {
        "config": cfg.canonical(),
        "seed": cfg.seed,
        "versions": {
            "fracbsde": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pyyaml": yaml.__version__,
        },
        "files": sorted(files),
        "passed": outcome.passed,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.6g} {c.relation} {c.threshold:.6g}"
             f" (margin {c.margin:.3g})" for c in outcome.criteria]
    lines.append(f"overall: {'PASS' if outcome.passed else 'FAIL'}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return out


def run_experiment(cfg: ExperimentConfig) -> tuple[int, Outcome, Path]:
    outcome = EXPERIMENTS[cfg.experiment](cfg)
    path = write_outputs(cfg, outcome)
    return (0 if outcome.passed else 1), outcome, path


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracbsde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment and write its results")
    run.add_argument("config")
    run.add_argument("--workers", type=int, default=None, help="override the worker count")
    val = sub.add_parser("validate", help="check a config and print the effective settings")
    val.add_argument("config")
    sub.add_parser("list-experiments", help="print the available experiment names")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-experiments":
        for name in EXPERIMENTS:
            print(name)
        return 0
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(yaml.safe_dump(cfg.canonical(), sort_keys=True), end="")
            return 0
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigError("workers must be at least 1")
            cfg.workers = args.workers
        status, outcome, path = run_experiment(cfg)
    except (FracBSDEError, FileNotFoundError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print((path / "summary.txt").read_text(), end="")
    print(f"results written to {path}")
    return status


if __name__ == "__main__":
    sys.exit(main())
