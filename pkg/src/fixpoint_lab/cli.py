"""Command-line entry point: ``fixpoint-lab <subcommand> --config cfg.json --out dir``.

Config files are JSON objects with optional keys ``kind`` (must match the
subcommand), ``seed``, ``out`` and ``params`` (fields of the experiment's config
dataclass; unknown names are rejected). Relative paths inside ``params`` resolve
against the working directory. Every run writes ``config.resolved.json``,
``run.json`` and ``checks.json`` next to its artifacts.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__, experiments as ex
from .fixpoint import NonFiniteIterate
from .gnn import NotConverged, TrainingDiverged
from .lp import LpDatasetConfig, SimplexError
from .util import read_json, write_json

log = logging.getLogger("fixpoint_lab")

SEED_ENV = "FIXPOINT_LAB_SEED"
TOP_KEYS = {"kind", "seed", "out", "params"}


class ValidationError(Exception):
    pass


# kind -> (config dataclass, runner(cfg, out, base) -> checks, artifacts that must exist, evaluation-only)
EXPERIMENTS = {
    "regular-op": (ex.RegularOpConfig, lambda c, o, b: ex.regular_op_experiment(c, o),
                   ["profile.csv", "operator.csv", "fixed_points.csv", "lipschitz_growth.csv"], True),
    "reciprocal-demo": (ex.ReciprocalConfig, lambda c, o, b: ex.reciprocal_demo(c, o), ["reciprocal.csv"], True),
    "manifold": (ex.ManifoldRunConfig, lambda c, o, b: ex.manifold_experiment(c, o),
                 ["contraction.csv", "worked_examples.csv"], True),
    "lp-generate": (LpDatasetConfig, lambda c, o, b: ex.lp_generate(c, o), ["dataset"], True),
    "lp-train": (ex.LpTrainConfig, lambda c, o, b: ex.lp_train(c, o, b, _train_logger()),
                 ["checkpoint.json", "checkpoint.bin", "training_log.csv"], False),
    "lp-eval": (ex.LpEvalConfig, lambda c, o, b: ex.lp_eval(c, o, b), ["curve.csv"], True),
    "lipschitz-curve": (ex.LipschitzCurveConfig, lambda c, o, b: ex.lipschitz_curve_experiment(c, o),
                        ["curve.csv"], True),
    "solver-bench": (ex.SolverBenchConfig, lambda c, o, b: ex.solver_bench(c, o), ["solver_bench.csv"], True),
}


def _train_logger():
    def emit(row):
        log.info("epoch %d stage %d mse %.6g relerr %.6g", row.epoch, row.stage, row.train_mse, row.train_relerr)
    return emit


def load_config(kind: str, path: str | None) -> tuple[object, dict]:
    """Parse and validate a config file; returns (dataclass instance, resolved dict)."""
    cls = EXPERIMENTS[kind][0]
    raw: dict = {}
    if path is not None:
        try:
            raw = read_json(path)
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}")
        except json.JSONDecodeError as e:
            raise ValidationError(f"config is not valid JSON: {e}")
        if not isinstance(raw, dict):
            raise ValidationError("config must be a JSON object")
    extra = set(raw) - TOP_KEYS
    if extra:
        raise ValidationError(f"unknown config keys: {sorted(extra)}")
    if raw.get("kind", kind) != kind:
        raise ValidationError(f"config kind {raw['kind']!r} does not match subcommand {kind!r}")
    params = dict(raw.get("params", {}))
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(params) - names
    if unknown:
        raise ValidationError(f"unknown {kind} parameters: {sorted(unknown)}")
    seed = raw.get("seed", params.get("seed", 0))
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            seed = int(env)
        except ValueError:
            raise ValidationError(f"{SEED_ENV} must be an integer, got {env!r}")
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ValidationError(f"seed must be a nonnegative integer, got {seed!r}")
    params["seed"] = seed
    try:
        cfg = cls(**params)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"invalid {kind} parameters: {e}")
    resolved = {"kind": kind, "seed": seed, "out": raw.get("out"), "params": dataclasses.asdict(cfg)}
    return cfg, resolved


def run_experiment(kind: str, config_path: str | None, out: str | None, threads: int = 1) -> dict:
    cfg, resolved = load_config(kind, config_path)
    out_dir = Path(out or resolved["out"] or f"runs/{kind}")
    resolved["out"] = str(out_dir)
    _, runner, _, eval_only = EXPERIMENTS[kind]
    if threads < 1:
        raise ValidationError("--threads must be at least 1")
    if not eval_only and threads != 1:
        log.warning("%s is a training run; forcing 1 thread", kind)
        threads = 1
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.resolved.json", resolved)
    base = Path.cwd()
    with threadpool_limits(limits=threads):
        checks = runner(cfg, out_dir, base)
    write_json(out_dir / "checks.json", checks)
    write_json(out_dir / "run.json", {"kind": kind, "seed": resolved["seed"], "version": __version__})
    return checks


def report(out: str) -> dict:
    """Collect every run under ``out`` (directories holding ``run.json``) into ``summary.json``."""
    root = Path(out)
    if not root.is_dir():
        raise ValidationError(f"report directory not found: {out}")
    runs = sorted(p.parent for p in root.rglob("run.json"))
    if not runs:
        raise ValidationError(f"no runs found under {out}")
    summary: dict = {"runs": {}}
    missing = []
    for d in runs:
        meta = read_json(d / "run.json")
        kind = meta.get("kind")
        if kind not in EXPERIMENTS:
            raise ValidationError(f"{d}: unknown run kind {kind!r}")
        need = ["checks.json", "config.resolved.json"] + EXPERIMENTS[kind][2]
        absent = [str(d / n) for n in need if not (d / n).exists()]
        if absent:
            missing += absent
            continue
        checks = read_json(d / "checks.json")
        flags = {k: v for k, v in checks.items() if k.endswith("_pass")}
        summary["runs"][str(d.relative_to(root)) or "."] = {"kind": kind, "seed": meta.get("seed"),
                                                            "checks": checks, "all_pass": all(flags.values())}
    if missing:
        raise ValidationError("missing artifacts: " + ", ".join(missing))
    summary["all_pass"] = all(r["all_pass"] for r in summary["runs"].values())
    write_json(root / "summary.json", summary)
    return summary


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fixpoint-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENTS:
        s = sub.add_parser(kind)
        s.add_argument("--config", help="JSON config file")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="BLAS threads for evaluation runs")
        s.add_argument("--verbose", "-v", action="store_true")
    r = sub.add_parser("report")
    r.add_argument("--out", required=True, help="directory holding finished runs")
    r.add_argument("--verbose", "-v", action="store_true")
    return p


def _fail(code: int, kind: str, msg: str) -> int:
    print(f"error[{kind}]: {' '.join(str(msg).split())}", file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if args.command == "report":
            s = report(args.out)
            print(json.dumps({"runs": len(s["runs"]), "all_pass": s["all_pass"]}))
        else:
            checks = run_experiment(args.command, args.config, args.out, args.threads)
            flags = {k: v for k, v in checks.items() if k.endswith("_pass")}
            print(json.dumps({"kind": args.command, "all_pass": all(flags.values())}))
    except (ValidationError, FileNotFoundError) as e:
        return _fail(1, "validation", e)
    except (ArithmeticError, NonFiniteIterate, TrainingDiverged, NotConverged, SimplexError) as e:
        return _fail(2, "numerical", f"{type(e).__name__}: {e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
