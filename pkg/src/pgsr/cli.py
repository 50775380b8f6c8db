"""Command-line entry point: ``pgsr run | trace | grid``.

Per-run outputs land in ``<out>/<benchmark>/<variant>/run-<k>/``::

    summary.json        final RunResult summary
    steps.jsonl         one StepReport per line, streamed while training
    entropy-trace.csv   step,position,entropy
    length-hist.csv     step,length,count
    checkpoint.bin      final policy parameters
    metadata.json       timestamps and host info (kept out of the other files)

``<out>/results.json`` collects every run summary plus aggregates and
contains nothing time- or host-dependent.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import yaml

from . import bench
from .policy import save_checkpoint
from .priors import CONSTRAINTS, LengthBounds, SoftLengthConfig
from .trainer import TrainConfig

logger = logging.getLogger("pgsr")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


class IoError(OSError):
    pass


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


@dataclass
class ExperimentConfig:
    variant: str = "SE"
    benchmarks: list = field(default_factory=lambda: ["Nguyen-1"])
    n_runs: int = 1
    seed: int = 0
    workers: int = 1
    out: str = "results"
    stop_on_recovery: bool = True
    train: dict = field(default_factory=dict)
    soft_length: dict = field(default_factory=lambda: asdict(SoftLengthConfig()))
    bounds: dict = field(default_factory=lambda: asdict(LengthBounds()))
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self):
        """Raise :class:`ConfigError` unless every component accepts its settings."""
        if self.variant not in bench.VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if isinstance(self.benchmarks, str):
            self.benchmarks = [self.benchmarks]
        known = {b.name for b in bench.nguyen_suite()}
        missing = [b for b in self.benchmarks if b not in known]
        if missing or not self.benchmarks:
            raise ConfigError(f"unknown benchmarks: {missing}")
        for name in ("n_runs", "workers"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        unknown = set(self.train) - _TRAIN_KEYS
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        if "seed" in self.train:
            raise ConfigError("set the seed at top level, not under train")
        bad = set(self.constraints) - set(CONSTRAINTS)
        if bad:
            raise ConfigError(f"unknown constraints: {sorted(bad)}")
        try:
            self.train_config()
            self.soft_length_config()
            self.length_bounds()
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e

    def train_config(self) -> TrainConfig:
        base = replace(TrainConfig(), seed=self.seed)
        return replace(bench.variant_config(self.variant, base), **self.train)

    def soft_length_config(self) -> SoftLengthConfig:
        return SoftLengthConfig(**self.soft_length)

    def length_bounds(self) -> LengthBounds:
        return LengthBounds(**self.bounds)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        allowed = {f.name for f in fields(cls)}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("train", "soft_length", "bounds"):
            if key in data and not isinstance(data[key], dict):
                raise ConfigError(f"{key} must be a mapping")
        for key, cls_ in (("soft_length", SoftLengthConfig), ("bounds", LengthBounds)):
            extra = set(data.get(key, {})) - {f.name for f in fields(cls_)}
            if extra:
                raise ConfigError(f"unknown {key} keys: {sorted(extra)}")
        merged = dict(data)
        for key, default in (("soft_length", SoftLengthConfig()), ("bounds", LengthBounds())):
            merged[key] = {**asdict(default), **data.get(key, {})}
        return cls(**merged)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)


def load_config(path: Optional[str], overrides=()) -> ExperimentConfig:
    data = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
    data = apply_overrides(data, overrides)
    return ExperimentConfig.from_dict(data)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as YAML scalars."""
    data = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {p} is not a mapping")
        node[parts[-1]] = yaml.safe_load(raw)
    return data


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_traces(run_dir: Path) -> tuple:
    """Turn ``steps.jsonl`` into tidy ``entropy-trace.csv`` and ``length-hist.csv``."""
    steps_file = run_dir / "steps.jsonl"
    try:
        lines = steps_file.read_text().splitlines()
    except OSError as e:
        raise IoError(f"cannot read {steps_file}: {e}") from e
    records = [json.loads(line) for line in lines if line.strip()]
    n_ent = n_hist = 0
    with open(run_dir / "entropy-trace.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "position", "entropy"])
        for r in records:
            for pos, h in enumerate(r["position_entropy"], start=1):
                w.writerow([r["step"], pos, repr(float(h))])
                n_ent += 1
    with open(run_dir / "length-hist.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "length", "count"])
        for r in records:
            for length, count in enumerate(r["length_hist"]):
                if count:
                    w.writerow([r["step"], length, count])
                    n_hist += 1
    return n_ent, n_hist


def _execute_run(name: str, variant: str, config: TrainConfig, k: int, soft_length, bounds,
                 constraints, stop_on_recovery: bool, run_dir: str) -> dict:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    with open(run_dir / "steps.jsonl", "w") as steps:
        def sink(report):
            steps.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
            steps.flush()

        result = bench.run_single(bench.get_benchmark(name), config, k, soft_length, bounds,
                                  constraints, stop_on_recovery=stop_on_recovery, callback=sink)
    summary = dict(benchmark=name, variant=variant, run=k, seed=config.seed, **result.summary())
    _write_json(run_dir / "summary.json", summary)
    write_traces(run_dir)
    if result.params is not None:
        save_checkpoint(run_dir / "checkpoint.bin", result.params)
    _write_json(run_dir / "metadata.json", dict(
        started=started, finished=time.time(), host=platform.node(),
        python=platform.python_version(), platform=platform.platform(),
    ))
    return summary


def _execute_job(args):
    return _execute_run(*args)


def run_config(cfg: ExperimentConfig, out: Optional[Path] = None) -> dict:
    """Execute every (benchmark, run) pair of ``cfg`` and write all outputs."""
    out = Path(out or cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create output directory {out}: {e}") from e
    train = cfg.train_config()
    jobs = [
        (name, cfg.variant, train, k, cfg.soft_length_config(), cfg.length_bounds(),
         tuple(cfg.constraints), cfg.stop_on_recovery,
         str(out / name / cfg.variant / f"run-{k}"))
        for name in cfg.benchmarks for k in range(cfg.n_runs)
    ]
    try:
        if cfg.workers > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                summaries = list(pool.map(_execute_job, jobs))
        else:
            summaries = [_execute_job(j) for j in jobs]
    except OSError as e:
        raise IoError(str(e)) from e
    per_bench = {
        name: bench.aggregate([s for s in summaries if s["benchmark"] == name])
        for name in cfg.benchmarks
    }
    results = dict(config=cfg.to_dict(), runs=summaries, per_benchmark=per_bench,
                   aggregate=bench.aggregate(summaries))
    _write_json(out / "results.json", results)
    (out / "config.yaml").write_text(cfg.dump())
    return results


def cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.workers is not None:
        overrides.append(f"workers={args.workers}")
    cfg = load_config(args.config, overrides)
    results = run_config(cfg)
    for name, agg in results["per_benchmark"].items():
        print(f"{name} {cfg.variant}: recovery={agg['recovery']:.3f} "
              f"steps={agg['steps']:.1f} length={agg['length']:.2f}")
    return EXIT_OK


def cmd_trace(args) -> int:
    root = Path(args.run_dir)
    if not root.is_dir():
        raise IoError(f"{root} is not a directory")
    found = sorted(p.parent for p in root.rglob("steps.jsonl"))
    if not found:
        raise IoError(f"no steps.jsonl under {root}")
    for run_dir in found:
        n_ent, n_hist = write_traces(run_dir)
        print(f"{run_dir}: {n_ent} entropy rows, {n_hist} histogram rows")
    return EXIT_OK


def select_best(rows: list) -> dict:
    """Highest recovery, then fewest mean steps, then smaller eta, then smaller gamma."""
    return min(rows, key=lambda r: (-r["recovery"], r["steps"], r["entropy_weight"], r["entropy_decay"]))


def cmd_grid(args) -> int:
    overrides = list(args.set or [])
    overrides.append(f"variant={args.variant}")
    overrides.append(f"benchmarks=[{args.benchmark}]")
    overrides.append(f"n_runs={args.budget}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    cfg = load_config(args.config, overrides)
    out = Path(cfg.out)
    base = cfg.train_config()
    rows = []
    for tc in bench.hyperparameter_grid(cfg.variant, base):
        train = dict(cfg.train, entropy_weight=tc.entropy_weight, entropy_decay=tc.entropy_decay)
        sub = replace(cfg, train=train)
        tag = f"eta={tc.entropy_weight}" + (f",gamma={tc.entropy_decay}" if tc.entropy_mode == "HE" else "")
        res = run_config(sub, out / tag)
        agg = res["aggregate"]
        rows.append(dict(entropy_weight=tc.entropy_weight, entropy_decay=tc.entropy_decay, **agg))
        print(f"{tag}: recovery={agg['recovery']:.3f} steps={agg['steps']:.1f} length={agg['length']:.2f}")
    with open(out / "grid.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    best = select_best(rows)
    print(f"best: eta={best['entropy_weight']} gamma={best['entropy_decay']} "
          f"recovery={best['recovery']:.3f} steps={best['steps']:.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgsr", description="Policy gradient symbolic regression experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value by dotted path, e.g. train.batch_size=500")

    p = sub.add_parser("run", help="run an experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("trace", help="write plot-ready trace tables for a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("grid", help="entropy hyperparameter grid search")
    common(p)
    p.add_argument("--variant", required=True, choices=list(bench.VARIANTS))
    p.add_argument("--benchmark", default="Nguyen-1")
    p.add_argument("--budget", type=int, default=2, help="runs per grid cell")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IoError as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO
    except Exception as e:  # noqa: BLE001
        logger.exception("run failed")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
