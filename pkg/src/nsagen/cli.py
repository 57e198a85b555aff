"""Command-line pipeline: fit -> train -> evaluate, plus grid sweeps.

Each subcommand reads a flat YAML config (``--config``) whose keys match
:class:`RunConfig`; a handful of flags override it. Exit codes: 0 success,
1 usage/config error, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataset import DEFAULT_SCHEMA, DatasetError, ServiceMap, load_records, split_self
from .detection import Classifier, FingerprintMismatch, write_verdicts
from .discretizer import BinningModel, encode_all, fit, occupancy
from .evaluation import (
    EvaluationReport,
    format_reports,
    grid,
    run_one,
    score,
    write_plot_data,
)
from .ga import DetectorSet, GAConfig, GenerationStats, evolve, parse_metric

log = logging.getLogger("nsagen")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

MODEL_FILE = "binning_model.json"
SUMMARY_FILE = "encoding_summary.json"
DETECTOR_FILE = "detectors.jsonl"
TRACE_FILE = "fitness_trace.csv"

FORMAT_EXT = {"csv": "csv", "json": "json", "table-text": "txt"}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    train: str | None = None
    tests: list[str] = field(default_factory=list)
    service_map: str | None = None
    out: str = "out"
    on_unknown: str = "reserve"
    # GA
    population_size: int = 200
    generations: int = 200
    mutation_rate: float | None = None
    crossover_rate: float = 1.0
    metric: str = "euclidean"
    p: float | None = None
    seed: int = 0
    top_n: int | None = None
    min_fitness: float = 0.0
    # detection (experimental distance-threshold rule, off by default)
    match_threshold: float | None = None
    match_metric: str = "hamming"
    # reporting
    report_format: list[str] = field(default_factory=lambda: ["csv", "json", "table-text"])
    record_timing: bool = False
    write_verdicts: bool = True
    # sweep
    sweep_pop_sizes: list[int] = field(default_factory=lambda: [200, 400, 600])
    sweep_generations: list[int] = field(default_factory=lambda: [200, 500, 1000, 2000])
    sweep_metrics: list[str] = field(
        default_factory=lambda: ["euclidean", "hamming", "minkowski:0.5", "minkowski:18"])
    workers: int = 1

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg = cls(**data)
        if isinstance(cfg.tests, str):
            cfg.tests = [cfg.tests]
        if isinstance(cfg.report_format, str):
            cfg.report_format = [cfg.report_format]
        for fmt in cfg.report_format:
            if fmt not in FORMAT_EXT:
                raise ConfigError(f"unknown report format {fmt!r}")
        if cfg.on_unknown not in ("reserve", "reject"):
            raise ConfigError("on_unknown must be 'reserve' or 'reject'")
        if ":" in cfg.metric:
            cfg.metric, cfg.p = parse_metric(cfg.metric)
        try:
            cfg.ga_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    def ga_config(self) -> GAConfig:
        return GAConfig(population_size=self.population_size, generations=self.generations,
                        mutation_rate=self.mutation_rate, crossover_rate=self.crossover_rate,
                        metric=self.metric, p=self.p, rng_seed=self.seed, top_n=self.top_n,
                        min_fitness=self.min_fitness)

    def echo(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def require(self, *keys: str) -> None:
        """Fail before any work if a referenced input path is missing."""
        for key in keys:
            value = getattr(self, key)
            paths = value if isinstance(value, list) else [value]
            if key != "service_map" and not paths:
                raise ConfigError(f"config key {key!r} is required")
            if key == "service_map" and value is None:
                continue
            for p in paths:
                if p is None:
                    raise ConfigError(f"config key {key!r} is required")
                if not Path(p).is_file():
                    raise ConfigError(f"{key}: file not found: {p}")

    def load_service_map(self) -> ServiceMap:
        return ServiceMap.from_file(self.service_map)


def load_config(args: argparse.Namespace) -> RunConfig:
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected key-value pairs")
    overrides = {"seed": args.seed, "population_size": args.pop_size,
                 "generations": args.generations, "p": args.p, "out": args.out,
                 "metric": args.metric}
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "format", None):
        overrides["report_format"] = args.format
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_mapping(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --------------------------------------------------------------------------
# file helpers

def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_model(cfg: RunConfig) -> BinningModel:
    path = cfg.out_dir / MODEL_FILE
    if not path.is_file():
        raise ConfigError(f"no binning model at {path}; run `nsagen fit` first")
    return BinningModel.load(path)


def _self_set(cfg: RunConfig, model: BinningModel):
    samples = load_records(cfg.train, model.schema, on_unknown=cfg.on_unknown,
                           service_map=model.service_map)
    normal = split_self(samples)
    if not normal:
        raise DatasetError("training file has no normal samples; nothing to train on",
                           cfg.train)
    return encode_all(normal, model)


def _dataset_name(path: str) -> str:
    return Path(path).stem


# --------------------------------------------------------------------------
# subcommands

def cmd_fit(cfg: RunConfig) -> int:
    cfg.require("train", "service_map")
    smap = cfg.load_service_map()
    samples = load_records(cfg.train, on_unknown=cfg.on_unknown, service_map=smap)
    normal = split_self(samples)
    if not normal:
        raise DatasetError("training file has no normal samples", cfg.train)
    model = fit(normal, DEFAULT_SCHEMA, smap)
    encoded = encode_all(normal, model)

    doc = model.to_dict()
    doc["fingerprint"] = model.fingerprint
    doc["run_config"] = cfg.echo()
    summary = {"fingerprint": model.fingerprint, "run_config": cfg.echo(),
               "n_self_samples": len(normal), "n_records": len(samples),
               "domain_sizes": dict(zip(model.schema.names, model.domain_sizes())),
               "occupancy": occupancy(encoded, model)}
    _write_atomic(cfg.out_dir / MODEL_FILE, _dump_json(doc))
    _write_atomic(cfg.out_dir / SUMMARY_FILE, _dump_json(summary))
    print(f"fitted {len(model.bins)} binned features on {len(normal)} normal samples "
          f"-> {cfg.out_dir / MODEL_FILE} (fingerprint {model.fingerprint})")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("train")
    model = _read_model(cfg)
    self_set = _self_set(cfg, model)
    ga = cfg.ga_config()
    trace: list[GenerationStats] = []
    t0 = time.perf_counter()
    ds = evolve(ga, self_set, model.domain_sizes(), schema_fingerprint=model.fingerprint,
                trace=trace)
    elapsed = time.perf_counter() - t0
    ds = DetectorSet(ds.detectors, ds.schema_fingerprint,
                     {**ds.config, "run_config": cfg.echo()})

    rows = ["generation,best_fitness,mean_fitness,replacements"]
    rows += [f"{t.generation},{t.best!r},{t.mean!r},{t.replacements}" for t in trace]
    _write_atomic(cfg.out_dir / DETECTOR_FILE, ds.dumps())
    _write_atomic(cfg.out_dir / TRACE_FILE, "\n".join(rows) + "\n")
    print(f"trained {len(ds)} detectors (pop={ga.population_size} gen={ga.generations} "
          f"{ga.metric_label} seed={ga.rng_seed}) in {elapsed:.1f}s "
          f"-> {cfg.out_dir / DETECTOR_FILE}")
    return EXIT_OK


def _classify_kw(cfg: RunConfig) -> dict:
    if cfg.match_threshold is None:
        return {}
    name, p = parse_metric(cfg.match_metric)
    return {"threshold": cfg.match_threshold, "metric": name, "p": p}


def _emit_all(cfg: RunConfig, reports, stem: str) -> list[Path]:
    paths = []
    for fmt in cfg.report_format:
        text = format_reports(reports, fmt)
        if fmt == "json":
            doc = json.loads(text)
            doc["run_config"] = cfg.echo()
            text = _dump_json(doc)
        elif fmt == "table-text":
            text = f"# run_config: {json.dumps(cfg.echo(), sort_keys=True)}\n" + text
        path = cfg.out_dir / f"{stem}.{FORMAT_EXT[fmt]}"
        _write_atomic(path, text)
        paths.append(path)
    return paths


def cmd_evaluate(cfg: RunConfig) -> int:
    cfg.require("tests")
    model = _read_model(cfg)
    det_path = cfg.out_dir / DETECTOR_FILE
    if not det_path.is_file():
        raise ConfigError(f"no detector file at {det_path}; run `nsagen train` first")
    ds = DetectorSet.load(det_path)
    clf = Classifier(ds, expected_fingerprint=model.fingerprint, **_classify_kw(cfg))
    ga_fields = {f.name for f in dataclasses.fields(GAConfig)}
    ga = GAConfig(**{k: v for k, v in ds.config.items() if k in ga_fields})

    reports = []
    for test in cfg.tests:
        name = _dataset_name(test)
        t0 = time.perf_counter()
        samples = encode_all(load_records(test, model.schema, on_unknown=cfg.on_unknown,
                                          service_map=model.service_map), model)
        verdicts = [clf(s) for s in samples]
        rep = EvaluationReport.build(ga, name, score(verdicts, samples), n_detectors=len(ds))
        if cfg.record_timing:
            rep.duration = time.perf_counter() - t0
        reports.append(rep)
        if cfg.write_verdicts:
            cfg.out_dir.mkdir(parents=True, exist_ok=True)
            write_verdicts(cfg.out_dir / f"verdicts_{name}.csv", samples, verdicts)
        print(rep.summary())
    _emit_all(cfg, reports, "report")
    return EXIT_OK


def _run_id(i: int, ga: GAConfig) -> str:
    m = ga.metric if ga.p is None else f"{ga.metric}-p{ga.p:g}"
    return f"{i:03d}_{m}_pop{ga.population_size}_gen{ga.generations}"


def cmd_sweep(cfg: RunConfig, dry_run: bool = False) -> int:
    configs = grid(cfg.sweep_pop_sizes, cfg.sweep_generations, cfg.sweep_metrics,
                   master_seed=cfg.seed, mutation_rate=cfg.mutation_rate,
                   crossover_rate=cfg.crossover_rate, top_n=cfg.top_n,
                   min_fitness=cfg.min_fitness)
    if dry_run:
        print(f"{len(configs)} runs x {len(cfg.tests)} test set(s):")
        for i, ga in enumerate(configs):
            print(f"  {_run_id(i, ga)}  seed={ga.rng_seed}")
        return EXIT_OK
    cfg.require("train", "tests")
    model = _read_model(cfg)
    self_set = _self_set(cfg, model)
    test_sets = {
        _dataset_name(t): encode_all(load_records(t, model.schema, on_unknown=cfg.on_unknown,
                                                  service_map=model.service_map), model)
        for t in cfg.tests}
    run_dir = cfg.out_dir / "runs"
    run_dir.mkdir(parents=True, exist_ok=True)

    results: dict[int, list[EvaluationReport]] = {}
    pending = []
    for i, ga in enumerate(configs):
        path = run_dir / f"{_run_id(i, ga)}.json"
        if path.is_file():
            done = json.loads(path.read_text())
            if (done.get("config") == ga.to_dict()
                    and done.get("fingerprint") == model.fingerprint
                    and not any(r.get("error") for r in done["reports"])):
                results[i] = [EvaluationReport.from_dict(r) for r in done["reports"]]
                continue
        pending.append(i)
    if results:
        print(f"resuming: {len(results)} of {len(configs)} runs already complete")

    def save(i, reps):
        results[i] = reps
        _write_atomic(run_dir / f"{_run_id(i, configs[i])}.json", _dump_json({
            "config": configs[i].to_dict(), "fingerprint": model.fingerprint,
            "reports": [r.to_dict() for r in reps]}))
        status = "FAILED" if any(r.error for r in reps) else "ok"
        print(f"[{len(results)}/{len(configs)}] {_run_id(i, configs[i])}: {status}")

    args = (self_set, test_sets, model.domain_sizes(), model.fingerprint,
            cfg.record_timing, _classify_kw(cfg))
    if cfg.workers <= 1:
        for i in pending:
            save(i, run_one(configs[i], *args))
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            futs = {ex.submit(run_one, configs[i], *args): i for i in pending}
            for fut in as_completed(futs):
                save(futs[fut], fut.result())

    reports = [r for i in range(len(configs)) for r in results[i]]
    _emit_all(cfg, reports, "sweep_report")
    write_plot_data(reports, cfg.out_dir / "plot_data.csv")
    print(format_reports(reports, "table-text"), end="")
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nsagen", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--pop-size", type=int)
        p.add_argument("--generations", type=int)
        p.add_argument("--metric", help="euclidean, hamming, positional-hamming, "
                                        "minkowski (with --p) or minkowski:P")
        p.add_argument("--p", type=float)
        p.add_argument("--out", help="output directory")
        return p

    common(sub.add_parser("fit", help="fit equal-width bins on normal training samples"))
    common(sub.add_parser("train", help="evolve a detector set"))
    ev = common(sub.add_parser("evaluate", help="score detectors on test files"))
    ev.add_argument("--format", action="append", choices=sorted(FORMAT_EXT))
    sw = common(sub.add_parser("sweep", help="run a population x generations x metric grid"))
    sw.add_argument("--format", action="append", choices=sorted(FORMAT_EXT))
    sw.add_argument("--workers", type=int)
    sw.add_argument("--dry-run", action="store_true", help="print the grid and exit")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_sweep(cfg, dry_run=args.dry_run)
    except ConfigError as exc:
        print(f"nsagen: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FingerprintMismatch as exc:
        print(f"nsagen: refusing to evaluate: detector fingerprint {exc.found} "
              f"!= model fingerprint {exc.expected}", file=sys.stderr)
        return EXIT_DATA
    except (DatasetError, ValueError, OSError) as exc:
        print(f"nsagen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"nsagen: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
