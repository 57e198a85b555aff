"""Confusion counts, rates and parameter sweeps.

The positive class is Normal: TPR is the share of normal traffic recognised,
TNR the share of attacks flagged. ``dr`` is overall accuracy.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Label
from .detection import classify_all
from .discretizer import EncodedSample
from .ga import GAConfig, evolve, parse_metric

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("pop_size", "generations", "metric", "p", "dataset",
                  "dr", "tpr", "fpr", "tnr", "fnr", "seed", "duration")
DEFINITIONS = {
    "positive_class": "normal",
    "dr": "(tp + tn) / (tp + fp + tn + fn)",
    "tpr": "tp / (tp + fn)",
    "tnr": "tn / (tn + fp)",
    "fpr": "fp / (fp + tn)",
    "fnr": "fn / (fn + tp)",
}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class Rates:
    dr: float | None
    tpr: float | None
    tnr: float | None
    fpr: float | None
    fnr: float | None


def _label(x) -> Label:
    x = getattr(x, "label", x)
    return x if isinstance(x, Label) else Label(x)


def score(verdicts: Sequence, truths: Sequence) -> ConfusionMatrix:
    """Count outcomes; both arguments accept Labels, Verdicts or samples."""
    if len(verdicts) != len(truths):
        raise ValueError(f"{len(verdicts)} verdicts for {len(truths)} truths")
    if not verdicts:
        raise ValueError("nothing to score")
    tp = fp = tn = fn = 0
    for v, t in zip(verdicts, truths):
        pred, true = _label(v), _label(t)
        if true is Label.NORMAL:
            if pred is Label.NORMAL:
                tp += 1
            else:
                fn += 1
        elif pred is Label.ANOMALY:
            tn += 1
        else:
            fp += 1
    return ConfusionMatrix(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def rates(cm: ConfusionMatrix) -> Rates:
    """Derived rates; a rate whose class is absent is ``None``, never 0."""
    return Rates(
        dr=_ratio(cm.tp + cm.tn, cm.total),
        tpr=_ratio(cm.tp, cm.tp + cm.fn),
        tnr=_ratio(cm.tn, cm.tn + cm.fp),
        fpr=_ratio(cm.fp, cm.fp + cm.tn),
        fnr=_ratio(cm.fn, cm.fn + cm.tp),
    )


@dataclass
class EvaluationReport:
    pop_size: int
    generations: int
    metric: str
    p: float | None
    dataset: str
    seed: int
    confusion: ConfusionMatrix | None = None
    dr: float | None = None
    tpr: float | None = None
    tnr: float | None = None
    fpr: float | None = None
    fnr: float | None = None
    duration: float | None = None
    n_detectors: int | None = None
    error: str | None = None
    config: dict = field(default_factory=dict)

    @classmethod
    def build(cls, config: GAConfig, dataset: str, cm: ConfusionMatrix | None, **kw):
        rep = cls(config.population_size, config.generations, config.metric, config.p,
                  dataset, config.rng_seed, confusion=cm, config=config.to_dict(), **kw)
        if cm is not None:
            r = rates(cm)
            rep.dr, rep.tpr, rep.tnr, rep.fpr, rep.fnr = r.dr, r.tpr, r.tnr, r.fpr, r.fnr
        return rep

    @property
    def metric_label(self) -> str:
        return f"minkowski(p={self.p:g})" if self.metric == "minkowski" else self.metric

    def row(self) -> dict:
        return {c: getattr(self, c) for c in REPORT_COLUMNS}

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        d = dict(d)
        if d.get("confusion") is not None:
            d["confusion"] = ConfusionMatrix(**d["confusion"])
        return cls(**d)

    def summary(self) -> str:
        def f(x):
            return "n/a" if x is None else f"{x:.4f}"
        if self.error:
            return f"{self.dataset}: FAILED ({self.error})"
        return (f"{self.dataset}: dr={f(self.dr)} tpr={f(self.tpr)} tnr={f(self.tnr)} "
                f"fpr={f(self.fpr)} fnr={f(self.fnr)} "
                f"[pop={self.pop_size} gen={self.generations} {self.metric_label} "
                f"seed={self.seed}]")


def evaluate(ds, samples: Sequence[EncodedSample], config: GAConfig, dataset: str,
             **classify_kw) -> EvaluationReport:
    verdicts = classify_all(samples, ds, **classify_kw)
    cm = score(verdicts, samples)
    return EvaluationReport.build(config, dataset, cm, n_detectors=len(ds))


# --------------------------------------------------------------------------
# sweeps

def derive_seed(master_seed: int, index: int) -> int:
    """Child seed for run ``index``, stable across machines."""
    ss = np.random.SeedSequence([master_seed, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


DEFAULT_POP_SIZES = (200, 400, 600)
DEFAULT_GENERATIONS = (200, 500, 1000, 2000)
DEFAULT_METRICS = ("euclidean", "hamming", "minkowski:0.5", "minkowski:18")


def grid(pop_sizes: Sequence[int] = DEFAULT_POP_SIZES,
         generations: Sequence[int] = DEFAULT_GENERATIONS,
         metrics: Sequence[str] = DEFAULT_METRICS, master_seed: int = 0,
         **ga_kw) -> list[GAConfig]:
    """Cartesian GA configurations with per-run seeds derived from ``master_seed``."""
    configs = []
    for i, (m, pop, gen) in enumerate(product(metrics, pop_sizes, generations)):
        name, p = parse_metric(m)
        configs.append(GAConfig(population_size=pop, generations=gen, metric=name, p=p,
                                rng_seed=derive_seed(master_seed, i), **ga_kw))
    return configs


def run_one(config: GAConfig, self_set: Sequence[EncodedSample],
            test_sets: Mapping[str, Sequence[EncodedSample]], domain_sizes: Sequence[int],
            schema_fingerprint: str = "", record_timing: bool = False,
            classify_kw: dict | None = None) -> list[EvaluationReport]:
    """Train one detector set and score it on every test set.

    Failures are captured in the reports rather than raised.
    """
    t0 = time.perf_counter()
    try:
        ds = evolve(config, self_set, domain_sizes, schema_fingerprint=schema_fingerprint)
        train_time = time.perf_counter() - t0
        out = []
        for name, samples in test_sets.items():
            t1 = time.perf_counter()
            rep = evaluate(ds, samples, config, name, **(classify_kw or {}))
            if record_timing:
                rep.duration = train_time + time.perf_counter() - t1
            out.append(rep)
        return out
    except Exception as exc:  # noqa: BLE001 - one bad cell must not sink the sweep
        log.exception("run failed: %s", config)
        return [EvaluationReport.build(config, name, None, error=f"{type(exc).__name__}: {exc}")
                for name in test_sets]


def sweep(configs: Sequence[GAConfig], self_set: Sequence[EncodedSample],
          test_sets: Mapping[str, Sequence[EncodedSample]], domain_sizes: Sequence[int],
          *, schema_fingerprint: str = "", workers: int = 1,
          record_timing: bool = False) -> list[EvaluationReport]:
    """One report per (config, test set), in config order then test-set order."""
    if not configs:
        raise ValueError("no configurations to sweep")
    args = (self_set, test_sets, domain_sizes, schema_fingerprint, record_timing)
    if workers <= 1:
        results = [run_one(c, *args) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(run_one, c, *args) for c in configs]
            results = [f.result() for f in futures]
    return [r for rs in results for r in rs]


# --------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _table_key(r: EvaluationReport):
    return (r.metric_label, r.pop_size, r.generations, r.dataset)


def format_reports(reports: Sequence[EvaluationReport], fmt: str = "csv") -> str:
    if not reports:
        raise ValueError("no reports to emit")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([_fmt(v) for v in r.row().values()])
        return buf.getvalue()
    if fmt == "json":
        return json.dumps({"definitions": DEFINITIONS,
                           "reports": [r.to_dict() for r in reports]}, indent=2) + "\n"
    if fmt == "table-text":
        head = ("metric", "pop", "gens", "dataset", "dr", "tpr", "fpr", "tnr", "fnr",
                "seed", "duration")
        rows = []
        for r in sorted(reports, key=_table_key):
            def pct(x):
                return "n/a" if x is None else f"{100 * x:.2f}"
            if r.error:
                rates_ = ["ERR"] * 5
            else:
                rates_ = [pct(r.dr), pct(r.tpr), pct(r.fpr), pct(r.tnr), pct(r.fnr)]
            rows.append([r.metric_label, str(r.pop_size), str(r.generations), r.dataset,
                         *rates_, str(r.seed),
                         "" if r.duration is None else f"{r.duration:.1f}s"])
        widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
        lines = ["# positive class = normal; dr = (tp+tn)/total; rates in %",
                 "  ".join(h.ljust(w) for h, w in zip(head, widths))]
        lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(reports: Sequence[EvaluationReport], path: str | Path,
                fmt: str = "csv") -> Path:
    path = Path(path)
    path.write_text(format_reports(reports, fmt))
    return path


def load_reports_json(path: str | Path) -> list[EvaluationReport]:
    data = json.loads(Path(path).read_text())
    return [EvaluationReport.from_dict(d) for d in data["reports"]]


def write_plot_data(reports: Sequence[EvaluationReport], path: str | Path) -> Path:
    """Long-format series (x = generations, one series per metric) for plotting."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset", "metric", "pop_size", "generations", "dr", "tpr", "tnr"))
        for r in sorted(reports, key=lambda r: (r.dataset, r.metric_label, r.pop_size,
                                                r.generations)):
            if r.error:
                continue
            w.writerow((r.dataset, r.metric_label, r.pop_size, r.generations,
                        _fmt(r.dr), _fmt(r.tpr), _fmt(r.tnr)))
    return path
