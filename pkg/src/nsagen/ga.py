"""Steady-state GA that evolves self-profiling detectors over encoded samples.

Each generation runs ``population_size`` reproduction steps. A step draws two
parents uniformly (with replacement), builds one child by single-point
crossover and per-gene resampling mutation, then lets the child replace the
closer parent only if it is strictly fitter. Fitness is the fraction of self
samples whose gene vector equals the detector exactly.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .discretizer import EncodedSample

log = logging.getLogger(__name__)

Genes = tuple[int, ...]

METRICS = ("euclidean", "hamming", "positional-hamming", "minkowski")
DETECTOR_FORMAT = "nsagen-detectors/1"


# --------------------------------------------------------------------------
# distances

def _check_pair(x: Sequence, y: Sequence):
    if len(x) != len(y):
        raise ValueError(f"length mismatch: {len(x)} vs {len(y)}")


def euclidean(x: Sequence, y: Sequence) -> float:
    _check_pair(x, y)
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))


def hamming(x: Sequence, y: Sequence) -> float:
    """Sum of absolute gene differences (Manhattan distance on bin indices)."""
    _check_pair(x, y)
    return float(sum(abs(a - b) for a, b in zip(x, y)))


def positional_hamming(x: Sequence, y: Sequence) -> float:
    """Number of positions whose genes differ."""
    _check_pair(x, y)
    return float(sum(a != b for a, b in zip(x, y)))


def minkowski(x: Sequence, y: Sequence, p: float) -> float:
    if not p > 0:
        raise ValueError(f"Minkowski p must be > 0, got {p}")
    _check_pair(x, y)
    return sum(abs(a - b) ** p for a, b in zip(x, y)) ** (1.0 / p)


def metric_function(metric: str, p: float | None = None) -> Callable[[Sequence, Sequence], float]:
    if metric == "euclidean":
        return euclidean
    if metric == "hamming":
        return hamming
    if metric == "positional-hamming":
        return positional_hamming
    if metric == "minkowski":
        if p is None or not p > 0:
            raise ValueError(f"Minkowski p must be > 0, got {p}")
        return lambda x, y: minkowski(x, y, p)
    raise ValueError(f"unknown metric {metric!r}; choose from {METRICS}")


def distance(x: Sequence, y: Sequence, metric: str = "euclidean", p: float | None = None) -> float:
    return metric_function(metric, p)(x, y)


def metric_label(metric: str, p: float | None = None) -> str:
    return f"minkowski(p={p:g})" if metric == "minkowski" else metric


def parse_metric(spec: str) -> tuple[str, float | None]:
    """``"minkowski:0.5"`` -> ``("minkowski", 0.5)``; plain names pass through."""
    name, _, p = spec.partition(":")
    name = name.strip().lower()
    if name not in METRICS:
        raise ValueError(f"unknown metric {name!r}; choose from {METRICS}")
    if name == "minkowski":
        if not p:
            raise ValueError("minkowski needs a p value, e.g. minkowski:0.5")
        return name, float(p)
    return name, None


# --------------------------------------------------------------------------
# config and data

@dataclass(frozen=True)
class GAConfig:
    population_size: int = 200
    generations: int = 200
    mutation_rate: float | None = None  # None -> 2/L
    crossover_rate: float = 1.0
    metric: str = "euclidean"
    p: float | None = None
    rng_seed: int = 0
    top_n: int | None = None
    min_fitness: float = 0.0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be positive")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if self.mutation_rate is not None and not 0 < self.mutation_rate <= 1:
            raise ValueError("mutation_rate must be in (0, 1]")
        if not 0 < self.crossover_rate <= 1:
            raise ValueError("crossover_rate must be in (0, 1]")
        metric_function(self.metric, self.p)
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")

    def rate_for(self, L: int) -> float:
        return self.mutation_rate if self.mutation_rate is not None else min(1.0, 2.0 / L)

    @property
    def metric_label(self) -> str:
        return metric_label(self.metric, self.p)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Detector:
    genes: Genes
    fitness: float


@dataclass(frozen=True)
class DetectorSet:
    detectors: tuple[Detector, ...]
    schema_fingerprint: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        lengths = {len(d.genes) for d in self.detectors}
        if len(lengths) > 1:
            raise ValueError("detectors have differing gene lengths")
        for d in self.detectors:
            if d.genes in seen:
                raise ValueError(f"duplicate detector {d.genes}")
            seen.add(d.genes)

    def __len__(self):
        return len(self.detectors)

    def __iter__(self):
        return iter(self.detectors)

    def dumps(self) -> str:
        header = {"format": DETECTOR_FORMAT, "schema_fingerprint": self.schema_fingerprint,
                  "config": self.config, "n_detectors": len(self.detectors)}
        lines = [json.dumps(header, sort_keys=True)]
        lines += [json.dumps({"genes": list(d.genes), "fitness": d.fitness})
                  for d in self.detectors]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "DetectorSet":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty detector file")
        header = json.loads(lines[0])
        if header.get("format") != DETECTOR_FORMAT:
            raise ValueError(f"not a detector file (format={header.get('format')!r})")
        dets = []
        for ln in lines[1:]:
            rec = json.loads(ln)
            dets.append(Detector(tuple(rec["genes"]), rec["fitness"]))
        if len(dets) != header["n_detectors"]:
            raise ValueError("detector file is truncated")
        return cls(tuple(dets), header["schema_fingerprint"], header["config"])

    @classmethod
    def load(cls, path: str | Path) -> "DetectorSet":
        return cls.loads(Path(path).read_text())


class SelfProfile:
    """Exact-match counts of the self set's gene vectors."""

    def __init__(self, self_set: Iterable[EncodedSample | Sequence[int]]):
        counts: Counter = Counter()
        for s in self_set:
            counts[tuple(s.genes if isinstance(s, EncodedSample) else s)] += 1
        self.counts = counts
        self.size = sum(counts.values())
        if self.size == 0:
            raise ValueError("self set is empty; fitness is undefined")

    def fitness(self, genes: Sequence[int]) -> float:
        return self.counts.get(tuple(genes), 0) / self.size


def fitness(genes: Sequence[int], self_set: Sequence[EncodedSample] | SelfProfile) -> float:
    """Fraction of self samples identical to ``genes`` in every position."""
    profile = self_set if isinstance(self_set, SelfProfile) else SelfProfile(self_set)
    return profile.fitness(genes)


# --------------------------------------------------------------------------
# operators

def init_population(self_set: Sequence[EncodedSample], n: int,
                    rng: np.random.Generator,
                    profile: SelfProfile | None = None) -> list[Detector]:
    """``n`` detectors copied from uniformly drawn self samples (with replacement)."""
    if n < 1:
        raise ValueError("population size must be positive")
    if not self_set:
        raise ValueError("self set is empty")
    profile = profile or SelfProfile(self_set)
    picks = rng.integers(0, len(self_set), size=n)
    pop = []
    for i in picks:
        genes = tuple(self_set[int(i)].genes)
        pop.append(Detector(genes, profile.fitness(genes)))
    return pop


def _single_point(p1: Sequence[int], p2: Sequence[int], cut: int) -> Genes:
    return tuple(p1[:cut]) + tuple(p2[cut:])


def crossover(p1: Sequence[int], p2: Sequence[int], rng: np.random.Generator,
              rate: float = 1.0) -> Genes:
    """Single-point crossover with the cut drawn uniformly from 1..L-1."""
    if len(p1) != len(p2):
        raise ValueError("parents differ in length")
    L = len(p1)
    if L < 2 or rng.random() >= rate:
        return tuple(p1)
    return _single_point(p1, p2, int(rng.integers(1, L)))


def mutation_sites(L: int, rate: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of positions selected for resampling."""
    return rng.random(L) < rate


def _apply_mutation(genes: Sequence[int], mask, draws) -> Genes:
    return tuple(int(d) if m else g for g, m, d in zip(genes, mask, draws))


def mutate(genes: Sequence[int], rate: float, domain_sizes: Sequence[int],
           rng: np.random.Generator) -> Genes:
    """Resample each gene with probability ``rate`` uniformly from its domain.

    A resample may return the original value.
    """
    if not 0 <= rate <= 1:
        raise ValueError("mutation rate must be in [0, 1]")
    if len(genes) != len(domain_sizes):
        raise ValueError("genes and domain sizes differ in length")
    mask = mutation_sites(len(genes), rate, rng)
    draws = rng.integers(0, np.asarray(domain_sizes))
    return _apply_mutation(genes, mask, draws)


def replace_step(parent1: Detector, parent2: Detector, child: Detector,
                 metric: str | Callable = "euclidean",
                 p: float | None = None) -> tuple[Detector, Detector]:
    """One replacement decision, nested exactly as the reference pseudocode.

    A child closer to ``parent1`` but not fitter than it is never tested
    against ``parent2``; distance ties go to the ``parent2`` branch.
    """
    dist = metric if callable(metric) else metric_function(metric, p)
    d1 = dist(child.genes, parent1.genes)
    d2 = dist(child.genes, parent2.genes)
    f, f1, f2 = child.fitness, parent1.fitness, parent2.fitness
    if d1 < d2 and f > f1:
        return child, parent2
    else:
        if d2 <= d1 and f > f2:
            return parent1, child
    return parent1, parent2


def extract_best(population: Sequence[Detector], top_n: int | None = None,
                 min_fitness: float = 0.0, schema_fingerprint: str = "",
                 config: dict | None = None) -> DetectorSet:
    """Unique nonzero-fitness detectors, fittest first."""
    if not population:
        raise ValueError("population is empty")
    best: dict[Genes, float] = {}
    for d in population:
        if d.fitness > 0 and d.fitness >= min_fitness:
            best[d.genes] = d.fitness
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    if top_n is not None:
        ranked = ranked[:top_n]
    if not ranked:
        warnings.warn("no detector matches any self sample; detector set is empty",
                      RuntimeWarning, stacklevel=2)
    return DetectorSet(tuple(Detector(g, f) for g, f in ranked),
                       schema_fingerprint, dict(config or {}))


# --------------------------------------------------------------------------
# main loop

@dataclass(frozen=True)
class GenerationStats:
    generation: int
    best: float
    mean: float
    replacements: int


def evolve(config: GAConfig, self_set: Sequence[EncodedSample],
           domain_sizes: Sequence[int], *, schema_fingerprint: str = "",
           trace: list | None = None, events: list | None = None,
           population_out: list | None = None) -> DetectorSet:
    """Run the steady-state GA and return the extracted detector set.

    ``trace`` receives one :class:`GenerationStats` per generation; ``events``
    receives ``(i1, i2, cut, mutated_positions)`` per reproduction step.
    Random draws are made in per-generation batches from one PCG64 stream
    seeded with ``config.rng_seed``.
    """
    if not self_set:
        raise ValueError("self set is empty")
    L = len(domain_sizes)
    if any(len(s.genes) != L for s in self_set):
        raise ValueError("self samples do not match the domain sizes")
    rng = np.random.default_rng(config.rng_seed)
    profile = SelfProfile(self_set)
    n = config.population_size
    rate = config.rate_for(L)
    dist = metric_function(config.metric, config.p)
    domains = np.asarray(domain_sizes, dtype=np.int64)

    pop = init_population(self_set, n, rng, profile)
    for gen in range(config.generations):
        parents = rng.integers(0, n, size=(n, 2)).tolist()
        cuts = rng.integers(1, max(L, 2), size=n).tolist()
        do_cross = (rng.random(n) < config.crossover_rate).tolist()
        masks = (rng.random((n, L)) < rate).tolist()
        draws = rng.integers(0, domains, size=(n, L)).tolist()
        replaced = 0
        for j in range(n):
            i1, i2 = parents[j]
            p1, p2 = pop[i1], pop[i2]
            if do_cross[j] and L > 1:
                genes = _single_point(p1.genes, p2.genes, cuts[j])
            else:
                genes = p1.genes
            genes = _apply_mutation(genes, masks[j], draws[j])
            child = Detector(genes, profile.fitness(genes))
            new1, new2 = replace_step(p1, p2, child, dist)
            if new1 is child:
                pop[i1] = child
                replaced += 1
            elif new2 is child:
                pop[i2] = child
                replaced += 1
            if events is not None:
                events.append((i1, i2, cuts[j] if do_cross[j] else None,
                               tuple(k for k, m in enumerate(masks[j]) if m)))
        if trace is not None:
            fits = [d.fitness for d in pop]
            trace.append(GenerationStats(gen + 1, max(fits), sum(fits) / n, replaced))

    if population_out is not None:
        population_out[:] = pop
    return extract_best(pop, config.top_n, config.min_fitness, schema_fingerprint,
                        config.to_dict())
