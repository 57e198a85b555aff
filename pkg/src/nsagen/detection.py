"""Classify encoded samples against a detector set.

Detectors here profile *self*: a sample that exactly matches any detector is
Normal, everything else is an Anomaly. This is the reverse of textbook
negative selection, where detectors cover nonself.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .dataset import Label
from .discretizer import EncodedSample
from .ga import Detector, DetectorSet, metric_function


class FingerprintMismatch(ValueError):
    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"detector set was built for encoding {found}, "
                         f"but the loaded binning model is {expected}")


@dataclass(frozen=True)
class Verdict:
    label: Label
    matched_detector: int | None
    score: float


def matches(d: Detector | Sequence[int], s: EncodedSample | Sequence[int]) -> bool:
    a = d.genes if isinstance(d, Detector) else d
    b = s.genes if isinstance(s, EncodedSample) else s
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return tuple(a) == tuple(b)


class Classifier:
    """Reusable lookup over one detector set.

    The default rule is exact gene equality and ``score`` is the matched
    detector's fitness (0 when unmatched). Passing ``threshold`` switches to
    the experimental nearest-detector rule: Normal iff the smallest distance
    is <= threshold, with that distance as the score.
    """

    def __init__(self, ds: DetectorSet, expected_fingerprint: str | None = None,
                 threshold: float | None = None, metric: str = "hamming",
                 p: float | None = None):
        if len(ds) == 0:
            raise ValueError("cannot classify with an empty detector set")
        if expected_fingerprint is not None and ds.schema_fingerprint != expected_fingerprint:
            raise FingerprintMismatch(expected_fingerprint, ds.schema_fingerprint)
        self.ds = ds
        self.L = len(ds.detectors[0].genes)
        self.threshold = threshold
        self.dist = metric_function(metric, p) if threshold is not None else None
        # detectors are unique, so the first index in fitness order is the only one
        self.index = {d.genes: i for i, d in enumerate(ds.detectors)}

    def __call__(self, s: EncodedSample | Sequence[int]) -> Verdict:
        genes = tuple(s.genes if isinstance(s, EncodedSample) else s)
        if len(genes) != self.L:
            raise ValueError(f"length mismatch: {len(genes)} vs {self.L}")
        if self.threshold is None:
            i = self.index.get(genes)
            if i is None:
                return Verdict(Label.ANOMALY, None, 0.0)
            return Verdict(Label.NORMAL, i, self.ds.detectors[i].fitness)
        best_i, best_d = 0, float("inf")
        for i, d in enumerate(self.ds.detectors):
            dd = self.dist(genes, d.genes)
            if dd < best_d:
                best_i, best_d = i, dd
        if best_d <= self.threshold:
            return Verdict(Label.NORMAL, best_i, best_d)
        return Verdict(Label.ANOMALY, None, best_d)


def classify(s: EncodedSample, ds: DetectorSet, **kwargs) -> Verdict:
    return Classifier(ds, **kwargs)(s)


def classify_all(samples: Sequence[EncodedSample], ds: DetectorSet, **kwargs) -> list[Verdict]:
    clf = Classifier(ds, **kwargs)
    return [clf(s) for s in samples]


VERDICT_COLUMNS = ("index", "true_label", "predicted_label", "matched_detector", "score")


def write_verdicts(path: str | Path, samples: Sequence[EncodedSample],
                   verdicts: Sequence[Verdict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(VERDICT_COLUMNS)
        for i, (s, v) in enumerate(zip(samples, verdicts)):
            w.writerow([i, s.label.value, v.label.value,
                        "" if v.matched_detector is None else v.matched_detector,
                        repr(v.score)])
