"""Equal-width binning of continuous features and gene-vector encoding."""
from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dataset import (
    OTHER_PROTOCOL,
    PROTOCOLS,
    FeatureSchema,
    Kind,
    Label,
    LabeledSample,
    ServiceMap,
    default_service_map,
)

log = logging.getLogger(__name__)

MODEL_FORMAT = "nsagen-binning/1"


def compute_bin_width(x_min: float, x_max: float, k: int) -> float:
    """Width of each of ``k`` equal bins spanning ``[x_min, x_max]``."""
    if k < 1:
        raise ValueError(f"bin count must be >= 1, got {k}")
    if x_max < x_min:
        raise ValueError(f"invalid range: x_max={x_max} < x_min={x_min}")
    return (x_max - x_min) / k


@dataclass(frozen=True)
class FeatureBins:
    name: str
    x_min: float
    x_max: float
    k: int
    delta: float

    @classmethod
    def fit(cls, name: str, values: Sequence[float], k: int) -> "FeatureBins":
        lo, hi = min(values), max(values)
        return cls(name, lo, hi, k, compute_bin_width(lo, hi, k))

    @property
    def boundaries(self) -> list[float]:
        """Interior cut points ``x_min + i*delta`` for i = 1..k-1."""
        return [self.x_min + i * self.delta for i in range(1, self.k)]

    def assign(self, value: float) -> int:
        return assign_bin(value, self.x_min, self.delta, self.k)


def assign_bin(value: float, x_min: float, delta: float, k: int) -> int:
    """Index of the bin enclosing ``value``.

    Bins are half-open ``[b_i, b_i+1)`` except the last, which is closed;
    values outside the fitted range clamp to the end bins.
    """
    if delta <= 0 or k == 1:
        return 0
    q = (value - x_min) / delta
    if q <= 0:
        return 0
    if q >= k - 1:
        idx = k - 1
    else:
        idx = int(math.floor(q))
    # the quotient can land one ulp on the wrong side of x_min + i*delta
    while idx < k - 1 and value >= x_min + (idx + 1) * delta:
        idx += 1
    while idx > 0 and value < x_min + idx * delta:
        idx -= 1
    return idx


@dataclass(frozen=True)
class EncodedSample:
    genes: tuple[int, ...]
    label: Label


@dataclass(frozen=True)
class BinningModel:
    """Fitted per-feature bins plus the categorical code tables used to encode."""

    schema: FeatureSchema
    bins: dict[str, FeatureBins]
    service_map: ServiceMap = field(default_factory=default_service_map)
    protocols: tuple[str, ...] = PROTOCOLS

    def domain_sizes(self) -> tuple[int, ...]:
        sizes = []
        for f in self.schema.features:
            if f.kind is Kind.BINARY:
                sizes.append(2)
            elif f.name == "protocol_type":
                sizes.append(len(self.protocols) + 1)
            elif f.kind is Kind.CATEGORICAL:
                sizes.append(f.bin_count)
            else:
                sizes.append(self.bins[f.name].k)
        return tuple(sizes)

    def to_dict(self) -> dict:
        entries = []
        for f in self.schema.features:
            if f.continuous:
                b = self.bins[f.name]
                entries.append({"name": b.name, "kind": f.kind.value, "x_min": b.x_min,
                                "x_max": b.x_max, "k": b.k, "delta": b.delta,
                                "boundaries": b.boundaries})
            elif f.bin_count is not None:
                # service: category count from the mapping table, nothing fitted
                entries.append({"name": f.name, "kind": f.kind.value, "k": f.bin_count,
                                "fitted": False})
        return {
            "format": MODEL_FORMAT,
            "schema": self.schema.to_dict(),
            "bins": entries,
            "protocols": list(self.protocols),
            "service_map": {"source": self.service_map.source,
                            "digest": self.service_map.digest,
                            "table": dict(sorted(self.service_map.table.items()))},
        }

    @property
    def fingerprint(self) -> str:
        d = self.to_dict()
        d["service_map"].pop("source")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "BinningModel":
        if data.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a binning model file (format={data.get('format')!r})")
        schema = FeatureSchema.from_dict(data["schema"])
        bins = {
            e["name"]: FeatureBins(e["name"], e["x_min"], e["x_max"], e["k"], e["delta"])
            for e in data["bins"] if e.get("fitted", True)
        }
        sm = data["service_map"]
        return cls(schema, bins, ServiceMap(sm["table"], sm["source"]),
                   tuple(data["protocols"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "BinningModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit(self_samples: Sequence[LabeledSample], schema: FeatureSchema,
        service_map: ServiceMap | None = None) -> BinningModel:
    """Fit equal-width bins on each continuous feature of the self set.

    Labels are never read; filter to normal samples first.
    """
    if not self_samples:
        raise ValueError("cannot fit bins on an empty sample set")
    for f in schema.features:
        if f.kind is Kind.CATEGORICAL and f.name not in ("protocol_type", "service"):
            raise ValueError(f"no encoding known for categorical feature {f.name!r}")
    bins = {}
    for i, f in enumerate(schema.features):
        if not f.continuous:
            continue
        fb = FeatureBins.fit(f.name, [s.values[i] for s in self_samples], f.bin_count)
        if fb.delta == 0 and fb.k > 1:
            warnings.warn(f"feature {f.name!r} is constant ({fb.x_min}) in the fit set; "
                          "it always encodes to bin 0", RuntimeWarning, stacklevel=2)
        bins[f.name] = fb
    return BinningModel(schema, bins, service_map or default_service_map())


def _encoders(model: BinningModel):
    proto = {p: i for i, p in enumerate(model.protocols)}
    smap = model.service_map
    fns = []
    for f in model.schema.features:
        if f.kind is Kind.BINARY:
            fns.append(lambda v: 1 if v else 0)
        elif f.name == "protocol_type":
            fns.append(lambda v, proto=proto: proto.get(v, OTHER_PROTOCOL))
        elif f.name == "service":
            fns.append(lambda v, smap=smap: smap(v) - 1)
        else:
            fns.append(model.bins[f.name].assign)
    return fns


def encode(sample: LabeledSample, model: BinningModel,
           schema: FeatureSchema | None = None) -> EncodedSample:
    """Replace every feature value with its bin index or categorical code."""
    if schema is not None and schema != model.schema:
        raise ValueError("sample schema does not match the binning model")
    fns = _encoders(model)
    return EncodedSample(tuple(fn(v) for fn, v in zip(fns, sample.values)), sample.label)


def encode_all(samples: Sequence[LabeledSample], model: BinningModel) -> list[EncodedSample]:
    fns = _encoders(model)
    return [EncodedSample(tuple(fn(v) for fn, v in zip(fns, s.values)), s.label)
            for s in samples]


def occupancy(encoded: Sequence[EncodedSample], model: BinningModel) -> dict[str, list[int]]:
    """Per-feature histogram of gene values."""
    sizes = model.domain_sizes()
    hist = {name: [0] * n for name, n in zip(model.schema.names, sizes)}
    names = model.schema.names
    for s in encoded:
        for name, g in zip(names, s.genes):
            hist[name][g] += 1
    return hist
