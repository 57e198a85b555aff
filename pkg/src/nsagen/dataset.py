"""NSL-KDD record parsing and projection onto the 18-feature detector schema."""
from __future__ import annotations

import enum
import hashlib
import logging
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

log = logging.getLogger(__name__)

# NSL-KDD column order; the class label (and difficulty) follow these 41.
NSL_KDD_COLUMNS = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins",
    "logged_in", "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files",
    "num_outbound_cmds", "is_host_login", "is_guest_login", "count",
    "srv_count", "serror_rate", "srv_serror_rate", "rerror_rate",
    "srv_rerror_rate", "same_srv_rate", "diff_srv_rate", "srv_diff_host_rate",
    "dst_host_count", "dst_host_srv_count", "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate", "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate", "dst_host_serror_rate",
    "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)
N_RAW_FEATURES = len(NSL_KDD_COLUMNS)

PROTOCOLS = ("tcp", "udp", "icmp")
OTHER_PROTOCOL = len(PROTOCOLS)  # reserved code for unseen protocol symbols

N_SERVICE_CATEGORIES = 9
OTHER_SERVICE_CATEGORY = 9


class DatasetError(ValueError):
    """Raised for malformed input records."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class Label(enum.Enum):
    NORMAL = "normal"
    ANOMALY = "anomaly"

    @classmethod
    def from_class_name(cls, name: str) -> "Label":
        # KDD Cup 99 files terminate labels with a dot ("normal.")
        return cls.NORMAL if name.strip().rstrip(".") == "normal" else cls.ANOMALY


class Kind(str, enum.Enum):
    BINARY = "binary"
    CATEGORICAL = "categorical"
    INTEGER = "integer"
    REAL = "real"


@dataclass(frozen=True)
class Feature:
    name: str
    kind: Kind
    bin_count: int | None = None

    @property
    def continuous(self) -> bool:
        """True for features that get an equal-width binning fitted."""
        return self.kind in (Kind.INTEGER, Kind.REAL) and self.bin_count is not None


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[Feature, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in schema")
        unknown = set(names) - set(NSL_KDD_COLUMNS)
        if unknown:
            raise ValueError(f"features not in NSL-KDD: {sorted(unknown)}")
        for f in self.features:
            if f.bin_count is not None and f.bin_count < 1:
                raise ValueError(f"{f.name}: bin_count must be positive")
            if f.kind in (Kind.INTEGER, Kind.REAL) and f.bin_count is None:
                raise ValueError(f"{f.name}: numeric features need a bin count")

    @property
    def L(self) -> int:
        return len(self.features)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    @property
    def columns(self) -> tuple[int, ...]:
        """Positions of the schema features inside an NSL-KDD record."""
        return tuple(NSL_KDD_COLUMNS.index(n) for n in self.names)

    def to_dict(self) -> dict:
        return {
            "features": [
                {"name": f.name, "kind": f.kind.value, "bin_count": f.bin_count}
                for f in self.features
            ]
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSchema":
        return cls(tuple(
            Feature(d["name"], Kind(d["kind"]), d.get("bin_count"))
            for d in data["features"]
        ))


# Service is tagged categorical: its 9 is a port-category count, not a fitted
# binning. NSL-KDD calls the "hot indicators" field `hot`.
DEFAULT_SCHEMA = FeatureSchema((
    Feature("duration", Kind.INTEGER, 8),
    Feature("protocol_type", Kind.CATEGORICAL),
    Feature("service", Kind.CATEGORICAL, N_SERVICE_CATEGORIES),
    Feature("land", Kind.BINARY),
    Feature("urgent", Kind.INTEGER, 1),
    Feature("hot", Kind.INTEGER, 3),
    Feature("num_failed_logins", Kind.INTEGER, 3),
    Feature("logged_in", Kind.BINARY),
    Feature("root_shell", Kind.BINARY),
    Feature("su_attempted", Kind.BINARY),
    Feature("num_file_creations", Kind.INTEGER, 4),
    Feature("num_shells", Kind.INTEGER, 2),
    Feature("is_host_login", Kind.BINARY),
    Feature("is_guest_login", Kind.BINARY),
    Feature("count", Kind.INTEGER, 10),
    Feature("same_srv_rate", Kind.REAL, 3),
    Feature("diff_srv_rate", Kind.REAL, 3),
    Feature("srv_diff_host_rate", Kind.REAL, 3),
))

RATE_FEATURES = frozenset(n for n in NSL_KDD_COLUMNS if n.endswith("_rate"))


@dataclass(frozen=True)
class RawRecord:
    values: tuple[str, ...]
    label: str
    difficulty: int | None = None


@dataclass(frozen=True)
class LabeledSample:
    """Schema-ordered feature values (numbers, or raw tokens for categoricals)."""

    values: tuple
    label: Label


# --------------------------------------------------------------------------
# service categories

class ServiceMap:
    """Total mapping from NSL-KDD service tokens to port categories 1..9."""

    def __init__(self, table: dict[str, int], source: str = "<memory>"):
        for token, cat in table.items():
            if not 1 <= cat <= N_SERVICE_CATEGORIES:
                raise ValueError(f"service {token!r}: category {cat} outside 1..9")
        self.table = dict(table)
        self.source = source

    def __call__(self, service: str) -> int:
        return self.table.get(service, OTHER_SERVICE_CATEGORY)

    def __contains__(self, service: str) -> bool:
        return service in self.table

    @property
    def digest(self) -> str:
        canon = "\n".join(f"{k}\t{v}" for k, v in sorted(self.table.items()))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    @classmethod
    def from_file(cls, path: str | Path | None = None) -> "ServiceMap":
        """Read a ``token<TAB>category`` file; ``None`` loads the bundled table."""
        if path is None:
            text = resources.files("nsagen").joinpath(
                "data/service_categories.tsv").read_text()
            source = "bundled:service_categories.tsv"
        else:
            text = Path(path).read_text()
            source = str(path)
        table: dict[str, int] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DatasetError("expected 'token<TAB>category'", source, lineno)
            token, cat = parts
            try:
                table[token] = int(cat)
            except ValueError:
                raise DatasetError(f"bad category {cat!r}", source, lineno) from None
        return cls(table, source)


_default_map: ServiceMap | None = None


def default_service_map() -> ServiceMap:
    global _default_map
    if _default_map is None:
        _default_map = ServiceMap.from_file()
    return _default_map


def map_service_category(service: str, mapping: ServiceMap | None = None) -> int:
    """Port category (1..9) for a service token; unknown tokens land in 9."""
    return (mapping or default_service_map())(service)


# --------------------------------------------------------------------------
# parsing

def parse_line(line: str, lineno: int | None = None, path: str | None = None) -> RawRecord:
    fields = [f.strip() for f in line.strip().split(",")]
    if len(fields) not in (N_RAW_FEATURES + 1, N_RAW_FEATURES + 2):
        raise DatasetError(
            f"expected {N_RAW_FEATURES} features + label (+ difficulty), "
            f"got {len(fields)} fields", path, lineno)
    label = fields[N_RAW_FEATURES]
    if not label:
        raise DatasetError("empty class label", path, lineno)
    difficulty = None
    if len(fields) == N_RAW_FEATURES + 2:
        try:
            difficulty = int(fields[-1])
        except ValueError:
            raise DatasetError(f"bad difficulty {fields[-1]!r}", path, lineno) from None
    return RawRecord(tuple(fields[:N_RAW_FEATURES]), label, difficulty)


class _Projector:
    def __init__(self, schema: FeatureSchema, on_unknown: str, service_map: ServiceMap):
        if on_unknown not in ("reserve", "reject"):
            raise ValueError("on_unknown must be 'reserve' or 'reject'")
        self.schema = schema
        self.on_unknown = on_unknown
        self.service_map = service_map
        self.columns = schema.columns
        self.unknown: dict[tuple[str, str], int] = {}
        self.coerced: dict[str, int] = {}

    def __call__(self, rec: RawRecord, path: str | None, lineno: int | None) -> LabeledSample:
        out = []
        for feat, col in zip(self.schema.features, self.columns):
            tok = rec.values[col]
            if feat.kind is Kind.CATEGORICAL:
                known = (tok in PROTOCOLS) if feat.name == "protocol_type" else (
                    tok in self.service_map if feat.name == "service" else True)
                if not known:
                    if self.on_unknown == "reject":
                        raise DatasetError(f"unknown {feat.name} symbol {tok!r}", path, lineno)
                    key = (feat.name, tok)
                    self.unknown[key] = self.unknown.get(key, 0) + 1
                out.append(tok)
                continue
            try:
                value = float(tok) if feat.kind is Kind.REAL else int(tok)
            except ValueError:
                raise DatasetError(f"{feat.name}: not a number: {tok!r}", path, lineno) from None
            if feat.kind is Kind.BINARY and value not in (0, 1):
                # su_attempted is 0/1/2 in the raw data; any nonzero means "yes"
                self.coerced[feat.name] = self.coerced.get(feat.name, 0) + 1
                value = 1
            if feat.name in RATE_FEATURES and not 0.0 <= value <= 1.0:
                raise DatasetError(f"{feat.name}: rate {value} outside [0, 1]", path, lineno)
            out.append(value)
        return LabeledSample(tuple(out), Label.from_class_name(rec.label))

    def report(self, where: str):
        for (name, tok), n in sorted(self.unknown.items()):
            log.info("%s: %d record(s) with unknown %s %r mapped to reserved code",
                     where, n, name, tok)
        for name, n in sorted(self.coerced.items()):
            log.info("%s: %d %s value(s) > 1 coerced to 1", where, n, name)


def parse_records(lines: Iterable[str], schema: FeatureSchema = DEFAULT_SCHEMA, *,
                  on_unknown: str = "reserve", service_map: ServiceMap | None = None,
                  source: str | None = None) -> list[LabeledSample]:
    project = _Projector(schema, on_unknown, service_map or default_service_map())
    samples = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        rec = parse_line(line, lineno, source)
        samples.append(project(rec, source, lineno))
    project.report(source or "<records>")
    return samples


def load_records(path: str | Path, schema: FeatureSchema = DEFAULT_SCHEMA, *,
                 on_unknown: str = "reserve",
                 service_map: ServiceMap | None = None) -> list[LabeledSample]:
    """Load an NSL-KDD text file projected onto ``schema``.

    Every class other than ``normal`` becomes :attr:`Label.ANOMALY`; the
    difficulty column is parsed and dropped. Unknown protocol/service symbols
    are kept (they encode to the reserved code) unless ``on_unknown="reject"``.
    """
    path = Path(path)
    with path.open() as fh:
        return parse_records(fh, schema, on_unknown=on_unknown,
                             service_map=service_map, source=str(path))


def format_sample(sample: LabeledSample) -> str:
    """Comma-separated projected values followed by the binary label."""
    return ",".join(str(v) for v in sample.values) + "," + sample.label.value


def split_self(samples: Sequence[LabeledSample]) -> list[LabeledSample]:
    """Normal samples only, in input order."""
    normal = [s for s in samples if s.label is Label.NORMAL]
    if not normal:
        warnings.warn("no normal samples: the self set is empty", RuntimeWarning, stacklevel=2)
    return normal
