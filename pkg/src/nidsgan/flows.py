"""Flow-feature datasets: schema, encoding, scaling, splitting and synthesis.

Two benchmark layouts are supported (NSL-KDD and CICIDS-2017 comma-separated
exports) plus a seeded Gaussian-blob generator used for desk-scale runs.
Every dataset ends up as a :class:`FlowDataset` whose rows live in ``[0, 1]^n``.
"""
from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

NUMERIC = "numeric"
CATEGORICAL = "categorical"
BINARY_FLAG = "binary-flag"
FEATURE_KINDS = (NUMERIC, CATEGORICAL, BINARY_FLAG)

DEFAULT_SPLIT_SEED = 20211
CONTAINER_VERSION = 1


class DatasetError(ValueError):
    """Raised when a flow file cannot be ingested."""


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str = NUMERIC
    protocol_tag: str | None = None
    attack_semantic: bool = False
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r} for {self.name}")
        if self.kind == CATEGORICAL and not self.levels:
            raise ValueError(f"categorical feature {self.name} needs at least one level")

    @property
    def width(self) -> int:
        return len(self.levels) if self.kind == CATEGORICAL else 1


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered raw features plus the class universe they are labelled with.

    ``semantic_by_class`` names extra features (by raw name) that must stay
    frozen when attacking a particular class, on top of features whose
    ``attack_semantic`` flag is set.
    """

    features: tuple[Feature, ...]
    labels: tuple[str, ...]
    benign_label: str
    name: str = "custom"
    semantic_by_class: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names in schema")
        if self.benign_label not in self.labels:
            raise ValueError(f"benign label {self.benign_label!r} not in label set")
        for cls, feats in self.semantic_by_class.items():
            unknown = set(feats) - set(names)
            if unknown:
                raise ValueError(f"semantic features for {cls} not in schema: {sorted(unknown)}")

    @property
    def n_raw(self) -> int:
        return len(self.features)

    @property
    def n_encoded(self) -> int:
        return sum(f.width for f in self.features)

    @property
    def benign_index(self) -> int:
        return self.labels.index(self.benign_label)

    def feature(self, name: str) -> Feature:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def spans(self) -> list[tuple[int, int]]:
        """Encoded ``[start, stop)`` span of every raw feature, in order."""
        out, pos = [], 0
        for f in self.features:
            out.append((pos, pos + f.width))
            pos += f.width
        return out

    @property
    def one_hot_groups(self) -> list[tuple[int, int]]:
        return [span for f, span in zip(self.features, self.spans()) if f.kind == CATEGORICAL]

    def raw_index(self) -> np.ndarray:
        """Map from encoded column to the raw feature it came from."""
        return np.concatenate(
            [np.full(f.width, i, dtype=int) for i, f in enumerate(self.features)]
        ) if self.features else np.zeros(0, dtype=int)

    def encoded_names(self) -> list[str]:
        names = []
        for f in self.features:
            if f.kind == CATEGORICAL:
                names.extend(f"{f.name}={lvl}" for lvl in f.levels)
            else:
                names.append(f.name)
        return names

    def semantic_features(self, attack_class: str) -> set[str]:
        fixed = {f.name for f in self.features if f.attack_semantic}
        return fixed | set(self.semantic_by_class.get(attack_class, ()))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "labels": list(self.labels),
            "benign_label": self.benign_label,
            "semantic_by_class": {k: list(v) for k, v in self.semantic_by_class.items()},
            "features": [
                {
                    "name": f.name,
                    "kind": f.kind,
                    "protocol_tag": f.protocol_tag,
                    "attack_semantic": f.attack_semantic,
                    "levels": list(f.levels),
                }
                for f in self.features
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> FeatureSchema:
        feats = tuple(
            Feature(
                name=f["name"],
                kind=f["kind"],
                protocol_tag=f.get("protocol_tag"),
                attack_semantic=bool(f.get("attack_semantic", False)),
                levels=tuple(f.get("levels", ())),
            )
            for f in d["features"]
        )
        return cls(
            features=feats,
            labels=tuple(d["labels"]),
            benign_label=d["benign_label"],
            name=d.get("name", "custom"),
            semantic_by_class={k: tuple(v) for k, v in d.get("semantic_by_class", {}).items()},
        )


@dataclass(frozen=True)
class ScalingStats:
    min: np.ndarray
    max: np.ndarray

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> ScalingStats:
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


@dataclass
class LoadReport:
    """What happened while ingesting a file: drops, unseen levels, rejects."""

    dropped_columns: list[str] = field(default_factory=list)
    unknown_levels: dict[str, dict[str, int]] = field(default_factory=dict)
    rejected_rows: list[tuple[str, int, str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def record_unknown(self, feature: str, level: str) -> None:
        bucket = self.unknown_levels.setdefault(feature, {})
        bucket[level] = bucket.get(level, 0) + 1

    def to_text(self) -> str:
        lines = ["# load report"]
        lines.append(f"dropped_columns: {len(self.dropped_columns)}")
        lines.extend(f"  - {c}" for c in self.dropped_columns)
        lines.append(f"unknown_levels: {sum(len(v) for v in self.unknown_levels.values())}")
        for feat, levels in sorted(self.unknown_levels.items()):
            for lvl, n in sorted(levels.items()):
                lines.append(f"  - {feat}={lvl} ({n} rows, encoded as all-zero group)")
        lines.append(f"rejected_rows: {len(self.rejected_rows)}")
        lines.extend(f"  - {src}:{idx}: {why}" for src, idx, why in self.rejected_rows)
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


@dataclass(frozen=True, eq=False)
class FlowDataset:
    """Scaled flow matrix with integer labels indexing ``schema.labels``."""

    schema: FeatureSchema
    X: np.ndarray
    y: np.ndarray
    scaling_stats: ScalingStats
    split_tag: str = "train"
    seed: int | None = None
    report: LoadReport | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=np.float64)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.schema.n_encoded:
            raise ValueError(f"X must be (rows, {self.schema.n_encoded}), got {X.shape}")
        if len(y) != len(X):
            raise ValueError("X and y lengths differ")
        if len(X) and (X.min() < 0.0 or X.max() > 1.0):
            raise ValueError("flow components must lie in [0, 1]")
        if len(y) and (y.min() < 0 or y.max() >= len(self.schema.labels)):
            raise ValueError("label index outside label set")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def label_set(self) -> tuple[str, ...]:
        return self.schema.labels

    @property
    def benign_index(self) -> int:
        return self.schema.benign_index

    def __len__(self) -> int:
        return len(self.y)

    def class_index(self, label: str) -> int:
        try:
            return self.schema.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown class {label!r}") from None

    def class_counts(self) -> dict[str, int]:
        counts = np.bincount(self.y, minlength=len(self.schema.labels))
        return {lbl: int(n) for lbl, n in zip(self.schema.labels, counts)}

    def subset(self, idx: np.ndarray, split_tag: str | None = None) -> FlowDataset:
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx], split_tag=split_tag or self.split_tag)

    def of_class(self, label: str) -> FlowDataset:
        return self.subset(np.flatnonzero(self.y == self.class_index(label)))

    def with_labels(self, y: np.ndarray) -> FlowDataset:
        return replace(self, y=np.asarray(y))

    def save(self, path: str | Path) -> None:
        """Write a single ``.npz`` container: X, y and a JSON metadata blob."""
        meta = {
            "version": CONTAINER_VERSION,
            "schema": self.schema.to_dict(),
            "scaling_stats": self.scaling_stats.to_dict(),
            "split_tag": self.split_tag,
            "seed": self.seed,
        }
        with open(path, "wb") as fh:
            np.savez(fh, X=self.X, y=self.y, meta=np.array(json.dumps(meta, sort_keys=True)))

    @classmethod
    def load(cls, path: str | Path) -> FlowDataset:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return cls(
                schema=FeatureSchema.from_dict(meta["schema"]),
                X=z["X"],
                y=z["y"],
                scaling_stats=ScalingStats.from_dict(meta["scaling_stats"]),
                split_tag=meta["split_tag"],
                seed=meta["seed"],
            )


def minmax_scale(X_raw: np.ndarray, stats: ScalingStats | None = None) -> tuple[np.ndarray, ScalingStats]:
    """Map every column to ``(v - min) / (max - min)``.

    Constant columns map to 0. With caller-supplied (train) stats the output is
    clamped to ``[0, 1]`` so unseen extremes in a test split stay in the cube.
    """
    X_raw = np.asarray(X_raw, dtype=np.float64)
    fresh = stats is None
    if fresh:
        if len(X_raw):
            stats = ScalingStats(X_raw.min(axis=0), X_raw.max(axis=0))
        else:
            stats = ScalingStats(np.zeros(X_raw.shape[1]), np.zeros(X_raw.shape[1]))
    span = stats.max - stats.min
    const = span <= 0
    safe = np.where(const, 1.0, span)
    out = (X_raw - stats.min) / safe
    out[:, const] = 0.0
    if not fresh:
        out = np.clip(out, 0.0, 1.0)
    return out, stats


# -- encoding ---------------------------------------------------------------


def encode_records(
    schema: FeatureSchema,
    records: Sequence[Sequence],
    report: LoadReport | None = None,
) -> np.ndarray:
    """One-hot encode raw records (one value per raw feature) without scaling.

    Unseen categorical levels produce an all-zero group and are counted in
    ``report``.
    """
    lookups = [
        {lvl: j for j, lvl in enumerate(f.levels)} if f.kind == CATEGORICAL else None
        for f in schema.features
    ]
    spans = schema.spans()
    out = np.zeros((len(records), schema.n_encoded), dtype=np.float64)
    for r, rec in enumerate(records):
        for f, lookup, (lo, _hi), value in zip(schema.features, lookups, spans, rec):
            if lookup is None:
                out[r, lo] = float(value)
                continue
            j = lookup.get(str(value))
            if j is None:
                if report is not None:
                    report.record_unknown(f.name, str(value))
            else:
                out[r, lo + j] = 1.0
    return out


def decode_categoricals(schema: FeatureSchema, X: np.ndarray) -> list[dict[str, str | None]]:
    """Recover categorical levels from one-hot groups (``None`` for all-zero)."""
    X = np.atleast_2d(X)
    rows = []
    cats = [(f, span) for f, span in zip(schema.features, schema.spans()) if f.kind == CATEGORICAL]
    for x in X:
        row = {}
        for f, (lo, hi) in cats:
            group = x[lo:hi]
            row[f.name] = f.levels[int(np.argmax(group))] if group.max() > 0.5 else None
        rows.append(row)
    return rows


def _onehot_stats(schema: FeatureSchema, stats: ScalingStats) -> ScalingStats:
    # one-hot columns are already 0/1; identity scaling keeps single-level groups at 1
    lo, hi = stats.min.copy(), stats.max.copy()
    for a, b in schema.one_hot_groups:
        lo[a:b] = 0.0
        hi[a:b] = 1.0
    return ScalingStats(lo, hi)


def build_datasets(
    schema: FeatureSchema,
    train_raw: np.ndarray,
    y_train: np.ndarray,
    test_raw: np.ndarray,
    y_test: np.ndarray,
    seed: int | None = None,
    report: LoadReport | None = None,
) -> tuple[FlowDataset, FlowDataset]:
    """Scale encoded matrices with train-split statistics and wrap both splits."""
    _, stats = minmax_scale(train_raw)
    stats = _onehot_stats(schema, stats)
    X_train, _ = minmax_scale(train_raw, stats)
    X_test, _ = minmax_scale(test_raw, stats)
    train = FlowDataset(schema, X_train, y_train, stats, "train", seed, report)
    test = FlowDataset(schema, X_test, y_test, stats, "test", seed, report)
    return train, test


def stratified_split(y: np.ndarray, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split; each class sends ``round(n * test_fraction)`` rows to test."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(math.floor(len(idx) * test_fraction + 0.5))
        test_idx.append(idx[:n_test])
        train_idx.append(idx[n_test:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=int)  # noqa: E731
    return cat(train_idx), cat(test_idx)


# -- NSL-KDD ----------------------------------------------------------------

NSLKDD_COLUMNS = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes", "land",
    "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in",
    "num_compromised", "root_shell", "su_attempted", "num_root", "num_file_creations",
    "num_shells", "num_access_files", "num_outbound_cmds", "is_host_login",
    "is_guest_login", "count", "srv_count", "serror_rate", "srv_serror_rate",
    "rerror_rate", "srv_rerror_rate", "same_srv_rate", "diff_srv_rate",
    "srv_diff_host_rate", "dst_host_count", "dst_host_srv_count",
    "dst_host_same_srv_rate", "dst_host_diff_srv_rate", "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate", "dst_host_serror_rate", "dst_host_srv_serror_rate",
    "dst_host_rerror_rate", "dst_host_srv_rerror_rate",
)
NSLKDD_CATEGORICAL = ("protocol_type", "service", "flag")
NSLKDD_BINARY = ("land", "logged_in", "root_shell", "is_host_login", "is_guest_login")
# TCP-only statistics: urgent pointer, SYN-error and REJ-error rates
NSLKDD_TCP_ONLY = (
    "urgent", "serror_rate", "srv_serror_rate", "rerror_rate", "srv_rerror_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)
NSLKDD_LABELS = ("Benign", "DoS", "Probe", "R2L", "U2R")
NSLKDD_SUBCLASSES = {
    "DoS": ("apache2", "back", "land", "neptune", "mailbomb", "pod", "processtable",
            "smurf", "teardrop", "udpstorm", "worm"),
    "Probe": ("ipsweep", "mscan", "nmap", "portsweep", "saint", "satan"),
    "U2R": ("buffer_overflow", "loadmodule", "perl", "ps", "rootkit", "sqlattack", "xterm"),
    "R2L": ("ftp_write", "guess_passwd", "httptunnel", "imap", "multihop", "named", "phf",
            "sendmail", "snmpgetattack", "spy", "snmpguess", "warezclient", "warezmaster",
            "xlock", "xsnoop"),
    "Benign": ("normal", "benign"),
}
_NSLKDD_LABEL_OF = {sub: cls for cls, subs in NSLKDD_SUBCLASSES.items() for sub in subs}
# Shipped defaults; override through the schema's semantic_by_class.
NSLKDD_SEMANTIC = {
    "DoS": ("land", "wrong_fragment", "count", "srv_count"),
    "Probe": ("dst_host_count", "dst_host_srv_count", "dst_host_diff_srv_rate", "diff_srv_rate"),
    "R2L": ("num_failed_logins", "is_guest_login", "logged_in", "hot"),
    "U2R": ("root_shell", "su_attempted", "num_root", "num_file_creations", "num_shells"),
}


def nslkdd_class(raw_label: str) -> str:
    key = raw_label.strip().rstrip(".").lower()
    try:
        return _NSLKDD_LABEL_OF[key]
    except KeyError:
        raise DatasetError(f"unknown NSL-KDD label {raw_label!r}") from None


def _read_nslkdd(path: Path, source: str, report: LoadReport) -> list[tuple[list, str]]:
    rows = []
    numeric_cols = [i for i, c in enumerate(NSLKDD_COLUMNS) if c not in NSLKDD_CATEGORICAL]
    with open(path, newline="") as fh:
        for idx, rec in enumerate(csv.reader(fh)):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) not in (42, 43):
                report.rejected_rows.append((source, idx, f"expected 42 or 43 fields, got {len(rec)}"))
                continue
            values = [c.strip() for c in rec[:41]]
            try:
                for i in numeric_cols:
                    values[i] = float(values[i])
                    if not math.isfinite(values[i]):
                        raise ValueError("non-finite")
                label = nslkdd_class(rec[41])
            except (ValueError, DatasetError) as exc:
                report.rejected_rows.append((source, idx, str(exc)))
                continue
            rows.append((values, label))
    return rows


def nslkdd_schema(levels: Mapping[str, Sequence[str]], semantic: Mapping[str, Sequence[str]] | None = None) -> FeatureSchema:
    feats = []
    for name in NSLKDD_COLUMNS:
        if name in NSLKDD_CATEGORICAL:
            feats.append(Feature(name, CATEGORICAL, levels=tuple(levels[name])))
        elif name in NSLKDD_BINARY:
            feats.append(Feature(name, BINARY_FLAG))
        else:
            feats.append(Feature(name, NUMERIC, protocol_tag="tcp" if name in NSLKDD_TCP_ONLY else None))
    sem = NSLKDD_SEMANTIC if semantic is None else semantic
    return FeatureSchema(
        tuple(feats), NSLKDD_LABELS, "Benign", name="nslkdd",
        semantic_by_class={k: tuple(v) for k, v in sem.items()},
    )


def load_nslkdd(
    train_path: str | Path,
    test_path: str | Path,
    semantic: Mapping[str, Sequence[str]] | None = None,
) -> tuple[FlowDataset, FlowDataset]:
    """Load the official NSL-KDD train/test files (41 features + label [+ difficulty]).

    Categorical levels come from the train file, in first-seen order; test rows
    with unseen levels keep an all-zero group and are listed in the load report.
    """
    train_path, test_path = Path(train_path), Path(test_path)
    for p in (train_path, test_path):
        if not p.is_file():
            raise FileNotFoundError(p)
    report = LoadReport()
    train_rows = _read_nslkdd(train_path, train_path.name, report)
    test_rows = _read_nslkdd(test_path, test_path.name, report)
    if not train_rows:
        raise DatasetError(f"no usable rows in {train_path}")
    levels = {}
    for name in NSLKDD_CATEGORICAL:
        col = NSLKDD_COLUMNS.index(name)
        levels[name] = list(dict.fromkeys(str(v[col]) for v, _ in train_rows))
    schema = nslkdd_schema(levels, semantic)
    label_ix = {lbl: i for i, lbl in enumerate(schema.labels)}

    def encode(rows):
        X = encode_records(schema, [v for v, _ in rows], report)
        y = np.array([label_ix[lbl] for _, lbl in rows], dtype=np.int64)
        return X, y

    X_tr, y_tr = encode(train_rows)
    X_te, y_te = encode(test_rows)
    return build_datasets(schema, X_tr, y_tr, X_te, y_te, report=report)


# -- CICIDS-2017 ------------------------------------------------------------

CICIDS_LABELS = ("Benign", "Bot", "Pat", "DoS", "Inf", "Port", "Web")
CICIDS_SUBCLASSES = {
    "Benign": ("Benign",),
    "Bot": ("Bot",),
    "Pat": ("FTP-Patator", "SSH-Patator"),
    "DoS": ("DDoS", "DoS", "DoS GoldenEye", "GoldenEye", "DoS Hulk", "DoS Slowhttptest",
            "DoS Slow-httptest", "DoS slowloris", "Heartbleed"),
    "Inf": ("Infiltration",),
    "Port": ("PortScan",),
    "Web": ("Web Attack Brute Force", "Brute Force", "Web Attack Sql Injection",
            "Sql Injection", "Web Attack XSS", "XSS"),
}


def _norm_label(text: str) -> str:
    # raw exports mix dash characters, mojibake and spacing in the "Web Attack" labels
    text = re.sub(r"[^0-9a-z]+", " ", text.lower())
    return " ".join(text.split())


_CICIDS_LABEL_OF = {_norm_label(sub): cls for cls, subs in CICIDS_SUBCLASSES.items() for sub in subs}


def merge_cicids_classes(raw_label: str) -> str:
    """Collapse a published CICIDS-2017 subclass name into one of the 7 classes."""
    key = _norm_label(raw_label)
    if key in _CICIDS_LABEL_OF:
        return _CICIDS_LABEL_OF[key]
    if key.startswith("web attack"):
        tail = key[len("web attack"):].strip()
        if tail in _CICIDS_LABEL_OF:
            return _CICIDS_LABEL_OF[tail]
    raise DatasetError(f"label {raw_label!r} is not a published CICIDS-2017 class")


# Preprocessing manifest: identifiers and timestamps carry no flow behaviour.
CICIDS_DROP = ("Flow ID", "Source IP", "Src IP", "Destination IP", "Dst IP", "Timestamp")
CICIDS_CATEGORICAL = ("Protocol",)
CICIDS_PROTOCOL_NAMES = {"6": "tcp", "17": "udp", "0": "other", "1": "icmp"}
_CICIDS_TCP_PATTERN = re.compile(r"(flag|init_win|init win)", re.IGNORECASE)
CICIDS_SEMANTIC = {
    "DoS": ("Destination Port", "Total Fwd Packets", "Flow Packets/s"),
    "Port": ("Destination Port", "SYN Flag Count", "RST Flag Count"),
    "Pat": ("Destination Port", "Total Fwd Packets", "Total Length of Fwd Packets"),
    "Bot": ("Destination Port", "Flow IAT Mean"),
    "Web": ("Destination Port", "Total Length of Fwd Packets"),
    "Inf": ("Destination Port",),
}


def _read_cicids(paths: Sequence[Path], report: LoadReport):
    header = None
    values, labels = [], []
    for path in paths:
        with open(path, newline="", encoding="utf-8", errors="replace") as fh:
            reader = csv.reader(fh)
            try:
                this_header = [h.strip() for h in next(reader)]
            except StopIteration:
                continue
            if header is None:
                header = this_header
            elif this_header != header:
                raise DatasetError(f"{path.name}: header differs from {paths[0].name}")
            label_col = header.index("Label") if "Label" in header else len(header) - 1
            for idx, rec in enumerate(reader, start=1):
                if not rec:
                    continue
                if len(rec) != len(header):
                    report.rejected_rows.append((path.name, idx, f"expected {len(header)} fields, got {len(rec)}"))
                    continue
                try:
                    labels.append(merge_cicids_classes(rec[label_col]))
                except DatasetError as exc:
                    report.rejected_rows.append((path.name, idx, str(exc)))
                    continue
                values.append([c.strip() for i, c in enumerate(rec) if i != label_col])
    if header is None:
        raise DatasetError("no CICIDS rows found")
    label_col = header.index("Label") if "Label" in header else len(header) - 1
    columns = [h for i, h in enumerate(header) if i != label_col]
    return columns, values, labels


def _to_float(text: str) -> float:
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    if t in ("-inf", "-infinity"):
        return -math.inf
    if t in ("", "nan"):
        return math.nan
    return float(t)


def load_cicids(
    paths: Sequence[str | Path] | str | Path,
    test_fraction: float = 0.25,
    seed: int = DEFAULT_SPLIT_SEED,
    semantic: Mapping[str, Sequence[str]] | None = None,
) -> tuple[FlowDataset, FlowDataset]:
    """Load CICIDS-2017 flow exports, merge to 7 classes and split 75/25.

    Manifest applied in order: drop identifier/timestamp columns, drop columns
    with no finite value, replace +/-inf by the column's finite max/min and NaN
    by 0, one-hot ``Protocol`` when present. Every step is logged in the report.
    A directory in ``paths`` stands for all ``*.csv`` files inside it.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = [q for p in map(Path, paths) for q in (sorted(p.glob("*.csv")) if p.is_dir() else [p])]
    for p in paths:
        if not p.is_file():
            raise FileNotFoundError(p)
    report = LoadReport()
    columns, values, labels = _read_cicids(paths, report)
    if not values:
        raise DatasetError("no usable CICIDS rows")

    keep = []
    for i, col in enumerate(columns):
        if col in CICIDS_DROP:
            report.dropped_columns.append(f"{col} (identifier/timestamp)")
        else:
            keep.append(i)
    cat_cols = [i for i in keep if columns[i] in CICIDS_CATEGORICAL]
    num_cols = [i for i in keep if i not in cat_cols]

    numeric = np.empty((len(values), len(num_cols)), dtype=np.float64)
    bad_rows = set()
    for r, rec in enumerate(values):
        for j, i in enumerate(num_cols):
            try:
                numeric[r, j] = _to_float(rec[i])
            except ValueError:
                bad_rows.add(r)
                numeric[r, j] = math.nan
    for r in sorted(bad_rows):
        report.rejected_rows.append(("cicids", r, "non-numeric feature value"))
    ok = np.array([r not in bad_rows for r in range(len(values))])
    numeric = numeric[ok]
    values = [v for v, good in zip(values, ok) if good]
    labels = [lbl for lbl, good in zip(labels, ok) if good]

    finite = np.isfinite(numeric)
    has_finite = finite.any(axis=0)
    for j in np.flatnonzero(~has_finite):
        report.dropped_columns.append(f"{columns[num_cols[j]]} (no finite values)")
    numeric = numeric[:, has_finite]
    finite = finite[:, has_finite]
    num_cols = [c for c, k in zip(num_cols, has_finite) if k]
    n_inf = int(np.isinf(numeric).sum())
    n_nan = int(np.isnan(numeric).sum())
    if n_inf or n_nan:
        col_max = np.where(finite, numeric, -np.inf).max(axis=0)
        col_min = np.where(finite, numeric, np.inf).min(axis=0)
        numeric = np.where(np.isposinf(numeric), col_max, numeric)
        numeric = np.where(np.isneginf(numeric), col_min, numeric)
        numeric = np.nan_to_num(numeric, nan=0.0)
        report.notes.append(f"replaced {n_inf} infinite and {n_nan} missing values")

    feats, blocks = [], []
    by_name = {columns[i]: j for j, i in enumerate(num_cols)}
    for i in keep:
        name = columns[i]
        if i in cat_cols:
            levels = sorted({rec[i] for rec in values}, key=lambda s: (len(s), s))
            feats.append(Feature(name, CATEGORICAL, levels=tuple(levels)))
            onehot = np.array([[1.0 if rec[i] == lvl else 0.0 for lvl in levels] for rec in values])
            blocks.append(onehot.reshape(len(values), len(levels)))
        elif name in by_name:
            tag = "tcp" if _CICIDS_TCP_PATTERN.search(name) else None
            feats.append(Feature(name, NUMERIC, protocol_tag=tag))
            blocks.append(numeric[:, by_name[name]][:, None])
    sem = CICIDS_SEMANTIC if semantic is None else semantic
    names = {f.name for f in feats}
    sem = {k: tuple(f for f in v if f in names) for k, v in sem.items()}
    schema = FeatureSchema(tuple(feats), CICIDS_LABELS, "Benign", name="cicids", semantic_by_class=sem)
    X_raw = np.hstack(blocks)
    label_ix = {lbl: i for i, lbl in enumerate(CICIDS_LABELS)}
    y = np.array([label_ix[lbl] for lbl in labels], dtype=np.int64)
    tr, te = stratified_split(y, test_fraction, seed)
    report.notes.append(f"stratified split seed={seed} test_fraction={test_fraction}")
    report.notes.append(f"encoded width {schema.n_encoded}")
    return build_datasets(schema, X_raw[tr], y[tr], X_raw[te], y[te], seed=seed, report=report)


# -- synthetic --------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian blobs in the unit cube, ``class_counts`` rows per class before splitting.

    ``separation`` is the distance between the benign centre and every attack
    centre measured in units of the per-coordinate noise ``spread``; attack
    centres sit in random directions from the benign one.
    """

    n_features: int = 20
    n_classes: int = 2
    class_counts: tuple[int, ...] = (500, 500)
    separation: float = 3.0
    frozen_fraction: float = 0.25
    seed: int = 0
    spread: float = 0.05
    test_fraction: float = 0.25

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 2:
            raise ValueError("need at least one feature and two classes")
        if len(self.class_counts) != self.n_classes or min(self.class_counts) < 1:
            raise ValueError("class_counts must hold one positive count per class")
        if self.separation < 0 or self.spread <= 0:
            raise ValueError("separation must be >= 0 and spread > 0")
        if not 0 <= self.frozen_fraction < 1:
            raise ValueError("frozen_fraction must lie in [0, 1)")


def synthetic_dataset(spec: SyntheticSpec) -> tuple[FlowDataset, FlowDataset]:
    rng = np.random.default_rng(spec.seed)
    n = spec.n_features
    benign = rng.uniform(0.35, 0.65, size=n)
    centres = [benign]
    for _ in range(spec.n_classes - 1):
        u = rng.normal(size=n)
        u /= np.linalg.norm(u)
        centres.append(benign + spec.separation * spec.spread * u)
    n_frozen = int(round(spec.frozen_fraction * n))
    frozen = set(rng.choice(n, size=n_frozen, replace=False).tolist()) if n_frozen else set()

    X_parts, y_parts = [], []
    for k, (c, count) in enumerate(zip(centres, spec.class_counts)):
        X_parts.append(np.clip(rng.normal(c, spec.spread, size=(count, n)), 0.0, 1.0))
        y_parts.append(np.full(count, k))
    X = np.vstack(X_parts)
    y = np.concatenate(y_parts)
    tr, te = stratified_split(y, spec.test_fraction, spec.seed)

    labels = ("Benign",) + tuple(f"Attack{k}" for k in range(1, spec.n_classes))
    feats = tuple(Feature(f"f{i:02d}", NUMERIC, attack_semantic=i in frozen) for i in range(n))
    schema = FeatureSchema(feats, labels, "Benign", name="synthetic")
    stats = ScalingStats(np.zeros(n), np.ones(n))
    return (
        FlowDataset(schema, X[tr], y[tr], stats, "train", spec.seed),
        FlowDataset(schema, X[te], y[te], stats, "test", spec.seed),
    )


def class_centroids(dataset: FlowDataset) -> np.ndarray:
    k = len(dataset.label_set)
    out = np.zeros((k, dataset.X.shape[1]))
    for c in range(k):
        rows = dataset.X[dataset.y == c]
        if len(rows):
            out[c] = rows.mean(axis=0)
    return out


def nearest_centroid_predict(centroids: np.ndarray, X: np.ndarray) -> np.ndarray:
    d = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d.argmin(axis=1)


def describe(dataset: FlowDataset) -> str:
    counts = Counter({k: v for k, v in dataset.class_counts().items() if v})
    return f"{dataset.schema.name}/{dataset.split_tag}: {len(dataset)} rows x {dataset.X.shape[1]} cols {dict(counts)}"


def iter_batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> Iterable[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]
