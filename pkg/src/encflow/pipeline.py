"""Dataset pipeline: labeling, dedup, normalization, balancing, composition, folds.

Every randomized stage is a pure function of (input, seed); numpy's seeded
Generator drives all sampling so reruns are reproducible bit for bit.
Normalizers are fitted on training rows only and clamp out-of-range test
values, keeping test statistics out of the fit.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .catalog import CATALOG_VERSION
from .features import FeatureVector


class EmptyTrain(ValueError):
    pass


class CatalogMismatch(ValueError):
    pass


class SingleClass(ValueError):
    pass


class TooFewRows(ValueError):
    pass


class InsufficientRows(ValueError):
    def __init__(self, source: str, label: int, have: int, need: int):
        super().__init__(f"source {source!r} class {label}: have {have}, need {need}")
        self.source = source
        self.label = label
        self.have = have
        self.need = need


@dataclass(frozen=True)
class LabeledRow:
    session_id: str
    features: FeatureVector
    label: int
    source_dataset: str

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")


def derive_seed(master: int, label: str) -> int:
    """Deterministic per-purpose seed derived from one master seed."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % (2**32)


# ---------------------------------------------------------------------------
# dedup

@dataclass(frozen=True)
class DedupResult:
    rows: list
    removed_count: int
    conflict_count: int


def deduplicate(rows: Sequence[LabeledRow]) -> DedupResult:
    """Collapse rows with identical (feature values, label); first occurrence wins.

    Feature-identical rows with differing labels are kept and counted as
    conflicts rather than silently dropped.
    """
    seen = set()
    feature_labels: dict = {}
    out = []
    removed = 0
    for row in rows:
        feat_key = tuple(sorted(row.features.values.items()))
        full_key = (feat_key, row.label)
        if full_key in seen:
            removed += 1
            continue
        seen.add(full_key)
        feature_labels.setdefault(feat_key, set()).add(row.label)
        out.append(row)
    conflicts = sum(1 for labels in feature_labels.values() if len(labels) > 1)
    return DedupResult(rows=out, removed_count=removed, conflict_count=conflicts)


# ---------------------------------------------------------------------------
# normalization

class NormRange(Enum):
    ZERO_ONE = "zero_one"
    SYM_ONE = "sym_one"


@dataclass(frozen=True)
class Normalizer:
    feature_names: tuple
    lo: np.ndarray
    hi: np.ndarray
    range: NormRange

    def transform_matrix(self, X: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(span > 0, (X - self.lo) / np.where(span > 0, span, 1.0), 0.0)
        unit = np.clip(unit, 0.0, 1.0)
        if self.range is NormRange.SYM_ONE:
            return unit * 2.0 - 1.0
        return unit


def rows_to_matrix(rows: Sequence[LabeledRow], feature_names: Sequence[str]) -> np.ndarray:
    try:
        return np.array([[r.features.values[n] for n in feature_names] for r in rows], dtype=np.float64)
    except KeyError as exc:
        raise CatalogMismatch(f"row lacks feature {exc}") from exc


def fit_normalizer(
    train_rows: Sequence[LabeledRow],
    norm_range: NormRange = NormRange.ZERO_ONE,
    feature_names: Optional[Sequence[str]] = None,
) -> Normalizer:
    """Per-feature min/max over the training rows only."""
    if not train_rows:
        raise EmptyTrain("no training rows")
    names = tuple(feature_names) if feature_names is not None else tuple(train_rows[0].features.values)
    X = rows_to_matrix(train_rows, names)
    return fit_matrix_normalizer(X, names, norm_range)


def fit_matrix_normalizer(
    X: np.ndarray, feature_names: Sequence[str], norm_range: NormRange = NormRange.ZERO_ONE
) -> Normalizer:
    if X.shape[0] == 0:
        raise EmptyTrain("no training rows")
    return Normalizer(
        feature_names=tuple(feature_names),
        lo=X.min(axis=0),
        hi=X.max(axis=0),
        range=norm_range,
    )


def apply_normalizer(rows: Sequence[LabeledRow], normalizer: Normalizer) -> list:
    """Map rows into the normalizer's range, clamped; constant features hit the low bound."""
    X = rows_to_matrix(rows, normalizer.feature_names)
    T = normalizer.transform_matrix(X)
    out = []
    for row, values in zip(rows, T):
        out.append(
            LabeledRow(
                session_id=row.session_id,
                features=FeatureVector(
                    values=dict(zip(normalizer.feature_names, values.tolist())),
                    catalog_version=row.features.catalog_version,
                ),
                label=row.label,
                source_dataset=row.source_dataset,
            )
        )
    return out


# ---------------------------------------------------------------------------
# balancing and composition

def balance_undersample(rows: Sequence[LabeledRow], seed: int) -> list:
    """Seeded random downsample of the majority class to the minority count."""
    by_label = {0: [], 1: []}
    for i, row in enumerate(rows):
        by_label[row.label].append(i)
    if not by_label[0] or not by_label[1]:
        raise SingleClass("undersampling requires both classes")
    n = min(len(by_label[0]), len(by_label[1]))
    rng = np.random.default_rng(seed)
    keep = set()
    for label in (0, 1):
        idx = by_label[label]
        if len(idx) == n:
            keep.update(idx)
        else:
            chosen = rng.choice(len(idx), size=n, replace=False)
            keep.update(idx[j] for j in chosen.tolist())
    return [rows[i] for i in sorted(keep)]


# Session counts from the published composition table, per source and class.
TABLE_II_COUNTS = {
    "unsw_ns_2019": {"malicious": 12900, "legitimate": 13300},
    "cicids_2017": {"malicious": 13000, "legitimate": 13500},
    "cic_andmal_2017": {"malicious": 12403, "legitimate": 12400},
    "mcfp": {"malicious": 13600, "legitimate": 12180},
    "cicids_2012": {"malicious": 7613, "legitimate": 6731},
}


@dataclass(frozen=True)
class ClassTargets:
    malicious: int
    legitimate: int


@dataclass(frozen=True)
class CompositionPlan:
    targets: Mapping[str, ClassTargets]
    seed: int = 0

    def to_json(self) -> str:
        payload = {
            "seed": self.seed,
            "targets": {
                src: {"malicious": t.malicious, "legitimate": t.legitimate}
                for src, t in sorted(self.targets.items())
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CompositionPlan":
        payload = json.loads(text)
        targets = {
            src: ClassTargets(malicious=int(t["malicious"]), legitimate=int(t["legitimate"]))
            for src, t in payload["targets"].items()
        }
        return cls(targets=targets, seed=int(payload.get("seed", 0)))


def table_ii_plan(scale: float = 1.0, seed: int = 0) -> CompositionPlan:
    """Default plan mirroring the published per-source counts, scaled."""
    targets = {
        src: ClassTargets(
            malicious=int(round(counts["malicious"] * scale)),
            legitimate=int(round(counts["legitimate"] * scale)),
        )
        for src, counts in TABLE_II_COUNTS.items()
    }
    return CompositionPlan(targets=targets, seed=seed)


def compose(sources: Mapping[str, Sequence[LabeledRow]], plan: CompositionPlan) -> list:
    """Seeded per-(source, class) sample hitting the plan targets exactly."""
    rng = np.random.default_rng(plan.seed)
    out = []
    for src in sorted(plan.targets):
        targets = plan.targets[src]
        rows = list(sources.get(src, ()))
        for label, need in ((1, targets.malicious), (0, targets.legitimate)):
            idx = [i for i, r in enumerate(rows) if r.label == label]
            if len(idx) < need:
                raise InsufficientRows(src, label, len(idx), need)
            chosen = sorted(rng.choice(len(idx), size=need, replace=False).tolist())
            for j in chosen:
                row = rows[idx[j]]
                out.append(
                    LabeledRow(
                        session_id=row.session_id,
                        features=row.features,
                        label=row.label,
                        source_dataset=src,
                    )
                )
    return out


# ---------------------------------------------------------------------------
# stratified folds

@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignments: tuple  # fold id per row index

    def fold_indices(self, fold: int) -> list:
        return [i for i, f in enumerate(self.assignments) if f == fold]

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "seed": self.seed, "assignments": list(self.assignments)})

    @classmethod
    def from_json(cls, text: str) -> "FoldPlan":
        payload = json.loads(text)
        return cls(k=int(payload["k"]), seed=int(payload["seed"]), assignments=tuple(payload["assignments"]))


def stratified_kfold(rows: Sequence[LabeledRow], k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffled round-robin dealing per class: fold class counts within +/-1."""
    if k < 2:
        raise ValueError("k must be >= 2")
    labels = [r.label for r in rows]
    rng = np.random.default_rng(seed)
    assignments = [0] * len(rows)
    for label in (0, 1):
        idx = np.array([i for i, y in enumerate(labels) if y == label])
        if len(idx) < k:
            raise TooFewRows(f"class {label} has {len(idx)} rows, need >= {k}")
        rng.shuffle(idx)
        for pos, i in enumerate(idx.tolist()):
            assignments[i] = pos % k
    return FoldPlan(k=k, seed=seed, assignments=tuple(assignments))


# ---------------------------------------------------------------------------
# feature CSV contract and manifests

LABEL_COLUMN = "label"
SOURCE_COLUMN = "source_dataset"
ID_COLUMN = "session_id"


def write_feature_csv(rows: Sequence[LabeledRow], feature_names: Sequence[str], path) -> None:
    """CSV contract: session_id first, catalog columns in order, label and source last."""
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow([ID_COLUMN, *feature_names, LABEL_COLUMN, SOURCE_COLUMN])
        for row in rows:
            values = [repr(float(row.features.values[n])) for n in feature_names]
            writer.writerow([row.session_id, *values, row.label, row.source_dataset])


def read_feature_csv(path) -> tuple[list, list]:
    """Read a feature CSV; returns (rows, feature_names)."""
    with open(path, "r", encoding="utf-8", newline="") as fp:
        reader = csv.reader(fp)
        header = next(reader, None)
        if not header or header[0] != ID_COLUMN or header[-2:] != [LABEL_COLUMN, SOURCE_COLUMN]:
            raise CatalogMismatch(f"{path}: header does not match the feature CSV contract")
        feature_names = header[1:-2]
        rows = []
        for record in reader:
            values = {name: float(v) for name, v in zip(feature_names, record[1:-2])}
            rows.append(
                LabeledRow(
                    session_id=record[0],
                    features=FeatureVector(values=values),
                    label=int(record[-2]),
                    source_dataset=record[-1],
                )
            )
    return rows, feature_names


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, command: str, config: Mapping, inputs: Iterable, row_counts: Mapping) -> None:
    """Record everything needed to reproduce a run: config, seeds, input digests."""
    payload = {
        "command": command,
        "config": dict(sorted(config.items())),
        "catalog_version": CATALOG_VERSION,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "row_counts": dict(sorted(row_counts.items())),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
