"""Metrics and the experiment harness: CV, the algorithm-by-feature-set grid,
and cross-dataset validation.

ROC-AUC is the rank statistic over continuous scores (ties credited 0.5),
which equals the trapezoidal area under the full-threshold ROC curve. Fold
statistics are population STDs. Normalizers are refit inside every fold on
the training split only. Grid cells are independent jobs; a parallel run
yields results identical to the sequential one.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .catalog import FEATURE_SET_MEMBERS, NUMERIC_FEATURE_SETS, FeatureSetName
from .learners import ALL_ALGORITHMS, Algorithm, ModelSpec, predict, score, train
from .pipeline import (
    FoldPlan,
    LabeledRow,
    NormRange,
    derive_seed,
    fit_matrix_normalizer,
    rows_to_matrix,
    stratified_kfold,
)


class LengthMismatch(ValueError):
    pass


class BadLabel(ValueError):
    pass


class EmptyEval(ValueError):
    pass


class SingleClass(ValueError):
    pass


class SingleSource(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion(y_true: Sequence[int], y_pred: Sequence[int]) -> ConfusionCounts:
    """Tally against the malicious class (1) as positive."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} truths vs {len(y_pred)} predictions")
    for arr in (y_true, y_pred):
        if not np.isin(arr, (0, 1)).all():
            raise BadLabel("labels must be 0/1")
    return ConfusionCounts(
        tp=int(((y_true == 1) & (y_pred == 1)).sum()),
        fp=int(((y_true == 0) & (y_pred == 1)).sum()),
        tn=int(((y_true == 0) & (y_pred == 0)).sum()),
        fn=int(((y_true == 1) & (y_pred == 0)).sum()),
    )


def metrics(c: ConfusionCounts) -> dict:
    if c.total == 0:
        raise EmptyEval("no evaluated rows")
    positives = c.tp + c.fn
    negatives = c.fp + c.tn
    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "tpr": c.tp / positives if positives else 0.0,
        "fpr": c.fp / negatives if negatives else 0.0,
    }


def _midranks(x: np.ndarray) -> np.ndarray:
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    mid = ends - counts + (counts + 1) / 2.0
    return mid[inverse]


def roc_auc(scores: Sequence[float], y_true: Sequence[int]) -> float:
    """Probability a random positive outscores a random negative; ties count 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true)
    if len(scores) != len(y_true):
        raise LengthMismatch(f"{len(scores)} scores vs {len(y_true)} labels")
    n_pos = int((y_true == 1).sum())
    n_neg = int((y_true == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both classes")
    ranks = _midranks(scores)
    rank_sum = ranks[y_true == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores: Sequence[float], y_true: Sequence[int]) -> list:
    """(threshold, fpr, tpr) over all score thresholds, endpoints included."""
    scores = np.asarray(scores, dtype=np.float64)
    y_true = np.asarray(y_true)
    n_pos = int((y_true == 1).sum())
    n_neg = int((y_true == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC curve needs both classes")
    points = [(float("inf"), 0.0, 0.0)]
    for t in np.unique(scores)[::-1]:
        pred = scores >= t
        points.append(
            (
                float(t),
                float(((y_true == 0) & pred).sum() / n_neg),
                float(((y_true == 1) & pred).sum() / n_pos),
            )
        )
    return points


def write_roc_points(path, scores: Sequence[float], y_true: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        fp.write("threshold,fpr,tpr\n")
        for t, fpr, tpr in roc_points(scores, y_true):
            fp.write(f"{t!r},{fpr!r},{tpr!r}\n")


# ---------------------------------------------------------------------------
# cross-validation

METRIC_KEYS = ("accuracy", "roc_auc", "fpr", "tpr")


@dataclass(frozen=True)
class FoldMetrics:
    accuracy: float
    roc_auc: float
    fpr: float
    tpr: float

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "roc_auc": self.roc_auc, "fpr": self.fpr, "tpr": self.tpr}


@dataclass(frozen=True)
class EvalReport:
    algorithm: str
    feature_set: str
    seed: int
    k: int
    per_fold: tuple
    mean: dict
    std: dict
    manifest_ref: Optional[str] = None

    def to_json_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "feature_set": self.feature_set,
            "seed": self.seed,
            "k": self.k,
            "per_fold": [f.as_dict() for f in self.per_fold],
            "mean": dict(sorted(self.mean.items())),
            "std": dict(sorted(self.std.items())),
            "manifest_ref": self.manifest_ref,
        }


def _resolve_feature_set(feature_set) -> FeatureSetName:
    if isinstance(feature_set, FeatureSetName):
        return feature_set
    return FeatureSetName(str(feature_set).upper())


def _summarize(per_fold: Sequence[FoldMetrics]) -> tuple[dict, dict]:
    mean, std = {}, {}
    for key in METRIC_KEYS:
        values = np.array([getattr(f, key) for f in per_fold], dtype=np.float64)
        mean[key] = float(values.mean())
        std[key] = float(values.std())
    return mean, std


def _eval_split(
    spec: ModelSpec,
    X: np.ndarray,
    y: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    feature_names: Sequence[str],
    norm_range: NormRange,
) -> FoldMetrics:
    normalizer = fit_matrix_normalizer(X[train_idx], feature_names, norm_range)
    X_train = normalizer.transform_matrix(X[train_idx])
    X_test = normalizer.transform_matrix(X[test_idx])
    model = train(spec, X_train, y[train_idx], feature_names)
    s = score(model, X_test)
    m = metrics(confusion(y[test_idx], (s >= 0.5).astype(int)))
    return FoldMetrics(accuracy=m["accuracy"], roc_auc=roc_auc(s, y[test_idx]), fpr=m["fpr"], tpr=m["tpr"])


def run_cv(
    spec: ModelSpec,
    rows: Sequence[LabeledRow],
    feature_set,
    fold_plan: FoldPlan,
    norm_range: NormRange = NormRange.ZERO_ONE,
    manifest_ref: Optional[str] = None,
) -> EvalReport:
    """Stratified k-fold evaluation; per-fold normalizer fit on the train split."""
    feature_set = _resolve_feature_set(feature_set)
    if len(fold_plan.assignments) != len(rows):
        raise LengthMismatch("fold plan does not cover the rows")
    names = FEATURE_SET_MEMBERS[feature_set]
    X = rows_to_matrix(rows, names)
    y = np.array([r.label for r in rows], dtype=np.int64)
    assignments = np.asarray(fold_plan.assignments)
    per_fold = []
    for fold in range(fold_plan.k):
        test_idx = np.nonzero(assignments == fold)[0]
        train_idx = np.nonzero(assignments != fold)[0]
        assert not set(test_idx.tolist()) & set(train_idx.tolist())
        per_fold.append(_eval_split(spec, X, y, train_idx, test_idx, names, norm_range))
    mean, std = _summarize(per_fold)
    return EvalReport(
        algorithm=spec.algorithm.value,
        feature_set=feature_set.value,
        seed=spec.seed,
        k=fold_plan.k,
        per_fold=tuple(per_fold),
        mean=mean,
        std=std,
        manifest_ref=manifest_ref,
    )


def oof_scores(
    spec: ModelSpec,
    rows: Sequence[LabeledRow],
    feature_set,
    fold_plan: FoldPlan,
    norm_range: NormRange = NormRange.ZERO_ONE,
) -> tuple[np.ndarray, np.ndarray]:
    """Out-of-fold scores: each row scored by the model that never saw it."""
    feature_set = _resolve_feature_set(feature_set)
    names = FEATURE_SET_MEMBERS[feature_set]
    X = rows_to_matrix(rows, names)
    y = np.array([r.label for r in rows], dtype=np.int64)
    assignments = np.asarray(fold_plan.assignments)
    out = np.zeros(len(rows), dtype=np.float64)
    for fold in range(fold_plan.k):
        test_idx = np.nonzero(assignments == fold)[0]
        train_idx = np.nonzero(assignments != fold)[0]
        normalizer = fit_matrix_normalizer(X[train_idx], names, norm_range)
        model = train(spec, normalizer.transform_matrix(X[train_idx]), y[train_idx], names)
        out[test_idx] = score(model, normalizer.transform_matrix(X[test_idx]))
    return out, y


# ---------------------------------------------------------------------------
# cross-dataset validation

class CrossDirection(Enum):
    TRAIN_OTHERS_TEST_A = "train_others_test_A"
    TRAIN_A_TEST_OTHERS = "train_A_test_others"


@dataclass(frozen=True)
class CrossDatasetReport:
    direction: CrossDirection
    cells: dict  # held-out source -> {accuracy, roc_auc, fpr, tpr}

    def to_json_dict(self) -> dict:
        return {
            "direction": self.direction.value,
            "cells": {src: dict(sorted(m.items())) for src, m in sorted(self.cells.items())},
        }


def run_cross_dataset(
    spec: ModelSpec,
    rows_by_source: Mapping[str, Sequence[LabeledRow]],
    feature_set,
    seed: int = 0,
    norm_range: NormRange = NormRange.ZERO_ONE,
) -> list:
    """Hold out each source in both directions; two reports, one cell per source."""
    feature_set = _resolve_feature_set(feature_set)
    sources = sorted(rows_by_source)
    if len(sources) < 2:
        raise SingleSource("cross-dataset validation needs at least two sources")
    names = FEATURE_SET_MEMBERS[feature_set]
    reports = []
    for direction in CrossDirection:
        cells = {}
        for held_out in sources:
            a_rows = list(rows_by_source[held_out])
            other_rows = [r for src in sources if src != held_out for r in rows_by_source[src]]
            if direction is CrossDirection.TRAIN_OTHERS_TEST_A:
                train_rows, test_rows = other_rows, a_rows
            else:
                train_rows, test_rows = a_rows, other_rows
            X_train = rows_to_matrix(train_rows, names)
            X_test = rows_to_matrix(test_rows, names)
            y_train = np.array([r.label for r in train_rows], dtype=np.int64)
            y_test = np.array([r.label for r in test_rows], dtype=np.int64)
            normalizer = fit_matrix_normalizer(X_train, names, norm_range)
            model = train(
                ModelSpec(spec.algorithm, spec.hyperparameters, derive_seed(seed, f"xds:{held_out}")),
                normalizer.transform_matrix(X_train),
                y_train,
                names,
            )
            s = score(model, normalizer.transform_matrix(X_test))
            m = metrics(confusion(y_test, (s >= 0.5).astype(int)))
            cells[held_out] = {
                "accuracy": m["accuracy"],
                "roc_auc": roc_auc(s, y_test),
                "fpr": m["fpr"],
                "tpr": m["tpr"],
            }
        reports.append(CrossDatasetReport(direction=direction, cells=cells))
    return reports


# ---------------------------------------------------------------------------
# the experiment grid

@dataclass(frozen=True)
class GridResult:
    reports: dict  # (algorithm value, feature set value) -> EvalReport
    seed: int
    k: int


def experiment_grid(
    rows: Sequence[LabeledRow],
    algorithms: Optional[Sequence[Algorithm]] = None,
    feature_sets: Optional[Sequence[FeatureSetName]] = None,
    k: int = 5,
    seed: int = 0,
    workers: int = 1,
    norm_range: NormRange = NormRange.ZERO_ONE,
) -> GridResult:
    """Evaluate every algorithm on every feature set with shared fold assignments."""
    algorithms = tuple(algorithms) if algorithms is not None else ALL_ALGORITHMS
    feature_sets = tuple(feature_sets) if feature_sets is not None else NUMERIC_FEATURE_SETS
    fold_plan = stratified_kfold(rows, k=k, seed=derive_seed(seed, "folds"))
    cells = [(algo, fs) for fs in feature_sets for algo in algorithms]

    def run_cell(cell):
        algo, fs = cell
        spec = ModelSpec(algorithm=algo, seed=derive_seed(seed, f"{algo.value}:{fs.value}"))
        return run_cv(spec, rows, fs, fold_plan, norm_range)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]
    reports = {(algo.value, fs.value): rep for (algo, fs), rep in zip(cells, results)}
    return GridResult(reports=reports, seed=seed, k=k)


def _format(x: float) -> str:
    return f"{x:.4f}"


def grid_markdown(grid: GridResult) -> str:
    """Render grouped by feature set: one row per algorithm, metric/STD columns."""
    feature_sets = []
    for _, fs in grid.reports:
        if fs not in feature_sets:
            feature_sets.append(fs)
    algorithms = []
    for algo, _ in grid.reports:
        if algo not in algorithms:
            algorithms.append(algo)
    lines = []
    for fs in feature_sets:
        lines.append(f"## {fs} feature set")
        lines.append("")
        lines.append("| algorithm | accuracy | STD(accuracy) | roc-auc | STD(roc-auc) | FPR | STD(FPR) | TPR | STD(TPR) |")
        lines.append("| --- | --- | --- | --- | --- | --- | --- | --- | --- |")
        for algo in algorithms:
            rep = grid.reports.get((algo, fs))
            if rep is None:
                continue
            lines.append(
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |".format(
                    algo,
                    _format(rep.mean["accuracy"]),
                    _format(rep.std["accuracy"]),
                    _format(rep.mean["roc_auc"]),
                    _format(rep.std["roc_auc"]),
                    _format(rep.mean["fpr"]),
                    _format(rep.std["fpr"]),
                    _format(rep.mean["tpr"]),
                    _format(rep.std["tpr"]),
                )
            )
        lines.append("")
    return "\n".join(lines)


def grid_csv(grid: GridResult) -> str:
    lines = ["feature_set,algorithm,accuracy,accuracy_std,roc_auc,roc_auc_std,fpr,fpr_std,tpr,tpr_std"]
    for (algo, fs), rep in sorted(grid.reports.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        lines.append(
            ",".join(
                [
                    fs,
                    algo,
                    *(
                        _format(v)
                        for v in (
                            rep.mean["accuracy"],
                            rep.std["accuracy"],
                            rep.mean["roc_auc"],
                            rep.std["roc_auc"],
                            rep.mean["fpr"],
                            rep.std["fpr"],
                            rep.mean["tpr"],
                            rep.std["tpr"],
                        )
                    ),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def report_json_text(report: EvalReport) -> str:
    return json.dumps(report.to_json_dict(), indent=2, sort_keys=True) + "\n"
