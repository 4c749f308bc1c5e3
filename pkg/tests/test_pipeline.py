import json

import numpy as np
import pytest

from encflow.features import FeatureVector
from encflow.pipeline import (
    CatalogMismatch,
    ClassTargets,
    CompositionPlan,
    EmptyTrain,
    FoldPlan,
    InsufficientRows,
    LabeledRow,
    NormRange,
    SingleClass,
    TooFewRows,
    balance_undersample,
    compose,
    deduplicate,
    derive_seed,
    apply_normalizer,
    fit_normalizer,
    read_feature_csv,
    stratified_kfold,
    table_ii_plan,
    write_feature_csv,
    write_manifest,
    TABLE_II_COUNTS,
)


def row(session_id, values, label=0, source="src"):
    return LabeledRow(session_id=session_id, features=FeatureVector(values=values), label=label, source_dataset=source)


def rows_from_matrix(M, labels, source="src", prefix="r"):
    names = [f"x{i}" for i in range(len(M[0]))]
    return [row(f"{prefix}{i}", dict(zip(names, map(float, r))), int(labels[i]), source) for i, r in enumerate(M)]


class TestDeduplicate:
    def test_identical_rows_collapse(self):
        rows = [row("a", {"x": 1.0}), row("b", {"x": 1.0})]
        result = deduplicate(rows)
        assert len(result.rows) == 1
        assert result.rows[0].session_id == "a"  # first occurrence kept
        assert result.removed_count == 1
        assert result.conflict_count == 0

    def test_label_conflicts_kept_and_counted(self):
        rows = [row("a", {"x": 1.0}, label=0), row("b", {"x": 1.0}, label=1)]
        result = deduplicate(rows)
        assert len(result.rows) == 2
        assert result.removed_count == 0
        assert result.conflict_count == 1

    def test_injected_duplicates_counted_exactly(self):
        rng = np.random.default_rng(11)
        base = [row(f"r{i}", {"x": float(v)}, label=int(i % 2)) for i, v in enumerate(rng.normal(size=1000))]
        dup_idx = rng.choice(1000, size=50, replace=False)
        rows = base + [row(f"d{i}", dict(base[i].features.values), base[i].label) for i in dup_idx]
        result = deduplicate(rows)
        assert result.removed_count == 50
        assert len(result.rows) == 1000


class TestNormalizer:
    def test_zero_one_worked_example(self):
        rows = [row("a", {"x": 2.0}), row("b", {"x": 4.0}), row("c", {"x": 6.0})]
        norm = fit_normalizer(rows)
        out = apply_normalizer(rows, norm)
        assert [r.features.values["x"] for r in out] == [0.0, 0.5, 1.0]

    def test_constant_column_maps_to_lower_bound(self):
        rows = [row(str(i), {"x": 3.0, "y": float(i)}) for i in range(3)]
        for rng_kind, bound in ((NormRange.ZERO_ONE, 0.0), (NormRange.SYM_ONE, -1.0)):
            out = apply_normalizer(rows, fit_normalizer(rows, rng_kind))
            assert all(r.features.values["x"] == bound for r in out)

    def test_test_values_clamped(self):
        train = [row("a", {"x": 2.0}), row("b", {"x": 6.0})]
        norm = fit_normalizer(train)
        out = apply_normalizer([row("t", {"x": 10.0}), row("u", {"x": -5.0})], norm)
        assert out[0].features.values["x"] == 1.0
        assert out[1].features.values["x"] == 0.0

    def test_identity_when_bounds_are_unit(self):
        train = [row("a", {"x": 0.0}), row("b", {"x": 1.0})]
        norm = fit_normalizer(train)
        probe = [row("p", {"x": 0.25})]
        assert apply_normalizer(probe, norm)[0].features.values["x"] == 0.25

    def test_training_rows_always_in_range_and_monotone(self):
        rng = np.random.default_rng(5)
        M = rng.normal(0, 50, size=(40, 6))
        rows = rows_from_matrix(M, [0] * 40)
        for rng_kind, lo, hi in ((NormRange.ZERO_ONE, 0.0, 1.0), (NormRange.SYM_ONE, -1.0, 1.0)):
            norm = fit_normalizer(rows, rng_kind)
            out = apply_normalizer(rows, norm)
            values = np.array([[r.features.values[f"x{i}"] for i in range(6)] for r in out])
            assert values.min() >= lo and values.max() <= hi
            order_in = np.argsort(M[:, 0], kind="mergesort")
            order_out = np.argsort(values[order_in, 0], kind="mergesort")
            assert (order_out == np.arange(40)).all()  # monotone per feature

    def test_empty_train_raises(self):
        with pytest.raises(EmptyTrain):
            fit_normalizer([])

    def test_catalog_mismatch(self):
        norm = fit_normalizer([row("a", {"x": 1.0})])
        with pytest.raises(CatalogMismatch):
            apply_normalizer([row("b", {"y": 1.0})], norm)


class TestUndersample:
    def _rows(self, n_mal, n_leg):
        return [row(f"m{i}", {"x": float(i)}, 1) for i in range(n_mal)] + [
            row(f"l{i}", {"x": float(i)}, 0) for i in range(n_leg)
        ]

    def test_majority_downsampled_to_minority(self):
        out = balance_undersample(self._rows(100, 60), seed=3)
        labels = [r.label for r in out]
        assert labels.count(1) == labels.count(0) == 60

    def test_already_balanced_identity(self):
        rows = self._rows(50, 50)
        assert balance_undersample(rows, seed=3) == rows

    def test_same_seed_same_selection(self):
        rows = self._rows(100, 60)
        a = balance_undersample(rows, seed=9)
        b = balance_undersample(rows, seed=9)
        assert [r.session_id for r in a] == [r.session_id for r in b]

    def test_single_class_rejected(self):
        with pytest.raises(SingleClass):
            balance_undersample(self._rows(10, 0), seed=1)


class TestCompose:
    def _source(self, n, source):
        rows = []
        for i in range(n):
            rows.append(row(f"{source}-{i}", {"x": float(i)}, label=i % 2, source=source))
        return rows

    def test_targets_hit_exactly(self):
        plan = CompositionPlan(targets={"A": ClassTargets(malicious=10, legitimate=10)}, seed=1)
        out = compose({"A": self._source(100, "A")}, plan)
        assert len(out) == 20
        assert sum(r.label for r in out) == 10
        assert all(r.source_dataset == "A" for r in out)

    def test_scaled_table_ii_proportions(self):
        scale = 1 / 1000
        plan = table_ii_plan(scale=scale, seed=2)
        sources = {src: self._source(40, src) for src in TABLE_II_COUNTS}
        out = compose(sources, plan)
        total = len(out)
        for src, counts in TABLE_II_COUNTS.items():
            share = sum(1 for r in out if r.source_dataset == src) / total
            expected = (counts["malicious"] + counts["legitimate"]) / sum(
                c["malicious"] + c["legitimate"] for c in TABLE_II_COUNTS.values()
            )
            assert share == pytest.approx(expected, abs=0.02)

    def test_insufficient_rows(self):
        plan = CompositionPlan(targets={"A": ClassTargets(malicious=10, legitimate=0)}, seed=1)
        with pytest.raises(InsufficientRows) as err:
            compose({"A": self._source(10, "A")}, plan)  # only 5 malicious present
        assert err.value.have == 5
        assert err.value.need == 10

    def test_deterministic_given_seed(self):
        plan = CompositionPlan(targets={"A": ClassTargets(5, 5)}, seed=7)
        src = {"A": self._source(50, "A")}
        assert [r.session_id for r in compose(src, plan)] == [r.session_id for r in compose(src, plan)]

    def test_plan_json_round_trip(self):
        plan = table_ii_plan(scale=0.01, seed=3)
        again = CompositionPlan.from_json(plan.to_json())
        assert again == plan


class TestStratifiedKfold:
    def _rows(self, n_mal, n_leg):
        return [row(f"m{i}", {"x": 0.0}, 1) for i in range(n_mal)] + [row(f"l{i}", {"x": 0.0}, 0) for i in range(n_leg)]

    def test_ten_rows_five_folds_exact(self):
        rows = self._rows(5, 5)
        plan = stratified_kfold(rows, k=5, seed=1)
        for fold in range(5):
            idx = plan.fold_indices(fold)
            labels = [rows[i].label for i in idx]
            assert labels.count(1) == 1 and labels.count(0) == 1

    def test_eleven_rows_within_one(self):
        rows = self._rows(6, 5)
        plan = stratified_kfold(rows, k=5, seed=1)
        mal_counts = [sum(rows[i].label for i in plan.fold_indices(f)) for f in range(5)]
        assert sorted(mal_counts) == [1, 1, 1, 1, 2]

    def test_partition_property(self):
        rows = self._rows(487, 513)
        plan = stratified_kfold(rows, k=5, seed=42)
        folds = [set(plan.fold_indices(f)) for f in range(5)]
        assert set().union(*folds) == set(range(1000))
        assert sum(len(f) for f in folds) == 1000

    def test_too_few_rows(self):
        with pytest.raises(TooFewRows):
            stratified_kfold(self._rows(3, 10), k=5, seed=0)

    def test_plan_json_round_trip(self):
        plan = stratified_kfold(self._rows(10, 10), k=5, seed=9)
        assert FoldPlan.from_json(plan.to_json()) == plan


class TestCsvContract:
    def test_round_trip(self, tmp_path):
        names = ["alpha", "beta"]
        rows = [row("s1", {"alpha": 1.25, "beta": -3.5}, 1, "ds"), row("s2", {"alpha": 0.1, "beta": 2.0}, 0, "ds")]
        path = tmp_path / "f.csv"
        write_feature_csv(rows, names, path)
        got, got_names = read_feature_csv(path)
        assert got_names == names
        assert got == rows
        header = path.read_text().splitlines()[0]
        assert header == "session_id,alpha,beta,label,source_dataset"

    def test_header_only_when_empty(self, tmp_path):
        path = tmp_path / "empty.csv"
        write_feature_csv([], ["a"], path)
        assert path.read_text().strip() == "session_id,a,label,source_dataset"
        rows, names = read_feature_csv(path)
        assert rows == [] and names == ["a"]

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("nope,a,label\n")
        with pytest.raises(CatalogMismatch):
            read_feature_csv(path)


def test_derive_seed_is_stable_and_label_sensitive():
    assert derive_seed(1, "folds") == derive_seed(1, "folds")
    assert derive_seed(1, "folds") != derive_seed(1, "cell")
    assert derive_seed(1, "folds") != derive_seed(2, "folds")


def test_manifest_records_digests_and_counts(tmp_path):
    data = tmp_path / "in.csv"
    data.write_text("session_id,a,label,source_dataset\n")
    out = tmp_path / "manifest.json"
    write_manifest(out, command="extract", config={"seed": 1}, inputs=[data], row_counts={"rows": 0})
    payload = json.loads(out.read_text())
    assert payload["command"] == "extract"
    assert len(payload["inputs"][str(data)]) == 64
    assert payload["row_counts"] == {"rows": 0}
    assert payload["catalog_version"]
