import itertools

import numpy as np
import pytest

from encflow.boosting import log_loss
from encflow.learners import (
    ALL_ALGORITHMS,
    Algorithm,
    ColumnMismatch,
    ModelSpec,
    NonFiniteInput,
    ShapeMismatch,
    SingleClass,
    TrainedModel,
    load_model,
    predict,
    save_model,
    score,
    train,
)

RNG = np.random.default_rng(1234)


def separable(n=60, d=4, gap=6.0, seed=5):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d))
    y = np.arange(n) % 2
    X[y == 1, 0] += gap
    return X, y


class TestModelSpec:
    def test_unknown_hyperparameter_rejected(self):
        with pytest.raises(ValueError):
            ModelSpec(Algorithm.RF, {"bogus": 1})

    def test_known_override_accepted(self):
        spec = ModelSpec(Algorithm.KNN, {"n_neighbors": 1})
        assert spec.resolved()["n_neighbors"] == 1

    def test_defaults_pinned(self):
        assert ModelSpec(Algorithm.RF).resolved()["n_estimators"] == 200
        assert ModelSpec(Algorithm.KNN).resolved()["n_neighbors"] == 6
        xgb = ModelSpec(Algorithm.XGB).resolved()
        assert (xgb["rounds"], xgb["max_depth"], xgb["learning_rate"], xgb["reg_lambda"]) == (100, 6, 0.3, 1.0)
        ada = ModelSpec(Algorithm.ADABOOST).resolved()
        assert ada["n_estimators"] == 50


class TestTrainValidation:
    def test_non_finite_rejected(self):
        X = np.array([[1.0, np.nan], [0.0, 1.0]])
        with pytest.raises(NonFiniteInput):
            train(ModelSpec(Algorithm.CART), X, [0, 1])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            train(ModelSpec(Algorithm.CART), np.zeros((3, 2)), [0, 1])

    def test_single_class_rejected_except_linear(self):
        X = np.zeros((4, 2))
        with pytest.raises(SingleClass):
            train(ModelSpec(Algorithm.CART), X, [1, 1, 1, 1])
        m = train(ModelSpec(Algorithm.LINEAR), X, [1, 1, 1, 1])
        assert score(m, X) == pytest.approx([1.0] * 4, abs=1e-6)

    def test_column_mismatch_on_score(self):
        X, y = separable()
        m = train(ModelSpec(Algorithm.CART), X, y)
        with pytest.raises(ColumnMismatch):
            score(m, X[:, :2])


class TestWorkedExamples:
    def test_knn_k1_two_separated_pairs(self):
        X = np.array([[0.0, 0.0], [0.1, 0.0], [10.0, 10.0], [10.1, 10.0]])
        y = np.array([0, 0, 1, 1])
        m = train(ModelSpec(Algorithm.KNN, {"n_neighbors": 1}), X, y)
        assert predict(m, X).tolist() == [0, 0, 1, 1]

    def test_cart_solves_xor_with_depth_two(self):
        X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
        y = np.array([0, 1, 1, 0])

        # Brute-force oracle: some depth-2 axis-threshold tree classifies XOR perfectly.
        def stump_partitions():
            for feature, threshold in itertools.product((0, 1), (0.5,)):
                yield feature, threshold

        def perfect_depth2_exists():
            for f1, t1 in stump_partitions():
                left = X[:, f1] <= t1
                ok = True
                for side in (left, ~left):
                    side_ok = False
                    for f2, t2 in stump_partitions():
                        leaf_a = side & (X[:, f2] <= t2)
                        leaf_b = side & ~(X[:, f2] <= t2)
                        if all(len(set(y[leaf])) <= 1 for leaf in (leaf_a, leaf_b)):
                            side_ok = True
                    ok = ok and side_ok
                if ok:
                    return True
            return False

        assert perfect_depth2_exists()
        for algo in (Algorithm.CART, Algorithm.C45):
            m = train(ModelSpec(algo), X, y)
            assert predict(m, X).tolist() == y.tolist(), algo

    def test_rf_unanimous_region_scores_one(self):
        # Only feature 0 carries signal; the rest are constant, so every one
        # of the 200 trees must split on it and the probe gets a unanimous vote.
        n = 60
        y = np.arange(n) % 2
        X = np.zeros((n, 3))
        X[:, 0] = y * 12.0 + np.linspace(-1, 1, n)
        m = train(ModelSpec(Algorithm.RF), X, y)
        probe = np.array([[12.0, 0.0, 0.0]])
        assert score(m, probe)[0] == 1.0

    def test_gaussian_nb_midpoint_scores_half(self):
        X0 = np.array([[-2.0, 1.0], [-1.0, -1.0], [-3.0, 0.0]])
        X1 = -X0  # mirror image: symmetric classes around the origin
        X = np.vstack([X0, X1])
        y = np.array([0, 0, 0, 1, 1, 1])
        m = train(ModelSpec(Algorithm.GAUSSIAN_NB), X, y)
        assert score(m, np.zeros((1, 2)))[0] == pytest.approx(0.5, abs=1e-6)

    def test_logistic_separable_perfect_ranking(self):
        X, y = separable(n=20, gap=8.0, seed=9)
        m = train(ModelSpec(Algorithm.LOGISTIC), X, y)
        s = score(m, X)
        assert s[y == 1].min() > s[y == 0].max()

    def test_linear_scores_clamped(self):
        X, y = separable(n=30, gap=20.0)
        m = train(ModelSpec(Algorithm.LINEAR), X, y)
        s = score(m, X)
        assert s.min() >= 0.0 and s.max() <= 1.0


class TestPredict:
    def test_boundary_inclusive(self):
        X = np.array([[0.0], [1.0]])
        m = train(ModelSpec(Algorithm.LINEAR), X, [0, 1])
        scores = np.array([0.5, 0.49])

        class Fixed:
            def score1(self, Z):
                return scores[: len(Z)]

        fixed = TrainedModel(spec=m.spec, feature_names=("f0",), engine=Fixed())
        assert predict(fixed, np.zeros((2, 1))).tolist() == [1, 0]

    def test_predict_equals_thresholded_score(self):
        X, y = separable(n=80, gap=2.0, seed=3)
        m = train(ModelSpec(Algorithm.RF), X, y)
        probe = np.random.default_rng(0).normal(size=(40, X.shape[1]))
        s = score(m, probe)
        assert (predict(m, probe) == (s >= 0.5)).all()

    def test_threshold_monotonicity(self):
        X, y = separable(n=80, gap=1.0, seed=8)
        m = train(ModelSpec(Algorithm.XGB, {"rounds": 20}), X, y)
        probe = np.random.default_rng(2).normal(size=(60, X.shape[1]))

        def rates(threshold):
            p = predict(m, probe, threshold)
            return p.sum()

        positives = [rates(t) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert positives == sorted(positives, reverse=True)


class TestDeterminism:
    @pytest.mark.parametrize("algo", ALL_ALGORITHMS)
    def test_same_seed_bit_identical_scores(self, algo):
        X, y = separable(n=50, gap=1.5, seed=11)
        probe = np.random.default_rng(7).normal(size=(20, X.shape[1]))
        hp = {"rounds": 15} if algo is Algorithm.XGB else {}
        a = train(ModelSpec(algo, hp, seed=77), X, y)
        b = train(ModelSpec(algo, hp, seed=77), X, y)
        assert np.array_equal(score(a, probe), score(b, probe)), algo


class TestTreeContracts:
    def test_trees_reach_full_training_accuracy_on_consistent_data(self):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(80, 5))
        y = rng.integers(0, 2, size=80)  # arbitrary but conflict-free (continuous features)
        for algo in (Algorithm.CART, Algorithm.C45):
            m = train(ModelSpec(algo), X, y)
            assert (predict(m, X) == y).mean() == 1.0, algo

    def test_boosting_loss_improves_over_rounds(self):
        X, y = separable(n=100, gap=1.0, seed=13)
        one = train(ModelSpec(Algorithm.XGB, {"rounds": 1}), X, y)
        full = train(ModelSpec(Algorithm.XGB), X, y)
        assert log_loss(y, score(full, X)) <= log_loss(y, score(one, X))


class TestFeaturePermutation:
    @pytest.mark.parametrize("algo", [Algorithm.KNN, Algorithm.GAUSSIAN_NB])
    def test_column_permutation_invariance(self, algo):
        X, y = separable(n=40, gap=2.0, seed=17)
        perm = [2, 0, 3, 1]
        probe = np.random.default_rng(3).normal(size=(25, 4))
        a = score(train(ModelSpec(algo), X, y), probe)
        b = score(train(ModelSpec(algo), X[:, perm], y), probe[:, perm])
        assert np.allclose(a, b, atol=1e-12)


class TestPersistence:
    @pytest.mark.parametrize("algo", ALL_ALGORITHMS)
    def test_round_trip_scores_match(self, algo, tmp_path):
        X, y = separable(n=50, gap=1.2, seed=29)
        hp = {"rounds": 10} if algo is Algorithm.XGB else {}
        m = train(ModelSpec(algo, hp, seed=5), X, y, feature_names=[f"c{i}" for i in range(X.shape[1])])
        probe = np.random.default_rng(31).normal(size=(30, X.shape[1]))
        expected = score(m, probe)
        path = tmp_path / f"{algo.value}.json"
        save_model(m, path)
        loaded = load_model(path)
        assert loaded.feature_names == m.feature_names
        assert loaded.spec == m.spec
        got = score(loaded, probe)
        assert np.allclose(got, expected, atol=1e-9), algo

    def test_version_field_mandatory(self, tmp_path):
        X, y = separable(n=20)
        m = train(ModelSpec(Algorithm.LINEAR), X, y)
        path = tmp_path / "m.json"
        save_model(m, path)
        import json

        payload = json.loads(path.read_text())
        assert payload["format_version"] == 1
        del payload["format_version"]
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError):
            load_model(path)


class TestC45Criterion:
    def test_entropy_cart_variant_available(self):
        X, y = separable(n=40, gap=3.0)
        m = train(ModelSpec(Algorithm.C45, {"criterion": "entropy_cart"}), X, y)
        assert (predict(m, X) == y).mean() == 1.0

    def test_gain_ratio_is_default(self):
        spec = ModelSpec(Algorithm.C45)
        assert spec.resolved()["criterion"] == "gain_ratio"
