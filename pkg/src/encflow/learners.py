"""The ten detection algorithms behind one train/score/predict interface.

Standard algorithms are backed by scikit-learn with the frozen defaults below;
the gain-ratio tree and the boosted-trees learner are implemented in-package.
Scores are the estimated probability of the malicious class. Given (spec,
seed, data), training is deterministic; everything runs single-threaded so
parallel callers get results identical to sequential runs.

Models serialize to a self-describing JSON document (spec + fitted parameters
+ feature names). Loaded models score through small numpy reimplementations
of each algorithm's probability formula, except KNN, which refits from its
stored training set (an exact operation).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .boosting import BoostedTrees, BoostParams
from .trees import GainRatioTree, TreeNode, apply_tree

MODEL_FORMAT_VERSION = 1


class NonFiniteInput(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


class SingleClass(ValueError):
    pass


class ColumnMismatch(ValueError):
    pass


class Algorithm(Enum):
    RF = "RF"
    XGB = "XGB"
    C45 = "C45"
    ADABOOST = "ADABOOST"
    CART = "CART"
    KNN = "KNN"
    MLP = "MLP"
    GAUSSIAN_NB = "GAUSSIAN_NB"
    LOGISTIC = "LOGISTIC"
    LINEAR = "LINEAR"


ALL_ALGORITHMS = tuple(Algorithm)

DEFAULT_HYPERPARAMETERS = {
    Algorithm.RF: {"n_estimators": 200, "criterion": "gini", "max_features": "sqrt", "max_depth": None},
    Algorithm.XGB: {
        "rounds": 100,
        "max_depth": 6,
        "learning_rate": 0.3,
        "reg_lambda": 1.0,
        "min_child_weight": 1.0,
        "base_score": 0.5,
    },
    Algorithm.C45: {"criterion": "gain_ratio", "min_samples_split": 2, "max_depth": None},
    Algorithm.ADABOOST: {"n_estimators": 50},
    Algorithm.CART: {"criterion": "gini", "min_samples_split": 2, "max_depth": None},
    Algorithm.KNN: {"n_neighbors": 6},
    Algorithm.MLP: {"hidden_units": 100, "learning_rate": 1e-3, "batch_size": 200, "max_epochs": 200},
    Algorithm.GAUSSIAN_NB: {"var_smoothing": 1e-9},
    Algorithm.LOGISTIC: {"l2_strength": 1.0, "tol": 1e-6, "max_iter": 1000},
    Algorithm.LINEAR: {"ridge_jitter": 1e-8},
}


@dataclass(frozen=True)
class ModelSpec:
    algorithm: Algorithm
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        allowed = set(DEFAULT_HYPERPARAMETERS[self.algorithm])
        unknown = set(self.hyperparameters) - allowed
        if unknown:
            raise ValueError(f"unknown hyperparameters for {self.algorithm.value}: {sorted(unknown)}")

    def resolved(self) -> dict:
        merged = dict(DEFAULT_HYPERPARAMETERS[self.algorithm])
        merged.update(self.hyperparameters)
        return merged


@dataclass
class TrainedModel:
    spec: ModelSpec
    feature_names: tuple
    engine: object  # has score1(X) and export() -> (kind, params)


def _validate_training_input(spec: ModelSpec, X: np.ndarray, y: np.ndarray) -> None:
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeMismatch("X must be a non-empty 2-d matrix")
    if len(y) != X.shape[0]:
        raise ShapeMismatch(f"{len(y)} labels for {X.shape[0]} rows")
    if not np.isfinite(X).all():
        raise NonFiniteInput("X contains non-finite cells")
    classes = set(np.unique(y).tolist())
    if not classes <= {0, 1}:
        raise ValueError("labels must be 0/1")
    if len(classes) < 2 and spec.algorithm is not Algorithm.LINEAR:
        raise SingleClass(f"{spec.algorithm.value} requires both classes")


# ---------------------------------------------------------------------------
# engines

class _SklearnEngine:
    def __init__(self, kind: str, estimator, exporter):
        self.kind = kind
        self._estimator = estimator
        self._exporter = exporter

    def score1(self, X: np.ndarray) -> np.ndarray:
        proba = self._estimator.predict_proba(X)
        idx = list(self._estimator.classes_).index(1)
        return proba[:, idx]

    def export(self) -> tuple:
        return self.kind, self._exporter(self._estimator)


def _sklearn_tree_params(tree) -> dict:
    t = tree.tree_
    value = t.value[:, 0, :]
    row_sum = value.sum(axis=1, keepdims=True)
    proba = np.divide(value, row_sum, out=np.zeros_like(value), where=row_sum > 0)
    idx1 = list(tree.classes_).index(1) if len(tree.classes_) > 1 else None
    proba1 = proba[:, idx1] if idx1 is not None else np.zeros(len(proba))
    return {
        "children_left": t.children_left.tolist(),
        "children_right": t.children_right.tolist(),
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "proba1": proba1.tolist(),
    }


def _flat_tree_proba1(params: dict, X: np.ndarray) -> np.ndarray:
    left = np.asarray(params["children_left"])
    right = np.asarray(params["children_right"])
    feature = np.asarray(params["feature"])
    threshold = np.asarray(params["threshold"])
    proba1 = np.asarray(params["proba1"])
    idx = np.zeros(len(X), dtype=np.int64)
    while True:
        inner = left[idx] != -1
        if not inner.any():
            break
        rows = np.nonzero(inner)[0]
        node = idx[rows]
        goes_left = X[rows, feature[node]] <= threshold[node]
        idx[rows] = np.where(goes_left, left[node], right[node])
    return proba1[idx]


class _FlatTreeScorer:
    def __init__(self, kind: str, params: dict):
        self.kind = kind
        self.params = params

    def score1(self, X: np.ndarray) -> np.ndarray:
        return _flat_tree_proba1(self.params, X)

    def export(self) -> tuple:
        return self.kind, self.params


class _ForestScorer:
    def __init__(self, kind: str, params: dict):
        self.kind = kind
        self.params = params

    def score1(self, X: np.ndarray) -> np.ndarray:
        stack = np.vstack([_flat_tree_proba1(t, X) for t in self.params["trees"]])
        return stack.mean(axis=0)

    def export(self) -> tuple:
        return self.kind, self.params


class _AdaBoostScorer:
    def __init__(self, kind: str, params: dict):
        self.kind = kind
        self.params = params

    def score1(self, X: np.ndarray) -> np.ndarray:
        # Binary SAMME decision: each stump contributes +/-w, normalized, doubled.
        weights = np.asarray(self.params["weights"])
        decision = np.zeros(len(X))
        for tree, w in zip(self.params["stumps"], weights):
            votes_1 = _flat_tree_proba1(tree, X) > 0.5
            decision += w * np.where(votes_1, 1.0, -1.0)
        decision = 2.0 * decision / weights.sum()
        return 1.0 / (1.0 + np.exp(-decision))

    def export(self) -> tuple:
        return self.kind, self.params


class _GaussianNbScorer:
    def __init__(self, kind: str, params: dict):
        self.kind = kind
        self.params = params

    def score1(self, X: np.ndarray) -> np.ndarray:
        theta = np.asarray(self.params["theta"])
        var = np.asarray(self.params["var"])
        prior = np.asarray(self.params["prior"])
        jll = []
        for c in range(len(prior)):
            log_like = -0.5 * (np.log(2.0 * np.pi * var[c]) + (X - theta[c]) ** 2 / var[c]).sum(axis=1)
            jll.append(np.log(prior[c]) + log_like)
        jll = np.vstack(jll).T
        jll -= jll.max(axis=1, keepdims=True)
        proba = np.exp(jll)
        proba /= proba.sum(axis=1, keepdims=True)
        return proba[:, self.params["class1_index"]]

    def export(self) -> tuple:
        return self.kind, self.params


class _LogisticScorer:
    def __init__(self, kind: str, params: dict):
        self.kind = kind
        self.params = params

    def score1(self, X: np.ndarray) -> np.ndarray:
        z = X @ np.asarray(self.params["coef"]) + self.params["intercept"]
        return 1.0 / (1.0 + np.exp(-z))

    def export(self) -> tuple:
        return self.kind, self.params


class _MlpScorer:
    def __init__(self, kind: str, params: dict):
        self.kind = kind
        self.params = params

    def score1(self, X: np.ndarray) -> np.ndarray:
        hidden = X @ np.asarray(self.params["w0"]) + np.asarray(self.params["b0"])
        np.maximum(hidden, 0.0, out=hidden)
        out = hidden @ np.asarray(self.params["w1"]) + np.asarray(self.params["b1"])
        return (1.0 / (1.0 + np.exp(-out))).ravel()

    def export(self) -> tuple:
        return self.kind, self.params


class _LinearEngine:
    kind = "linear"

    def __init__(self, beta: np.ndarray):
        self.beta = np.asarray(beta, dtype=np.float64)

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, ridge_jitter: float) -> "_LinearEngine":
        A = np.hstack([X, np.ones((len(X), 1))])
        gram = A.T @ A + ridge_jitter * np.eye(A.shape[1])
        beta = np.linalg.solve(gram, A.T @ y.astype(np.float64))
        return cls(beta)

    def score1(self, X: np.ndarray) -> np.ndarray:
        pred = X @ self.beta[:-1] + self.beta[-1]
        return np.clip(pred, 0.0, 1.0)

    def export(self) -> tuple:
        return self.kind, {"beta": self.beta.tolist()}


class _GainRatioEngine:
    kind = "gain_ratio_tree"

    def __init__(self, root: TreeNode):
        self.root = root

    def score1(self, X: np.ndarray) -> np.ndarray:
        return apply_tree(self.root, X)

    def export(self) -> tuple:
        return self.kind, {"root": self.root.to_dict()}


class _BoostedEngine:
    kind = "boosted_trees"

    def __init__(self, booster: BoostedTrees):
        self.booster = booster

    def score1(self, X: np.ndarray) -> np.ndarray:
        return self.booster.predict_proba1(X)

    def export(self) -> tuple:
        return self.kind, {
            "base_margin": self.booster.base_margin,
            "learning_rate": self.booster.params.learning_rate,
            "trees": [t.to_dict() for t in self.booster.trees],
        }


class _LoadedBoostedScorer:
    kind = "boosted_trees"

    def __init__(self, params: dict):
        self.params = params
        self._trees = [TreeNode.from_dict(t) for t in params["trees"]]

    def score1(self, X: np.ndarray) -> np.ndarray:
        margin = np.full(len(X), float(self.params["base_margin"]))
        for tree in self._trees:
            margin += self.params["learning_rate"] * apply_tree(tree, X)
        return 1.0 / (1.0 + np.exp(-margin))

    def export(self) -> tuple:
        return self.kind, self.params


class _KnnEngine:
    kind = "knn"

    def __init__(self, estimator, X: np.ndarray, y: np.ndarray, n_neighbors: int):
        self._estimator = estimator
        self._X = X
        self._y = y
        self.n_neighbors = n_neighbors

    @classmethod
    def fit(cls, X: np.ndarray, y: np.ndarray, n_neighbors: int) -> "_KnnEngine":
        from sklearn.neighbors import KNeighborsClassifier

        est = KNeighborsClassifier(n_neighbors=n_neighbors)
        est.fit(X, y)
        return cls(est, X, y, n_neighbors)

    def score1(self, X: np.ndarray) -> np.ndarray:
        proba = self._estimator.predict_proba(X)
        idx = list(self._estimator.classes_).index(1)
        return proba[:, idx]

    def export(self) -> tuple:
        return self.kind, {
            "n_neighbors": self.n_neighbors,
            "train_X": self._X.tolist(),
            "train_y": self._y.tolist(),
        }


# ---------------------------------------------------------------------------
# training

def _fit_engine(spec: ModelSpec, X: np.ndarray, y: np.ndarray):
    hp = spec.resolved()
    algo = spec.algorithm
    if algo is Algorithm.RF:
        from sklearn.ensemble import RandomForestClassifier

        est = RandomForestClassifier(
            n_estimators=hp["n_estimators"],
            criterion=hp["criterion"],
            max_features=hp["max_features"],
            max_depth=hp["max_depth"],
            random_state=spec.seed,
            n_jobs=1,
        )
        est.fit(X, y)
        return _SklearnEngine(
            "forest", est, lambda e: {"trees": [_sklearn_tree_params(_Wrapped(t, e.classes_)) for t in e.estimators_]}
        )
    if algo is Algorithm.XGB:
        booster = BoostedTrees(
            BoostParams(
                rounds=hp["rounds"],
                max_depth=hp["max_depth"],
                learning_rate=hp["learning_rate"],
                reg_lambda=hp["reg_lambda"],
                min_child_weight=hp["min_child_weight"],
                base_score=hp["base_score"],
            )
        ).fit(X, y)
        return _BoostedEngine(booster)
    if algo is Algorithm.C45:
        if hp["criterion"] == "gain_ratio":
            tree = GainRatioTree(min_samples_split=hp["min_samples_split"], max_depth=hp["max_depth"]).fit(X, y)
            return _GainRatioEngine(tree.root)
        from sklearn.tree import DecisionTreeClassifier

        est = DecisionTreeClassifier(
            criterion="entropy",
            min_samples_split=hp["min_samples_split"],
            max_depth=hp["max_depth"],
            random_state=spec.seed,
        )
        est.fit(X, y)
        return _SklearnEngine("tree", est, _sklearn_tree_params)
    if algo is Algorithm.CART:
        from sklearn.tree import DecisionTreeClassifier

        est = DecisionTreeClassifier(
            criterion=hp["criterion"],
            min_samples_split=hp["min_samples_split"],
            max_depth=hp["max_depth"],
            random_state=spec.seed,
        )
        est.fit(X, y)
        return _SklearnEngine("tree", est, _sklearn_tree_params)
    if algo is Algorithm.ADABOOST:
        from sklearn.ensemble import AdaBoostClassifier

        est = AdaBoostClassifier(n_estimators=hp["n_estimators"], random_state=spec.seed)
        est.fit(X, y)

        def export(e):
            return {
                "weights": e.estimator_weights_[: len(e.estimators_)].tolist(),
                "stumps": [_sklearn_tree_params(_Wrapped(t, e.classes_)) for t in e.estimators_],
            }

        return _SklearnEngine("adaboost", est, export)
    if algo is Algorithm.KNN:
        return _KnnEngine.fit(X, y, hp["n_neighbors"])
    if algo is Algorithm.MLP:
        from sklearn.neural_network import MLPClassifier

        est = MLPClassifier(
            hidden_layer_sizes=(hp["hidden_units"],),
            activation="relu",
            solver="adam",
            learning_rate_init=hp["learning_rate"],
            batch_size=min(hp["batch_size"], len(y)),
            max_iter=hp["max_epochs"],
            random_state=spec.seed,
        )
        with warnings.catch_warnings():
            from sklearn.exceptions import ConvergenceWarning

            warnings.simplefilter("ignore", ConvergenceWarning)
            est.fit(X, y)
        return _SklearnEngine(
            "mlp",
            est,
            lambda e: {
                "w0": e.coefs_[0].tolist(),
                "b0": e.intercepts_[0].tolist(),
                "w1": e.coefs_[1].tolist(),
                "b1": e.intercepts_[1].tolist(),
            },
        )
    if algo is Algorithm.GAUSSIAN_NB:
        from sklearn.naive_bayes import GaussianNB

        est = GaussianNB(var_smoothing=hp["var_smoothing"])
        est.fit(X, y)
        return _SklearnEngine(
            "gaussian_nb",
            est,
            lambda e: {
                "theta": e.theta_.tolist(),
                "var": e.var_.tolist(),
                "prior": e.class_prior_.tolist(),
                "class1_index": list(e.classes_).index(1),
            },
        )
    if algo is Algorithm.LOGISTIC:
        from sklearn.linear_model import LogisticRegression

        est = LogisticRegression(C=1.0 / hp["l2_strength"], tol=hp["tol"], max_iter=hp["max_iter"])
        with warnings.catch_warnings():
            from sklearn.exceptions import ConvergenceWarning

            warnings.simplefilter("ignore", ConvergenceWarning)
            est.fit(X, y)
        return _SklearnEngine(
            "logistic",
            est,
            lambda e: {"coef": e.coef_[0].tolist(), "intercept": float(e.intercept_[0])},
        )
    if algo is Algorithm.LINEAR:
        return _LinearEngine.fit(X, y, hp["ridge_jitter"])
    raise ValueError(f"unhandled algorithm {algo}")


class _Wrapped:
    """Present a bare sub-estimator tree with the ensemble's class order."""

    def __init__(self, tree, classes):
        self.tree_ = tree.tree_
        self.classes_ = classes


def train(
    spec: ModelSpec,
    X: np.ndarray,
    y: Sequence[int],
    feature_names: Optional[Sequence[str]] = None,
) -> TrainedModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    _validate_training_input(spec, X, y)
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{i}" for i in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise ShapeMismatch(f"{len(names)} feature names for {X.shape[1]} columns")
    engine = _fit_engine(spec, X, y)
    return TrainedModel(spec=spec, feature_names=names, engine=engine)


def score(m: TrainedModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(m.feature_names):
        raise ColumnMismatch(f"expected {len(m.feature_names)} columns, got {X.shape[1] if X.ndim == 2 else 'n/a'}")
    if not np.isfinite(X).all():
        raise NonFiniteInput("X contains non-finite cells")
    s = np.asarray(m.engine.score1(X), dtype=np.float64)
    return np.clip(s, 0.0, 1.0)


def predict(m: TrainedModel, X: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (score(m, X) >= threshold).astype(np.int64)


# ---------------------------------------------------------------------------
# persistence

_LOADERS = {
    "forest": lambda p: _ForestScorer("forest", p),
    "tree": lambda p: _FlatTreeScorer("tree", p),
    "adaboost": lambda p: _AdaBoostScorer("adaboost", p),
    "gaussian_nb": lambda p: _GaussianNbScorer("gaussian_nb", p),
    "logistic": lambda p: _LogisticScorer("logistic", p),
    "mlp": lambda p: _MlpScorer("mlp", p),
    "linear": lambda p: _LinearEngine(np.asarray(p["beta"])),
    "gain_ratio_tree": lambda p: _GainRatioEngine(TreeNode.from_dict(p["root"])),
    "boosted_trees": _LoadedBoostedScorer,
    "knn": lambda p: _KnnEngine.fit(
        np.asarray(p["train_X"], dtype=np.float64), np.asarray(p["train_y"], dtype=np.int64), p["n_neighbors"]
    ),
}


def save_model(m: TrainedModel, path) -> None:
    kind, params = m.engine.export()
    payload = {
        "format_version": MODEL_FORMAT_VERSION,
        "spec": {
            "algorithm": m.spec.algorithm.value,
            "hyperparameters": m.spec.hyperparameters,
            "seed": m.spec.seed,
        },
        "feature_names": list(m.feature_names),
        "engine_kind": kind,
        "parameters": params,
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def load_model(path) -> TrainedModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError("unsupported model format version")
    spec = ModelSpec(
        algorithm=Algorithm(payload["spec"]["algorithm"]),
        hyperparameters=payload["spec"]["hyperparameters"],
        seed=payload["spec"]["seed"],
    )
    engine = _LOADERS[payload["engine_kind"]](payload["parameters"])
    return TrainedModel(spec=spec, feature_names=tuple(payload["feature_names"]), engine=engine)
