"""Second-order gradient-boosted decision trees, written from scratch.

The trainer grows depth-limited trees by exact greedy split search on the
usual Newton statistics: for a candidate split with gradient/hessian sums
(G_l, H_l) and (G_r, H_r),

    gain = 1/2 * [ G_l^2/(H_l+lambda) + G_r^2/(H_r+lambda)
                   - (G_l+G_r)^2/(H_l+H_r+lambda) ] - gamma

and each leaf scores -G/(H+lambda) * eta. Splits require strictly positive
gain and child hessian sums of at least ``min_child_weight``. Ties on gain
break toward the lowest feature index, then the lowest threshold, so equal
inputs always grow the identical tree.

Objectives: ``binary_logistic`` (labels in {0,1}, base score is a prior
probability), ``squared_error`` (loss 1/2 (f-y)^2), and ``softmax`` over
``n_classes`` with one tree per class per round. ``Objective.grad_hess``
returns the mathematical first/second derivatives of the loss; the softmax
trainer additionally scales its hessian statistics by the customary factor
2 (diagonal approximation), clamped at 1e-16.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from corepath.validation import check_array, check_sample_weight

_HESS_CLAMP = 1e-16

FORMAT_NAME = "corepath-gbt"
FORMAT_VERSION = 1


def split_gain(
    g_left: float,
    h_left: float,
    g_right: float,
    h_right: float,
    reg_lambda: float = 1.0,
    gamma: float = 0.0,
) -> float:
    """Gain of a single split from aggregated child statistics."""
    parent_g = g_left + g_right
    parent_h = h_left + h_right
    return 0.5 * (
        g_left * g_left / (h_left + reg_lambda)
        + g_right * g_right / (h_right + reg_lambda)
        - parent_g * parent_g / (parent_h + reg_lambda)
    ) - gamma


class Objective:
    """Base class: loss plus its first and second margin derivatives."""

    name = ""
    train_hess_scale = 1.0

    def validate_targets(self, y: np.ndarray) -> np.ndarray:
        return y

    def base_margin(self, base_score):
        raise NotImplementedError

    def loss(self, margins: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def grad_hess(self, margins: np.ndarray, y: np.ndarray):
        raise NotImplementedError

    def transform(self, margins: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class BinaryLogistic(Objective):
    name = "binary_logistic"

    def validate_targets(self, y):
        y = np.asarray(y, dtype=np.float64).ravel()
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("binary_logistic targets must be 0 or 1")
        return y

    def base_margin(self, base_score):
        p = 0.5 if base_score is None else float(base_score)
        if not 0 < p < 1:
            raise ValueError("base_score must be a probability in (0, 1)")
        return np.log(p / (1.0 - p))

    def loss(self, margins, y):
        # log(1+exp(-|m|)) form avoids overflow on saturated margins
        m = margins
        return np.logaddexp(0.0, -np.abs(m)) + np.where(m >= 0, 1 - y, y) * np.abs(m)

    def grad_hess(self, margins, y):
        p = _sigmoid(margins)
        return p - y, p * (1.0 - p)

    def transform(self, margins):
        return _sigmoid(margins)


class SquaredError(Objective):
    name = "squared_error"

    def validate_targets(self, y):
        return np.asarray(y, dtype=np.float64).ravel()

    def base_margin(self, base_score):
        return 0.0 if base_score is None else float(base_score)

    def loss(self, margins, y):
        d = margins - y
        return 0.5 * d * d

    def grad_hess(self, margins, y):
        return margins - y, np.ones_like(margins)

    def transform(self, margins):
        return margins


class Softmax(Objective):
    name = "softmax"
    train_hess_scale = 2.0

    def __init__(self, n_classes: int):
        if n_classes < 2:
            raise ValueError("softmax requires n_classes >= 2")
        self.n_classes = int(n_classes)

    def validate_targets(self, y):
        y = np.asarray(y)
        yi = y.astype(np.int64).ravel()
        if not np.array_equal(yi, np.asarray(y, dtype=np.float64).ravel()):
            raise ValueError("softmax targets must be integer class ids")
        if yi.min() < 0 or yi.max() >= self.n_classes:
            raise ValueError(f"softmax targets must lie in [0, {self.n_classes})")
        if len(np.unique(yi)) < 2:
            raise ValueError("softmax training data contains a single class")
        return yi

    def base_margin(self, base_score):
        if base_score not in (None, 0, 0.0):
            raise ValueError("softmax does not take a base_score")
        return np.zeros(self.n_classes, dtype=np.float64)

    def loss(self, margins, y):
        logp = margins - _logsumexp(margins)
        return -logp[np.arange(len(y)), y]

    def grad_hess(self, margins, y):
        p = np.exp(margins - _logsumexp(margins))
        g = p.copy()
        g[np.arange(len(y)), y] -= 1.0
        return g, p * (1.0 - p)

    def transform(self, margins):
        return np.exp(margins - _logsumexp(margins))


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _logsumexp(m):
    mx = m.max(axis=1, keepdims=True)
    return mx + np.log(np.exp(m - mx).sum(axis=1, keepdims=True))


def make_objective(name: str, n_classes: int | None = None) -> Objective:
    if name == "binary_logistic":
        return BinaryLogistic()
    if name == "squared_error":
        return SquaredError()
    if name == "softmax":
        return Softmax(n_classes or 0)
    raise ValueError(f"unknown objective: {name}")


@dataclass
class _Tree:
    feature: np.ndarray  # int32, -1 marks a leaf
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64, leaf score

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(len(X), dtype=np.float64)
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if self.feature[node] < 0:
                out[idx] = self.value[node]
                continue
            go_left = X[idx, self.feature[node]] < self.threshold[node]
            stack.append((self.left[node], idx[go_left]))
            stack.append((self.right[node], idx[~go_left]))
        return out

    def to_obj(self):
        nodes = []
        for i in range(len(self.feature)):
            if self.feature[i] < 0:
                nodes.append([-1, 0.0, -1, -1, float(self.value[i])])
            else:
                nodes.append(
                    [int(self.feature[i]), float(self.threshold[i]),
                     int(self.left[i]), int(self.right[i]), 0.0]
                )
        return {"nodes": nodes}

    @classmethod
    def from_obj(cls, obj):
        nodes = obj["nodes"]
        n = len(nodes)
        feature = np.empty(n, dtype=np.int32)
        threshold = np.zeros(n, dtype=np.float64)
        left = np.full(n, -1, dtype=np.int32)
        right = np.full(n, -1, dtype=np.int32)
        value = np.zeros(n, dtype=np.float64)
        for i, (f, t, l, r, v) in enumerate(nodes):
            feature[i] = f
            threshold[i] = t
            left[i] = l
            right[i] = r
            value[i] = v
        return cls(feature, threshold, left, right, value)


class _TreeBuilder:
    def __init__(self, X, max_depth, reg_lambda, gamma, min_child_weight, eta):
        self.X = X
        self.max_depth = max_depth
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.eta = eta

    def build(self, g: np.ndarray, h: np.ndarray) -> _Tree:
        self.g = g
        self.h = h
        self.nodes: list[list] = []
        self._grow(np.arange(len(g)), 0)
        return _Tree(
            feature=np.array([nd[0] for nd in self.nodes], dtype=np.int32),
            threshold=np.array([nd[1] for nd in self.nodes], dtype=np.float64),
            left=np.array([nd[2] for nd in self.nodes], dtype=np.int32),
            right=np.array([nd[3] for nd in self.nodes], dtype=np.int32),
            value=np.array([nd[4] for nd in self.nodes], dtype=np.float64),
        )

    def _grow(self, idx: np.ndarray, depth: int) -> int:
        g, h, X = self.g, self.h, self.X
        G = float(g[idx].sum())
        H = float(h[idx].sum())
        node_id = len(self.nodes)
        self.nodes.append([-1, 0.0, -1, -1, 0.0])
        best_gain = 0.0
        best = None
        if depth < self.max_depth and len(idx) >= 2:
            lam = self.reg_lambda
            parent_score = G * G / (H + lam)
            for f in range(X.shape[1]):
                xv = X[idx, f]
                order = np.argsort(xv, kind="stable")
                xs = xv[order]
                if xs[0] == xs[-1]:
                    continue
                gs = np.cumsum(g[idx][order])[:-1]
                hs = np.cumsum(h[idx][order])[:-1]
                ok = (
                    (xs[1:] != xs[:-1])
                    & (hs >= self.min_child_weight)
                    & (H - hs >= self.min_child_weight)
                )
                if not ok.any():
                    continue
                gains = (
                    0.5
                    * (
                        gs * gs / (hs + lam)
                        + (G - gs) ** 2 / (H - hs + lam)
                        - parent_score
                    )
                    - self.gamma
                )
                gains[~ok] = -np.inf
                i = int(np.argmax(gains))
                if gains[i] > best_gain:
                    best_gain = float(gains[i])
                    best = (f, 0.5 * (xs[i] + xs[i + 1]))
        if best is None:
            self.nodes[node_id][4] = -G / (H + self.reg_lambda) * self.eta
            return node_id
        f, thr = best
        go_left = X[idx, f] < thr
        left = self._grow(idx[go_left], depth + 1)
        right = self._grow(idx[~go_left], depth + 1)
        self.nodes[node_id] = [f, thr, left, right, 0.0]
        return node_id


class GradientBoostedTrees:
    """Boosted-tree estimator with a fit/predict surface.

    ``predict`` returns probabilities for classifiers (a vector of positive
    class probabilities for binary_logistic, an (n, k) matrix for softmax)
    and raw values for squared_error.
    """

    def __init__(
        self,
        objective: str = "binary_logistic",
        n_classes: int | None = None,
        n_rounds: int = 100,
        max_depth: int = 5,
        eta: float = 0.3,
        reg_lambda: float = 1.0,
        gamma: float = 0.0,
        min_child_weight: float = 1.0,
        base_score: float | None = None,
    ):
        self.objective = objective
        self.n_classes = n_classes
        self.n_rounds = n_rounds
        self.max_depth = max_depth
        self.eta = eta
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.base_score = base_score

    _PARAM_NAMES = (
        "objective",
        "n_classes",
        "n_rounds",
        "max_depth",
        "eta",
        "reg_lambda",
        "gamma",
        "min_child_weight",
        "base_score",
    )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "GradientBoostedTrees":
        for key, value in params.items():
            if key not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {key}")
            setattr(self, key, value)
        return self

    def _validate_params(self):
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            raise ValueError("regularizers must be non-negative")

    def fit(self, X, y, sample_weight=None) -> "GradientBoostedTrees":
        self._validate_params()
        X = check_array(X, name="X")
        obj = make_objective(self.objective, self.n_classes)
        y = obj.validate_targets(y)
        if len(y) != len(X):
            raise ValueError("X and y lengths differ")
        w = check_sample_weight(sample_weight, len(X))
        self.objective_ = obj
        self.n_features_ = X.shape[1]
        base = obj.base_margin(self.base_score)
        self.base_margin_ = base
        k = obj.n_classes if isinstance(obj, Softmax) else 1
        if k == 1:
            margins = np.full(len(X), float(base))
        else:
            margins = np.tile(np.asarray(base, dtype=np.float64), (len(X), 1))
        builder = _TreeBuilder(
            X, self.max_depth, self.reg_lambda, self.gamma,
            self.min_child_weight, self.eta,
        )
        trees: list[list[_Tree]] = []
        losses: list[float] = []
        for _ in range(self.n_rounds):
            g, h = obj.grad_hess(margins, y)
            h = np.maximum(h * obj.train_hess_scale, _HESS_CLAMP)
            if k == 1:
                tree = builder.build(g * w, h * w)
                margins += tree.predict(X)
                trees.append([tree])
            else:
                round_trees = []
                for c in range(k):
                    tree = builder.build(g[:, c] * w, h[:, c] * w)
                    margins[:, c] += tree.predict(X)
                    round_trees.append(tree)
                trees.append(round_trees)
            losses.append(float(np.average(obj.loss(margins, y), weights=w)))
        self.trees_ = trees
        self.train_losses_ = losses
        return self

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise ValueError("model is not fitted")

    def predict_margin(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_array(X, name="X")
        if X.shape[1] != self.n_features_:
            raise ValueError(
                f"expected {self.n_features_} features, got {X.shape[1]}"
            )
        obj = self.objective_
        if isinstance(obj, Softmax):
            margins = np.tile(
                np.asarray(self.base_margin_, dtype=np.float64), (len(X), 1)
            )
            for round_trees in self.trees_:
                for c, tree in enumerate(round_trees):
                    margins[:, c] += tree.predict(X)
            return margins
        margins = np.full(len(X), float(self.base_margin_))
        for round_trees in self.trees_:
            margins += round_trees[0].predict(X)
        return margins

    def predict(self, X) -> np.ndarray:
        margins = self.predict_margin(X)
        return self.objective_.transform(margins)

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        if isinstance(self.objective_, Softmax):
            return self.predict(X)
        if isinstance(self.objective_, BinaryLogistic):
            p = self.predict(X)
            return np.column_stack([1.0 - p, p])
        raise ValueError("predict_proba is undefined for squared_error")

    # -- serialization -----------------------------------------------------

    def to_obj(self) -> dict:
        self._check_fitted()
        base = self.base_margin_
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "params": self.get_params(),
            "n_features": self.n_features_,
            "base_margin": base.tolist() if isinstance(base, np.ndarray) else base,
            "trees": [[t.to_obj() for t in round_trees] for round_trees in self.trees_],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_obj(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_obj(cls, obj: dict) -> "GradientBoostedTrees":
        if obj.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} payload")
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {obj.get('version')}")
        model = cls(**obj["params"])
        model.objective_ = make_objective(model.objective, model.n_classes)
        model.n_features_ = int(obj["n_features"])
        base = obj["base_margin"]
        model.base_margin_ = (
            np.asarray(base, dtype=np.float64) if isinstance(base, list) else float(base)
        )
        model.trees_ = [
            [_Tree.from_obj(t) for t in round_trees] for round_trees in obj["trees"]
        ]
        return model

    @classmethod
    def from_json(cls, payload: str) -> "GradientBoostedTrees":
        return cls.from_obj(json.loads(payload))

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "GradientBoostedTrees":
        return cls.from_json(Path(path).read_text())
