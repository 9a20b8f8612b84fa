"""Classical learners over sparse feature vectors.

L2-regularized logistic regression (full-batch adadelta) and a random forest
grown on Gini impurity, both deterministic under their seeds. Feature vectors
are the sparse {column: value} dicts produced by the featurize module.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .featurize import (
    FeatureSpace,
    FeatureVector,
    feature_key_from_json,
    feature_key_to_json,
)
from .optim import AdadeltaState, adadelta_step

LOGREG_MAX_ITERS = 2000
LOGREG_GRAD_TOL = 1e-5
BASELINE_FORMAT_VERSION = 1


def vectors_to_csr(X: list[FeatureVector], n_features: int) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for r, vec in enumerate(X):
        for c, v in vec.items():
            rows.append(r)
            cols.append(c)
            vals.append(v)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(X), n_features))


def vectors_to_dense(X: list[FeatureVector], n_features: int) -> np.ndarray:
    out = np.zeros((len(X), n_features))
    for r, vec in enumerate(X):
        for c, v in vec.items():
            out[r, c] = v
    return out


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    l2_lambda: float


def logreg_objective_and_grads(
    weights: np.ndarray,
    bias: float,
    X: sparse.csr_matrix,
    y: np.ndarray,
    l2_lambda: float,
) -> tuple[float, np.ndarray, float]:
    """Mean binary cross-entropy plus (lambda/2)||w||^2, and its gradients.

    The bias is not regularized.
    """
    n = X.shape[0]
    logits = X @ weights + bias
    p = 1.0 / (1.0 + np.exp(-logits))
    eps = 1e-12
    nll = -np.mean(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps))
    objective = nll + 0.5 * l2_lambda * float(weights @ weights)
    residual = p - y
    grad_w = X.T @ residual / n + l2_lambda * weights
    grad_b = float(np.mean(residual))
    return float(objective), np.asarray(grad_w).ravel(), grad_b


def train_logreg(
    X: list[FeatureVector],
    y: list[int],
    l2_lambda: float = 1.0,
    seed: int = 0,
    n_features: int | None = None,
    max_iters: int = LOGREG_MAX_ITERS,
    tol: float = LOGREG_GRAD_TOL,
    objective_history: list[float] | None = None,
) -> LinearModel:
    """Full-batch adadelta on the regularized log-loss from a zero start.

    Runs until the gradient infinity-norm drops below tol or max_iters is hit
    (a warning flags the capped case) and returns the best-objective iterate
    seen, which guards against adadelta's oscillation on extremely
    ill-conditioned problems (huge l2_lambda, or a single-class y with
    l2_lambda 0). Deterministic regardless of seed since the start is zero
    and batches are full; the seed is kept for interface symmetry with the
    other trainers.
    """
    del seed
    if not X or len(X) != len(y):
        raise ValueError("X and y must be non-empty and the same length")
    if n_features is None:
        n_features = 1 + max((max(vec) for vec in X if vec), default=-1)
    X_csr = vectors_to_csr(X, n_features)
    y_arr = np.asarray(y, dtype=float)

    weights = np.zeros(n_features)
    bias = np.zeros(1)
    params = {"weights": weights, "bias": bias}
    state = AdadeltaState.for_params(params)
    best = (np.inf, weights.copy(), 0.0)
    converged = False
    for _ in range(max_iters + 1):
        objective, grad_w, grad_b = logreg_objective_and_grads(
            weights, float(bias[0]), X_csr, y_arr, l2_lambda
        )
        if objective_history is not None:
            objective_history.append(objective)
        if objective < best[0]:
            best = (objective, weights.copy(), float(bias[0]))
        grad_inf = max(float(np.max(np.abs(grad_w))) if len(grad_w) else 0.0, abs(grad_b))
        if grad_inf < tol:
            converged = True
            break
        adadelta_step(params, {"weights": grad_w, "bias": np.array([grad_b])}, state, 0.95, 1e-6)
    if not converged:
        warnings.warn(
            f"logistic regression stopped at the {max_iters}-iteration cap "
            "before reaching the gradient tolerance"
        )
    return LinearModel(weights=best[1], bias=best[2], l2_lambda=l2_lambda)


def predict_logreg(model: LinearModel, x: FeatureVector) -> float:
    score = model.bias
    for idx, value in x.items():
        if idx < len(model.weights):
            score += model.weights[idx] * value
    return float(1.0 / (1.0 + np.exp(-score)))


@dataclass
class TreeNode:
    """A leaf carries the positive fraction; an internal node carries a split."""

    fraction: float | None = None
    feature: int | None = None
    threshold: float | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.fraction is not None


@dataclass
class Forest:
    trees: list[TreeNode]
    n_features_per_split: int
    seed: int
    max_depth: int | None = None
    bootstrap: bool = True


def _gini(pos: int, n: int) -> float:
    if n == 0:
        return 0.0
    p = pos / n
    return 2.0 * p * (1.0 - p)


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray):
    """Lowest weighted child Gini over candidate (feature, midpoint) splits."""
    n = len(y)
    best = None  # (impurity, feature, threshold)
    for f in features:
        values = X[:, f]
        uniq = np.unique(values)
        if len(uniq) < 2:
            continue
        for t in (uniq[:-1] + uniq[1:]) / 2.0:
            mask = values <= t
            n_left = int(mask.sum())
            if n_left == 0 or n_left == n:
                continue
            pos_left = int(y[mask].sum())
            pos_right = int(y.sum()) - pos_left
            impurity = (
                n_left * _gini(pos_left, n_left)
                + (n - n_left) * _gini(pos_right, n - n_left)
            ) / n
            if best is None or impurity < best[0]:
                best = (impurity, int(f), float(t))
    return best


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    depth: int,
    max_depth: int | None,
    n_features_per_split: int,
    rng: np.random.Generator,
) -> TreeNode:
    n = len(y)
    pos = int(y.sum())
    if pos == 0 or pos == n or n < 2 or (max_depth is not None and depth >= max_depth):
        return TreeNode(fraction=pos / n)
    order = rng.permutation(X.shape[1])
    k = min(n_features_per_split, X.shape[1])
    best = _best_split(X, y, np.sort(order[:k]))
    while best is None and k < X.shape[1]:
        # the drawn subset admits no valid split; widen the search
        best = _best_split(X, y, order[k : k + 1])
        k += 1
    if best is None:
        return TreeNode(fraction=pos / n)
    _, feature, threshold = best
    mask = X[:, feature] <= threshold
    return TreeNode(
        feature=feature,
        threshold=threshold,
        left=_grow_tree(X[mask], y[mask], depth + 1, max_depth, n_features_per_split, rng),
        right=_grow_tree(X[~mask], y[~mask], depth + 1, max_depth, n_features_per_split, rng),
    )


def train_rf(
    X: list[FeatureVector],
    y: list[int],
    n_trees: int = 100,
    max_depth: int | None = None,
    n_features_per_split: int | None = None,
    seed: int = 0,
    n_features: int | None = None,
    bootstrap: bool = True,
) -> Forest:
    """Grow a seeded forest; each tree sees a bootstrap resample of the data.

    Splits minimize weighted Gini impurity over a random feature subset
    (default ceil(sqrt(D)) features). Growth stops at max_depth, a pure node,
    or fewer than 2 samples. bootstrap=False is a test mode that trains every
    tree on the full dataset.
    """
    if not X or len(X) != len(y):
        raise ValueError("X and y must be non-empty and the same length")
    if n_features is None:
        n_features = 1 + max((max(vec) for vec in X if vec), default=-1)
    n_features = max(n_features, 1)
    if n_features_per_split is None:
        n_features_per_split = int(np.ceil(np.sqrt(n_features)))
    dense = vectors_to_dense(X, n_features)
    y_arr = np.asarray(y, dtype=int)

    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        if bootstrap:
            sample = rng.integers(0, len(y_arr), size=len(y_arr))
        else:
            sample = np.arange(len(y_arr))
        trees.append(
            _grow_tree(dense[sample], y_arr[sample], 0, max_depth, n_features_per_split, rng)
        )
    return Forest(
        trees=trees,
        n_features_per_split=n_features_per_split,
        seed=seed,
        max_depth=max_depth,
        bootstrap=bootstrap,
    )


def predict_tree(node: TreeNode, x: FeatureVector) -> float:
    while not node.is_leaf:
        value = x.get(node.feature, 0.0)
        node = node.left if value <= node.threshold else node.right
    return node.fraction


def predict_rf(forest: Forest, x: FeatureVector) -> float:
    """Mean of per-tree leaf positive-fractions; always in [0, 1]."""
    if not forest.trees:
        raise ValueError("cannot predict with an empty forest")
    return float(np.mean([predict_tree(tree, x) for tree in forest.trees]))


def _tree_to_json(node: TreeNode) -> dict:
    if node.is_leaf:
        return {"fraction": node.fraction}
    return {
        "feature": node.feature,
        "threshold": node.threshold,
        "left": _tree_to_json(node.left),
        "right": _tree_to_json(node.right),
    }


def _tree_from_json(data: dict) -> TreeNode:
    if "fraction" in data:
        return TreeNode(fraction=data["fraction"])
    return TreeNode(
        feature=data["feature"],
        threshold=data["threshold"],
        left=_tree_from_json(data["left"]),
        right=_tree_from_json(data["right"]),
    )


def _space_to_json(space: FeatureSpace) -> dict:
    return {
        "features": [feature_key_to_json(k) for k in space.index_to_feature],
        "idf": space.idf,
        "variant": space.variant,
    }


def _space_from_json(data: dict) -> FeatureSpace:
    keys = [feature_key_from_json(item) for item in data["features"]]
    return FeatureSpace(
        feature_to_index={k: i for i, k in enumerate(keys)},
        idf=data["idf"],
        variant=data["variant"],
        index_to_feature=keys,
    )


def save_baseline_checkpoint(
    kind: str,
    model: LinearModel | Forest,
    space: FeatureSpace,
    pipeline: dict,
    path: str | Path,
):
    """Self-describing JSON checkpoint for a baseline model and its feature space."""
    if kind == "logreg":
        assert isinstance(model, LinearModel)
        payload = {
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "l2_lambda": model.l2_lambda,
        }
    elif kind == "random_forest":
        assert isinstance(model, Forest)
        payload = {
            "trees": [_tree_to_json(t) for t in model.trees],
            "n_features_per_split": model.n_features_per_split,
            "seed": model.seed,
            "max_depth": model.max_depth,
            "bootstrap": model.bootstrap,
        }
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    doc = {
        "format_version": BASELINE_FORMAT_VERSION,
        "kind": kind,
        "pipeline": pipeline,
        "feature_space": _space_to_json(space),
        "model": payload,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_baseline_checkpoint(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != BASELINE_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format version")
    kind = doc["kind"]
    space = _space_from_json(doc["feature_space"])
    payload = doc["model"]
    if kind == "logreg":
        model = LinearModel(
            weights=np.array(payload["weights"], dtype=float),
            bias=float(payload["bias"]),
            l2_lambda=float(payload["l2_lambda"]),
        )
    elif kind == "random_forest":
        model = Forest(
            trees=[_tree_from_json(t) for t in payload["trees"]],
            n_features_per_split=payload["n_features_per_split"],
            seed=payload["seed"],
            max_depth=payload["max_depth"],
            bootstrap=payload["bootstrap"],
        )
    else:
        raise ValueError(f"{path}: unknown baseline kind {kind!r}")
    return kind, model, space, doc["pipeline"]
