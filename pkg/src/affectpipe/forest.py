"""Random forest (bagged decision trees) with out-of-bag model selection.

Built for stacked decision fusion: inputs are concatenated base-model
score vectors, so features are continuous and low-dimensional. Trees
are grown greedily (Gini decrease for classification, variance
reduction for regression) on bootstrap samples, with a random feature
subset considered at every split. Each tree draws its randomness from
a generator derived as (root_seed, tree_index), so tree t is identical
no matter how many trees the forest has — growing the forest reuses
the existing trees, which is what makes out-of-bag selection of the
tree count cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataFormatError

DEFAULT_TREE_GRID = (10, 20, 50, 100, 200)


@dataclass(frozen=True)
class ForestSpec:
    """Forest shape and randomness.

    features_per_split=None resolves to "sqrt" for classification and
    "third" for regression when training starts.
    """

    n_trees: int
    max_depth: int | None = None
    min_leaf: int = 1
    features_per_split: str | None = None  # "sqrt" | "third" | "all"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be positive")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.features_per_split not in (None, "sqrt", "third", "all"):
            raise ValueError(
                f"unknown features_per_split {self.features_per_split!r}"
            )

    def resolve_mtry(self, d: int, task: str) -> int:
        mode = self.features_per_split
        if mode is None:
            mode = "sqrt" if task == "classification" else "third"
        if mode == "sqrt":
            return max(1, int(np.sqrt(d)))
        if mode == "third":
            return max(1, d // 3)
        return d


@dataclass
class _Node:
    """Binary tree node; `value` is set on leaves only."""

    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.value is not None


@dataclass(frozen=True)
class ForestModel:
    """Trained forest. oob_score is accuracy for classification and
    negative mean squared error for regression, so larger is always
    better. in_bag records each tree's bootstrap membership (None on
    models loaded from disk, where only predictions are reproduced).
    """

    trees: list = field(repr=False)
    oob_score: float
    task: str
    n_outputs: int
    spec: ForestSpec | None = None
    in_bag: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def oob_fractions(self) -> np.ndarray | None:
        """Per-tree fraction of training rows left out of the bootstrap."""
        if self.in_bag is None:
            return None
        return (~self.in_bag).mean(axis=1)


def _best_for_feature(col, onehot_src, y_float, min_leaf, task):
    """Best (score, threshold) for one feature, or None if unsplittable.

    Scores are comparable across features of the same node: larger is
    better, and the first position of the maximum (ascending threshold
    order) wins within the feature.
    """
    order = np.argsort(col, kind="stable")
    xs = col[order]
    boundary = np.nonzero(xs[1:] != xs[:-1])[0]
    if boundary.size == 0:
        return None
    n = xs.shape[0]
    keep = (boundary + 1 >= min_leaf) & (n - boundary - 1 >= min_leaf)
    boundary = boundary[keep]
    if boundary.size == 0:
        return None
    n_left = boundary + 1.0
    n_right = n - n_left
    if task == "classification":
        cum = np.cumsum(onehot_src[order], axis=0)
        left = cum[boundary]
        right = cum[-1] - left
        # maximizing sum(counts^2)/size over both children is equivalent
        # to maximizing the Gini decrease for a fixed parent
        score = (left * left).sum(axis=1) / n_left + (right * right).sum(
            axis=1
        ) / n_right
    else:
        ys = y_float[order]
        cy = np.cumsum(ys)
        cy2 = np.cumsum(ys * ys)
        sum_l, sq_l = cy[boundary], cy2[boundary]
        sum_r, sq_r = cy[-1] - sum_l, cy2[-1] - sq_l
        sse = (sq_l - sum_l * sum_l / n_left) + (sq_r - sum_r * sum_r / n_right)
        score = -sse  # minimizing child SSE maximizes variance reduction
    j = int(np.argmax(score))
    b = boundary[j]
    return float(score[j]), float(0.5 * (xs[b] + xs[b + 1]))


def _leaf(y_int, y_float, idx, task, n_outputs) -> _Node:
    if task == "classification":
        counts = np.bincount(y_int[idx], minlength=n_outputs)
        return _Node(value=counts / idx.size)
    return _Node(value=np.array([float(y_float[idx].mean())]))


def _grow_tree(x, y_int, onehot, y_float, boot_idx, rng, spec, task, n_outputs):
    """Grow one tree iteratively in preorder (stack-based, no recursion)."""
    d = x.shape[1]
    mtry = spec.resolve_mtry(d, task)
    root = _Node()
    stack = [(root, boot_idx, 0)]
    while stack:
        node, idx, depth = stack.pop()
        pure = (
            np.all(y_int[idx] == y_int[idx[0]])
            if task == "classification"
            else np.all(y_float[idx] == y_float[idx[0]])
        )
        if (
            pure
            or idx.size < 2 * spec.min_leaf
            or (spec.max_depth is not None and depth >= spec.max_depth)
        ):
            done = _leaf(y_int, y_float, idx, task, n_outputs)
            node.value = done.value
            continue
        # random feature subset: walk a permutation until mtry features
        # produced a usable boundary (constant features do not count)
        candidates = []
        usable = 0
        for f in rng.permutation(d):
            found = _best_for_feature(
                x[idx, f],
                None if onehot is None else onehot[idx],
                None if y_float is None else y_float[idx],
                spec.min_leaf,
                task,
            )
            if found is None:
                continue
            candidates.append((found[0], int(f), found[1]))
            usable += 1
            if usable >= mtry:
                break
        if not candidates:
            done = _leaf(y_int, y_float, idx, task, n_outputs)
            node.value = done.value
            continue
        # zero-gain splits are accepted while the node is impure: a split
        # never increases weighted impurity, and always shrinks both
        # sides, so growth terminates and distinct rows separate fully
        _, feat, thr = max(candidates, key=lambda c: (c[0], -c[1], -c[2]))
        node.feature, node.threshold = feat, thr
        node.left, node.right = _Node(), _Node()
        mask = x[idx, feat] <= thr
        stack.append((node.right, idx[~mask], depth + 1))
        stack.append((node.left, idx[mask], depth + 1))
    return root


def _tree_apply(root: _Node, x: np.ndarray, n_outputs: int) -> np.ndarray:
    """Leaf values for every row of x, shape (q, n_outputs)."""
    out = np.empty((x.shape[0], n_outputs))
    stack = [(root, np.arange(x.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node.is_leaf:
            out[idx] = node.value
            continue
        mask = x[idx, node.feature] <= node.threshold
        stack.append((node.left, idx[mask]))
        stack.append((node.right, idx[~mask]))
    return out


def _oob_score(x, y_int, y_float, trees, in_bag, task, n_outputs) -> float:
    """Aggregate each row's predictions over trees that left it out.

    Rows in every bootstrap are skipped; NaN when no row was ever
    left out.
    """
    n = x.shape[0]
    total = np.zeros((n, n_outputs))
    hits = np.zeros(n, dtype=np.int64)
    for tree, bag in zip(trees, in_bag):
        oob = ~bag
        if not oob.any():
            continue
        total[oob] += _tree_apply(tree, x[oob], n_outputs)
        hits[oob] += 1
    seen = hits > 0
    if not seen.any():
        return float("nan")
    if task == "classification":
        pred = total[seen].argmax(axis=1)
        return float((pred == y_int[seen]).mean())
    pred = total[seen, 0] / hits[seen]
    return float(-np.mean((pred - y_float[seen]) ** 2))


def train_forest(
    x: np.ndarray,
    y: np.ndarray,
    spec: ForestSpec,
    task: str = "classification",
    n_classes: int | None = None,
) -> ForestModel:
    """Bagged trees with per-tree derived seeds and an OOB score.

    Classification leaves hold class-frequency vectors; regression
    leaves hold the mean target. Retraining with the same spec and data
    reproduces the model exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("training data must be a 2-d matrix with n >= 2 rows")
    if task not in ("classification", "regression"):
        raise ValueError(f"unknown task {task!r}")
    if task == "classification":
        y_int = np.asarray(y, dtype=np.int64).ravel()
        if y_int.shape[0] != x.shape[0]:
            raise ValueError("y must have one entry per row")
        if y_int.min() < 0:
            raise ValueError("class labels must be nonnegative")
        n_outputs = int(y_int.max()) + 1 if n_classes is None else int(n_classes)
        if y_int.max() >= n_outputs:
            raise ValueError("labels exceed n_classes")
        onehot = np.zeros((x.shape[0], n_outputs))
        onehot[np.arange(x.shape[0]), y_int] = 1.0
        y_float = None
    else:
        y_float = np.asarray(y, dtype=np.float64).ravel()
        if y_float.shape[0] != x.shape[0]:
            raise ValueError("y must have one entry per row")
        if not np.all(np.isfinite(y_float)):
            raise ValueError("regression targets must be finite")
        y_int = None
        onehot = None
        n_outputs = 1
    n = x.shape[0]
    trees = []
    in_bag = np.zeros((spec.n_trees, n), dtype=bool)
    for t in range(spec.n_trees):
        rng = np.random.default_rng([spec.seed, t])
        boot = rng.integers(0, n, size=n)
        in_bag[t] = np.bincount(boot, minlength=n) > 0
        trees.append(
            _grow_tree(x, y_int, onehot, y_float, boot, rng, spec, task, n_outputs)
        )
    oob = _oob_score(x, y_int, y_float, trees, in_bag, task, n_outputs)
    return ForestModel(
        trees=trees,
        oob_score=oob,
        task=task,
        n_outputs=n_outputs,
        spec=spec,
        in_bag=in_bag,
    )


def predict_forest(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Averaged leaf frequencies (q, n_classes) or mean tree output (q,)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("prediction input must be a 2-d matrix")
    total = np.zeros((x.shape[0], model.n_outputs))
    for tree in model.trees:
        total += _tree_apply(tree, x, model.n_outputs)
    total /= model.n_trees
    return total if model.task == "classification" else total[:, 0]


def predict_forest_labels(model: ForestModel, x: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the smallest index."""
    if model.task != "classification":
        raise ValueError("labels are only defined for classification forests")
    return predict_forest(model, x).argmax(axis=1)


def select_n_trees(
    x: np.ndarray,
    y: np.ndarray,
    grid,
    base_spec: ForestSpec,
    task: str = "classification",
    n_classes: int | None = None,
) -> tuple[int, list[float]]:
    """OOB score per grid point, reusing trees as the count grows.

    One forest of max(grid) trees is trained; each grid point's score
    aggregates only its first k trees (identical to training k trees
    from scratch, by the per-tree seed derivation). Returns the count
    with the best OOB score, ties going to the fewest trees.
    """
    grid = [int(k) for k in grid]
    if not grid or min(grid) < 1:
        raise ValueError("grid must be a nonempty list of positive counts")
    full = train_forest(
        x, y, replace(base_spec, n_trees=max(grid)), task=task, n_classes=n_classes
    )
    x = np.asarray(x, dtype=np.float64)
    if task == "classification":
        y_int = np.asarray(y, dtype=np.int64).ravel()
        y_float = None
    else:
        y_int = None
        y_float = np.asarray(y, dtype=np.float64).ravel()
    scores: dict[int, float] = {}
    for k in sorted(set(grid)):
        scores[k] = _oob_score(
            x, y_int, y_float, full.trees[:k], full.in_bag[:k], task, full.n_outputs
        )
    best_k = None
    best_score = None
    for k in sorted(scores):
        s = scores[k]
        if best_k is None or (not np.isnan(s) and (np.isnan(best_score) or s > best_score)):
            best_k, best_score = k, s
    return best_k, [scores[k] for k in grid]


# ---------------------------------------------------------------------------
# Persistence: preorder text dump, one node per line. Thresholds and leaf
# values carry 17 significant digits, so a reloaded forest predicts
# identically. Bootstrap membership is not stored.
# ---------------------------------------------------------------------------

_MAGIC = "forest-model v1"


def _dump_tree(root: _Node, out: list[str]) -> None:
    stack = [root]
    while stack:
        node = stack.pop()
        if node.is_leaf:
            out.append("l " + ",".join("%.17g" % v for v in node.value))
        else:
            out.append("s %d %.17g" % (node.feature, node.threshold))
            stack.append(node.right)
            stack.append(node.left)


def save_forest_model(model: ForestModel, path: str | Path) -> None:
    lines = [
        _MAGIC,
        f"task={model.task}",
        f"n_trees={model.n_trees}",
        f"n_outputs={model.n_outputs}",
        "oob_score=%.17g" % model.oob_score,
    ]
    for t, tree in enumerate(model.trees):
        lines.append(f"[tree {t}]")
        _dump_tree(tree, lines)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _parse_tree(lines: list[str], i: int) -> tuple[_Node, int]:
    def node_from(line: str) -> _Node:
        if line.startswith("l "):
            return _Node(value=np.array([float(v) for v in line[2:].split(",")]))
        if line.startswith("s "):
            f, thr = line[2:].split()
            return _Node(feature=int(f), threshold=float(thr))
        raise DataFormatError(f"unrecognized tree node line: {line!r}")

    if i >= len(lines):
        raise DataFormatError("truncated tree dump")
    root = node_from(lines[i])
    i += 1
    if root.is_leaf:
        return root, i
    pending = [root]
    while pending:
        if i >= len(lines):
            raise DataFormatError("truncated tree dump")
        node = node_from(lines[i])
        i += 1
        parent = pending[-1]
        if parent.left is None:
            parent.left = node
        else:
            parent.right = node
            pending.pop()
        if not node.is_leaf:
            pending.append(node)
    return root, i


def load_forest_model(path: str | Path) -> ForestModel:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != _MAGIC:
        raise DataFormatError(f"{path}: not a {_MAGIC} file")
    try:
        header = dict(line.partition("=")[::2] for line in lines[1:5])
        task = header["task"]
        n_trees = int(header["n_trees"])
        n_outputs = int(header["n_outputs"])
        oob = float(header["oob_score"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed header") from exc
    trees = []
    i = 5
    for t in range(n_trees):
        if i >= len(lines) or lines[i] != f"[tree {t}]":
            raise DataFormatError(f"{path}: missing [tree {t}] section")
        root, i = _parse_tree(lines, i + 1)
        trees.append(root)
    return ForestModel(trees=trees, oob_score=oob, task=task, n_outputs=n_outputs)
