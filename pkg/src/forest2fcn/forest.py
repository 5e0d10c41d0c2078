"""Random forests with axis-aligned splits and class-vote leaves.

Trees are stored as flat node arenas in preorder; node 0 is the root.
Routing follows the strict convention x[feature] < threshold -> left,
x[feature] >= threshold -> right. Leaves hold normalized class-vote
distributions, so averaging tree outputs directly yields probabilities.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class SplitNode:
    feature: int
    threshold: float
    left: int = -1
    right: int = -1


@dataclass
class LeafNode:
    votes: np.ndarray  # length-C, nonnegative, sums to 1

    def __post_init__(self):
        self.votes = np.asarray(self.votes, dtype=np.float64)


@dataclass
class DecisionTree:
    nodes: list = field(default_factory=list)
    root: int = 0

    def n_splits(self):
        return sum(isinstance(n, SplitNode) for n in self.nodes)

    def n_leaves(self):
        return sum(isinstance(n, LeafNode) for n in self.nodes)

    def leaf_paths(self):
        """Yield (leaf_index, [(split_index, went_left), ...]) per leaf."""
        out = []

        def walk(idx, path):
            node = self.nodes[idx]
            if isinstance(node, LeafNode):
                out.append((idx, list(path)))
                return
            path.append((idx, True))
            walk(node.left, path)
            path[-1] = (idx, False)
            walk(node.right, path)
            path.pop()

        walk(self.root, [])
        return out


@dataclass
class Forest:
    trees: list
    n_classes: int
    input_dim: int


@dataclass
class TrainConfig:
    n_trees: int = 10
    max_depth: int | None = None
    min_samples_split: int = 2
    features_per_split: int | None = None  # None -> ceil(sqrt(input_dim))
    bootstrap: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.min_samples_split < 1:
            raise ValueError("counts must be >= 1")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


def _gini_best_threshold(x, y, n_classes):
    """Best midpoint threshold for one feature, or None.

    Candidates are midpoints between consecutive sorted unique values;
    returns (weighted_gini, threshold) minimizing impurity, ties resolved
    toward the lowest threshold.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    n = xs.shape[0]
    boundaries = np.nonzero(xs[1:] > xs[:-1])[0] + 1  # split before these positions
    if boundaries.size == 0:
        return None
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), ys] = 1.0
    cum = np.cumsum(onehot, axis=0)
    left = cum[boundaries - 1]          # class counts strictly below each boundary
    right = cum[-1] - left
    nl = boundaries.astype(np.float64)
    nr = n - nl
    gini_l = 1.0 - np.sum(left ** 2, axis=1) / nl ** 2
    gini_r = 1.0 - np.sum(right ** 2, axis=1) / nr ** 2
    weighted = (nl * gini_l + nr * gini_r) / n
    best = int(np.argmin(weighted))
    thr = 0.5 * (xs[boundaries[best] - 1] + xs[boundaries[best]])
    return float(weighted[best]), float(thr)


def _node_gini(counts, n):
    return 1.0 - np.sum((counts / n) ** 2)


def _grow(nodes, X, y, depth, cfg, n_classes, rng, n_features):
    idx = len(nodes)
    nodes.append(None)  # reserve preorder slot
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    n = y.shape[0]
    pure = np.count_nonzero(counts) <= 1
    stop = (pure
            or n < cfg.min_samples_split
            or (cfg.max_depth is not None and depth >= cfg.max_depth))
    split = None
    if not stop:
        k = cfg.features_per_split or int(np.ceil(np.sqrt(n_features)))
        k = min(k, n_features)
        subset = np.sort(rng.choice(n_features, size=k, replace=False))
        split = _best_split_over(X, y, subset, counts, n, n_classes)
        if split is None and k < n_features:
            # The sampled features cannot separate this node; fall back to
            # the full feature set so separable data always reaches purity.
            split = _best_split_over(X, y, np.arange(n_features), counts, n, n_classes)
    if split is None:
        nodes[idx] = LeafNode(counts / counts.sum())
        return idx
    feature, thr = split
    mask = X[:, feature] < thr
    node = SplitNode(feature=feature, threshold=thr)
    nodes[idx] = node
    node.left = _grow(nodes, X[mask], y[mask], depth + 1, cfg, n_classes, rng, n_features)
    node.right = _grow(nodes, X[~mask], y[~mask], depth + 1, cfg, n_classes, rng, n_features)
    return idx


def _best_split_over(X, y, features, counts, n, n_classes):
    parent = _node_gini(counts, n)
    best = None
    for f in features:
        res = _gini_best_threshold(X[:, f], y, n_classes)
        if res is None:
            continue
        weighted, thr = res
        if weighted < parent - 1e-12 and (best is None or weighted < best[0]):
            best = (weighted, int(f), thr)
    if best is None:
        return None
    return best[1], best[2]


def train_forest(X, y, config=None, n_classes=None):
    """Grow a forest of CART trees on (n_samples, input_dim) data.

    Each tree sees a bootstrap resample (when config.bootstrap) and
    considers a random feature subset at every node. Training is fully
    deterministic given config.rng_seed.
    """
    if config is None:
        config = TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a nonempty (n, d) matrix")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must match the number of samples")
    if y.min() < 0:
        raise ValueError("labels must be nonnegative class indices")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    elif y.max() >= n_classes:
        raise ValueError("label out of range for declared n_classes")
    n, d = X.shape
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng([config.rng_seed, t])
        if config.bootstrap:
            pick = rng.integers(0, n, size=n)
            Xt, yt = X[pick], y[pick]
        else:
            Xt, yt = X, y
        nodes = []
        _grow(nodes, Xt, yt, 0, config, n_classes, rng, d)
        trees.append(DecisionTree(nodes=nodes, root=0))
    return Forest(trees=trees, n_classes=n_classes, input_dim=d)


def predict_tree(tree, x):
    """Route one sample to its leaf and return that leaf's vote vector."""
    x = np.asarray(x, dtype=np.float64)
    node = tree.nodes[tree.root]
    while isinstance(node, SplitNode):
        node = tree.nodes[node.left] if x[node.feature] < node.threshold else tree.nodes[node.right]
    return node.votes


def predict_forest(forest, x):
    """Average the tree vote vectors; the result sums to 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (forest.input_dim,):
        raise ValueError(f"expected a length-{forest.input_dim} vector, got {x.shape}")
    acc = np.zeros(forest.n_classes)
    for tree in forest.trees:
        acc += predict_tree(tree, x)
    return acc / len(forest.trees)


def _tree_arrays(tree, n_classes):
    n = len(tree.nodes)
    feat = np.full(n, -1, dtype=np.intp)
    thr = np.zeros(n)
    left = np.zeros(n, dtype=np.intp)
    right = np.zeros(n, dtype=np.intp)
    votes = np.zeros((n, n_classes))
    for i, node in enumerate(tree.nodes):
        if isinstance(node, SplitNode):
            feat[i] = node.feature
            thr[i] = node.threshold
            left[i] = node.left
            right[i] = node.right
        else:
            votes[i] = node.votes
    return feat, thr, left, right, votes


def predict_forest_batch(forest, X):
    """Vectorized predict_forest over an (n, input_dim) batch."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != forest.input_dim:
        raise ValueError(f"expected (n, {forest.input_dim}) inputs, got {X.shape}")
    n = X.shape[0]
    acc = np.zeros((n, forest.n_classes))
    rows = np.arange(n)
    for tree in forest.trees:
        feat, thr, left, right, votes = _tree_arrays(tree, forest.n_classes)
        pos = np.zeros(n, dtype=np.intp)
        active = feat[pos] >= 0
        while active.any():
            cur = pos[active]
            go_left = X[rows[active], feat[cur]] < thr[cur]
            pos[active] = np.where(go_left, left[cur], right[cur])
            active = feat[pos] >= 0
        acc += votes[pos]
    return acc / len(forest.trees)


def thresholds_by_feature(forest):
    """Collect every split threshold, grouped by feature index."""
    table = {}
    for tree in forest.trees:
        for node in tree.nodes:
            if isinstance(node, SplitNode):
                table.setdefault(node.feature, []).append(node.threshold)
    return {f: np.sort(np.asarray(v)) for f, v in table.items()}
