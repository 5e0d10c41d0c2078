"""Compile decision trees and forests into two-hidden-layer networks.

Each split node becomes a first-layer neuron that evaluates its split
rule: the neuron reads exactly one input feature with weight c01 and bias
-c01 * threshold, so its tanh output approaches -1 for a left routing and
+1 for a right routing. Each leaf becomes a second-layer neuron connected
to the split neurons on its root path, weight -c12 when the leaf lies in
the left subtree of that split and +c12 otherwise, with bias
-c12 * (path_length - 1); only the leaf whose every split decision is
satisfied gets a positive pre-activation, so its sigmoid output is the
one near 1. The output layer carries the leaf vote vectors scaled by c23.
A forest maps tree by tree, concatenating hidden layers and sharing the
C output neurons with c23 = 1/T so tree outputs are averaged.

hard_mode replaces tanh/sigmoid with exact step functions, reproducing
the forest routing bit for bit; soft mode is what gets fused into the
fully convolutional detector.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .convnet import Activation, DenseLayer, stable_sigmoid
from .forest import SplitNode, predict_forest_batch


@dataclass
class MapConstants:
    c01: float = 1e4
    c12: float = 1e4
    c23: float = 1.0
    hard_mode: bool = False

    def __post_init__(self):
        if self.c01 <= 0 or self.c12 <= 0 or self.c23 <= 0:
            raise ValueError("mapping constants must be positive")


class CompiledRFNet:
    """A forest compiled to sparse input/path layers plus a dense vote layer.

    Layer 1 (splits): coordinate list with one entry per split neuron.
    Layer 2 (leaves): coordinate list with one entry per (leaf, path split).
    Layer 3 (votes): dense (n_leaves, n_classes) matrix, zero bias.
    """

    def __init__(self, input_dim, n_classes, l1_cols, l1_bias,
                 l2_rows, l2_cols, l2_vals, l2_bias, w3, constants):
        self.input_dim = int(input_dim)
        self.n_classes = int(n_classes)
        self.l1_cols = np.asarray(l1_cols, dtype=np.intp)
        self.l1_bias = np.asarray(l1_bias, dtype=np.float64)
        self.l2_rows = np.asarray(l2_rows, dtype=np.intp)
        self.l2_cols = np.asarray(l2_cols, dtype=np.intp)
        self.l2_vals = np.asarray(l2_vals, dtype=np.float64)
        self.l2_bias = np.asarray(l2_bias, dtype=np.float64)
        self.w3 = np.asarray(w3, dtype=np.float64)
        self.constants = constants
        self.n_splits = self.l1_cols.shape[0]
        self.n_leaves = self.l2_bias.shape[0]
        self._l2 = sp.csr_matrix(
            (self.l2_vals, (self.l2_rows, self.l2_cols)),
            shape=(self.n_leaves, self.n_splits))

    def forward(self, X, hard=None):
        """Class distributions for an (n, input_dim) batch (or one vector)."""
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 1
        if squeeze:
            X = X[None, :]
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} features, got {X.shape[1]}")
        if hard is None:
            hard = self.constants.hard_mode
        # Bound the (n, n_splits) intermediate to a few million entries.
        chunk = max(1, int(4e6 / max(1, self.n_splits)))
        outs = [self._forward_block(X[i:i + chunk], hard)
                for i in range(0, X.shape[0], chunk)]
        out = np.concatenate(outs) if len(outs) > 1 else outs[0]
        return out[0] if squeeze else out

    def _forward_block(self, X, hard):
        pre1 = self.constants.c01 * X[:, self.l1_cols] + self.l1_bias
        if hard:
            a1 = np.where(pre1 >= 0, 1.0, -1.0)
        else:
            a1 = np.tanh(pre1)
        pre2 = (self._l2 @ a1.T).T + self.l2_bias
        if hard:
            a2 = np.where(pre2 > 0, 1.0, 0.0)
        else:
            a2 = stable_sigmoid(pre2)
        return a2 @ self.w3

    def dense_layers(self):
        """Densified float32 layer stack for fusion into a convnet."""
        w1 = np.zeros((self.input_dim, self.n_splits), dtype=np.float32)
        w1[self.l1_cols, np.arange(self.n_splits)] = self.constants.c01
        w2 = np.zeros((self.n_splits, self.n_leaves), dtype=np.float32)
        w2[self.l2_cols, self.l2_rows] = self.l2_vals
        return [
            DenseLayer(w1, self.l1_bias.astype(np.float32)),
            Activation("tanh"),
            DenseLayer(w2, self.l2_bias.astype(np.float32)),
            Activation("sigmoid"),
            DenseLayer(self.w3.astype(np.float32), np.zeros(self.n_classes, dtype=np.float32)),
        ]


def _compile_trees(trees, input_dim, n_classes, constants):
    l1_cols, l1_bias = [], []
    l2_rows, l2_cols, l2_vals, l2_bias = [], [], [], []
    w3_rows = []
    for tree in trees:
        split_neuron = {}
        for i, node in enumerate(tree.nodes):
            if isinstance(node, SplitNode):
                split_neuron[i] = len(l1_cols)
                l1_cols.append(node.feature)
                l1_bias.append(-constants.c01 * node.threshold)
        for leaf_idx, path in tree.leaf_paths():
            leaf_neuron = len(l2_bias)
            for split_idx, went_left in path:
                l2_rows.append(leaf_neuron)
                l2_cols.append(split_neuron[split_idx])
                l2_vals.append(-constants.c12 if went_left else constants.c12)
            l2_bias.append(-constants.c12 * (len(path) - 1))
            w3_rows.append(constants.c23 * tree.nodes[leaf_idx].votes)
    w3 = np.vstack(w3_rows) if w3_rows else np.zeros((0, n_classes))
    return CompiledRFNet(input_dim, n_classes, l1_cols, l1_bias,
                         l2_rows, l2_cols, l2_vals, l2_bias, w3, constants)


def map_tree(tree, constants, input_dim, n_classes):
    """Compile one decision tree; neurons follow preorder node order."""
    return _compile_trees([tree], input_dim, n_classes, constants)


def map_forest(forest, constants=None):
    """Compile a forest; hidden layers concatenate per tree, c23 = 1/T."""
    if constants is None:
        constants = MapConstants()
    constants = MapConstants(c01=constants.c01, c12=constants.c12,
                             c23=1.0 / len(forest.trees),
                             hard_mode=constants.hard_mode)
    return _compile_trees(forest.trees, forest.input_dim, forest.n_classes, constants)


@dataclass
class EquivalenceReport:
    n_tested: int
    n_agree: int
    max_prob_gap: float
    hard_mode: bool
    disagreements: list

    @property
    def agreement(self):
        return self.n_agree / self.n_tested if self.n_tested else 1.0


def threshold_clear_samples(forest, n, rng, margin, low=0.0, high=1.0):
    """Draw uniform samples keeping every coordinate margin-clear of the
    split thresholds on its feature (soft activations are ambiguous there)."""
    from .forest import thresholds_by_feature

    table = thresholds_by_feature(forest)
    X = rng.uniform(low, high, size=(n, forest.input_dim))
    for f, thrs in table.items():
        for _ in range(100):
            bad = np.any(np.abs(X[:, f][:, None] - thrs[None, :]) < margin, axis=1)
            if not bad.any():
                break
            X[bad, f] = rng.uniform(low, high, size=int(bad.sum()))
    return X


def verify_equivalence(forest, net, samples, margin_eps=1e-3):
    """Compare forest predictions against the compiled network.

    Samples whose coordinates sit within margin_eps of a split threshold
    are dropped (caller contract; enforced defensively). In soft mode a
    sample agrees when the network argmax attains the forest's maximum
    probability to within 1e-9, which treats exactly tied forest classes
    as interchangeable. In hard mode full distributions are compared.
    """
    from .forest import thresholds_by_feature

    X = np.asarray(samples, dtype=np.float64)
    table = thresholds_by_feature(forest)
    keep = np.ones(X.shape[0], dtype=bool)
    for f, thrs in table.items():
        keep &= ~np.any(np.abs(X[:, f][:, None] - thrs[None, :]) < margin_eps, axis=1)
    X = X[keep]
    p_forest = predict_forest_batch(forest, X)
    p_net = net.forward(X)
    gaps = np.abs(p_net - p_forest).max(axis=1) if X.shape[0] else np.zeros(0)
    net_arg = np.argmax(p_net, axis=1) if X.shape[0] else np.zeros(0, dtype=int)
    fmax = p_forest.max(axis=1) if X.shape[0] else np.zeros(0)
    if net.constants.hard_mode:
        agree = gaps <= 1e-12
    else:
        agree = np.abs(p_forest[np.arange(X.shape[0]), net_arg] - fmax) <= 1e-9
    disagreements = [int(i) for i in np.nonzero(~agree)[0][:32]]
    return EquivalenceReport(
        n_tested=int(X.shape[0]),
        n_agree=int(agree.sum()),
        max_prob_gap=float(gaps.max()) if gaps.size else 0.0,
        hard_mode=net.constants.hard_mode,
        disagreements=disagreements)
