"""Random forest classifier with Gini impurity-decrease feature importance."""

import math

import numpy as np


def gini(counts):
    total = counts.sum(axis=-1)
    safe = np.where(total > 0, total, 1)
    p = counts / safe[..., None]
    return 1.0 - np.sum(p * p, axis=-1)


def unbiased_weighted_gini(counts):
    """``m * G * m / (m - 1)``: node size times the unbiased Gini estimate.

    The plug-in Gini of ``m`` samples is low by a factor ``(m - 1) / m``, which
    makes even a split on an independent feature look like a decrease.
    """
    m = counts.sum(axis=-1)
    return m * m / np.maximum(m - 1, 1) * gini(counts)


def _best_split(x, y_onehot, parent_counts):
    """Best threshold on one feature: (weighted impurity decrease, threshold)."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    left = np.cumsum(y_onehot[order], axis=0)[:-1]          # counts left of cut i+1
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return 0.0, None
    n = x.shape[0]
    n_left = np.arange(1, n, dtype=np.float64)
    right = parent_counts[None, :] - left
    weighted = n_left * gini(left) + (n - n_left) * gini(right)
    weighted = np.where(valid, weighted, np.inf)
    cut = int(np.argmin(weighted))
    decrease = n * gini(parent_counts) - weighted[cut]
    return float(decrease), 0.5 * (xs[cut] + xs[cut + 1])


class DecisionTree:
    """CART classifier on integer labels ``0..n_classes-1``.

    ``max_features`` candidate features are drawn without replacement at every
    node; impurity decrease is accumulated per feature in sample-count units.
    """

    def __init__(self, n_classes, max_depth=8, max_features=None, min_samples_split=2):
        self.n_classes = n_classes
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split

    def fit(self, x, y, rng):
        n, d = x.shape
        self.importance = np.zeros(d)
        n_feat = d if self.max_features is None else min(self.max_features, d)
        onehot = np.eye(self.n_classes)[y]
        # node arrays: feature, threshold, left, right, class distribution
        self.feature, self.threshold, self.left, self.right, self.value = [], [], [], [], []

        def new_node(counts):
            self.feature.append(-1)
            self.threshold.append(0.0)
            self.left.append(-1)
            self.right.append(-1)
            self.value.append(counts)
            return len(self.feature) - 1

        root = new_node(onehot.sum(axis=0))
        stack = [(root, np.arange(n), 0)]
        while stack:
            node, idx, depth = stack.pop()
            counts = self.value[node]
            if (depth >= self.max_depth or idx.size < self.min_samples_split
                    or np.count_nonzero(counts) <= 1):
                continue
            candidates = np.sort(rng.choice(d, size=n_feat, replace=False))
            best = (0.0, None, None)
            for f in candidates:
                decrease, thr = _best_split(x[idx, f], onehot[idx], counts)
                if thr is not None and decrease > best[0] + 1e-12:
                    best = (decrease, f, thr)
            decrease, f, thr = best
            if f is None:
                continue
            go_left = x[idx, f] <= thr
            li, ri = idx[go_left], idx[~go_left]
            self.importance[f] += decrease
            self.feature[node] = int(f)
            self.threshold[node] = float(thr)
            self.left[node] = new_node(onehot[li].sum(axis=0))
            self.right[node] = new_node(onehot[ri].sum(axis=0))
            stack.append((self.right[node], ri, depth + 1))
            stack.append((self.left[node], li, depth + 1))
        self.feature = np.array(self.feature)
        self.threshold = np.array(self.threshold)
        self.left = np.array(self.left)
        self.right = np.array(self.right)
        self.value = np.array(self.value)
        return self

    def node_counts(self, x, y):
        """Class counts of ``(x, y)`` routed to every node of the fitted tree."""
        onehot = np.eye(self.n_classes)[y]
        counts = np.zeros((self.feature.shape[0], self.n_classes))
        node = np.zeros(x.shape[0], dtype=np.int64)
        counts[0] = onehot.sum(axis=0)
        rows = np.arange(x.shape[0])
        while rows.size:
            feat = self.feature[node[rows]]
            rows = rows[feat >= 0]
            if not rows.size:
                break
            here = node[rows]
            go_left = x[rows, self.feature[here]] <= self.threshold[here]
            node[rows] = np.where(go_left, self.left[here], self.right[here])
            np.add.at(counts, node[rows], onehot[rows])
        return counts

    def heldout_importance(self, x, y):
        """Impurity decrease per feature measured on held-out samples.

        Uses the unbiased node impurity, so splits on features independent of
        the label contribute zero in expectation.
        """
        counts = self.node_counts(x, y)
        importance = np.zeros(x.shape[1])
        for node in np.nonzero(self.feature >= 0)[0]:
            decrease = (unbiased_weighted_gini(counts[node])
                        - unbiased_weighted_gini(counts[self.left[node]])
                        - unbiased_weighted_gini(counts[self.right[node]]))
            importance[self.feature[node]] += decrease
        return importance / max(x.shape[0], 1)

    def predict_proba(self, x):
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                break
            rows = np.nonzero(internal)[0]
            go_left = x[rows, feat[rows]] <= self.threshold[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])
        counts = self.value[node]
        return counts / counts.sum(axis=1, keepdims=True)


class RandomForest:
    """Bagged Gini trees with per-node ``ceil(sqrt(d))`` feature subsampling.

    ``importance`` is the out-of-bag impurity decrease per feature (summed over
    trees, clipped at zero); ``train_importance`` is the classic in-bag one.
    """

    def __init__(self, n_classes, n_trees=10, max_depth=8, max_features="sqrt"):
        self.n_classes = n_classes
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features

    def fit(self, x, y, rng):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        n, d = x.shape
        max_features = math.ceil(math.sqrt(d)) if self.max_features == "sqrt" else self.max_features
        self.trees = []
        self.train_importance = np.zeros(d)
        oob_importance = np.zeros(d)
        for _ in range(self.n_trees):
            sample = rng.integers(0, n, size=n)
            out_of_bag = np.ones(n, dtype=bool)
            out_of_bag[sample] = False
            tree = DecisionTree(self.n_classes, self.max_depth, max_features)
            tree.fit(x[sample], y[sample], rng)
            self.trees.append(tree)
            self.train_importance += tree.importance / n
            oob_importance += tree.heldout_importance(x[out_of_bag], y[out_of_bag])
        self.importance = np.maximum(oob_importance, 0.0)
        return self

    def predict(self, x):
        x = np.asarray(x, dtype=np.float64)
        proba = sum(tree.predict_proba(x) for tree in self.trees)
        return np.argmax(proba, axis=1)
