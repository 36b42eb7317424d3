"""Random-forest prediction head: CART trees, Gini impurity, bootstrap resampling.

Trees are grown until leaves are pure or hold fewer than 2 samples. Each split
inspects floor(sqrt(d)) non-constant candidate features, drawn from a
per-node random permutation so that a usable split is always found on
consistent data. Per-tree randomness comes from seeds spawned with a fixed
splitting rule, so parallel tree construction equals sequential.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ..errors import ShapeError, StateError


@numba.njit(cache=True)
def _build_tree(X, y, boot_idx, feat_perms, n_classes, max_features,
                feature, threshold, left, right, leaf_dist):
    """Grow one CART tree in place; returns the number of nodes used.

    feat_perms: (max_internal_nodes, d) feature permutations consumed in
    node-creation (stack) order. Node arrays are preallocated by the caller.
    """
    m = boot_idx.shape[0]
    d = feat_perms.shape[1]
    work = boot_idx.copy()

    stack_node = np.empty(2 * m + 1, np.int64)
    stack_lo = np.empty(2 * m + 1, np.int64)
    stack_hi = np.empty(2 * m + 1, np.int64)
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = m
    sp = 1
    n_nodes = 1
    n_internal = 0

    vals = np.empty(m, np.float64)
    tmp = np.empty(m, np.int64)
    best_order = np.empty(m, np.int64)

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        sz = hi - lo

        counts = np.zeros(n_classes, np.float64)
        for i in range(lo, hi):
            counts[y[work[i]]] += 1.0
        max_count = 0.0
        for c in range(n_classes):
            if counts[c] > max_count:
                max_count = counts[c]

        if sz < 2 or max_count == sz:
            feature[node] = -1
            for c in range(n_classes):
                leaf_dist[node, c] = counts[c] / sz
            continue

        perm = feat_perms[n_internal]
        best_cost = np.inf
        best_f = -1
        best_thr = 0.0
        best_pos = -1
        usable = 0

        for fi in range(d):
            if usable >= max_features:
                break
            f = perm[fi]
            for i in range(sz):
                vals[i] = X[work[lo + i], f]
            order = np.argsort(vals[:sz])

            # single left-to-right pass, O(1) Gini update per boundary
            left_counts = np.zeros(n_classes, np.float64)
            left_sq = 0.0
            right_counts = counts.copy()
            right_sq = 0.0
            for c in range(n_classes):
                right_sq += right_counts[c] * right_counts[c]
            found = False
            for s in range(1, sz):
                cl = y[work[lo + order[s - 1]]]
                left_sq += 2.0 * left_counts[cl] + 1.0
                left_counts[cl] += 1.0
                right_sq += -2.0 * right_counts[cl] + 1.0
                right_counts[cl] -= 1.0
                v0 = vals[order[s - 1]]
                v1 = vals[order[s]]
                if v1 <= v0:
                    continue
                found = True
                nl = float(s)
                nr = float(sz - s)
                # sz * weighted Gini, constants dropped
                cost = (nl - left_sq / nl) + (nr - right_sq / nr)
                if cost < best_cost:
                    best_cost = cost
                    best_f = f
                    best_thr = 0.5 * (v0 + v1)
                    best_pos = s
                    best_order[:sz] = order
            if found:
                usable += 1

        if best_f < 0:
            # every candidate feature constant in this node: emit a leaf
            feature[node] = -1
            for c in range(n_classes):
                leaf_dist[node, c] = counts[c] / sz
            continue

        n_internal += 1
        for i in range(sz):
            tmp[i] = work[lo + best_order[i]]
        for i in range(sz):
            work[lo + i] = tmp[i]

        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack_node[sp] = n_nodes
        stack_lo[sp] = lo
        stack_hi[sp] = lo + best_pos
        sp += 1
        stack_node[sp] = n_nodes + 1
        stack_lo[sp] = lo + best_pos
        stack_hi[sp] = hi
        sp += 1
        n_nodes += 2

    return n_nodes


@numba.njit(parallel=True, cache=True)
def _build_forest(X, y, boot, feat_perms, n_classes, max_features,
                  feature, threshold, left, right, leaf_dist, node_counts):
    for t in numba.prange(boot.shape[0]):
        node_counts[t] = _build_tree(
            X, y, boot[t], feat_perms[t], n_classes, max_features,
            feature[t], threshold[t], left[t], right[t], leaf_dist[t],
        )


@numba.njit(parallel=True, cache=True)
def _forest_predict(X, feature, threshold, left, right, leaf_dist, out):
    n_trees = feature.shape[0]
    n = X.shape[0]
    c = leaf_dist.shape[2]
    for t in numba.prange(n_trees):
        for i in range(n):
            node = 0
            while feature[t, node] >= 0:
                if X[i, feature[t, node]] <= threshold[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            for k in range(c):
                out[t, i, k] = leaf_dist[t, node, k]


@dataclass(frozen=True, eq=False)
class ForestHead:
    """Fitted forest; members of its probability cube are the individual trees."""

    classes: int
    dim: int
    trees: int
    feature: np.ndarray    # (trees, nodes) split feature, -1 at leaves
    threshold: np.ndarray  # (trees, nodes)
    left: np.ndarray
    right: np.ndarray
    leaf_dist: np.ndarray  # (trees, nodes, classes)

    @property
    def member_count(self) -> int:
        return self.trees

    def predict_members(self, features: np.ndarray, k_requested: int | None = None,
                        seed: int = 0) -> np.ndarray:
        """Per-tree leaf class frequencies; k equals the tree count."""
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise ShapeError(
                f"expected (n, {self.dim}) features, got {features.shape}"
            )
        out = np.empty((self.trees, features.shape[0], self.classes))
        _forest_predict(features, self.feature, self.threshold,
                        self.left, self.right, self.leaf_dist, out)
        return out


def fit_forest(features: np.ndarray, labels: np.ndarray, classes: int,
               trees: int, bootstrap: bool, max_features: int | str,
               seed: int) -> ForestHead:
    """Fit a seeded forest. Identical inputs and seed give identical trees."""
    X = np.ascontiguousarray(features, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int32)
    if X.shape[0] == 0:
        raise StateError("cannot fit a forest on an empty training set")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} feature rows vs {y.shape[0]} labels")
    n, d = X.shape
    if max_features == "sqrt":
        q = max(1, int(np.floor(np.sqrt(d))))
    else:
        q = min(int(max_features), d)

    seeds = np.random.SeedSequence(seed).spawn(trees)
    boot = np.empty((trees, n), np.int64)
    max_internal = max(n - 1, 1)
    feat_perms = np.empty((trees, max_internal, d), np.int64)
    for t in range(trees):
        rng = np.random.default_rng(seeds[t])
        if bootstrap:
            boot[t] = rng.integers(0, n, size=n)
        else:
            boot[t] = np.arange(n)
        keys = rng.random((max_internal, d))
        feat_perms[t] = np.argsort(keys, axis=1)

    max_nodes = 2 * n + 1
    feature = np.full((trees, max_nodes), -1, np.int64)
    threshold = np.zeros((trees, max_nodes))
    left = np.zeros((trees, max_nodes), np.int64)
    right = np.zeros((trees, max_nodes), np.int64)
    leaf_dist = np.zeros((trees, max_nodes, classes))
    node_counts = np.zeros(trees, np.int64)
    _build_forest(X, y, boot, feat_perms, classes, q,
                  feature, threshold, left, right, leaf_dist, node_counts)

    used = int(node_counts.max())
    return ForestHead(
        classes=classes, dim=d, trees=trees,
        feature=feature[:, :used].copy(),
        threshold=threshold[:, :used].copy(),
        left=left[:, :used].copy(),
        right=right[:, :used].copy(),
        leaf_dist=leaf_dist[:, :used].copy(),
    )
