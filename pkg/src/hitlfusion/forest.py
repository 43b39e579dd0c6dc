"""Bagged decision trees with entropy-based split scoring.

A split of node n into children l and r is scored by

    score = -(|l| / |n|) E(l) - (|r| / |n|) E(r)

with E the Shannon entropy (bits) of the class labels. Higher is better and
the maximum, 0, is reached only when both children are pure. Because E(n) is
fixed within a node, maximising the score is the same as maximising
information gain.

Leaves store the normalised class histogram of the (bootstrap) samples that
reach them; the forest posterior is the mean of the reached leaf
distributions.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

# score differences below this are treated as ties
_TIE_TOL = 1e-12
_LN2 = math.log(2.0)


def entropy(dist) -> float:
    """Shannon entropy in bits of a count or probability vector."""
    p = np.asarray(dist, dtype=float)
    if np.any(p < 0):
        raise ValueError("entropy of a vector with negative entries")
    total = p.sum()
    if total <= 0:
        raise ValueError("entropy of an all-zero vector")
    p = p[p > 0] / total
    return float(-(p * np.log2(p)).sum())


def split_score(left_labels, right_labels, n_classes: int | None = None) -> float:
    """Entropy split score of a candidate partition (always <= 0)."""
    left = np.asarray(left_labels, dtype=np.int64)
    right = np.asarray(right_labels, dtype=np.int64)
    if left.size == 0 or right.size == 0:
        raise ValueError("split with an empty child")
    if n_classes is None:
        n_classes = int(max(left.max(), right.max())) + 1
    n = left.size + right.size
    e_l = entropy(np.bincount(left, minlength=n_classes))
    e_r = entropy(np.bincount(right, minlength=n_classes))
    return -(left.size / n) * e_l - (right.size / n) * e_r


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _xlogx_table(n):
    t = np.zeros(n + 2)
    for i in range(2, n + 2):
        t[i] = i * math.log(i)
    return t


@njit(cache=True, nogil=True)
def _eval_feature(X, y, idx, start, end, f, n_classes, min_leaf, xlogx, parent_counts):
    """Best (score, threshold) for feature ``f`` over ``idx[start:end]``.

    Candidate thresholds are midpoints between consecutive distinct values,
    scanned in ascending order; the lowest threshold wins ties. Returns
    ``found = False`` when the feature is constant or no admissible split
    exists.
    """
    m = end - start
    vals = np.empty(m)
    labs = np.empty(m, dtype=np.int64)
    for i in range(m):
        r = idx[start + i]
        vals[i] = X[r, f]
        labs[i] = y[r]
    order = np.argsort(vals, kind="mergesort")
    if vals[order[0]] == vals[order[m - 1]]:
        return -np.inf, 0.0, False
    left = np.zeros(n_classes, dtype=np.int64)
    right = parent_counts.copy()
    s_left = 0.0
    s_right = 0.0
    for c in range(n_classes):
        s_right += xlogx[right[c]]
    best = -np.inf
    best_thr = 0.0
    found = False
    for i in range(m - 1):
        lab = labs[order[i]]
        s_left += xlogx[left[lab] + 1] - xlogx[left[lab]]
        left[lab] += 1
        s_right += xlogx[right[lab] - 1] - xlogx[right[lab]]
        right[lab] -= 1
        n_left = i + 1
        n_right = m - n_left
        v0 = vals[order[i]]
        v1 = vals[order[i + 1]]
        if v0 == v1 or n_left < min_leaf or n_right < min_leaf:
            continue
        # |child| * E(child) in nats = k log k - sum_c k_c log k_c
        score = -((xlogx[n_left] - s_left) + (xlogx[n_right] - s_right)) / (m * _LN2)
        if score > best + _TIE_TOL:
            best = score
            thr = 0.5 * (v0 + v1)
            if thr >= v1:
                thr = v0
            best_thr = thr
            found = True
    return best, best_thr, found


@njit(cache=True, nogil=True)
def _node_counts(y, idx, start, end, n_classes):
    counts = np.zeros(n_classes, dtype=np.int64)
    for i in range(start, end):
        counts[y[idx[i]]] += 1
    return counts


@njit(cache=True, nogil=True)
def _parent_entropy(counts, m):
    e = 0.0
    for c in range(counts.shape[0]):
        if counts[c] > 0:
            p = counts[c] / m
            e -= p * math.log(p)
    return e / _LN2


@njit(cache=True, nogil=True)
def _grow_tree(X, y, n_classes, mtry, min_leaf, seed, bootstrap):
    np.random.seed(seed)
    n, d = X.shape
    if bootstrap:
        idx = np.empty(n, dtype=np.int64)
        for i in range(n):
            idx[i] = np.random.randint(0, n)
    else:
        idx = np.arange(n)
    max_nodes = 2 * n
    feature = np.full(max_nodes, -1, dtype=np.int64)
    threshold = np.zeros(max_nodes)
    left_child = np.full(max_nodes, -1, dtype=np.int64)
    right_child = np.full(max_nodes, -1, dtype=np.int64)
    counts = np.zeros((max_nodes, n_classes), dtype=np.int64)
    st_node = np.empty(max_nodes, dtype=np.int64)
    st_start = np.empty(max_nodes, dtype=np.int64)
    st_end = np.empty(max_nodes, dtype=np.int64)
    xlogx = _xlogx_table(n)
    perm = np.arange(d)

    n_nodes = 1
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    sp = 1
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        m = end - start
        pc = _node_counts(y, idx, start, end, n_classes)
        counts[node] = pc
        n_present = 0
        for c in range(n_classes):
            if pc[c] > 0:
                n_present += 1
        if n_present <= 1 or m < 2 * min_leaf:
            continue
        best = -np.inf
        best_f = -1
        best_thr = 0.0
        visited = 0
        for i in range(d):
            if visited >= mtry:
                break
            j = np.random.randint(i, d)
            tmp = perm[i]
            perm[i] = perm[j]
            perm[j] = tmp
            f = perm[i]
            score, thr, found = _eval_feature(X, y, idx, start, end, f, n_classes, min_leaf, xlogx, pc)
            if not found:
                continue
            visited += 1
            if score > best + _TIE_TOL or (abs(score - best) <= _TIE_TOL and f < best_f):
                best = score
                best_f = f
                best_thr = thr
        if best_f < 0 or best + _parent_entropy(pc, m) <= _TIE_TOL:
            continue
        # in-place partition: x <= thr goes left
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_f
        threshold[node] = best_thr
        left_child[node] = n_nodes
        right_child[node] = n_nodes + 1
        st_node[sp] = n_nodes + 1
        st_start[sp] = i
        st_end[sp] = end
        sp += 1
        st_node[sp] = n_nodes
        st_start[sp] = start
        st_end[sp] = i
        sp += 1
        n_nodes += 2
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left_child[:n_nodes].copy(),
            right_child[:n_nodes].copy(), counts[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _apply_tree(X, feature, threshold, left_child, right_child):
    out = np.empty(X.shape[0], dtype=np.int64)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left_child[node]
            else:
                node = right_child[node]
        out[i] = node
    return out


@njit(cache=True, nogil=True)
def _root_split(X, y, n_classes, min_leaf):
    """Exhaustive best split at the root over every feature in index order."""
    n, d = X.shape
    idx = np.arange(n)
    xlogx = _xlogx_table(n)
    pc = _node_counts(y, idx, 0, n, n_classes)
    best = -np.inf
    best_f = -1
    best_thr = 0.0
    for f in range(d):
        score, thr, found = _eval_feature(X, y, idx, 0, n, f, n_classes, min_leaf, xlogx, pc)
        if found and score > best + _TIE_TOL:
            best = score
            best_f = f
            best_thr = thr
    return best_f, best_thr, best


# ---------------------------------------------------------------------------
# Python API
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree. ``feature[i] == -1`` marks a leaf; the
    class distribution of node i is ``counts[i] / counts[i].sum()``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def distributions(self) -> np.ndarray:
        return self.counts / self.counts.sum(axis=1, keepdims=True)

    def apply(self, X) -> np.ndarray:
        return _apply_tree(np.ascontiguousarray(X, dtype=float), self.feature, self.threshold, self.left, self.right)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["counts"], dtype=np.int64).reshape(len(d["feature"]), -1),
        )


@dataclass(frozen=True)
class Forest:
    trees: tuple
    n_classes: int
    n_features: int
    mtry: int
    min_leaf: int
    seed: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != self.n_features:
            raise ValueError(f"feature vector has dimension {X.shape[1]}, forest expects {self.n_features}")
        out = np.zeros((X.shape[0], self.n_classes))
        for tree in self.trees:
            out += tree.distributions[tree.apply(X)]
        return out / self.n_trees

    def to_dict(self) -> dict:
        return {
            "kind": "forest",
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "mtry": self.mtry,
            "min_leaf": self.min_leaf,
            "seed": self.seed,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        return cls(
            trees=tuple(Tree.from_dict(t) for t in d["trees"]),
            n_classes=int(d["n_classes"]),
            n_features=int(d["n_features"]),
            mtry=int(d["mtry"]),
            min_leaf=int(d["min_leaf"]),
            seed=int(d["seed"]),
        )


def _tree_seeds(seed: int, n_trees: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n_trees)
    return [int(c.generate_state(1)[0]) for c in children]


def forest_fit(features, labels, n_trees: int = 1000, mtry: int | None = None, min_leaf: int = 1,
               seed: int = 0, n_classes: int | None = None, threads: int | None = None,
               bootstrap: bool = True) -> Forest:
    """Grow ``n_trees`` trees, each on a bootstrap resample, sampling ``mtry``
    non-constant features per node (default ``ceil(sqrt(d))``).

    Trees get seeds derived from ``(seed, tree index)``, so the result does
    not depend on ``threads``.
    """
    X = np.ascontiguousarray(np.asarray(features, dtype=float))
    y = np.ascontiguousarray(np.asarray(labels, dtype=np.int64))
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("features must be a non-empty 2-d array")
    if y.shape != (X.shape[0],):
        raise ValueError("features and labels differ in length")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    n, d = X.shape
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError("label index out of range")
    if mtry is None:
        mtry = max(1, math.ceil(math.sqrt(d)))
    if not 1 <= mtry <= d:
        raise ValueError(f"mtry must lie in [1, {d}], got {mtry}")
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")

    def grow(tree_seed):
        return Tree(*_grow_tree(X, y, n_classes, mtry, min_leaf, tree_seed, bootstrap))

    seeds = _tree_seeds(seed, n_trees)
    threads = threads or os.cpu_count() or 1
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, seeds))
    else:
        trees = [grow(s) for s in seeds]
    return Forest(tuple(trees), n_classes, d, mtry, min_leaf, int(seed))


def forest_posterior(forest: Forest, x) -> np.ndarray:
    single = np.ndim(x) == 1
    p = forest.predict_proba(x)
    return p[0] if single else p


def best_split(features, labels, n_classes: int | None = None, min_leaf: int = 1):
    """Best root split over all features: ``(feature, threshold, score)``.

    Ties go to the lowest feature index, then the lowest threshold. Returns
    feature ``-1`` when no split is admissible.
    """
    X = np.ascontiguousarray(np.asarray(features, dtype=float))
    y = np.ascontiguousarray(np.asarray(labels, dtype=np.int64))
    if n_classes is None:
        n_classes = int(y.max()) + 1
    f, thr, score = _root_split(X, y, n_classes, min_leaf)
    return int(f), float(thr), float(score)
