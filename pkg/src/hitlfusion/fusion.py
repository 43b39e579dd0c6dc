"""Output-level fusion of a visual posterior p(c|x) and an answer posterior
p(c|S), plus the input-level concatenation baseline.

Equal-weight fusion is the naive Bayes product ``p(c|x) p(c|S) / p(c)``.
The modified rule keeps, per class and per source, a threshold below which
that source's estimate for the class is distrusted, and the score of the
class then falls back on the other source alone. Thresholds come from a
per-class grid search over ``{0, 0.1, ..., 1}`` that maximises an F1 score
on held-in posteriors.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

THRESHOLD_GRID = tuple(i / 10 for i in range(11))

# floor for log(0): keeps rows with disjoint supports finite without
# touching any representable positive probability
_TINY = np.finfo(float).tiny

METHODS = ("equal_weight", "modified_nb")


def _log(p) -> np.ndarray:
    return np.log(np.maximum(np.asarray(p, dtype=float), _TINY))


def _normalise_log(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def _check_prior(prior, n):
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (n,):
        raise ValueError(f"prior has shape {prior.shape}, expected ({n},)")
    if np.any(prior < 0) or not np.any(prior > 0):
        raise ValueError("prior must be non-negative with at least one positive entry")
    return prior


def _prior_log(prior):
    # a class with zero prior (absent from training) gets zero fused probability
    with np.errstate(divide="ignore"):
        return np.where(prior > 0, np.log(prior), np.inf)


def _pair(p_x, p_s):
    p_x = np.asarray(p_x, dtype=float)
    p_s = np.asarray(p_s, dtype=float)
    if p_x.shape != p_s.shape:
        raise ValueError(f"posterior shapes differ: {p_x.shape} vs {p_s.shape}")
    if np.any(p_x < 0) or np.any(p_s < 0):
        raise ValueError("posteriors must be non-negative")
    return p_x, p_s


def concat_features(x, answers) -> np.ndarray:
    """Input-level fusion: visual features followed by answer values."""
    return np.concatenate([np.asarray(x, dtype=float), np.asarray(answers, dtype=float)], axis=-1)


def uniform_prior(n_classes: int) -> np.ndarray:
    return np.full(n_classes, 1.0 / n_classes)


def empirical_prior(labels, n_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=n_classes).astype(float)
    return counts / counts.sum()


def nb_fuse(p_x, p_s, prior) -> np.ndarray:
    """Equal-weight (naive Bayes) fusion of one posterior pair or a batch.

    Inputs need not be normalised; the result is. Classes with zero prior
    get probability zero.
    """
    p_x, p_s = _pair(p_x, p_s)
    prior = _check_prior(prior, p_x.shape[-1])
    return _normalise_log(_log(p_x) + _log(p_s) - _prior_log(prior))


def modified_nb_fuse(p_x, p_s, prior, theta_x, theta_s) -> np.ndarray:
    """Thresholded fusion, class by class:

    * ``p_x[c] < theta_x[c]``: score ``p_s[c] / prior[c]``
    * else ``p_s[c] < theta_s[c]``: score ``p_x[c] / prior[c]``
    * else the product ``p_x[c] p_s[c] / prior[c]``

    When both estimates fall under their thresholds the first branch applies.
    Scores are renormalised; with all thresholds zero this is :func:`nb_fuse`.
    """
    p_x, p_s = _pair(p_x, p_s)
    n = p_x.shape[-1]
    prior = _check_prior(prior, n)
    theta_x = np.asarray(theta_x, dtype=float)
    theta_s = np.asarray(theta_s, dtype=float)
    if theta_x.shape != (n,) or theta_s.shape != (n,):
        raise ValueError("threshold vectors must have one entry per class")
    lx, ls, lp = _log(p_x), _log(p_s), _prior_log(prior)
    scores = np.where(p_x < theta_x, ls - lp, np.where(p_s < theta_s, lx - lp, lx + ls - lp))
    return _normalise_log(scores)


@dataclass(frozen=True)
class ThresholdTable:
    theta_x: np.ndarray
    theta_s: np.ndarray

    def __post_init__(self):
        for name in ("theta_x", "theta_s"):
            v = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isin(v, THRESHOLD_GRID)):
                raise ValueError(f"{name} entries must lie on the grid {THRESHOLD_GRID}")
            object.__setattr__(self, name, v)
        if self.theta_x.shape != self.theta_s.shape:
            raise ValueError("theta_x and theta_s differ in length")

    @classmethod
    def zeros(cls, n_classes: int) -> "ThresholdTable":
        return cls(np.zeros(n_classes), np.zeros(n_classes))

    def to_dict(self, class_names) -> dict:
        if len(class_names) != len(self.theta_x):
            raise ValueError("class_names length does not match the table")
        return {
            "schema_version": 1,
            "class_names": list(class_names),
            "thresholds": {
                name: {"theta_x": float(tx), "theta_s": float(ts)}
                for name, tx, ts in zip(class_names, self.theta_x, self.theta_s)
            },
        }

    @classmethod
    def from_dict(cls, d: dict, class_names=None) -> "ThresholdTable":
        names = list(class_names) if class_names is not None else d["class_names"]
        table = d["thresholds"]
        missing = [n for n in names if n not in table]
        if missing:
            raise ValueError(f"thresholds missing for classes {missing}")
        return cls(np.array([table[n]["theta_x"] for n in names]),
                   np.array([table[n]["theta_s"] for n in names]))


def _f1_curve(pmax, pred, c, n_c):
    scores = np.zeros(len(THRESHOLD_GRID))
    for j, theta in enumerate(THRESHOLD_GRID):
        accepted = pmax > theta
        n_acc = int(accepted.sum())
        hits = int(np.sum(accepted & (pred == c)))
        if n_acc == 0 or hits == 0:
            continue
        precision = hits / n_acc
        recall = hits / n_c
        scores[j] = 2 * precision * recall / (precision + recall)
    return scores


def grid_search_thresholds(posteriors, labels, n_classes: int | None = None, return_scores: bool = False):
    """Per-class threshold maximising F1 over the grid ``{0, 0.1, ..., 1}``.

    For class c only rows whose true label is c are examined. A row is
    accepted at threshold t when its largest probability exceeds t; its
    predicted label is the argmax. Precision is the fraction of accepted rows
    predicted as c, recall the number of accepted rows predicted as c over
    the number of rows of class c. Ties go to the smallest threshold. Classes
    without rows get threshold 0 and a warning.
    """
    P = np.asarray(posteriors, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if P.ndim != 2 or P.shape[0] != labels.shape[0]:
        raise ValueError("need one posterior row per label")
    if n_classes is None:
        n_classes = P.shape[1]
    pmax = P.max(axis=1)
    pred = P.argmax(axis=1)
    thetas = np.zeros(n_classes)
    table = np.zeros((n_classes, len(THRESHOLD_GRID)))
    empty = []
    for c in range(n_classes):
        rows = labels == c
        n_c = int(rows.sum())
        if n_c == 0:
            empty.append(c)
            continue
        table[c] = _f1_curve(pmax[rows], pred[rows], c, n_c)
        thetas[c] = THRESHOLD_GRID[int(np.argmax(table[c]))]
    if empty:
        warnings.warn(f"{len(empty)} classes without samples get threshold 0: {empty[:10]}", RuntimeWarning,
                      stacklevel=2)
    if return_scores:
        return thetas, table
    return thetas


def learn_thresholds(p_x, p_s, labels, n_classes: int | None = None) -> ThresholdTable:
    """Run the grid search separately on each source's posterior matrix."""
    return ThresholdTable(grid_search_thresholds(p_x, labels, n_classes),
                          grid_search_thresholds(p_s, labels, n_classes))


def fuse_batch(matrix_x, matrix_s, prior, method: str = "equal_weight", thresholds: ThresholdTable | None = None):
    """Fuse two posterior matrices row by row.

    Returns ``(fused, predictions)``; predictions are row argmaxes with ties
    going to the lowest class index.
    """
    method = method.replace("-", "_")
    matrix_x = np.atleast_2d(matrix_x)
    matrix_s = np.atleast_2d(matrix_s)
    if method == "equal_weight":
        fused = nb_fuse(matrix_x, matrix_s, prior)
    elif method == "modified_nb":
        if thresholds is None:
            raise ValueError("modified_nb fusion needs a threshold table")
        fused = modified_nb_fuse(matrix_x, matrix_s, prior, thresholds.theta_x, thresholds.theta_s)
    else:
        raise ValueError(f"unknown fusion method {method!r}; expected one of {METHODS}")
    return fused, fused.argmax(axis=1)


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def write_posteriors(path: str, matrix, class_names) -> None:
    """CSV with a header row of class names and one row per sample."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[1] != len(class_names):
        raise ValueError("column count differs from class_names")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(class_names) + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_posteriors(path: str):
    """Return ``(matrix, class_names)`` from a posterior CSV."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ValueError(f"{path}: empty posterior file")
    names = rows[0]
    try:
        matrix = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(names))
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise ValueError(f"{path}: posteriors must be finite and non-negative")
    return matrix, names


def write_thresholds(path: str, table: ThresholdTable, class_names) -> None:
    with open(path, "w") as fh:
        json.dump(table.to_dict(class_names), fh, indent=2)
        fh.write("\n")


def read_thresholds(path: str, class_names=None) -> ThresholdTable:
    with open(path) as fh:
        return ThresholdTable.from_dict(json.load(fh), class_names)
