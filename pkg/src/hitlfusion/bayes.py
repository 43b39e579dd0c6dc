"""Generative model of user answers.

Each tag's answer is a categorical symbol (one of ``K = 6`` certainty
values). A multinomial naive Bayes model keeps, for every active tag t,
class c and symbol k, the probability ``theta[t, c, k] = p(s_t = k | c)``.

The random naive Bayes ensemble fits ``B`` such models, each on a bootstrap
resample of the training set and on ``F`` randomly chosen tags, and scores a
class by the sum over bags of the per-bag likelihood products, multiplied by
the class prior once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import K, symbols_from_values


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    return e / e.sum(axis=-1, keepdims=True)


def _as_codes(answers) -> np.ndarray:
    """Certainty values -> 0-based symbol codes, shape ``(n, T)``."""
    a = np.asarray(answers, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    return symbols_from_values(a)


@dataclass(frozen=True)
class MultinomialNb:
    """Fitted multinomial naive Bayes over a subset of tags.

    ``theta`` has shape ``(F, n_classes, K)``; row ``f`` belongs to tag
    ``feature_subset[f]``. Tags outside the subset are ignored.
    """

    theta: np.ndarray
    log_prior: np.ndarray
    feature_subset: np.ndarray
    n_tags: int

    @property
    def n_classes(self) -> int:
        return self.theta.shape[1]

    def log_likelihood(self, answers) -> np.ndarray:
        """``log p(S | c)`` for each row of ``answers``; shape ``(n, C)``."""
        return _log_likelihood_codes(self, _as_codes(answers))

    def predict_proba(self, answers) -> np.ndarray:
        ll = self.log_likelihood(answers) + self.log_prior
        return _softmax_rows(ll)

    def to_dict(self) -> dict:
        return {
            "kind": "multinomial_nb",
            "n_tags": self.n_tags,
            "feature_subset": [int(t) for t in self.feature_subset],
            "log_prior": [float(v) for v in self.log_prior],
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MultinomialNb":
        return cls(
            theta=np.asarray(d["theta"], dtype=float),
            log_prior=np.asarray(d["log_prior"], dtype=float),
            feature_subset=np.asarray(d["feature_subset"], dtype=np.int64),
            n_tags=int(d["n_tags"]),
        )


def _log_likelihood_codes(model: MultinomialNb, codes: np.ndarray) -> np.ndarray:
    if codes.shape[1] != model.n_tags:
        raise ValueError(f"answer vector has length {codes.shape[1]}, model expects {model.n_tags}")
    log_theta = np.log(model.theta)
    sub = codes[:, model.feature_subset]  # (n, F)
    f_idx = np.arange(len(model.feature_subset))
    # (n, F, C) -> (n, C)
    return log_theta[f_idx[None, :], :, sub].sum(axis=1)


def _class_prior(labels: np.ndarray, n_classes: int) -> np.ndarray:
    counts = np.bincount(labels, minlength=n_classes).astype(float)
    return counts / counts.sum()


def _fit_codes(codes, labels, n_classes, feature_subset, smoothing, log_prior=None) -> MultinomialNb:
    n = codes.shape[0]
    F = len(feature_subset)
    sub = codes[:, feature_subset]
    flat = ((np.arange(F)[None, :] * n_classes + labels[:, None]) * K + sub).ravel()
    counts = np.bincount(flat, minlength=F * n_classes * K).reshape(F, n_classes, K)
    n_c = np.bincount(labels, minlength=n_classes)
    theta = (counts + smoothing) / (n_c[None, :, None] + K * smoothing)
    if log_prior is None:
        log_prior = _log(_class_prior(labels, n_classes))
    return MultinomialNb(theta, np.asarray(log_prior, dtype=float), np.asarray(feature_subset, dtype=np.int64),
                         codes.shape[1])


def _check_training(codes, labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if codes.shape[0] == 0:
        raise ValueError("empty training set")
    if labels.shape != (codes.shape[0],):
        raise ValueError("answers and labels differ in length")
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError("label index out of range")
    return labels, n_classes


def nb_fit(answers, labels, n_classes: int | None = None, feature_subset=None, smoothing: float = 1.0) -> MultinomialNb:
    """Fit a multinomial naive Bayes on certainty-valued answers.

    ``theta[f, c, k] = (count(s_f = k, c) + a) / (count(c) + K a)`` with
    Laplace smoothing ``a``; the prior is the empirical class frequency.
    """
    codes = _as_codes(answers)
    labels, n_classes = _check_training(codes, labels, n_classes)
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    if feature_subset is None:
        feature_subset = np.arange(codes.shape[1])
    feature_subset = np.sort(np.asarray(feature_subset, dtype=np.int64))
    if feature_subset.size == 0:
        raise ValueError("feature subset is empty")
    return _fit_codes(codes, labels, n_classes, feature_subset, smoothing)


def nb_class_conditional_log(model: MultinomialNb, answers) -> np.ndarray:
    """``log p(S | c)`` for one answer vector (shape ``(C,)``) or a batch."""
    single = np.ndim(answers) == 1
    ll = model.log_likelihood(answers)
    return ll[0] if single else ll


def nb_posterior(model: MultinomialNb, answers) -> np.ndarray:
    single = np.ndim(answers) == 1
    p = model.predict_proba(answers)
    return p[0] if single else p


@dataclass(frozen=True)
class RnbEnsemble:
    """Random naive Bayes ensemble.

    Bags keep their own bootstrap-estimated ``theta``; ``log_prior`` comes from
    the full training set and enters the score once.
    """

    bags: tuple
    log_prior: np.ndarray
    n_features: int
    seed: int
    bootstrap: bool = True

    @property
    def n_bags(self) -> int:
        return len(self.bags)

    @property
    def n_classes(self) -> int:
        return self.log_prior.shape[0]

    def log_scores(self, answers) -> np.ndarray:
        """``log(sum_b p_b(S|c)) + log p(c)``, unnormalised; shape ``(n, C)``."""
        codes = _as_codes(answers)
        # streaming log-sum-exp over bags keeps memory at O(n C)
        m = None
        s = None
        for bag in self.bags:
            ll = _log_likelihood_codes(bag, codes)
            if m is None:
                m, s = ll, np.ones_like(ll)
                continue
            new_m = np.maximum(m, ll)
            s = s * np.exp(m - new_m) + np.exp(ll - new_m)
            m = new_m
        return m + np.log(s) - math.log(self.n_bags) + self.log_prior

    def predict_proba(self, answers) -> np.ndarray:
        return _softmax_rows(self.log_scores(answers))

    def to_dict(self) -> dict:
        return {
            "kind": "rnb",
            "seed": self.seed,
            "n_features": self.n_features,
            "bootstrap": self.bootstrap,
            "log_prior": [float(v) for v in self.log_prior],
            "bags": [b.to_dict() for b in self.bags],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RnbEnsemble":
        return cls(
            bags=tuple(MultinomialNb.from_dict(b) for b in d["bags"]),
            log_prior=np.asarray(d["log_prior"], dtype=float),
            n_features=int(d["n_features"]),
            seed=int(d["seed"]),
            bootstrap=bool(d["bootstrap"]),
        )


def bag_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent child seeds for ``n`` bags (or trees) of one ensemble."""
    return np.random.SeedSequence(seed).spawn(n)


def rnb_fit(answers, labels, n_bags: int = 1000, n_features: int | None = None, smoothing: float = 1.0,
            seed: int = 0, n_classes: int | None = None, bootstrap: bool = True) -> RnbEnsemble:
    """Fit ``n_bags`` naive Bayes models on bootstrap resamples and random tag
    subsets of size ``n_features`` (default ``ceil(sqrt(T))``).

    ``bootstrap=False`` fits every bag on the full training set, which with
    ``n_bags=1`` and ``n_features=T`` reduces to plain :func:`nb_fit`.
    """
    codes = _as_codes(answers)
    labels, n_classes = _check_training(codes, labels, n_classes)
    n, T = codes.shape
    if n_features is None:
        n_features = max(1, math.ceil(math.sqrt(T)))
    if not 1 <= n_features <= T:
        raise ValueError(f"n_features must lie in [1, {T}], got {n_features}")
    if n_bags < 1:
        raise ValueError("n_bags must be >= 1")
    if smoothing <= 0:
        raise ValueError("smoothing must be positive")
    log_prior = _log(_class_prior(labels, n_classes))
    bags = []
    for child in bag_seeds(seed, n_bags):
        rng = np.random.default_rng(child)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        subset = np.sort(rng.choice(T, size=n_features, replace=False))
        bags.append(_fit_codes(codes[rows], labels[rows], n_classes, subset, smoothing, log_prior=log_prior))
    return RnbEnsemble(tuple(bags), log_prior, n_features, int(seed), bootstrap)


def rnb_posterior(model: RnbEnsemble, answers) -> np.ndarray:
    single = np.ndim(answers) == 1
    p = model.predict_proba(answers)
    return p[0] if single else p


def bootstrap_unique_fraction(n: int, rng) -> float:
    """Fraction of distinct rows in one size-``n`` bootstrap resample."""
    rows = rng.integers(0, n, size=n)
    return np.unique(rows).size / n
