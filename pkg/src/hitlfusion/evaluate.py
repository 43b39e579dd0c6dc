"""Metrics and the repeated-split experiment harness.

An experiment config is JSON::

    {
      "schema_version": 1,
      "dataset": {"manifest": "data/manifest.json"},     # or {"synth": {...}}
      "split": {"kind": "repeated", "repeats": 5, "train_per_class": 15},
      "validation_fraction": 0.25,
      "prior": "empirical",
      "forest": {"n_trees": 1000, "mtry": null, "min_leaf": 1},
      "rnb": {"n_bags": 1000, "n_features": null, "smoothing": 1.0},
      "nb": {"smoothing": 1.0},
      "net": {"hidden": [null, null], "max_epochs": 1000, "patience": 50,
              "grad_tol": 1e-6, "validation_fraction": 0.2},
      "pairs": [["rf", "rnb"], ["rf", "rf"]],
      "methods": ["concat", "equal_weight", "greedy", "neural_net"]
    }

Split kinds: ``repeated`` (``train_per_class`` per class, stratified),
``fraction`` (unstratified, ``train_fraction``; for multilabel data) and
``fixed`` (the first ``n_train`` samples train, the rest test, one repeat).
Relative manifest paths resolve against the config file's directory.

Per repeat, the base classifiers are fitted on the training split minus a
stratified validation part. Their validation posteriors train the fusion
thresholds and the fusion network; all methods are scored on the test split.
The concatenation baseline is fitted on the whole training split.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bayes, forest, fusion, neural
from .dataset import (
    Dataset,
    PowersetCodebook,
    UnknownLabelError,
    load_dataset,
    powerset_encode,
    random_fraction_splits,
    repeated_subsample_splits,
    stratified_holdout,
    synth_generate,
)

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
TEXTUAL_CLASSIFIERS = ("rf", "rnb", "nb")
VISUAL_CLASSIFIERS = ("rf",)
ALL_METHODS = ("concat", "equal_weight", "greedy", "neural_net")
METHOD_TITLES = {"equal_weight": "Equal Weight", "greedy": "Greedy Alg.", "neural_net": "Neural Net.",
                 "concat": "Concatenation", "solo": "Single source"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValueError("accuracy needs two equal-length, non-empty label arrays")
    return float(np.mean(predictions == labels))


def macro_accuracy(predictions, labels) -> float:
    """Mean over the classes present in ``labels`` of per-class recall."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    return float(np.mean([np.mean(predictions[labels == c] == c) for c in classes]))


def per_class_f1(predictions, labels, n_classes: int) -> np.ndarray:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    out = np.zeros(n_classes)
    for c in range(n_classes):
        tp = np.sum((predictions == c) & (labels == c))
        denom = np.sum(predictions == c) + np.sum(labels == c)
        out[c] = 2 * tp / denom if denom else 0.0
    return out


def _check_sets(pred_sets, true_sets):
    if len(pred_sets) != len(true_sets) or not true_sets:
        raise ValueError("need two equal-length, non-empty lists of label sets")


def hamming_loss(pred_sets, true_sets, n_atomic: int) -> float:
    """Mean over samples of |pred XOR true| / n_atomic."""
    _check_sets(pred_sets, true_sets)
    total = 0
    for p, t in zip(pred_sets, true_sets):
        p, t = set(p), set(t)
        for m in p | t:
            if not 0 <= m < n_atomic:
                raise ValueError(f"atomic label {m} outside [0, {n_atomic})")
        total += len(p ^ t)
    return total / (n_atomic * len(true_sets))


def exact_match(pred_sets, true_sets) -> float:
    _check_sets(pred_sets, true_sets)
    return sum(set(p) == set(t) for p, t in zip(pred_sets, true_sets)) / len(true_sets)


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    dataset: dict
    split: dict
    seed: int
    pairs: list = field(default_factory=lambda: [["rf", "rnb"]])
    methods: list = field(default_factory=lambda: list(ALL_METHODS))
    validation_fraction: float = 0.25
    prior: str = "empirical"
    forest: dict = field(default_factory=dict)
    rnb: dict = field(default_factory=dict)
    nb: dict = field(default_factory=dict)
    net: dict = field(default_factory=dict)
    base_dir: str = "."
    threads: int | None = None

    @classmethod
    def from_dict(cls, d: dict, seed: int, base_dir: str = ".", threads: int | None = None) -> "ExperimentConfig":
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {CONFIG_SCHEMA_VERSION}, got {version!r}")
        d.pop("seed", None)  # the command line owns the seed
        known = {"dataset", "split", "pairs", "methods", "validation_fraction", "prior", "forest", "rnb",
                 "nb", "net"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        for key in ("dataset", "split"):
            if key not in d:
                raise ConfigError(f"config lacks '{key}'")
        cfg = cls(seed=int(seed), base_dir=base_dir, threads=threads, **d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str, seed: int, threads: int | None = None) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(d, seed, os.path.dirname(os.path.abspath(path)), threads)

    def validate(self):
        if not self.methods:
            raise ConfigError("at least one method is required")
        bad = [m for m in self.methods if m not in ALL_METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; expected a subset of {ALL_METHODS}")
        for pair in self.pairs:
            if len(pair) != 2 or pair[0] not in VISUAL_CLASSIFIERS or pair[1] not in TEXTUAL_CLASSIFIERS:
                raise ConfigError(f"bad classifier pair {pair}")
        if self.prior not in ("empirical", "uniform"):
            raise ConfigError("prior must be 'empirical' or 'uniform'")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        kind = self.split.get("kind")
        if kind not in ("repeated", "fraction", "fixed"):
            raise ConfigError(f"split kind must be repeated, fraction or fixed, got {kind!r}")
        if "manifest" not in self.dataset and "synth" not in self.dataset:
            raise ConfigError("dataset needs 'manifest' or 'synth'")


def _derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def load_experiment_dataset(cfg: ExperimentConfig) -> Dataset:
    if "manifest" in cfg.dataset:
        path = cfg.dataset["manifest"]
        if not os.path.isabs(path):
            path = os.path.join(cfg.base_dir, path)
        return load_dataset(path)
    synth_seed = cfg.dataset.get("seed", _derive_seed(cfg.seed, 0))
    return synth_generate(cfg.dataset["synth"], synth_seed)


def _splits(cfg: ExperimentConfig, data: Dataset):
    s = cfg.split
    seed = _derive_seed(cfg.seed, 1)
    if s["kind"] == "repeated":
        if data.multilabel:
            raise ConfigError("repeated stratified splits need single-label data; use kind 'fraction'")
        return repeated_subsample_splits(data, int(s.get("repeats", 5)), int(s["train_per_class"]), seed)
    if s["kind"] == "fraction":
        return random_fraction_splits(data.n_samples, int(s.get("repeats", 5)), float(s["train_fraction"]), seed)
    n_train = int(s["n_train"])
    if not 0 < n_train < data.n_samples:
        raise ConfigError("fixed split needs 0 < n_train < n_samples")
    return [(np.arange(n_train), np.arange(n_train, data.n_samples))]


# ---------------------------------------------------------------------------
# Harness
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Per-repeat values of one table row; summary statistics are derived."""

    level: str
    classifier: str
    method: str
    accuracy: list = field(default_factory=list)
    macro_accuracy: list = field(default_factory=list)
    hamming_accuracy: list = field(default_factory=list)
    exact_match: list = field(default_factory=list)
    per_class_f1: list = field(default_factory=list)

    @property
    def key(self):
        return (self.level, self.classifier, self.method)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.accuracy))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.accuracy))


@dataclass
class ExperimentResult:
    rows: list
    split_kind: str
    n_repeats: int
    multilabel: bool
    dataset_name: str
    n_classes: int

    def row(self, level, classifier, method) -> MetricReport:
        for r in self.rows:
            if r.key == (level, classifier, method):
                return r
        raise KeyError((level, classifier, method))


def _fit_textual(kind, answers, labels, n_classes, cfg, seed):
    if kind == "rnb":
        p = cfg.rnb
        return bayes.rnb_fit(answers, labels, n_bags=int(p.get("n_bags", 1000)), n_features=p.get("n_features"),
                             smoothing=float(p.get("smoothing", 1.0)), seed=seed, n_classes=n_classes)
    if kind == "nb":
        return bayes.nb_fit(answers, labels, n_classes=n_classes, smoothing=float(cfg.nb.get("smoothing", 1.0)))
    return _fit_forest(answers, labels, n_classes, cfg, seed)


def _fit_forest(X, y, n_classes, cfg, seed):
    p = cfg.forest
    return forest.forest_fit(X, y, n_trees=int(p.get("n_trees", 1000)), mtry=p.get("mtry"),
                             min_leaf=int(p.get("min_leaf", 1)), seed=seed, n_classes=n_classes,
                             threads=cfg.threads)


def _train_config(cfg, seed) -> neural.TrainConfig:
    p = cfg.net
    return neural.TrainConfig(
        max_epochs=int(p.get("max_epochs", 1000)),
        validation_fraction=float(p.get("validation_fraction", 0.2)),
        patience=int(p.get("patience", 50)),
        grad_tol=float(p.get("grad_tol", 1e-6)),
        seed=seed,
    )


class _Scorer:
    def __init__(self, data: Dataset, test_idx, y_test, codebook: PowersetCodebook | None, n_classes):
        self.data = data
        self.test_idx = test_idx
        self.y_test = y_test
        self.codebook = codebook
        self.n_classes = n_classes

    def score(self, report: MetricReport, pred):
        pred = np.asarray(pred)
        if self.codebook is None:
            report.accuracy.append(accuracy(pred, self.y_test))
            report.macro_accuracy.append(macro_accuracy(pred, self.y_test))
        else:
            pred_sets = [self.codebook.decode(c) for c in pred]
            true_sets = [self.data.label_sets[i] for i in self.test_idx]
            em = exact_match(pred_sets, true_sets)
            report.accuracy.append(em)
            report.exact_match.append(em)
            report.hamming_accuracy.append(1.0 - hamming_loss(pred_sets, true_sets, self.data.n_classes))
            known = self.y_test >= 0
            report.macro_accuracy.append(macro_accuracy(pred[known], self.y_test[known]) if known.any() else 0.0)
        report.per_class_f1.append(per_class_f1(pred, self.y_test, self.n_classes))


def run_experiment(cfg: ExperimentConfig, data: Dataset | None = None) -> ExperimentResult:
    """Run every configured source/fusion combination over all repeats."""
    if data is None:
        data = load_experiment_dataset(cfg)
    splits = _splits(cfg, data)
    textual_kinds = sorted({t for _, t in cfg.pairs})
    rows: dict = {}

    def row(level, classifier, method):
        key = (level, classifier, method)
        if key not in rows:
            rows[key] = MetricReport(level, classifier, method)
        return rows[key]

    n_classes = data.n_classes
    for r, (train_idx, test_idx) in enumerate(splits):
        log.info("repeat %d/%d: %d train, %d test", r + 1, len(splits), len(train_idx), len(test_idx))
        codebook = None
        if data.multilabel:
            codebook, y_train = powerset_encode([data.label_sets[i] for i in train_idx])
            y_train = np.asarray(y_train)
            n_classes = len(codebook)
            y_test = np.asarray([_encode_or_unknown(codebook, data.label_sets[i]) for i in test_idx])
        else:
            y_train = data.labels[train_idx]
            y_test = data.labels[test_idx]
        scorer = _Scorer(data, test_idx, y_test, codebook, n_classes)

        kept, held = stratified_holdout(y_train, cfg.validation_fraction, _derive_seed(cfg.seed, 2, r))
        fit_idx, val_idx = train_idx[kept], train_idx[held]
        y_fit, y_val = y_train[kept], y_train[held]
        prior = (fusion.empirical_prior(y_train, n_classes) if cfg.prior == "empirical"
                 else fusion.uniform_prior(n_classes))

        posts = {}
        vis = _fit_forest(data.features[fit_idx], y_fit, n_classes, cfg, _derive_seed(cfg.seed, 3, r))
        posts["visual", "rf"] = (vis.predict_proba(data.features[val_idx]), vis.predict_proba(data.features[test_idx]))
        for k, kind in enumerate(textual_kinds):
            model = _fit_textual(kind, data.answers[fit_idx], y_fit, n_classes, cfg, _derive_seed(cfg.seed, 4, r, k))
            posts["textual", kind] = (model.predict_proba(data.answers[val_idx]),
                                      model.predict_proba(data.answers[test_idx]))
        for (level, kind), (_, p_test) in sorted(posts.items()):
            scorer.score(row(level, kind.upper(), "solo"), p_test.argmax(axis=1))

        if "concat" in cfg.methods:
            U = fusion.concat_features(data.features, data.answers)
            cat = _fit_forest(U[train_idx], y_train, n_classes, cfg, _derive_seed(cfg.seed, 5, r))
            scorer.score(row("input", "RF", "concat"), cat.predict_proba(U[test_idx]).argmax(axis=1))

        for v_kind, t_kind in cfg.pairs:
            name = f"{v_kind.upper()}+{t_kind.upper()}"
            px_val, px_test = posts["visual", v_kind]
            ps_val, ps_test = posts["textual", t_kind]
            if "equal_weight" in cfg.methods:
                _, pred = fusion.fuse_batch(px_test, ps_test, prior, "equal_weight")
                scorer.score(row("output", name, "equal_weight"), pred)
            if "greedy" in cfg.methods:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    table = fusion.learn_thresholds(px_val, ps_val, y_val, n_classes)
                _, pred = fusion.fuse_batch(px_test, ps_test, prior, "modified_nb", table)
                scorer.score(row("output", name, "greedy"), pred)
            if "neural_net" in cfg.methods:
                net_seed = _derive_seed(cfg.seed, 6, r)
                hidden = tuple(cfg.net.get("hidden", (None, None)))
                net = neural.init_net(n_classes, hidden, seed=net_seed)
                X_val = np.hstack([px_val, ps_val])
                res = neural.train_scg(net, X_val, neural.encode_targets(y_val, n_classes),
                                       _train_config(cfg, net_seed))
                scorer.score(row("output", name, "neural_net"), neural.nn_fuse_decision(res.net, px_test, ps_test))

    return ExperimentResult(list(rows.values()), cfg.split["kind"], len(splits), data.multilabel, data.name,
                            n_classes if not data.multilabel else data.n_classes)


def _encode_or_unknown(codebook: PowersetCodebook, labelset) -> int:
    try:
        return codebook.encode(labelset)
    except UnknownLabelError:
        return -1


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

_LEVEL_ORDER = {"visual": 0, "textual": 1, "input": 2, "output": 3}
_METHOD_ORDER = {"solo": 0, "concat": 1, "equal_weight": 2, "greedy": 3, "neural_net": 4}


def _sorted_rows(result: ExperimentResult):
    return sorted(result.rows, key=lambda r: (_LEVEL_ORDER[r.level], r.classifier, _METHOD_ORDER[r.method]))


def _stats(values):
    if not values:
        return ["", "", "", ""]
    a = np.asarray(values)
    return [repr(float(a.mean())), repr(float(a.std())), repr(float(a.min())), repr(float(a.max()))]


def write_report(result: ExperimentResult, out_dir: str) -> list[str]:
    """Write ``report.csv``, ``per_repeat.csv`` and ``report.txt``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, n) for n in ("report.csv", "per_repeat.csv", "report.txt")]
    metrics = ["accuracy", "macro_accuracy"] + (["hamming_accuracy", "exact_match"] if result.multilabel else [])
    with open(paths[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["level", "classifier", "method", "n_repeats"]
        for m in metrics:
            header += [f"{m}_mean", f"{m}_std", f"{m}_min", f"{m}_max"]
        w.writerow(header)
        for r in _sorted_rows(result):
            line = [r.level, r.classifier, r.method, len(r.accuracy)]
            for m in metrics:
                line += _stats(getattr(r, m))
            w.writerow(line)
    with open(paths[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["level", "classifier", "method", "repeat"] + metrics)
        for r in _sorted_rows(result):
            for i in range(len(r.accuracy)):
                w.writerow([r.level, r.classifier, r.method, i] + [repr(float(getattr(r, m)[i])) for m in metrics])
    with open(paths[2], "w") as fh:
        fh.write(render_table(result))
    return paths


def _cell(r: MetricReport, multilabel: bool) -> str:
    if multilabel:
        return (f"{100 * np.mean(r.hamming_accuracy):.2f}% ({100 * np.mean(r.exact_match):.2f}%)")
    return f"{100 * r.mean_accuracy:.2f}% +/- {100 * r.std_accuracy:.2f}"


def _aligned(rows) -> list[str]:
    widths = [max(len(str(row[i])) for row in rows) for i in range(len(rows[0]))]
    return ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]


def render_table(result: ExperimentResult) -> str:
    """Plain-text tables shaped like the usual single-source and fusion tables."""
    metric = "relaxed (strict) accuracy" if result.multilabel else "mean accuracy +/- std"
    lines = [
        f"dataset: {result.dataset_name}",
        f"split: {result.split_kind}, {result.n_repeats} repeat(s)",
        f"metric: {metric}",
        "",
    ]
    by_key = {r.key: r for r in result.rows}
    solo = [r for r in _sorted_rows(result) if r.method == "solo"]
    if solo:
        table = [["Information Source", "Classification Technique", "Mean Accuracy"]]
        for r in solo:
            table.append([f"{r.level.capitalize()} Based", r.classifier, _cell(r, result.multilabel)])
        lines += _aligned(table) + [""]
    concat = [r for r in _sorted_rows(result) if r.method == "concat"]
    if concat:
        table = [["Fusion", "Classifier", "Concatenation"]]
        for r in concat:
            table.append(["Input Level", r.classifier, _cell(r, result.multilabel)])
        lines += _aligned(table) + [""]
    pairs = sorted({r.classifier for r in result.rows if r.level == "output"})
    methods = [m for m in ("equal_weight", "greedy", "neural_net")
               if any(r.method == m for r in result.rows)]
    if pairs and methods:
        table = [["Fusion", "Classifier"] + [METHOD_TITLES[m] for m in methods]]
        for p in pairs:
            cells = []
            for m in methods:
                r = by_key.get(("output", p, m))
                cells.append(_cell(r, result.multilabel) if r else "-")
            table.append(["Output Level", p] + cells)
        lines += _aligned(table) + [""]
    return "\n".join(lines)


def read_report(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
