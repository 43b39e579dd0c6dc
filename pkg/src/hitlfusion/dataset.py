"""Data model, file ingestion, certainty encoding and splitting.

A dataset holds, for every sample, a continuous visual feature vector, a
vector of user answers drawn from a six-symbol certainty alphabet, and a
class label (or, for multilabel data, a set of atomic labels that is later
mapped to a single class by the label powerset transform).

On disk a dataset is a JSON manifest next to headerless CSV tables::

    {
      "schema_version": 1,
      "name": "birds",
      "n_classes": 3,            # atomic label count when multilabel
      "n_tags": 4,
      "feature_dim": 2,
      "multilabel": false,
      "files": {"features": "features.csv",
                "answers": "answers.csv",
                "labels": "labels.csv",
                "ids": "ids.csv"},        # optional
      "label_names": ["a", "b", "c"]
    }

``features.csv`` and ``answers.csv`` hold one row per sample with a fixed
column count. ``labels.csv`` holds one integer per row, or space-separated
atomic indices per row for multilabel data.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1

#: Certainty alphabet in ascending order; symbol index k (1-based) maps to
#: ``CERTAINTY_VALUES[k - 1]``.
CERTAINTY_VALUES = (0.0, 0.25, 0.375, 0.625, 0.75, 1.0)
K = len(CERTAINTY_VALUES)

_ALPHABET = np.asarray(CERTAINTY_VALUES)


class Polarity(str, enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


class Confidence(str, enum.Enum):
    GUESSING = "guessing"
    PROBABLY = "probably"
    DEFINITELY = "definitely"


_CERTAINTY_TABLE = {
    (Polarity.POSITIVE, Confidence.GUESSING): 0.625,
    (Polarity.POSITIVE, Confidence.PROBABLY): 0.75,
    (Polarity.POSITIVE, Confidence.DEFINITELY): 1.0,
    (Polarity.NEGATIVE, Confidence.GUESSING): 0.375,
    (Polarity.NEGATIVE, Confidence.PROBABLY): 0.25,
    (Polarity.NEGATIVE, Confidence.DEFINITELY): 0.0,
}


class DatasetError(ValueError):
    """Malformed dataset input; the message names the sample and field."""


class UnknownLabelError(LookupError):
    pass


def certainty_encode(polarity, confidence) -> float:
    """Map an answer's polarity and confidence to its certainty value."""
    return _CERTAINTY_TABLE[(Polarity(polarity), Confidence(confidence))]


def symbol_index(value: float) -> int:
    """Return the 1-based alphabet index of a certainty value."""
    return int(symbols_from_values(np.asarray([value]))[0]) + 1


def symbols_from_values(values) -> np.ndarray:
    """Convert certainty values to 0-based symbol codes (``index - 1``).

    Raises ``ValueError`` when any value lies outside the alphabet.
    """
    values = np.asarray(values, dtype=float)
    dist = np.abs(values[..., None] - _ALPHABET)
    codes = dist.argmin(axis=-1)
    bad = dist.min(axis=-1) > 1e-9
    if np.any(bad):
        first = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"value {values[first]!r} at {first} is not a certainty symbol")
    return codes.astype(np.int64)


def values_from_symbols(codes) -> np.ndarray:
    return _ALPHABET[np.asarray(codes, dtype=np.int64)]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of samples.

    ``labels`` holds class indices for single-label data. For multilabel data
    ``label_sets`` holds one sorted tuple of atomic indices per sample and
    ``labels`` is ``None`` until a powerset codebook is applied.
    """

    name: str
    features: np.ndarray
    answers: np.ndarray
    labels: np.ndarray | None
    label_names: tuple[str, ...]
    ids: tuple[str, ...]
    label_sets: tuple[tuple[int, ...], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "features", _freeze(np.asarray(self.features, dtype=float)))
        object.__setattr__(self, "answers", _freeze(np.asarray(self.answers, dtype=float)))
        if self.labels is not None:
            object.__setattr__(self, "labels", _freeze(np.asarray(self.labels, dtype=np.int64)))
        n = self.features.shape[0]
        if self.answers.shape[0] != n or len(self.ids) != n:
            raise DatasetError("features, answers and ids disagree on sample count")
        if self.labels is None and self.label_sets is None:
            raise DatasetError("dataset has neither labels nor label sets")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def n_tags(self) -> int:
        return self.answers.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    @property
    def multilabel(self) -> bool:
        return self.label_sets is not None

    @property
    def symbols(self) -> np.ndarray:
        """0-based symbol codes of the answers, shape ``(n, T)``."""
        return symbols_from_values(self.answers)

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            name=self.name,
            features=self.features[idx],
            answers=self.answers[idx],
            labels=None if self.labels is None else self.labels[idx],
            label_names=self.label_names,
            ids=tuple(self.ids[i] for i in idx),
            label_sets=None if self.label_sets is None else tuple(self.label_sets[i] for i in idx),
        )


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _read_rows(path: str) -> list[list[str]]:
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row]


def _numeric_table(path, ids, width, field_name):
    rows = _read_rows(path)
    if len(rows) != len(ids):
        raise DatasetError(f"{field_name}: {len(rows)} rows in {path}, expected {len(ids)}")
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DatasetError(
                f"sample {ids[i]}: field {field_name} has {len(row)} columns, expected {width}"
            )
        try:
            out[i] = [float(v) for v in row]
        except ValueError as exc:
            raise DatasetError(f"sample {ids[i]}: field {field_name}: {exc}") from None
        if not np.all(np.isfinite(out[i])):
            raise DatasetError(f"sample {ids[i]}: field {field_name} has non-finite entries")
    return out


def load_dataset(manifest_path: str) -> Dataset:
    """Load a dataset from its JSON manifest, validating every sample."""
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(manifest_path)
    with open(manifest_path) as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{manifest_path}: invalid JSON ({exc})") from None
    for key in ("name", "n_classes", "n_tags", "feature_dim", "files", "label_names"):
        if key not in manifest:
            raise DatasetError(f"{manifest_path}: manifest lacks '{key}'")
    base = os.path.dirname(os.path.abspath(manifest_path))
    files = manifest["files"]
    paths = {}
    for key in ("features", "answers", "labels"):
        if key not in files:
            raise DatasetError(f"{manifest_path}: files lacks '{key}'")
        paths[key] = os.path.join(base, files[key])
        if not os.path.exists(paths[key]):
            raise FileNotFoundError(paths[key])

    n_classes = int(manifest["n_classes"])
    label_names = tuple(str(s) for s in manifest["label_names"])
    if len(label_names) != n_classes or len(set(label_names)) != n_classes:
        raise DatasetError(f"{manifest_path}: label_names must be {n_classes} distinct names")
    multilabel = bool(manifest.get("multilabel", False))

    label_rows = _read_rows(paths["labels"])
    if "ids" in files:
        ids = tuple(r[0] for r in _read_rows(os.path.join(base, files["ids"])))
        if len(ids) != len(label_rows):
            raise DatasetError("ids: row count differs from labels")
    else:
        ids = tuple(str(i) for i in range(len(label_rows)))

    features = _numeric_table(paths["features"], ids, int(manifest["feature_dim"]), "features")
    answers = _numeric_table(paths["answers"], ids, int(manifest["n_tags"]), "answers")
    for i, row in enumerate(answers):
        try:
            symbols_from_values(row)
        except ValueError as exc:
            raise DatasetError(f"sample {ids[i]}: field answers: {exc}") from None

    labels = None
    label_sets = None
    parsed = []
    for i, row in enumerate(label_rows):
        try:
            members = [int(tok) for tok in " ".join(row).split()]
        except ValueError:
            raise DatasetError(f"sample {ids[i]}: field labels is not integer") from None
        if not members or (not multilabel and len(members) != 1):
            raise DatasetError(f"sample {ids[i]}: field labels has {len(members)} entries")
        for m in members:
            if not 0 <= m < n_classes:
                raise DatasetError(f"sample {ids[i]}: field labels index {m} out of range [0, {n_classes})")
        parsed.append(tuple(sorted(set(members))))
    if multilabel:
        label_sets = tuple(parsed)
    else:
        labels = np.asarray([p[0] for p in parsed], dtype=np.int64)

    return Dataset(
        name=str(manifest["name"]),
        features=features,
        answers=answers,
        labels=labels,
        label_names=label_names,
        ids=ids,
        label_sets=label_sets,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(dataset: Dataset, out_dir: str, manifest_name: str = "manifest.json") -> str:
    """Write ``dataset`` under ``out_dir`` and return the manifest path.

    Floats are written with ``repr`` so that load/write round trips are
    bit-exact.
    """
    os.makedirs(out_dir, exist_ok=True)
    files = {"features": "features.csv", "answers": "answers.csv", "labels": "labels.csv", "ids": "ids.csv"}
    with open(os.path.join(out_dir, files["features"]), "w", newline="") as fh:
        for row in dataset.features:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    with open(os.path.join(out_dir, files["answers"]), "w", newline="") as fh:
        for row in dataset.answers:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    with open(os.path.join(out_dir, files["labels"]), "w", newline="") as fh:
        if dataset.multilabel:
            for s in dataset.label_sets:
                fh.write(" ".join(str(m) for m in s) + "\n")
        else:
            for c in dataset.labels:
                fh.write(f"{int(c)}\n")
    with open(os.path.join(out_dir, files["ids"]), "w", newline="") as fh:
        for sid in dataset.ids:
            fh.write(f"{sid}\n")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "name": dataset.name,
        "n_classes": dataset.n_classes,
        "n_tags": dataset.n_tags,
        "feature_dim": dataset.feature_dim,
        "multilabel": dataset.multilabel,
        "files": files,
        "label_names": list(dataset.label_names),
    }
    path = os.path.join(out_dir, manifest_name)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Label powerset
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowersetCodebook:
    """Bijection between observed label combinations and dense class indices."""

    combos: tuple[tuple[int, ...], ...]
    combo_to_class: dict = field(compare=False, repr=False)

    @classmethod
    def from_combos(cls, combos: Iterable[tuple[int, ...]]) -> "PowersetCodebook":
        combos = tuple(combos)
        return cls(combos, {c: i for i, c in enumerate(combos)})

    def __len__(self) -> int:
        return len(self.combos)

    def encode(self, labelset) -> int:
        key = _canonical(labelset)
        try:
            return self.combo_to_class[key]
        except KeyError:
            raise UnknownLabelError(f"label combination {key} not in codebook") from None

    def decode(self, label: int) -> tuple[int, ...]:
        if not 0 <= int(label) < len(self.combos):
            raise UnknownLabelError(f"class {label} not in codebook of size {len(self.combos)}")
        return self.combos[int(label)]

    def names(self, atomic_names: Sequence[str] | None = None) -> list[str]:
        if atomic_names is None:
            return ["+".join(str(m) for m in c) for c in self.combos]
        return ["+".join(atomic_names[m] for m in c) for c in self.combos]


def _canonical(labelset) -> tuple[int, ...]:
    members = tuple(sorted({int(m) for m in labelset}))
    if not members:
        raise ValueError("empty label set")
    return members


def powerset_encode(labelsets: Sequence) -> tuple[PowersetCodebook, list[int]]:
    """Map each distinct label combination to its own class index.

    Class indices follow the lexicographic order of the canonical (sorted)
    combinations, so the codebook does not depend on row order.
    """
    canon = [_canonical(s) for s in labelsets]
    book = PowersetCodebook.from_combos(sorted(set(canon)))
    return book, [book.combo_to_class[c] for c in canon]


def powerset_decode(codebook: PowersetCodebook, label: int) -> tuple[int, ...]:
    return codebook.decode(label)


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def _labels_of(data) -> np.ndarray:
    if isinstance(data, Dataset):
        if data.labels is None:
            raise DatasetError("stratified splits need single-label classes; powerset-encode first")
        return np.asarray(data.labels)
    return np.asarray(data, dtype=np.int64)


def repeated_subsample_splits(data, repeats: int, train_per_class: int, seed: int):
    """Repeated random sub-sampling: per repeat, ``train_per_class`` training
    samples from every class and the remainder as test.

    ``data`` is a :class:`Dataset` or an array of class labels. Returns a list
    of ``(train_idx, test_idx)`` pairs of sorted index arrays.
    """
    labels = _labels_of(data)
    if repeats < 1 or train_per_class < 1:
        raise ValueError("repeats and train_per_class must be >= 1")
    classes = np.unique(labels)
    for c in classes:
        n_c = int(np.sum(labels == c))
        if n_c <= train_per_class:
            raise DatasetError(f"class {c} has {n_c} samples; needs more than {train_per_class}")
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(repeats):
        train = []
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            train.append(idx[:train_per_class])
        train = np.sort(np.concatenate(train))
        test = np.setdiff1d(np.arange(len(labels)), train)
        splits.append((train, test))
    return splits


def random_fraction_splits(n_samples: int, repeats: int, train_fraction: float, seed: int):
    """Unstratified repeated splits, used for multilabel data where most label
    combinations are too rare to stratify."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n_train = int(round(train_fraction * n_samples))
    splits = []
    for _ in range(repeats):
        perm = rng.permutation(n_samples)
        splits.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return splits


def stratified_holdout(labels, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Split positions ``0..n-1`` into (kept, held-out) with about ``fraction``
    of every class held out. Singleton classes stay in the kept part."""
    labels = np.asarray(labels)
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    held = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_held = min(int(round(fraction * len(idx))), len(idx) - 1)
        held.append(idx[:n_held])
    held = np.sort(np.concatenate(held)) if held else np.empty(0, dtype=np.int64)
    kept = np.setdiff1d(np.arange(len(labels)), held)
    return kept, held


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


@dataclass
class SynthSpec:
    """Generator configuration.

    Answers: each class owns a binary presence pattern over its informative
    tags. A sample's answer to tag t has the pattern's polarity, flipped with
    probability ``answer_noise``, and a confidence drawn uniformly from the
    three levels. Non-informative tags (and every tag when
    ``answer_mode == "uniform"``) get a fair-coin polarity regardless of class.

    Features: class means ~ N(0, feature_sep^2) on the first
    ``informative_dims`` coordinates (zero elsewhere); samples add
    N(0, feature_scale^2) noise. ``feature_sep = 0`` gives pure noise.

    With ``n_atomic`` set, the data is multilabel: each of the ``n_classes``
    classes is a distinct random combination of at most ``max_labels`` atomic
    labels, and samples carry that combination as their label set.
    """

    n_classes: int
    n_tags: int
    feature_dim: int
    samples_per_class: int
    name: str = "synth"
    answer_mode: str = "pattern"
    answer_noise: float = 0.1
    informative_tags: int | None = None
    feature_sep: float = 1.0
    feature_scale: float = 1.0
    informative_dims: int | None = None
    n_atomic: int | None = None
    max_labels: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth spec fields: {sorted(unknown)}")
        spec = cls(**d)
        spec.validate()
        return spec

    def validate(self):
        if self.n_classes < 1 or self.n_tags < 0 or self.feature_dim < 1 or self.samples_per_class < 1:
            raise ValueError("n_classes, feature_dim, samples_per_class must be >= 1 and n_tags >= 0")
        if self.answer_mode not in ("pattern", "uniform"):
            raise ValueError(f"answer_mode must be 'pattern' or 'uniform', got {self.answer_mode!r}")
        if not 0.0 <= self.answer_noise <= 1.0:
            raise ValueError("answer_noise must lie in [0, 1]")
        if self.feature_scale <= 0:
            raise ValueError("feature_scale must be > 0")
        if self.feature_sep < 0:
            raise ValueError("feature_sep must be >= 0")
        n_inf = self.n_tags if self.informative_tags is None else self.informative_tags
        if not 0 <= n_inf <= self.n_tags:
            raise ValueError("informative_tags must lie in [0, n_tags]")
        if self.answer_mode == "pattern" and 2**n_inf < self.n_classes:
            raise ValueError(f"{n_inf} informative tags cannot give {self.n_classes} distinct patterns")
        dims = self.feature_dim if self.informative_dims is None else self.informative_dims
        if not 0 <= dims <= self.feature_dim:
            raise ValueError("informative_dims must lie in [0, feature_dim]")
        if self.n_atomic is not None:
            n_combos = sum(math.comb(self.n_atomic, k) for k in range(1, min(self.max_labels, self.n_atomic) + 1))
            if n_combos < self.n_classes:
                raise ValueError("not enough distinct label combinations for n_classes")


def _distinct_patterns(rng, n_classes, n_bits):
    chosen = rng.choice(2**n_bits, size=n_classes, replace=False)
    return ((chosen[:, None] >> np.arange(n_bits)) & 1).astype(bool)


def synth_generate(spec, seed: int) -> Dataset:
    """Generate a dataset whose sources are conditionally independent given
    the class. Deterministic in ``(spec, seed)``."""
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    spec.validate()
    rng = np.random.default_rng(seed)
    C, T, d = spec.n_classes, spec.n_tags, spec.feature_dim
    n_inf = T if spec.informative_tags is None else spec.informative_tags
    if spec.answer_mode == "uniform":
        n_inf = 0
    dims = d if spec.informative_dims is None else spec.informative_dims

    patterns = _distinct_patterns(rng, C, n_inf) if n_inf else np.zeros((C, 0), dtype=bool)
    means = np.zeros((C, d))
    means[:, :dims] = rng.normal(0.0, 1.0, size=(C, dims)) * spec.feature_sep

    labels = np.repeat(np.arange(C), spec.samples_per_class)
    n = labels.size
    features = means[labels] + rng.normal(0.0, spec.feature_scale, size=(n, d))

    polarity = rng.random((n, T)) < 0.5
    if n_inf:
        flips = rng.random((n, n_inf)) < spec.answer_noise
        polarity[:, :n_inf] = patterns[labels] ^ flips
    confidence = rng.integers(0, 3, size=(n, T))
    # codes 0..2 are negative (definitely, probably, guessing); 3..5 positive
    codes = np.where(polarity, 3 + confidence, 2 - confidence)
    answers = values_from_symbols(codes)

    if spec.n_atomic is None:
        label_names = tuple(f"class{c}" for c in range(C))
        return Dataset(spec.name, features, answers, labels, label_names,
                       tuple(str(i) for i in range(n)))

    combos = _random_combos(rng, C, spec.n_atomic, spec.max_labels)
    label_sets = tuple(combos[c] for c in labels)
    label_names = tuple(f"label{a}" for a in range(spec.n_atomic))
    return Dataset(spec.name, features, answers, None, label_names,
                   tuple(str(i) for i in range(n)), label_sets=label_sets)


def _random_combos(rng, n, n_atomic, max_labels):
    seen = []
    seen_set = set()
    while len(seen) < n:
        size = int(rng.integers(1, min(max_labels, n_atomic) + 1))
        combo = tuple(sorted(int(a) for a in rng.choice(n_atomic, size=size, replace=False)))
        if combo not in seen_set:
            seen_set.add(combo)
            seen.append(combo)
    return seen
