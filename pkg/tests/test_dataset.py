import json
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hitlfusion.dataset import (
    CERTAINTY_VALUES,
    Dataset,
    DatasetError,
    PowersetCodebook,
    SynthSpec,
    UnknownLabelError,
    certainty_encode,
    load_dataset,
    powerset_decode,
    powerset_encode,
    random_fraction_splits,
    repeated_subsample_splits,
    stratified_holdout,
    symbol_index,
    symbols_from_values,
    synth_generate,
    values_from_symbols,
    write_dataset,
)


def _write_manifest(tmp_path, features, answers, labels, n_classes=2, multilabel=False):
    d = tmp_path
    with open(d / "f.csv", "w") as fh:
        fh.writelines(",".join(map(str, r)) + "\n" for r in features)
    with open(d / "a.csv", "w") as fh:
        fh.writelines(",".join(map(str, r)) + "\n" for r in answers)
    with open(d / "l.csv", "w") as fh:
        fh.writelines(" ".join(map(str, np.atleast_1d(r))) + "\n" for r in labels)
    manifest = {
        "schema_version": 1, "name": "toy", "n_classes": n_classes, "n_tags": len(answers[0]),
        "feature_dim": len(features[0]), "multilabel": multilabel,
        "files": {"features": "f.csv", "answers": "a.csv", "labels": "l.csv"},
        "label_names": [f"c{i}" for i in range(n_classes)],
    }
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest))
    return str(path)


class TestCertainty:
    def test_table_values(self):
        assert certainty_encode("positive", "definitely") == 1.0
        assert certainty_encode("negative", "guessing") == 0.375
        assert certainty_encode("positive", "guessing") == 0.625
        assert certainty_encode("positive", "probably") == 0.75
        assert certainty_encode("negative", "probably") == 0.25
        assert certainty_encode("negative", "definitely") == 0.0

    def test_alphabet(self):
        assert CERTAINTY_VALUES == (0.0, 0.25, 0.375, 0.625, 0.75, 1.0)
        assert [symbol_index(v) for v in CERTAINTY_VALUES] == [1, 2, 3, 4, 5, 6]

    def test_round_trip(self):
        codes = np.arange(6)
        np.testing.assert_array_equal(symbols_from_values(values_from_symbols(codes)), codes)

    def test_off_alphabet(self):
        with pytest.raises(ValueError, match="0.5"):
            symbols_from_values([0.25, 0.5])

    def test_unknown_level(self):
        with pytest.raises(ValueError):
            certainty_encode("positive", "maybe")


class TestLoad:
    def test_three_samples(self, tmp_path):
        path = _write_manifest(tmp_path, [[0.1, 2.0], [1, 1], [3, -1]],
                               [[0.0, 1.0], [0.25, 0.75], [0.375, 0.625]], [0, 1, 1])
        data = load_dataset(path)
        assert data.n_samples == 3
        assert data.n_tags == 2 and data.feature_dim == 2
        np.testing.assert_array_equal(data.labels, [0, 1, 1])

    def test_answer_off_alphabet_names_sample(self, tmp_path):
        path = _write_manifest(tmp_path, [[0.0], [1.0]], [[0.25], [0.5]], [0, 1])
        with pytest.raises(DatasetError, match="sample 1.*answers"):
            load_dataset(path)

    def test_wide_features(self, tmp_path):
        rng = np.random.default_rng(0)
        path = _write_manifest(tmp_path, rng.normal(size=(2, 8976)).round(4).tolist(), [[1.0], [0.0]], [0, 1])
        assert load_dataset(path).feature_dim == 8976

    def test_label_out_of_range(self, tmp_path):
        path = _write_manifest(tmp_path, [[0.0], [1.0]], [[0.25], [0.75]], [0, 2])
        with pytest.raises(DatasetError, match="out of range"):
            load_dataset(path)

    def test_wrong_width(self, tmp_path):
        path = _write_manifest(tmp_path, [[0.0, 1.0], [1.0]], [[0.25], [0.75]], [0, 1])
        with pytest.raises(DatasetError, match="sample 1: field features"):
            load_dataset(path)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(str(tmp_path / "nope.json"))

    def test_multilabel(self, tmp_path):
        path = _write_manifest(tmp_path, [[0.0], [1.0]], [[0.25], [0.75]], [[2, 0], [1]], n_classes=3,
                               multilabel=True)
        data = load_dataset(path)
        assert data.labels is None
        assert data.label_sets == ((0, 2), (1,))

    def test_write_load_round_trip(self, tmp_path, small_data):
        path = write_dataset(small_data, str(tmp_path / "d"))
        back = load_dataset(path)
        np.testing.assert_array_equal(back.features, small_data.features)
        np.testing.assert_array_equal(back.answers, small_data.answers)
        np.testing.assert_array_equal(back.labels, small_data.labels)
        assert back.label_names == small_data.label_names

    def test_immutable(self, small_data):
        with pytest.raises(ValueError):
            small_data.features[0, 0] = 1.0


class TestPowerset:
    def test_two_singletons(self):
        book, codes = powerset_encode([{1}, {1}, {2}])
        assert len(book) == 2
        assert codes == [0, 0, 1]

    def test_canonical(self):
        book, codes = powerset_encode([{1, 2}, {2, 1}])
        assert len(book) == 1 and codes[0] == codes[1]

    def test_bijection(self):
        book, _ = powerset_encode([{3, 5}, {1}])
        assert powerset_decode(book, book.encode({5, 3})) == (3, 5)

    def test_unknown(self):
        book, _ = powerset_encode([{1}])
        with pytest.raises(UnknownLabelError):
            book.decode(4)
        with pytest.raises(UnknownLabelError):
            book.encode({7})

    def test_347_combinations(self):
        rng = np.random.default_rng(1)
        combos = set()
        while len(combos) < 347:
            combos.add(tuple(sorted(rng.choice(30, size=rng.integers(1, 4), replace=False).tolist())))
        sets = [set(c) for c in combos for _ in range(2)]
        rng.shuffle(sets)
        book, _ = powerset_encode(sets)
        assert len(book) == 347
        assert {book.decode(i) for i in range(len(book))} == combos

    def test_order_independent(self):
        a, _ = powerset_encode([{2}, {0, 1}, {1}])
        b, _ = powerset_encode([{1}, {2}, {1, 0}])
        assert a.combos == b.combos

    def test_names(self):
        book = PowersetCodebook.from_combos([(0,), (0, 2)])
        assert book.names(["a", "b", "c"]) == ["a", "a+c"]


class TestSplits:
    def test_count_and_determinism(self):
        labels = np.repeat(np.arange(4), 10)
        s1 = repeated_subsample_splits(labels, 5, 3, seed=9)
        s2 = repeated_subsample_splits(labels, 5, 3, seed=9)
        assert len(s1) == 5
        for (a, b), (c, d) in zip(s1, s2):
            np.testing.assert_array_equal(a, c)
            np.testing.assert_array_equal(b, d)

    def test_fifteen_per_class(self):
        labels = np.repeat(np.arange(200), 30)
        for train, test in repeated_subsample_splits(labels, 2, 15, seed=0):
            assert train.size == 3000
            assert np.all(np.bincount(labels[train]) == 15)
            assert np.intersect1d(train, test).size == 0
            assert train.size + test.size == labels.size

    def test_too_few(self):
        with pytest.raises(DatasetError):
            repeated_subsample_splits(np.array([0, 0, 1]), 1, 1, seed=0)

    def test_fraction(self):
        (train, test), = random_fraction_splits(10, 1, 0.7, seed=0)
        assert train.size == 7 and test.size == 3

    @given(st.lists(st.integers(0, 4), min_size=2, max_size=60), st.floats(0.05, 0.95), st.integers(0, 99))
    @settings(max_examples=50, deadline=None)
    def test_holdout_partition(self, labels, frac, seed):
        labels = np.array(labels)
        kept, held = stratified_holdout(labels, frac, seed)
        np.testing.assert_array_equal(np.sort(np.concatenate([kept, held])), np.arange(labels.size))
        # every class keeps at least one sample
        assert set(labels[kept]) == set(labels)


def _plugin_mi(x, y):
    mi = 0.0
    for a in np.unique(x):
        for b in np.unique(y):
            pab = np.mean((x == a) & (y == b))
            if pab > 0:
                mi += pab * np.log(pab / (np.mean(x == a) * np.mean(y == b)))
    return mi


class TestSynth:
    def test_noiseless_patterns_separate(self):
        data = synth_generate(SynthSpec(n_classes=8, n_tags=4, feature_dim=2, samples_per_class=10,
                                        answer_noise=0.0), seed=1)
        polarity = data.answers > 0.5
        keys = [tuple(r) for r in polarity]
        by_class = {}
        for k, c in zip(keys, data.labels):
            by_class.setdefault(c, set()).add(k)
        assert all(len(v) == 1 for v in by_class.values())
        assert len({next(iter(v)) for v in by_class.values()}) == 8

    def test_uniform_answers_carry_no_information(self):
        data = synth_generate(SynthSpec(n_classes=4, n_tags=3, feature_dim=2, samples_per_class=2000,
                                        answer_mode="uniform"), seed=2)
        codes = symbols_from_values(data.answers)
        for t in range(3):
            assert _plugin_mi(codes[:, t], data.labels) < 0.005

    def test_deterministic_files(self, tmp_path):
        spec = SynthSpec(n_classes=3, n_tags=2, feature_dim=3, samples_per_class=5)
        write_dataset(synth_generate(spec, 5), str(tmp_path / "a"))
        write_dataset(synth_generate(spec, 5), str(tmp_path / "b"))
        for name in os.listdir(tmp_path / "a"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_multilabel(self):
        data = synth_generate(SynthSpec(n_classes=6, n_tags=3, feature_dim=2, samples_per_class=4, n_atomic=4),
                              seed=0)
        assert data.multilabel
        assert len(set(data.label_sets)) == 6

    def test_rejects_too_few_tags(self):
        with pytest.raises(ValueError, match="distinct patterns"):
            SynthSpec.from_dict({"n_classes": 10, "n_tags": 3, "feature_dim": 2, "samples_per_class": 2})

    def test_rejects_unknown_field(self):
        with pytest.raises(ValueError, match="unknown"):
            SynthSpec.from_dict({"n_classes": 2, "n_tags": 3, "feature_dim": 2, "samples_per_class": 2, "x": 1})


def test_subset(small_data):
    sub = small_data.subset([3, 0])
    assert isinstance(sub, Dataset)
    assert sub.ids == (small_data.ids[3], small_data.ids[0])
    np.testing.assert_array_equal(sub.features[1], small_data.features[0])
