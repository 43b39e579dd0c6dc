"""Command-line entry point.

Each stage reads and writes files so that posterior matrices can be
inspected between stages::

    hitlfusion synth --spec s.json --seed 1 --out data/
    hitlfusion fit --data data/manifest.json --classifier rf --source features --seed 1 --out models/
    hitlfusion predict --model models/model.json --data data/manifest.json --out post_x/
    hitlfusion grid-thresholds --px px.csv --ps ps.csv --labels labels.csv --out thr/
    hitlfusion fuse --method modified-nb --px px.csv --ps ps.csv --thresholds thr/thresholds.json --out fused/
    hitlfusion train-net --px px.csv --ps ps.csv --labels labels.csv --seed 1 --out net/
    hitlfusion eval --config experiment.json --seed 7 --out results/
    hitlfusion report --results results/

Exit codes: 0 success, 1 unexpected error, 2 usage error, 3 missing file,
4 invalid input (schema or data), 5 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import bayes, evaluate, forest, fusion, neural
from .dataset import DatasetError, SynthSpec, load_dataset, synth_generate, write_dataset

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_INVALID = 4
EXIT_NUMERIC = 5

SOURCES = ("features", "answers", "concat")


class UsageError(Exception):
    pass


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def _read_int_column(path) -> np.ndarray:
    with open(path) as fh:
        try:
            return np.asarray([int(line.split(",")[0]) for line in fh if line.strip()], dtype=np.int64)
        except ValueError:
            raise ValueError(f"{path}: expected one integer per line") from None


def _source_matrix(data, source):
    if source == "features":
        return data.features
    if source == "answers":
        return data.answers
    return fusion.concat_features(data.features, data.answers)


def _rows(data, indices_path):
    if indices_path is None:
        return np.arange(data.n_samples)
    idx = _read_int_column(indices_path)
    if idx.size and (idx.min() < 0 or idx.max() >= data.n_samples):
        raise ValueError(f"{indices_path}: index out of range")
    return idx


def cmd_synth(args):
    spec = SynthSpec.from_dict(_read_json(args.spec))
    path = write_dataset(synth_generate(spec, args.seed), args.out)
    print(path)


def cmd_fit(args):
    data = load_dataset(args.data)
    if data.multilabel:
        raise ValueError("fit needs single-label data; the eval harness handles multilabel datasets")
    hyper = _read_json(args.config) if args.config else {}
    rows = _rows(data, args.indices)
    X = _source_matrix(data, args.source)[rows]
    y = data.labels[rows]
    if args.classifier == "rf":
        model = forest.forest_fit(X, y, n_trees=int(hyper.get("n_trees", 1000)), mtry=hyper.get("mtry"),
                                  min_leaf=int(hyper.get("min_leaf", 1)), seed=args.seed,
                                  n_classes=data.n_classes, threads=args.threads)
    else:
        if args.source != "answers":
            raise UsageError(f"{args.classifier} models answers only; use --source answers")
        if args.classifier == "rnb":
            model = bayes.rnb_fit(X, y, n_bags=int(hyper.get("n_bags", 1000)), n_features=hyper.get("n_features"),
                                  smoothing=float(hyper.get("smoothing", 1.0)), seed=args.seed,
                                  n_classes=data.n_classes)
        else:
            model = bayes.nb_fit(X, y, n_classes=data.n_classes, smoothing=float(hyper.get("smoothing", 1.0)))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "model.json")
    _write_json(path, {"source": args.source, "label_names": list(data.label_names), "model": model.to_dict()})
    print(path)


def load_model(path):
    doc = _read_json(path)
    kind = doc["model"]["kind"]
    cls = {"forest": forest.Forest, "rnb": bayes.RnbEnsemble, "multinomial_nb": bayes.MultinomialNb}.get(kind)
    if cls is None:
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    return doc["source"], doc["label_names"], cls.from_dict(doc["model"])


def cmd_predict(args):
    source, names, model = load_model(args.model)
    data = load_dataset(args.data)
    rows = _rows(data, args.indices)
    post = model.predict_proba(_source_matrix(data, source)[rows])
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "posteriors.csv")
    fusion.write_posteriors(path, post, names)
    print(path)


def _posterior_pair(args):
    px, names_x = fusion.read_posteriors(args.px)
    ps, names_s = fusion.read_posteriors(args.ps)
    if names_x != names_s:
        raise ValueError("the two posterior files have different class headers")
    if px.shape != ps.shape:
        raise ValueError(f"posterior files differ in shape: {px.shape} vs {ps.shape}")
    return px, ps, names_x


def _labels_for(args, n_rows, n_classes):
    y = _read_int_column(args.labels)
    if y.size != n_rows:
        raise ValueError(f"{args.labels}: {y.size} labels for {n_rows} posterior rows")
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"{args.labels}: label index out of range")
    return y


def cmd_fuse(args):
    method = args.method.replace("-", "_")
    if method == "concat":
        raise UsageError("concat is input-level fusion of raw features; use `fit --source concat` then `predict`")
    px, ps, names = _posterior_pair(args)
    n = len(names)
    if args.prior_labels:
        prior = fusion.empirical_prior(_read_int_column(args.prior_labels), n)
    else:
        prior = fusion.uniform_prior(n)
    if method == "modified_nb":
        if not args.thresholds:
            raise UsageError("--method modified-nb requires --thresholds")
        fused, pred = fusion.fuse_batch(px, ps, prior, method, fusion.read_thresholds(args.thresholds, names))
    elif method == "neural_net":
        if not args.model:
            raise UsageError("--method neural-net requires --model")
        net = neural.load_net(args.model)
        fused = neural.nn_fuse(net, px, ps)
        pred = fused.argmax(axis=1)
    else:
        fused, pred = fusion.fuse_batch(px, ps, prior, method)
    os.makedirs(args.out, exist_ok=True)
    fusion.write_posteriors(os.path.join(args.out, "fused.csv"), fused, names)
    with open(os.path.join(args.out, "predictions.csv"), "w") as fh:
        fh.writelines(f"{int(c)}\n" for c in pred)
    print(os.path.join(args.out, "fused.csv"))


def cmd_grid_thresholds(args):
    px, ps, names = _posterior_pair(args)
    y = _labels_for(args, px.shape[0], len(names))
    table = fusion.learn_thresholds(px, ps, y, len(names))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "thresholds.json")
    fusion.write_thresholds(path, table, names)
    print(path)


def cmd_train_net(args):
    px, ps, names = _posterior_pair(args)
    n = len(names)
    y = _labels_for(args, px.shape[0], n)
    hyper = _read_json(args.config) if args.config else {}
    net = neural.init_net(n, tuple(hyper.get("hidden", (None, None))), seed=args.seed)
    config = neural.TrainConfig(
        max_epochs=int(hyper.get("max_epochs", 1000)),
        validation_fraction=float(hyper.get("validation_fraction", 0.2)),
        patience=int(hyper.get("patience", 50)),
        grad_tol=float(hyper.get("grad_tol", 1e-6)),
        seed=args.seed,
    )
    result = neural.train_scg(net, np.hstack([px, ps]), neural.encode_targets(y, n), config)
    os.makedirs(args.out, exist_ok=True)
    neural.save_net(os.path.join(args.out, "net.json"), result.net)
    neural.write_trace(os.path.join(args.out, "loss_trace.csv"), result.trace)
    print(os.path.join(args.out, "net.json"))


def cmd_eval(args):
    cfg = evaluate.ExperimentConfig.load(args.config, args.seed, threads=args.threads)
    result = evaluate.run_experiment(cfg)
    paths = evaluate.write_report(result, args.out)
    with open(paths[2]) as fh:
        sys.stdout.write(fh.read())


def cmd_report(args):
    rows = evaluate.read_report(os.path.join(args.results, "report.csv"))
    table = [["level", "classifier", "method", "n", "accuracy"]]
    for r in rows:
        acc = f"{100 * float(r['accuracy_mean']):.2f}% +/- {100 * float(r['accuracy_std']):.2f}"
        if r.get("hamming_accuracy_mean"):
            acc += (f"  relaxed {100 * float(r['hamming_accuracy_mean']):.2f}%"
                    f"  strict {100 * float(r['exact_match_mean']):.2f}%")
        table.append([r["level"], r["classifier"], r["method"], r["n_repeats"], acc])
    text = "\n".join(evaluate._aligned(table)) + "\n"
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "summary.txt"), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hitlfusion", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help, seed=False, out=True):
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        if seed:
            p.add_argument("--seed", type=int, required=True, help="random seed (required)")
        if out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="cap on worker threads (default: all cores)")
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset", seed=True)
    p.add_argument("--spec", required=True, help="generator spec (JSON)")

    p = add("fit", cmd_fit, "fit a source classifier", seed=True)
    p.add_argument("--data", required=True, help="dataset manifest")
    p.add_argument("--classifier", choices=("rf", "rnb", "nb"), required=True)
    p.add_argument("--source", choices=SOURCES, required=True)
    p.add_argument("--config", help="hyperparameters (JSON)")
    p.add_argument("--indices", help="CSV of sample row indices to train on")

    p = add("predict", cmd_predict, "write class posteriors of a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--indices", help="CSV of sample row indices to predict")

    def pair_args(p):
        p.add_argument("--px", required=True, help="visual-source posterior CSV")
        p.add_argument("--ps", required=True, help="answer-source posterior CSV")

    p = add("fuse", cmd_fuse, "fuse two posterior files")
    pair_args(p)
    p.add_argument("--method", required=True, choices=("equal-weight", "modified-nb", "neural-net", "concat"))
    p.add_argument("--thresholds", help="threshold table (modified-nb)")
    p.add_argument("--model", help="fusion network (neural-net)")
    p.add_argument("--prior-labels", help="training labels for an empirical prior (default: uniform prior)")

    p = add("grid-thresholds", cmd_grid_thresholds, "grid-search per-class fusion thresholds")
    pair_args(p)
    p.add_argument("--labels", required=True, help="true labels, one integer per line")

    p = add("train-net", cmd_train_net, "train the fusion network", seed=True)
    pair_args(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--config", help="network/training settings (JSON)")

    p = add("eval", cmd_eval, "run the repeated-split experiment", seed=True)
    p.add_argument("--config", required=True, help="experiment config (JSON)")

    p = add("report", cmd_report, "summarise an eval results directory", out=False)
    p.add_argument("--results", required=True)
    p.add_argument("--out", help="also write summary.txt here")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    warnings.showwarning = lambda msg, *a, **k: print(f"hitlfusion {args.command}: warning: {msg}", file=sys.stderr)
    try:
        args.func(args)
    except UsageError as exc:
        print(f"hitlfusion {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"hitlfusion {args.command}: missing file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except FloatingPointError as exc:
        print(f"hitlfusion {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, evaluate.ConfigError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"hitlfusion {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"hitlfusion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
