"""Command-line entry point: ``nrbm <command> ...``.

Every command prints a JSON run manifest (command, arguments, seed,
SHA-256 of each input file, results) on stdout.  Exit codes: 0 ok,
2 usage, 3 format/shape problems, 4 numeric failures.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import DataMatrix, load_dense_csv, load_idx, load_sparse_bow, write_dense_csv
from .errors import FormatError, NrbmError, UsageError
from .knn import METRICS, knn_error
from .persistence import ModelFile, export_filters, load_model, save_model
from .rbm import reconstruct
from .stability import (
    METHODS,
    LassoModel,
    classification_metrics,
    run_stability_protocol,
    write_report_csv,
    write_report_json,
)
from .train import DEFAULT_HIST_EDGES, DEFAULT_TAUS, DeadUnitConfig, TrainConfig, dead_units, hidden_posteriors, train, weight_histogram

log = logging.getLogger("nrbm")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def parse_float_list(text: str) -> list[float]:
    """``a,b,c`` or an inclusive range ``start:stop:step``."""
    text = text.strip()
    if ":" in text:
        try:
            start, stop, step = (float(p) for p in text.split(":"))
        except ValueError:
            raise UsageError(f"bad range {text!r}; expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise UsageError(f"bad range {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    try:
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise UsageError(f"bad integer list {text!r}") from None


def _infer_format(path: str) -> str:
    name = Path(path).name.lower()
    if "ubyte" in name or name.endswith(".idx"):
        return "idx"
    if name.endswith((".svm", ".bow", ".svmlight", ".libsvm")):
        return "bow"
    return "csv"


def load_data(args, path=None, require_labels=False) -> DataMatrix:
    path = path or args.data
    fmt = getattr(args, "format", "auto") or "auto"
    if fmt == "auto":
        fmt = _infer_format(path)
    label_col = getattr(args, "label_col", False) or require_labels
    if fmt != "csv" and (getattr(args, "normalize", False) or getattr(args, "header", False)):
        raise UsageError("--normalize and --header apply to csv input only")
    if fmt != "idx" and getattr(args, "labels", None):
        raise UsageError("--labels applies to idx input only")
    if fmt == "idx":
        data = load_idx(path, getattr(args, "labels", None))
    elif fmt == "csv":
        data = load_dense_csv(path, label_col, getattr(args, "normalize", False), getattr(args, "header", False))
    elif fmt == "bow":
        data = load_sparse_bow(path, getattr(args, "features", None))
    else:
        raise UsageError(f"unknown format {fmt!r}")
    if require_labels and data.labels is None:
        raise UsageError(f"{path}: labels are required for this command")
    return data


def _add_data_opts(p, required=True):
    p.add_argument("--data", required=required)
    p.add_argument("--format", choices=("auto", "idx", "csv", "bow"), default="auto")
    p.add_argument("--labels", help="IDX label file to attach (idx input)")
    p.add_argument("--label-col", action="store_true", help="last CSV column holds labels")
    p.add_argument("--header", action="store_true", help="CSV has a header row")
    p.add_argument("--normalize", action="store_true", help="min-max scale CSV columns to [0,1]")
    p.add_argument("--features", type=int, help="vocabulary size for bow input")


def _add_train_opts(p, hidden_default):
    p.add_argument("--hidden", type=int, default=hidden_default)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--cd-k", type=int, default=1)
    p.add_argument("--hidden-bias", type=float, default=-2.0)
    p.add_argument("--seed", type=int, default=0)


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            eta=args.eta, alpha=args.alpha, cd_k=args.cd_k, batch_size=args.batch,
            epochs=args.epochs, seed=args.seed, hidden_count=args.hidden,
            hidden_bias_init=args.hidden_bias,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load_rbm_model(path) -> ModelFile:
    model = load_model(path)
    if model.rbm is None:
        raise UsageError(f"{path}: {model.model_kind} model has no RBM layer")
    return model


# ----------------------------------------------------------------------
# commands; each returns (inputs, results)


def cmd_train(args):
    data = load_data(args)
    cfg = _train_config(args)
    params, trace = train(data, cfg)
    kind = "nrbm" if cfg.alpha > 0 else "rbm"
    save_model(ModelFile(kind, rbm=params, train_config=cfg.to_dict(), master_seed=cfg.seed), args.out)
    if args.trace:
        rows = trace.rows()
        _write_rows(args.trace, list(rows[0]), [list(r.values()) for r in rows])
    last = trace.records[-1]
    return [args.data], {
        "model": args.out,
        "rows": data.rows,
        "cols": data.cols,
        "final_reconstruction_error": last.reconstruction_error,
        "final_negative_fraction": last.negative_fraction,
        "final_used_units": last.used_units,
    }


def cmd_transform(args):
    model = _load_rbm_model(args.model)
    data = load_data(args)
    post = hidden_posteriors(model.rbm, data)
    header = [f"h{k}" for k in range(post.shape[1])]
    if data.labels is not None:
        header.append("label")
    write_dense_csv(args.out, post, data.labels, header)
    return [args.model, args.data], {"out": args.out, "rows": post.shape[0], "cols": post.shape[1]}


def cmd_reconstruct(args):
    model = _load_rbm_model(args.model)
    data = load_data(args)
    rec = reconstruct(model.rbm, data.values)
    write_dense_csv(args.out, rec, None, [f"v{n}" for n in range(rec.shape[1])])
    err = float(np.mean((rec - data.values) ** 2))
    return [args.model, args.data], {"out": args.out, "mean_squared_error": err}


def cmd_dead_units(args):
    model = _load_rbm_model(args.model)
    taus = parse_float_list(args.tau_set) if args.tau_set else list(DEFAULT_TAUS)
    try:
        cfg = DeadUnitConfig(tuple(taus))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rep = dead_units(model.rbm, cfg)
    return [args.model], {
        "hidden_units": model.rbm.n_hidden,
        "taus": list(rep.taus),
        "used_counts": list(rep.used_counts),
        "averaged_used_count": rep.averaged_used_count,
    }


def cmd_export_filters(args):
    model = _load_rbm_model(args.model)
    cols = args.cols or int(math.ceil(math.sqrt(model.rbm.n_hidden)))
    image = export_filters(model.rbm, args.width, args.height, cols, args.out)
    return [args.model], {"out": args.out, "image_shape": list(image.shape), "grid_cols": cols}


def cmd_histogram(args):
    model = _load_rbm_model(args.model)
    edges = parse_float_list(args.bins) if args.bins else list(DEFAULT_HIST_EDGES)
    try:
        counts = weight_histogram(model.rbm, edges)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rows = [[repr(edges[i]), repr(edges[i + 1]), int(c)] for i, c in enumerate(counts)]
    _write_rows(args.out, ["low", "high", "count"], rows)
    return [args.model], {"out": args.out, "total": int(counts.sum())}


def _read_posteriors(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "label" not in rows[0]:
        raise FormatError(f"{path}: need a header row with a 'label' column")
    j = rows[0].index("label")
    try:
        arr = np.array([[float(c) for c in r] for r in rows[1:] if r])
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise FormatError(f"{path}: no data rows")
    return np.delete(arr, j, axis=1), arr[:, j].astype(np.int64)


def cmd_knn_eval(args):
    xtr, ytr = _read_posteriors(args.train_posteriors)
    xte, yte = _read_posteriors(args.test_posteriors)
    err = knn_error(xtr, ytr, xte, yte, args.k, args.metric)
    return [args.train_posteriors, args.test_posteriors], {
        "error_rate": err, "k": args.k, "metric": args.metric, "test_rows": int(len(yte)),
    }


def cmd_stabilize(args):
    data = load_data(args, require_labels=True)
    test = load_data(args, args.test_data, require_labels=True) if args.test_data else None
    cfg = _train_config(args)
    result = run_stability_protocol(
        data, args.method, parse_int_list(args.t_list), args.bootstraps, args.seed,
        cfg, args.beta, test,
    )
    write_report_json(result, args.out)
    if args.csv:
        write_report_csv(result, args.csv)
    if args.model_out:
        kind = "lasso" if args.method == "lasso" else "pipeline"
        save_model(ModelFile(kind, result.final_rbm, result.final_lasso,
                             dict(result.settings, method=args.method), args.seed), args.model_out)
    inputs = [args.data] + ([args.test_data] if args.test_data else [])
    return inputs, {
        "out": args.out,
        "stability": [{"T": r.T, "C": r.consistency, "J": r.jaccard} for r in result.reports],
        "metrics": None if result.metrics is None else result.metrics.to_dict(),
    }


def cmd_evaluate(args):
    model = load_model(args.model)
    if model.lasso is None:
        raise UsageError(f"{args.model}: {model.model_kind} model has no classifier")
    data = load_data(args, args.test_data, require_labels=True)
    x = data.values
    if model.model_kind == "pipeline":
        x = hidden_posteriors(model.rbm, x)
    scores = model.lasso.predict_proba(x)
    metrics = classification_metrics(scores, data.binary_labels(), args.threshold).to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(metrics, indent=2) + "\n")
    return [args.model, args.test_data], {"metrics": metrics}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrbm", description="Nonnegative RBM toolkit")
    parser.add_argument("--version", action="version", version=f"nrbm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an (N)RBM")
    _add_data_opts(p)
    _add_train_opts(p, hidden_default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transform", help="hidden posteriors of a dataset")
    p.add_argument("--model", required=True)
    _add_data_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("reconstruct", help="one-step mean-field reconstructions")
    p.add_argument("--model", required=True)
    _add_data_opts(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("dead-units", help="used hidden units per threshold")
    p.add_argument("--model", required=True)
    p.add_argument("--tau-set", help="start:stop:step or comma list (default 0.01:0.06:0.01)")
    p.set_defaults(func=cmd_dead_units)

    p = sub.add_parser("export-filters", help="receptive fields as a PGM grid")
    p.add_argument("--model", required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--cols", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_filters)

    p = sub.add_parser("histogram", help="weight histogram as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--bins", help="bin edges, comma list or start:stop:step")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_histogram)

    p = sub.add_parser("knn-eval", help="kNN error rate on posterior CSVs")
    p.add_argument("--train-posteriors", required=True)
    p.add_argument("--test-posteriors", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--metric", choices=METRICS, default="cosine")
    p.set_defaults(func=cmd_knn_eval)

    p = sub.add_parser("stabilize", help="bootstrap feature-selection stability")
    _add_data_opts(p)
    p.add_argument("--test-data")
    p.add_argument("--method", choices=METHODS, default="nrbm+lasso")
    _add_train_opts(p, hidden_default=200)
    p.add_argument("--beta", type=float, default=0.001)
    p.add_argument("--bootstraps", type=int, default=10)
    p.add_argument("--t-list", default="10,50,100,150,200")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also write T,C,J as CSV")
    p.add_argument("--model-out", help="save the averaged final model")
    p.set_defaults(func=cmd_stabilize)

    p = sub.add_parser("evaluate", help="classification metrics of a saved classifier")
    p.add_argument("--model", required=True)
    p.add_argument("--test-data", required=True)
    p.add_argument("--format", choices=("auto", "idx", "csv", "bow"), default="auto")
    p.add_argument("--labels")
    p.add_argument("--header", action="store_true")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--features", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        inputs, results = args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except NrbmError as exc:
        print(f"nrbm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"nrbm {args.command}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    config = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    manifest = {
        "command": args.command,
        "version": __version__,
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": {p: sha256_file(p) for p in inputs},
        "results": results,
    }
    print(json.dumps(manifest, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
