"""Command-line interface.

    shapescale analyze MODEL_DIR [--scan-csv DIR] [--min-tail N] [--per-layer]
    shapescale corpus CORPUS --metric NAME [--target test_acc] [--by subgroup]
                      [--strength 0.1] [--out-dir DIR]
    shapescale smooth MODEL_DIR --transform {svd10,svd20,clip} --out DIR
    shapescale eval MODEL_DIR --inputs X.npy --labels y.npy
    shapescale synth {simpson,homogeneous,mlp} --out DIR [--seed N]

Exit codes: 0 success, 2 usage, 3 load error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

from . import __version__
from .analysis import ModelRecord, subgroup_report
from .exceptions import (
    DomainError,
    LoadError,
    NumericError,
    ShapeError,
    ShapeScaleError,
    UnsupportedTopologyError,
    WriteError,
)
from .metrics import METRIC_NAMES, model_metrics
from .model_store import load_model, resolve_corpus, write_array_file, write_model
from .net_eval import accuracy, load_dataset
from .plfit import MIN_TAIL
from .transforms import TRANSFORMS, transform_model

log = logging.getLogger("shapescale")

EXIT_OK, EXIT_USAGE, EXIT_LOAD, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ShapeScaleError):
    pass


def _json_default(obj):
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "item"):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by None so the output is strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(_clean(obj), indent=2, sort_keys=False,
                                default=_json_default, allow_nan=False) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    bundle = load_model(args.model_dir)
    mm, layers = model_metrics(bundle, min_tail=args.min_tail, return_layers=True)
    out = mm.to_json()
    if args.per_layer:
        out["layers"] = [lm.to_json() for lm in layers]
    if args.scan_csv:
        scan_dir = Path(args.scan_csv)
        scan_dir.mkdir(parents=True, exist_ok=True)
        for lm in layers:
            if lm.fit is not None:
                lm.fit.write_scan_csv(scan_dir / f"{lm.layer}_{lm.slice_index}.csv")
    for lm in layers:
        for note in (lm.fit.notes if lm.fit else ()):
            log.warning("%s[%d]: %s", lm.layer, lm.slice_index, note)
    _emit(out)
    return EXIT_OK


def _corpus_rows(paths, min_tail):
    rows = []
    for path in paths:
        bundle = load_model(path)
        mm = model_metrics(bundle, min_tail=min_tail)
        rows.append((bundle, mm))
    rows.sort(key=lambda r: r[0].model_id)
    return rows


def cmd_corpus(args) -> int:
    if args.metric not in METRIC_NAMES:
        raise UsageError(f"unknown metric {args.metric!r}; choose from {', '.join(METRIC_NAMES)}")
    rows = _corpus_rows(resolve_corpus(args.corpus), args.min_tail)
    records = []
    for bundle, mm in rows:
        group = bundle.subgroup if args.by == "subgroup" else bundle.group
        records.append(ModelRecord(
            model_id=bundle.model_id, subgroup=group or "all",
            metrics={m: getattr(mm, m) for m in METRIC_NAMES},
            train_acc=bundle.train_acc, test_acc=bundle.test_acc))
    report = subgroup_report(records, args.metric, args.target, strength=args.strength)
    if args.out_dir:
        out_dir = Path(args.out_dir)
        report.write_csvs(out_dir)
        _write_models_csv(out_dir / "models.csv", rows)
    _emit(report.to_json())
    return EXIT_OK


def _write_models_csv(path, rows):
    hp_keys = sorted({k for bundle, _ in rows for k in bundle.hyperparams})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model_id", "subgroup", *hp_keys, *METRIC_NAMES, "train_acc", "test_acc"])
        for bundle, mm in rows:
            w.writerow([bundle.model_id, bundle.subgroup,
                        *[bundle.hyperparams.get(k, "") for k in hp_keys],
                        *["" if getattr(mm, m) is None else repr(getattr(mm, m))
                          for m in METRIC_NAMES],
                        "" if bundle.train_acc is None else bundle.train_acc,
                        "" if bundle.test_acc is None else bundle.test_acc])


def cmd_smooth(args) -> int:
    params = {}
    if args.keep_frac is not None:
        params["keep_frac"] = args.keep_frac
    if args.lo_q is not None:
        params["lo_q"] = args.lo_q
    if args.hi_q is not None:
        params["hi_q"] = args.hi_q
    bundle = load_model(args.model_dir)
    write_model(transform_model(bundle, args.transform, params), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_model(args.model_dir)
    data = load_dataset(args.inputs, args.labels)
    sys.stdout.write(f"{accuracy(bundle, data):.6f}\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import separable_mlp, write_corpus

    out = Path(args.out)
    if args.kind == "mlp":
        bundle, data = separable_mlp(seed=args.seed, noise=args.noise)
        write_model(bundle, out / "model")
        out.mkdir(parents=True, exist_ok=True)
        write_array_file(out / "inputs.npy", data.inputs)
        write_array_file(out / "labels.npy", data.labels)
        _emit({"model": str(out / "model"), "inputs": str(out / "inputs.npy"),
               "labels": str(out / "labels.npy")})
    else:
        corpus = write_corpus(out, kind=args.kind, n_groups=args.groups,
                              n_per_group=args.per_group, seed=args.seed, noise=args.noise)
        _emit({"corpus": str(corpus)})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _fraction(text):
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shapescale", description="Scale and shape diagnostics for weight matrices.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-model quality metrics as JSON")
    p.add_argument("model_dir")
    p.add_argument("--scan-csv", metavar="DIR", help="write KS-vs-x_min curves, one CSV per matrix")
    p.add_argument("--min-tail", type=int, default=MIN_TAIL, metavar="N")
    p.add_argument("--per-layer", action="store_true", help="include per-matrix results")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("corpus", help="subgroup correlation report with Simpson verdict")
    p.add_argument("corpus", help="JSON list of model directories, or a directory to scan")
    p.add_argument("--metric", required=True)
    p.add_argument("--target", choices=("test_acc", "train_acc"), default="test_acc")
    p.add_argument("--by", choices=("subgroup", "group"), default="subgroup")
    p.add_argument("--strength", type=float, default=0.1,
                   help="minimum |Kendall tau| counting as a trend (default 0.1)")
    p.add_argument("--min-tail", type=int, default=MIN_TAIL, metavar="N")
    p.add_argument("--out-dir", metavar="DIR", help="write models.csv and per-subgroup CSVs")
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("smooth", help="write an SVD-smoothed or clipped copy of a model")
    p.add_argument("model_dir")
    p.add_argument("--transform", choices=sorted(TRANSFORMS), required=True)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--keep-frac", type=float)
    p.add_argument("--lo-q", type=_fraction)
    p.add_argument("--hi-q", type=_fraction)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("eval", help="accuracy of a dense model on an NPY dataset")
    p.add_argument("model_dir")
    p.add_argument("--inputs", required=True)
    p.add_argument("--labels", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write synthetic models for testing")
    p.add_argument("kind", choices=("simpson", "homogeneous", "mlp"))
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--per-group", type=int, default=18)
    p.add_argument("--noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"shapescale: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (LoadError, WriteError, ShapeError, UnsupportedTopologyError) as exc:
        print(f"shapescale: {exc}", file=sys.stderr)
        return EXIT_LOAD
    except (NumericError, DomainError) as exc:
        print(f"shapescale: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
