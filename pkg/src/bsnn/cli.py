"""``bsnn`` command line tool."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import bayes, metrics, modelio, perfmodel
from .convert import ConversionError, convert_to_snn, quantize_model
from .netcore import ModelError
from .prng import RngScheme
from .train_toy import DATASETS, MODES, ToyConfig, TrainingError, gen_dataset, train

SCHEMES = [s.value for s in RngScheme]


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _load_inputs(args):
    model = modelio.load_model(args.model)
    images, labels = modelio.load_images(args.data)
    if args.labels is not None:
        labels = modelio.load_dataset(args.data, args.labels).labels
    T = model.default_T if args.T is None else args.T
    nmc = model.default_nmc if args.nmc is None else args.nmc
    return model, images, labels, T, nmc


def _require_labels(labels, cmd):
    if labels is None:
        raise modelio.DatasetError(f"{cmd} needs labels (--labels or a labeled --data file)")
    return labels.reshape(-1)


# ----------------------------------------------------------------------------

def cmd_gen_data(args):
    ds = gen_dataset(args.dataset, args.n, args.seed, args.classes)
    modelio.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} {args.dataset} samples to {args.out}")


def cmd_train_toy(args):
    kw = {"mode": args.mode, "L": args.L, "seed": args.seed, "dataset": args.dataset}
    for name in ("epochs_relu", "epochs_quant", "n_train", "n_test"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    cfg = ToyConfig(**kw)
    ckpt = train(cfg)
    modelio.save_checkpoint(ckpt, args.out)
    if args.export_test:
        modelio.save_dataset(gen_dataset(cfg.dataset, cfg.n_test, cfg.seed + 1_000_003, cfg.classes),
                             args.export_test)
    print(f"ann accuracy: relu {ckpt.meta['test_accuracy_relu']:.4f}  "
          f"quantized {ckpt.meta['test_accuracy_quant']:.4f}")


def cmd_convert(args):
    model = convert_to_snn(modelio.load_checkpoint(args.inp), args.T)
    if not args.real:
        model = quantize_model(model)
    modelio.save_model(model, args.out)
    print(f"wrote {'real' if args.real else 'deploy'} model with {len(model.layers)} layers, "
          f"T={model.default_T}")


def cmd_infer(args):
    model, images, labels, T, nmc = _load_inputs(args)
    recs = bayes.mc_inference(model, images, nmc, T, args.seed, args.rng, args.tau, args.combine)
    doc = {"rng": args.rng, "seed": args.seed, "T": T, "n_mc": nmc, "tau": args.tau,
           "combine": args.combine, "predictions": [r.to_dict() for r in recs]}
    if labels is not None:
        labels = labels.reshape(-1)
        doc["accuracy"] = metrics.accuracy(recs, labels)
        doc["ece"] = metrics.ece(recs, labels, args.ece_bins).ece
        print(f"accuracy {doc['accuracy']:.4f}  ece {doc['ece']:.4f}")
    _write_json(args.out, doc)


def cmd_sweep(args):
    model, images, labels, _, nmc = _load_inputs(args)
    labels = _require_labels(labels, "sweep")
    rows = bayes.sweep(model, images, labels, args.tmax, nmc, args.rng, args.seed, args.tau,
                       args.combine, args.ece_bins)
    _write_csv(args.out, rows, ["t", "accuracy", "ece", "mean_spikes"])
    last = rows[-1]
    print(f"t={last['t']}: accuracy {last['accuracy']:.4f}  ece {last['ece']:.4f}")


def cmd_rng_compare(args):
    model, images, labels, T, nmc = _load_inputs(args)
    labels = _require_labels(labels, "rng-compare")
    rows = []
    for scheme in SCHEMES:
        recs = bayes.mc_inference(model, images, nmc, T, args.seed, scheme, args.tau, args.combine)
        rows.append({"scheme": scheme, "accuracy": metrics.accuracy(recs, labels),
                     "ece": metrics.ece(recs, labels, args.ece_bins).ece})
        print(f"{scheme:14s} accuracy {rows[-1]['accuracy']:.4f}  ece {rows[-1]['ece']:.4f}")
    _write_csv(args.out, rows, ["scheme", "accuracy", "ece"])


def cmd_bench(args):
    model = modelio.load_model(args.model)
    T = model.default_T if args.T is None else args.T
    nmc = model.default_nmc if args.nmc is None else args.nmc
    rep = perfmodel.model_report(model, T, nmc, args.freq)
    _write_json(args.out, rep.to_dict())
    print(f"{rep.total_clocks} clocks, {rep.mac_ops} ops, {rep.gops_estimate:.3f} GOPS "
          f"at {args.freq:g} MHz")


# ----------------------------------------------------------------------------

def _inference_flags(p, out_default):
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="image tensor file (BSTD or IDX)")
    p.add_argument("--labels", help="label tensor file if --data has none")
    p.add_argument("--nmc", type=int, help="ensemble members (default: from the model)")
    p.add_argument("--rng", choices=SCHEMES, default=RngScheme.LFSR_MAXREUSE.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float, default=1.0, help="softmax temperature, in counts")
    p.add_argument("--combine", choices=[bayes.SUM_THEN_SOFTMAX, bayes.MEAN_SOFTMAX],
                   default=bayes.SUM_THEN_SOFTMAX)
    p.add_argument("--ece-bins", type=int, default=15)
    p.add_argument("--out", default=out_default)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bsnn", description="Bayesian spiking network toolkit")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic toy dataset")
    p.add_argument("--dataset", choices=DATASETS, default="blobs8x8")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-toy", help="train a toy ANN checkpoint")
    p.add_argument("--mode", choices=MODES, default="bayesian")
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset", choices=DATASETS, default="blobs8x8")
    p.add_argument("--epochs-relu", type=int)
    p.add_argument("--epochs-quant", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--export-test", help="also write the held-out test set here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("convert", help="ANN checkpoint -> spiking model file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=int, help="default timesteps (default: L)")
    p.add_argument("--real", action="store_true", help="keep real-valued coefficients")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("infer", help="Monte-Carlo prediction for every input")
    _inference_flags(p, "preds.json")
    p.add_argument("--T", type=int, help="timesteps (default: from the model)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", help="accuracy and ECE for every t up to --tmax")
    _inference_flags(p, "sweep.csv")
    p.add_argument("--tmax", type=int, default=16)
    p.set_defaults(func=cmd_sweep, T=None)

    p = sub.add_parser("rng-compare", help="accuracy under every random number scheme")
    _inference_flags(p, "rng_compare.csv")
    p.add_argument("--T", type=int, help="timesteps (default: from the model)")
    p.set_defaults(func=cmd_rng_compare)

    p = sub.add_parser("bench", help="cycle and operation report")
    p.add_argument("--model", required=True)
    p.add_argument("--T", type=int)
    p.add_argument("--nmc", type=int)
    p.add_argument("--freq", type=float, default=perfmodel.DEFAULT_FREQ_MHZ, help="clock in MHz")
    p.add_argument("--out", default="cycles.json")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        ap.print_usage(sys.stderr)
        return 2
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    try:
        args.func(args)
    except (modelio.ModelFormatError, modelio.DatasetError, ConversionError, ModelError,
            TrainingError, OSError, ValueError) as exc:
        print(f"bsnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
