"""Command-line entry point: ``tecnn {train,compare,gradcheck,te,synth}``."""
import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from .errors import TecnnError
from .harness.checkpoint import load_checkpoint, save_checkpoint
from .harness.config import ExperimentConfig, load_config
from .harness.data import synth_digits_raw, write_idx
from .harness.experiment import format_report, load_dataset, run_experiment, run_single
from .harness.metrics import emit_metrics
from .numerics.gradcheck import DEFAULT_TOLERANCE, TOLERANCE, check_layer_kinds
from .te import te_pair, te_pair_oracle
from .training import TrainState


def _add_run_flags(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--te", choices=["on", "off"])
    p.add_argument("--dataset", help="idx:IMG,LBL[,IMG_T,LBL_T] | synth:classes,n,side")
    p.add_argument("--arch")
    p.add_argument("--epochs", type=int)
    p.add_argument("--target-acc", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--pair-fraction", type=float)
    p.add_argument("--pair-policy", choices=["epoch", "window"])
    p.add_argument("--te-direction", choices=["forward", "backward"])
    p.add_argument("--te-force-zero", action="store_true", help="apply an all-zero TE matrix")
    p.add_argument("--no-timing", action="store_true", help="write zeros in timing columns")
    p.add_argument("--out", help="output directory")


def _config(args):
    overrides = {
        "te": args.te,
        "dataset": args.dataset,
        "arch": args.arch,
        "epochs": args.epochs,
        "target_acc": args.target_acc,
        "seed": args.seed,
        "pair_fraction": args.pair_fraction,
        "pair_policy": args.pair_policy,
        "te_direction": args.te_direction,
        "out": args.out,
    }
    if args.te_force_zero:
        overrides["force_zero"] = "on"
    if args.no_timing:
        overrides["record_timing"] = "off"
    if args.config:
        return load_config(args.config, **overrides)
    overrides["arch"] = args.arch or "usps"
    return ExperimentConfig.preset_defaults(**overrides).validate()


def cmd_train(args):
    cfg = _config(args)
    os.makedirs(cfg.out, exist_ok=True)
    dataset = load_dataset(cfg.dataset, cfg.data_seed)
    net = state = None
    tcfg = cfg.train_config()
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        net = ckpt.net
        state = ckpt.restore_state(TrainState.create(net, tcfg, cfg.seed))

    def save(net, state, result):
        if args.checkpoint:
            save_checkpoint(args.checkpoint, net, state)

    result = run_single(cfg, dataset, net=net, state=state, on_epoch=save,
                        stop_at_target=not args.full)
    emit_metrics(result.rows, os.path.join(cfg.out, "metrics.csv"))
    summary = result.summary()
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    reached = summary["target_epoch"] if summary["target_reached"] else "not reached"
    print(f"{result.run_id}: {result.epochs_run} epochs, final top-1 "
          f"{result.test_top1[-1] if result.test_top1 else float('nan'):.4f}, target epoch {reached}")
    return 0


def cmd_compare(args):
    cfg = _config(args)
    os.makedirs(cfg.out, exist_ok=True)
    report, te_run, base_run = run_experiment(cfg)
    emit_metrics(te_run.rows + base_run.rows, os.path.join(cfg.out, "metrics.csv"))
    with open(os.path.join(cfg.out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
    print(format_report(report))
    return 0


def cmd_gradcheck(args):
    worst = check_layer_kinds(seeds=args.seeds, eps=args.eps)
    failed = False
    for kind, err in worst.items():
        tol = TOLERANCE.get(kind, DEFAULT_TOLERANCE)
        ok = err < tol
        failed |= not ok
        print(f"{kind:16s} max_rel_err={err:.3e} tol={tol:.0e} {'PASS' if ok else 'FAIL'}")
    return 1 if failed else 0


def _read_bit_columns(path):
    src, dst = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                a, b = int(row[0]), int(row[1])
            except ValueError:
                continue  # header line
            src.append(a)
            dst.append(b)
    return np.array(src, dtype=np.uint8), np.array(dst, dtype=np.uint8)


def cmd_te(args):
    src, dst = _read_bit_columns(args.csv)
    if np.any(src > 1) or np.any(dst > 1):
        raise TecnnError("bit streams must contain only 0 and 1")
    base = 2.0 if args.base == "bits" else np.e
    fwd = te_pair(src, dst, base)
    print(f"events={len(src)} te(src->dst)={fwd:.12g} oracle={te_pair_oracle(src, dst, base):.12g}")
    if args.both:
        print(f"te(dst->src)={te_pair(dst, src, base):.12g}")
    return 0


def cmd_synth(args):
    os.makedirs(args.out, exist_ok=True)
    xtr, ytr, xte, yte = synth_digits_raw(args.classes, args.n_train, args.n_test, args.side, args.seed)
    names = {
        "train-images-idx3-ubyte": xtr, "train-labels-idx1-ubyte": ytr,
        "test-images-idx3-ubyte": xte, "test-labels-idx1-ubyte": yte,
    }
    for name, arr in names.items():
        write_idx(os.path.join(args.out, name), arr)
    print(f"wrote {len(xtr)} train / {len(xte)} test images to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="tecnn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="single training run")
    _add_run_flags(p)
    p.add_argument("--checkpoint", help="save a checkpoint here after every epoch")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--full", action="store_true", help="do not stop at the target accuracy")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="paired TE-on / TE-off runs")
    _add_run_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("te", help="TE between two bit columns of a CSV file")
    p.add_argument("csv")
    p.add_argument("--base", choices=["bits", "nats"], default="bits")
    p.add_argument("--both", action="store_true", help="also print the reverse direction")
    p.set_defaults(func=cmd_te)

    p = sub.add_parser("synth", help="write the synthetic digit set as IDX files")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=1000)
    p.add_argument("--side", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TecnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
