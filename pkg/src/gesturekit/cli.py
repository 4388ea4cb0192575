"""Command-line entry point: ``gesturekit {gen,process,train,eval,infer,selftest}``.

Exit codes: 0 ok, 1 usage error, 2 data/format error, 3 self-test failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .dataset import GeneratorConfig, as_arrays, default_chirp_config, generate_dataset, load_dataset, save_dataset, split_dataset
from .dsp import channel_to_pgm, process_recording
from .estimators import CNNGestureClassifier, TemplateGestureClassifier
from .evaluation import error_breakdown, evaluate
from .formats import FormatError, read_container, read_cubes, read_rsa, write_rsa
from .models import GestureTemplates
from .nn.checkpoint import model_from_header, save_model
from .nn.functional import softmax
from .nn.train import schedule_from_dict
from .radar_sim import CLASS_NAMES, ChirpConfig

log = logging.getLogger("gesturekit")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="random seed (default 0)")
    p.add_argument("--threads", type=int, default=d(1), help="BLAS threads; 1 keeps runs bit-reproducible")
    p.add_argument("--verbose", "-v", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gesturekit", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        _global_flags(p, suppress=True)
        return p

    p = command("gen", "synthesize a labelled RSA dataset")
    p.add_argument("--per-class", type=int, default=250)
    p.add_argument("--crops", type=int, default=8)
    p.add_argument("--val-ratio", type=float, default=0.3)
    p.add_argument("--snr-db", type=float, default=20.0, help="SNR at the hand's range-Doppler peak")
    p.add_argument("--out", required=True)

    p = command("process", "raw FMC1 recording (128 frames) -> RSA1 image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label", choices=CLASS_NAMES)
    p.add_argument("--pgm", help="also write one channel as an 8-bit PGM")
    p.add_argument("--channel", type=int, choices=(0, 1, 2), default=0)

    p = command("train", "train a classifier on a generated dataset")
    p.add_argument("--arch", choices=("vgg10", "resnet20", "template"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with training schedule overrides")
    p.add_argument("--history", help="write per-epoch history CSV here")

    p = command("eval", "evaluate a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--split", default="val", help="split to score, or 'all'")

    p = command("infer", "classify one RSA file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--pgm", help="also write one channel as an 8-bit PGM")
    p.add_argument("--channel", type=int, choices=(0, 1, 2), default=0)

    command("selftest", "gradient and physics checks")
    return parser


# ------------------------------------------------------------ commands

def load_classifier(path):
    header, arrays = read_container(path)
    kind = header.get("kind")
    if kind == "model":
        return CNNGestureClassifier.from_model(model_from_header(header, arrays, path))
    if kind == "template":
        return TemplateGestureClassifier.from_templates(GestureTemplates(arrays[0][1], list(header["class_names"])))
    raise FormatError(path, 8, f"unknown checkpoint kind {kind!r}")


def cmd_gen(args) -> int:
    if args.per_class < 2:
        raise UsageError("--per-class must be at least 2 so both splits get every class")
    gen = GeneratorConfig(crops=args.crops, snr_db=args.snr_db)
    records = generate_dataset(args.per_class, default_chirp_config(args.snr_db), args.seed, gen)
    records = split_dataset(records, args.val_ratio, args.seed)
    save_dataset(records, args.out, {"per_class": args.per_class, "crops": args.crops, "seed": args.seed,
                                     "val_ratio": args.val_ratio, "snr_db": args.snr_db})
    n_val = sum(r.split == "val" for r in records)
    print(f"wrote {len(records)} samples ({len(records) - n_val} train / {n_val} val) to {args.out}")
    return EXIT_OK


def cmd_process(args) -> int:
    cubes = read_cubes(args.input)
    cfg = ChirpConfig()
    if cubes[0].shape != cfg.shape:
        raise FormatError(args.input, 4, f"cube dims {cubes[0].shape} do not match radar config {cfg.shape}")
    image = process_recording(cubes, cfg)
    label = CLASS_NAMES.index(args.label) if args.label else None
    write_rsa(args.out, image, label)
    if args.pgm:
        Path(args.pgm).write_bytes(channel_to_pgm(image, args.channel))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    _, records = load_dataset(args.data)
    x_tr, y_tr = as_arrays(records, "train")
    x_va, y_va = as_arrays(records, "val")
    del records
    if len(x_tr) == 0 or len(x_va) == 0:
        raise FormatError(Path(args.data) / "manifest.json", 0, "dataset needs both train and val samples")
    if args.arch == "template":
        est = TemplateGestureClassifier().fit(x_tr, y_tr)
        est.templates_.save(args.out)
        acc = float(np.mean(est.predict(x_va) == y_va))
        print(f"template baseline: val accuracy {acc:.4f}")
        return EXIT_OK
    overrides = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides.setdefault("seed", args.seed)
    sched = schedule_from_dict(overrides)
    est = CNNGestureClassifier(args.arch, lr=sched.lr, batch_size=sched.batch_size, max_epochs=sched.max_epochs,
                               stop_patience=sched.stop_patience, lr_factor=sched.lr_factor,
                               lr_patience=sched.lr_patience, target_val_acc=sched.target_val_acc,
                               random_state=sched.seed)
    est.fit(x_tr, y_tr, x_va, y_va)
    save_model(est.model_, args.out, {"best_epoch": est.history_.best_epoch})
    if args.history:
        Path(args.history).write_text(est.history_.to_csv())
    best = est.history_.rows[est.history_.best_epoch - 1]
    print(f"{args.arch}: best epoch {best['epoch']} val_loss {best['val_loss']:.4f} val_acc {best['val_acc']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    est = load_classifier(args.model)
    _, records = load_dataset(args.data, None if args.split == "all" else args.split)
    if not records:
        raise FormatError(Path(args.data) / "manifest.json", 0, f"no samples in split {args.split!r}")
    x, y = as_arrays(records)
    report = evaluate(est, x, y, model_id=Path(args.model).name)
    Path(args.report).write_text(report.to_csv())
    for name, acc in zip(report.class_names, report.per_class):
        print(f"{name:>6s} {acc:.4f}")
    print(f"{'avg':>6s} {report.average:.4f}  (n={report.n})")
    for true, pred, count, rate in error_breakdown(report)[:3]:
        print(f"  {true} -> {pred}: {count} ({rate:.1%})")
    return EXIT_OK


def cmd_infer(args) -> int:
    est = load_classifier(args.model)
    image, _ = read_rsa(args.input)
    if isinstance(est, TemplateGestureClassifier):
        probs = softmax(est.decision_function(image))[0]
    else:
        probs = est.predict_proba(image)[0]
    for name, p in zip(CLASS_NAMES, probs):
        print(f"{name} {p:.6f}")
    print(f"predicted {CLASS_NAMES[int(np.argmax(probs))]}")
    if args.pgm:
        Path(args.pgm).write_bytes(channel_to_pgm(image, args.channel))
    return EXIT_OK


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    results = run_selftest()
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {"gen": cmd_gen, "process": cmd_process, "train": cmd_train, "eval": cmd_eval,
            "infer": cmd_infer, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gesturekit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, FileNotFoundError, ValueError) as exc:
        print(f"gesturekit: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
