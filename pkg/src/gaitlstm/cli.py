"""Command-line entry point: ``gaitlstm {ingest,train,evaluate,predict,gradcheck,presets}``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import __version__
from .data import (
    Manifest,
    WINDOW,
    ShortRecordingWarning,
    SplitSpec,
    apply_normalization,
    ingest,
    parse_recording,
    segment_recording,
)
from .errors import GaitLstmError, InvalidInputError, ShapeError
from .evaluation import CSV_HEADER, evaluate_segments, evaluate_subjects, predict_subject
from .model import gradient_check, init_classifier
from .seeding import INIT, generator
from .train import (
    PRESETS,
    REPORTED_METRICS,
    emit_curves,
    load_checkpoint,
    resolve_config,
    save_checkpoint,
    train,
)

log = logging.getLogger("gaitlstm")


def echo_config(title: str, items: dict) -> None:
    print(f"# {title}")
    for k, v in items.items():
        print(f"{k}={v}")
    sys.stdout.flush()


def cmd_ingest(args) -> int:
    spec = SplitSpec(
        train_fraction=args.train_frac, mode=args.split, seed=args.seed, stratified=not args.no_stratify
    )
    quality_path = args.quality_report or f"{args.out_manifest}.quality.txt"
    echo_config("ingest", {
        "data_dir": args.data_dir, "out_manifest": args.out_manifest, "split": spec.mode,
        "stratified": spec.stratified, "train_frac": spec.train_fraction, "seed": spec.seed,
        "normalize": not args.no_normalize, "labels": args.labels or "-", "window": args.window,
        "quality_report": quality_path,
    })
    manifest, report = ingest(args.data_dir, spec, not args.no_normalize, args.labels, args.window)
    manifest.write(args.out_manifest)
    Path(quality_path).write_text(report.to_text(), encoding="utf-8")
    n_train = sum(1 for s in manifest.segments if s[4] == "train")
    print(report.to_text(), end="")
    print(f"segments={len(manifest.segments)} train={n_train} val={len(manifest.segments) - n_train}")
    return 0


def _load_model_inputs(checkpoint_path):
    cp = load_checkpoint(checkpoint_path)
    return cp, cp.model


def _check_dims(model, segments, source) -> None:
    if segments and segments[0].features.shape[1] != model.lstm.input_dim:
        raise ShapeError(
            f"{source}: data has {segments[0].features.shape[1]} features but the checkpoint "
            f"expects {model.lstm.input_dim}"
        )


def _report_block(title: str, seg_report, subj_report) -> None:
    print(f"# {title}")
    print(CSV_HEADER)
    print(seg_report.csv_row())
    print(subj_report.csv_row())


def cmd_train(args) -> int:
    manifest = Manifest.read(args.manifest)
    seed = args.seed if args.seed is not None else manifest.seed
    cfg = resolve_config(
        args.preset,
        hidden_dim=args.hidden, epochs=args.epochs, l2_lambda=args.l2, lr=args.lr,
        batch_size=args.batch_size, dropout_p=args.dropout, dense_dim=args.dense_dim,
        select_best_val=True if args.select_best_val else None, seed=seed,
    )
    echo_config("train", {
        "manifest": args.manifest, "split_mode": manifest.split_spec.mode,
        "normalize": manifest.normalize, **{k: v for k, v in vars(cfg).items()},
        "out_checkpoint": args.out_checkpoint, "curves_csv": args.curves_csv or "-",
        "threads": args.threads,
    })
    train_segs, val_segs = manifest.load_segments()
    cp, records = train(
        cfg, train_segs, val_segs, manifest.norm,
        progress=lambda r: print(r.progress_line(), flush=True),
        threads=args.threads,
    )
    save_checkpoint(cp, args.out_checkpoint)
    if args.curves_csv and records:
        emit_curves(records, args.curves_csv)

    model = cp.model
    val_seg = evaluate_segments(model, val_segs)
    val_subj = evaluate_subjects(model, val_segs)
    _report_block(f"validation ({manifest.split_spec.mode}-level split, epoch {cp.selected_epoch})", val_seg, val_subj)
    _report_block("training", evaluate_segments(model, train_segs), evaluate_subjects(model, train_segs))
    if cfg.preset_name in REPORTED_METRICS:
        print(f"# gap to reported {cfg.preset_name} figures (validation, segment level)")
        for name, ref in REPORTED_METRICS[cfg.preset_name].items():
            got = getattr(val_seg, name)
            gap = "undefined" if got is None else repr(got - ref)
            print(f"{name} reported={ref!r} measured={'undefined' if got is None else repr(got)} gap={gap}")
    return 0


def cmd_evaluate(args) -> int:
    echo_config("evaluate", {
        "checkpoint": args.checkpoint, "manifest": args.manifest,
        "level": args.level, "subset": args.subset,
    })
    cp, model = _load_model_inputs(args.checkpoint)
    manifest = Manifest.read(args.manifest)
    train_raw, val_raw = manifest.load_segments(normalized=False)
    chosen = {"train": train_raw, "val": val_raw, "all": train_raw + val_raw}[args.subset]
    if not chosen:
        raise InvalidInputError(f"{args.manifest}: subset {args.subset!r} has no segments")
    _check_dims(model, chosen, args.manifest)
    segs = [apply_normalization(cp.norm, s) for s in chosen]
    report = evaluate_segments(model, segs) if args.level == "segment" else evaluate_subjects(model, segs)
    print(CSV_HEADER)
    print(report.csv_row())
    return 0


def cmd_predict(args) -> int:
    echo_config("predict", {"checkpoint": args.checkpoint, "recording": args.recording})
    cp, model = _load_model_inputs(args.checkpoint)
    rec = parse_recording(args.recording, require_label=False)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ShortRecordingWarning)
        segs = segment_recording(rec, WINDOW)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    if not segs:
        raise InvalidInputError(f"{args.recording}: no complete segments to classify")
    _check_dims(model, segs, args.recording)
    label, pooled = predict_subject(model, [apply_normalization(cp.norm, s) for s in segs])
    print(f"recording={rec.recording_id}")
    print(f"segments={len(segs)}")
    print(f"label={label.label}")
    print(f"p_control={float(pooled[0])!r}")
    print(f"p_pd={float(pooled[1])!r}")
    if rec.cohort is not None:
        print(f"file_label={rec.cohort.label}")
    return 0


def cmd_gradcheck(args) -> int:
    echo_config("gradcheck", {
        "hidden": args.hidden, "input_dim": args.input_dim, "seq_len": args.seq_len, "seed": args.seed,
        "tolerance": args.tolerance, "l2": args.l2, "dropout": args.dropout,
        "dense_dim": args.dense_dim, "sample": args.sample or "all",
    })
    model = init_classifier(
        args.input_dim, args.hidden, generator(args.seed, INIT),
        dense_dim=args.dense_dim, dropout_p=args.dropout,
    )
    rng = generator(args.seed, "gradcheck")
    seq = rng.normal(size=(args.seq_len, args.input_dim))
    label = int(rng.integers(0, 2))
    report = gradient_check(
        model, seq, label, l2=args.l2, tolerance=args.tolerance,
        sample=args.sample or None, rng=rng,
    )
    name, idx, analytic, numeric = report.worst
    print(f"checked={report.checked}")
    print(f"max_rel_error={report.max_rel_error!r}")
    print(f"worst={name}{list(idx)} analytic={analytic!r} numeric={numeric!r}")
    for fname, fidx, err in report.failures[:20]:
        print(f"fail {fname}{list(fidx)} rel_error={err!r}")
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_presets(args) -> int:
    echo_config("presets", {"count": len(PRESETS)})
    print("preset,hidden_dim,epochs,l2_lambda,lr,batch_size,dropout_p")
    for name, c in PRESETS.items():
        print(f"{name},{c.hidden_dim},{c.epochs},{c.l2_lambda!r},{c.lr!r},{c.batch_size},{c.dropout_p!r}")
    return 0


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaitlstm", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress details to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse, segment and split a recording directory")
    s.add_argument("--data-dir", required=True)
    s.add_argument("--out-manifest", required=True)
    s.add_argument("--split", choices=("segment", "subject"), default="segment")
    s.add_argument("--train-frac", type=float, default=0.7)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-normalize", action="store_true", help="keep raw force magnitudes")
    s.add_argument("--no-stratify", action="store_true")
    s.add_argument("--labels", help="sidecar file of '<filename> <PD|Control>' lines")
    s.add_argument("--window", type=_positive_int, default=500)
    s.add_argument("--quality-report", help="default: <manifest>.quality.txt")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train a classifier from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--preset", choices=sorted(PRESETS))
    s.add_argument("--hidden", type=_positive_int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--l2", type=float)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=_positive_int)
    s.add_argument("--dropout", type=float)
    s.add_argument("--dense-dim", type=int, help="width of an optional ReLU layer before the output")
    s.add_argument("--seed", type=int, help="default: the manifest seed")
    s.add_argument("--select-best-val", action="store_true")
    s.add_argument("--threads", type=_positive_int, default=1)
    s.add_argument("--out-checkpoint", required=True)
    s.add_argument("--curves-csv")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="metrics of a checkpoint on manifest segments")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--level", choices=("segment", "subject"), default="segment")
    s.add_argument("--subset", choices=("val", "train", "all"), default="val")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="classify one recording")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--recording", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    s.add_argument("--hidden", type=_positive_int, default=4)
    s.add_argument("--input-dim", type=_positive_int, default=3)
    s.add_argument("--seq-len", type=_positive_int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tolerance", type=float, default=1e-6)
    s.add_argument("--l2", type=float, default=0.0005)
    s.add_argument("--dropout", type=float, default=0.5)
    s.add_argument("--dense-dim", type=int, default=0)
    s.add_argument("--sample", type=int, default=0, help="check this many random coordinates (0 = all)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("presets", help="list the built-in hyperparameter presets")
    s.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GaitLstmError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
