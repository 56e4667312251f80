"""Command-line entry point: ``trafficvis <subcommand> [options]``.

Exit codes: 0 success, 2 input or usage error, 3 guard violation (for
example too few training images per class).
"""
import argparse
import logging
import os
import sys
import time

import numpy as np

from . import cnn
from .byteclass import HISTOGRAM_CSV_HEADER, histogram
from .dataset import (SampleRecord, get_profile, load_manifest, record_chunks, save_manifest,
                      synth_chunks)
from .errors import GuardError, InputError, TrafficVisError
from .experiments import encode_chunks
from .hilbert import layout
from .labels import LABELS
from .metrics import confusion, per_family_accuracy, report_csv, summary
from .pcap import (ReplaySource, build_schedule, chunk_stream, hexdump, iter_payloads,
                   looks_like_pcap, read_pcap)
from .pipeline import run_pipeline
from .png import emit_png

log = logging.getLogger("trafficvis")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GUARD = 3
SEED_ENV = "MSQUID_SEED"


class UsageError(InputError):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def _threshold(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must be in (0, 1), got {v}")
    return v


def _default_seed():
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help=f"master random seed (default: ${SEED_ENV} or 0)")
    common.add_argument("--order", type=_positive_int, default=6,
                        help="Hilbert order; images are 2^order cells wide (default 6)")
    common.add_argument("--threshold", type=_threshold, default=0.5,
                        help="p_malicious at or above which a chunk is malicious (default 0.5)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    common.add_argument("--pretty", action="store_true", help="human-readable tables instead of CSV")

    p = argparse.ArgumentParser(prog="trafficvis", description="Render, train on and detect malicious network payload images.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("visualize", parents=[common], help="render payload chunks to PNG")
    s.add_argument("--input", required=True, help="pcap capture or raw byte file")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--scale", type=_positive_int, default=1, help="pixels per cell")
    s.add_argument("--hex", action="store_true", help="also write a hex dump per chunk")

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic labeled corpus")
    s.add_argument("--profile", required=True)
    s.add_argument("--count", type=_positive_int, required=True)
    s.add_argument("--label", choices=LABELS, default=None,
                   help="must agree with the profile; defaults to the profile's label")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--manifest", required=True, help="JSON Lines manifest to append to")
    s.add_argument("--chunk-len", type=int, default=None, help="bytes per sample (default 4^order)")

    s = sub.add_parser("train", parents=[common], help="train a model from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--iterations", type=_positive_int, default=500)
    s.add_argument("--batch-size", type=_positive_int, default=16)
    s.add_argument("--learning-rate", type=_positive_float, default=0.01)
    s.add_argument("--momentum", type=float, default=0.9)
    s.add_argument("--out", required=True, help="model file to write")
    s.add_argument("--loss-csv", default=None, help="loss trace file (default <out>.loss.csv)")

    s = sub.add_parser("evaluate", parents=[common], help="score a model on a labeled manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--positive-class", choices=LABELS, default=LABELS[1])
    s.add_argument("--out", default=None, help="write the report here instead of stdout")

    s = sub.add_parser("detect", parents=[common], help="replay a capture through the detector")
    s.add_argument("--input", required=True, help="pcap capture")
    s.add_argument("--model", required=True)
    s.add_argument("--speed", type=_positive_float, default=1.0, help="replay speed multiplier")
    s.add_argument("--out", default=None, help="write verdict JSON Lines here instead of stdout")
    s.add_argument("--workers", type=_positive_int, default=2)
    s.add_argument("--queue-capacity", type=_positive_int, default=256)
    s.add_argument("--reject-dir", default=None, help="where to quarantine malformed chunks")
    return p


def _read_input_chunks(path, capacity):
    if not os.path.isfile(path):
        raise UsageError(f"{path}: no such file")
    source_id = os.path.splitext(os.path.basename(path))[0]
    with open(path, "rb") as fh:
        head = fh.read(4)
    if looks_like_pcap(head):
        try:
            packets = read_pcap(path)
        except InputError as exc:
            offset = getattr(exc, "offset", None)
            where = f" at offset {offset}" if offset is not None else ""
            raise InputError(f"{path}{where}: {exc}") from None
        return chunk_stream(iter_payloads(packets), capacity, source_id)
    with open(path, "rb") as fh:
        return chunk_stream([fh.read()], capacity, source_id)


def _load_model(path, order):
    if not os.path.isfile(path):
        raise UsageError(f"{path}: no such file")
    with open(path, "rb") as fh:
        model = cnn.load_model(fh.read())
    if model.input_size != 1 << order:
        raise UsageError(f"{path}: model expects {model.input_size}x{model.input_size} images, "
                         f"--order {order} gives {1 << order}")
    return model


def _manifest_samples(manifest, capacity):
    if not os.path.isfile(manifest):
        raise UsageError(f"{manifest}: no such file")
    records = load_manifest(manifest)
    base = os.path.dirname(os.path.abspath(manifest))
    samples = []
    for r in records:
        try:
            chunks = record_chunks(r, base, capacity)
        except OSError as exc:
            raise InputError(f"{manifest}: sample {r.path}: {exc.strerror or exc}") from None
        samples += [(c, r) for c in chunks]
    return samples


def cmd_visualize(args, out):
    capacity = 4 ** args.order
    chunks = _read_input_chunks(args.input, capacity)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = [HISTOGRAM_CSV_HEADER]
    for c in chunks:
        stem = f"{c.source_id}_{c.seq_no}"
        with open(os.path.join(args.out_dir, stem + ".png"), "wb") as fh:
            fh.write(emit_png(layout(c, args.order), args.scale))
        if args.hex:
            with open(os.path.join(args.out_dir, stem + ".hex"), "w") as fh:
                fh.write(hexdump(c.bytes))
        rows.append(histogram(c.bytes).csv_row())
    with open(os.path.join(args.out_dir, "histograms.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    if not args.quiet:
        print(f"{len(chunks)} image(s) written to {args.out_dir}", file=out)
    return EXIT_OK


def cmd_synth(args, out):
    try:
        profile = get_profile(args.profile)
    except TrafficVisError as exc:
        raise UsageError(str(exc)) from None
    if args.label is not None and args.label != profile.label:
        raise UsageError(f"--label {args.label} conflicts with profile {profile.name} ({profile.label})")
    chunk_len = args.chunk_len or 4 ** args.order
    if chunk_len > 4 ** args.order:
        raise UsageError(f"--chunk-len {chunk_len} exceeds order-{args.order} capacity {4 ** args.order}")
    chunks = synth_chunks(profile, args.count, chunk_len, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    man_dir = os.path.dirname(os.path.abspath(args.manifest))
    os.makedirs(man_dir, exist_ok=True)
    records = []
    for c in chunks:
        path = os.path.join(args.out_dir, f"{profile.name}_s{args.seed}_{c.seq_no:05d}.bin")
        with open(path, "wb") as fh:
            fh.write(c.bytes)
        records.append(SampleRecord(os.path.relpath(os.path.abspath(path), man_dir), profile.label,
                                    profile.family, f"synth:{profile.name}:seed={args.seed}"))
    save_manifest(records, args.manifest, append=True)
    if not args.quiet:
        print(f"{len(records)} {profile.name} sample(s) -> {args.out_dir}", file=out)
    return EXIT_OK


def cmd_train(args, out):
    if not 0 <= args.momentum < 1:
        raise UsageError("--momentum must be in [0, 1)")
    if args.order < 2:
        raise UsageError("--order must be >= 2 for the classifier")
    samples = _manifest_samples(args.manifest, 4 ** args.order)
    labels = [r.label for _, r in samples]
    cnn.check_class_counts([LABELS.index(v) for v in labels])
    x = encode_chunks([c for c, _ in samples], args.order)
    cfg = cnn.TrainConfig(args.iterations, args.batch_size, args.learning_rate, args.momentum, args.seed)
    t0 = time.monotonic()
    model, trace = cnn.train(cnn.init_model(args.seed, 1 << args.order), x, labels, cfg)
    with open(args.out, "wb") as fh:
        fh.write(cnn.save_model(model))
    loss_path = args.loss_csv or args.out + ".loss.csv"
    with open(loss_path, "w") as fh:
        fh.write("iteration,loss\n")
        fh.writelines(f"{i},{v!r}\n" for i, v in enumerate(trace))
    predicted, _ = cnn.predict_labels(model, x, args.threshold)
    acc = float(np.mean([p == t for p, t in zip(predicted, labels)]))
    if not args.quiet:
        print(f"trained on {len(samples)} images in {time.monotonic() - t0:.1f}s; "
              f"final loss {trace[-1]:.6f}", file=out)
    print(f"train_accuracy,{acc:.6f}", file=out)
    return EXIT_OK


def cmd_evaluate(args, out):
    model = _load_model(args.model, args.order)
    samples = _manifest_samples(args.manifest, 4 ** args.order)
    if not samples:
        raise InputError(f"{args.manifest}: no samples")
    x = encode_chunks([c for c, _ in samples], args.order)
    predicted, _ = cnn.predict_labels(model, x, args.threshold)
    truth = [r.label for _, r in samples]
    cm = confusion(truth, predicted, args.positive_class)
    fams = per_family_accuracy((r.family, t, p) for (_, r), t, p in zip(samples, truth, predicted))
    if args.pretty:
        stats = summary(cm)
        text = "  ".join(f"({k[0].upper() if k != 'f1' else 'F1'}) {v:.2%}" for k, v in stats.items()) + "\n"
        text += "".join(f"  {fam:<10} {acc:.2%}\n" for fam, acc in fams.items())
    else:
        text = report_csv(cm, fams)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    return EXIT_OK


def cmd_detect(args, out):
    model = _load_model(args.model, args.order)
    chunks = _read_input_chunks(args.input, 4 ** args.order)
    schedule = build_schedule(chunks, args.speed)
    sink = open(args.out, "w") if args.out else out
    counts = {label: 0 for label in LABELS}
    try:
        source = ReplaySource(schedule, args.queue_capacity)
        for v in run_pipeline(source, model, args.order, args.threshold, workers=args.workers,
                              queue_capacity=args.queue_capacity, reject_dir=args.reject_dir):
            sink.write(v.to_json() + "\n")
            sink.flush()
            counts[v.label] += 1
    finally:
        if args.out:
            sink.close()
    total = sum(counts.values())
    print(f"{total} chunks: " + ", ".join(f"{n} {k}" for k, n in counts.items()), file=sys.stderr)
    return EXIT_OK


COMMANDS = {"visualize": cmd_visualize, "synth": cmd_synth, "train": cmd_train,
            "evaluate": cmd_evaluate, "detect": cmd_detect}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _default_seed()
        return COMMANDS[args.command](args, out)
    except GuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrafficVisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
