"""Command-line entry point: ``egoaudio {featurize,stats,split,train,eval,compose,baseline}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache

import numpy as np

from egoaudio import audio_io, dataset, dsp, evaluate
from egoaudio.errors import ConfigError, EgoAudioError
from egoaudio.nnet import (
    ModelConfig,
    TrainConfig,
    build_vgg11,
    load_checkpoint,
    model_from_checkpoint,
    predict_batch,
    save_checkpoint,
    train,
)

log = logging.getLogger("egoaudio")

INDEX_NAME = "index.csv"
FAILURES_NAME = "failures.csv"
FEATURE_SUFFIX = ".egospec"


class CommandError(Exception):
    """Fatal, user-facing failure of a subcommand."""


def _claim(path: str, force: bool) -> str:
    if os.path.exists(path) and not force:
        raise CommandError(f"{path} exists; pass --force to overwrite")
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    return path


def _write_text(path: str, text: str, force: bool) -> None:
    with open(_claim(path, force), "w", newline="") as fh:
        fh.write(text)


def _write_bytes(path: str, data: bytes, force: bool) -> None:
    with open(_claim(path, force), "wb") as fh:
        fh.write(data)


# --- featurize ---------------------------------------------------------------

@lru_cache(maxsize=4)
def _canonical_audio(path: str) -> audio_io.AudioClip:
    return audio_io.to_canonical(audio_io.read_wav(path))


def _featurize_one(args):
    rec, audio_root = args
    try:
        clip = _canonical_audio(os.path.join(audio_root, rec.audio_path))
        seg = audio_io.slice_segment(clip, rec.start_sec, rec.stop_sec)
        img = dsp.featurize_segment(seg)
        return rec.segment_id, dsp.encode_feature(img), None
    except (OSError, EgoAudioError) as exc:
        return rec.segment_id, None, f"{type(exc).__name__}: {exc}"


def cmd_featurize(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    os.makedirs(args.features, exist_ok=True)
    index_path = _claim(os.path.join(args.features, INDEX_NAME), args.force)
    jobs = [(r, args.audio_root) for r in sorted(manifest.records, key=lambda r: (r.audio_path, r.segment_id))]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            results = list(pool.map(_featurize_one, jobs, chunksize=8))
    else:
        results = [_featurize_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    index, failures = [], []
    for seg_id, blob, err in results:
        if err is not None:
            failures.append((seg_id, err))
            continue
        name = seg_id + FEATURE_SUFFIX
        _write_bytes(os.path.join(args.features, name), blob, args.force)
        index.append((seg_id, name))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", "feature_path"])
    w.writerows(index)
    _write_text(index_path, buf.getvalue(), True)
    fail_path = os.path.join(args.features, FAILURES_NAME)
    if failures:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["segment_id", "error"])
        w.writerows(failures)
        _write_text(fail_path, buf.getvalue(), True)
        for seg_id, err in failures:
            print(f"failed {seg_id}: {err}", file=sys.stderr)
    elif os.path.exists(fail_path):
        os.remove(fail_path)
    print(f"featurized {len(index)} segments, {len(failures)} failures")
    return 1 if failures else 0


def read_index(features_dir: str) -> dict[str, str]:
    path = os.path.join(features_dir, INDEX_NAME)
    with open(path, newline="") as fh:
        return {row["segment_id"]: os.path.join(features_dir, row["feature_path"]) for row in csv.DictReader(fh)}


def load_features(features_dir: str, segment_ids) -> np.ndarray:
    index = read_index(features_dir)
    missing = [s for s in segment_ids if s not in index]
    if missing:
        raise CommandError(f"{len(missing)} segments have no features (first: {missing[0]})")
    try:
        return np.stack([dsp.read_feature(index[s]).values for s in segment_ids])
    except FileNotFoundError as exc:
        raise CommandError(f"missing feature file: {exc.filename}") from exc


# --- stats / split / baseline -----------------------------------------------

def cmd_stats(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    stats = dataset.duration_stats(manifest).to_dict()
    stats["coverage_window"] = args.window
    stats["coverage"] = dataset.coverage_at(manifest, args.window)
    stats["histogram_bin"] = args.bin
    rows = dataset.duration_histogram(manifest, args.bin)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_start", "count", "cumulative_percent"])
    w.writerows(rows)
    _write_text(os.path.join(args.out, "stats.json"), json.dumps(stats, indent=2, sort_keys=True) + "\n", args.force)
    _write_text(os.path.join(args.out, "histogram.csv"), buf.getvalue(), args.force)
    print(json.dumps(stats, sort_keys=True))
    return 0


def cmd_split(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    split = dataset.make_split(manifest, args.task, args.val, args.test, args.seed)
    _claim(args.out, args.force)
    _claim(args.out + ".json", args.force)
    dataset.write_split(args.out, split)
    print(json.dumps(dataset.split_sidecar(split), sort_keys=True))
    return 0


def _class_counts(manifest, split, task, which):
    classes = manifest.classes(task)
    pos = {c: i for i, c in enumerate(classes)}
    counts = np.zeros(len(classes), dtype=np.int64)
    by_id = manifest.by_id()
    for sid in split.ids(which):
        counts[pos[by_id[sid].label(task)]] += 1
    return counts


def _chance(manifest, split, task):
    try:
        return evaluate.chance_accuracy(_class_counts(manifest, split, task, "train"),
                                        _class_counts(manifest, split, task, "test"))
    except ConfigError:
        return None


def cmd_baseline(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    split = _read_split(args.splits, manifest)
    task = args.task or split.task
    tr = _class_counts(manifest, split, task, "train")
    te = _class_counts(manifest, split, task, "test")
    out = {"task": task, "num_classes": len(tr), "chance_top1": evaluate.chance_accuracy(tr, te)}
    for k in _topk_list(args.topk):
        out[f"frequency_top{k}"] = evaluate.chance_topk(tr, te, k)
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write_text(args.out, text, args.force)
    print(text, end="")
    return 0


def _read_split(path, manifest):
    split = dataset.read_split(path)
    unknown = set(split.assignment) - set(manifest.by_id())
    if unknown:
        raise CommandError(f"split file lists {len(unknown)} segments absent from the manifest")
    return split


def _topk_list(text: str) -> list[int]:
    try:
        ks = sorted({int(k) for k in text.split(",") if k.strip()})
    except ValueError as exc:
        raise CommandError(f"bad --topk {text!r}") from exc
    if not ks or ks[0] < 1:
        raise CommandError("--topk values must be >= 1")
    return ks


# --- train / eval / compose --------------------------------------------------

def _labelled(manifest, split, task, which):
    ids = split.ids(which)
    classes = manifest.classes(task)
    pos = {c: i for i, c in enumerate(classes)}
    by_id = manifest.by_id()
    return ids, np.array([pos[by_id[s].label(task)] for s in ids], dtype=np.intp), len(classes)


def cmd_train(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    split = _read_split(args.splits, manifest)
    ids, labels, num_classes = _labelled(manifest, split, args.task, "train")
    if not ids:
        raise CommandError("train split is empty")
    ckpt_path = _claim(args.checkpoint, args.force)
    log_path = _claim(args.out or args.checkpoint + ".log.csv", args.force)
    x = load_features(args.features, ids)
    cfg = TrainConfig.for_task(args.task, learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch,
                               momentum=args.momentum, seed=args.seed)
    model = build_vgg11(ModelConfig(num_classes, args.width_scale, args.dropout, args.seed))
    log.info("training %s: %d segments, %d classes, lr=%g, epochs=%d", args.task, len(ids), num_classes,
             cfg.learning_rate, cfg.epochs)
    result = train(model, x, labels, cfg,
                   callback=lambda e: print(f"epoch {e.epoch} loss {e.loss:.6f} top1 {e.top1:.4f}", flush=True))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "top1"])
    for e in result.history:
        w.writerow([e.epoch, repr(e.loss), repr(e.top1)])
    save_checkpoint(ckpt_path, result.checkpoint)
    _write_text(log_path, buf.getvalue(), True)
    return 0


def _model(path, expected_classes, what):
    if not os.path.exists(path):
        raise CommandError(f"{what} checkpoint {path} not found")
    ckpt = load_checkpoint(path)
    if ckpt.config.num_classes != expected_classes:
        raise CommandError(f"{what} checkpoint has {ckpt.config.num_classes} classes, "
                           f"manifest vocabulary has {expected_classes}")
    return model_from_checkpoint(ckpt)


def _emit_report(args, report, labels, scores):
    pred = evaluate.argmax_predictions(scores)
    c = scores.shape[1]
    outputs = [(args.out, report.to_json().encode())]
    if args.confusion_csv:
        raw = evaluate.confusion_csv(evaluate.confusion_matrix(pred, labels, c))
        norm = evaluate.confusion_csv(evaluate.confusion_matrix(pred, labels, c, normalized=True))
        outputs.append((args.confusion_csv, raw.encode()))
        root, ext = os.path.splitext(args.confusion_csv)
        outputs.append((f"{root}.normalized{ext or '.csv'}", norm.encode()))
    if args.confusion_pgm:
        outputs.append((args.confusion_pgm,
                        evaluate.confusion_pgm(evaluate.confusion_matrix(pred, labels, c, normalized=True))))
    for path, _ in outputs:
        _claim(path, args.force)
    for path, data in outputs:
        _write_bytes(path, data, True)
    summary = {f"top{k}": v for k, v in report.top_k_accuracy.items()}
    print(json.dumps({"task": report.task, "n": report.num_examples, **summary,
                      "chance_top1": report.chance_top1}, sort_keys=True))


def cmd_eval(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    split = _read_split(args.splits, manifest)
    ids, labels, num_classes = _labelled(manifest, split, args.task, args.eval_split)
    if not ids:
        raise CommandError(f"{args.eval_split} split is empty")
    model = _model(args.checkpoint, num_classes, args.task)
    scores = predict_batch(model, load_features(args.features, ids))
    report = evaluate.evaluate(args.task, scores, labels, _topk_list(args.topk), _chance(manifest, split, args.task))
    _emit_report(args, report, labels, scores)
    return 0


def cmd_compose(args) -> int:
    manifest = dataset.read_manifest(args.manifest)
    split = _read_split(args.splits, manifest)
    verbs, nouns = manifest.classes("verb"), manifest.classes("noun")
    vpos = {v: i for i, v in enumerate(verbs)}
    npos = {n: i for i, n in enumerate(nouns)}
    vocab = [(vpos[v], npos[n]) for v, n in manifest.classes("action")]
    verb_model = _model(args.verb_checkpoint, len(verbs), "verb")
    noun_model = _model(args.noun_checkpoint, len(nouns), "noun")
    ids, labels, _ = _labelled(manifest, split, "action", args.eval_split)
    if not ids:
        raise CommandError(f"{args.eval_split} split is empty")
    x = load_features(args.features, ids)
    scores = evaluate.compose_action_scores(predict_batch(verb_model, x), predict_batch(noun_model, x), vocab)
    report = evaluate.evaluate("action", scores, labels, _topk_list(args.topk), _chance(manifest, split, "action"))
    _emit_report(args, report, labels, scores)
    return 0


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="egoaudio", description="Audio-only egocentric action recognition pipeline")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        p.add_argument("--manifest", required=True)
        if "features" in flags:
            p.add_argument("--features", required=True, help="feature directory (holds index.csv)")
        if "splits" in flags:
            p.add_argument("--splits", required=True, help="split CSV (JSON sidecar alongside)")
        if "task" in flags:
            p.add_argument("--task", choices=dataset.TASKS, required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("featurize", help="audio segments -> EGOSPEC1 feature files")
    common(p, "features")
    p.add_argument("--audio-root", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("stats", help="duration statistics, histogram and window coverage")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bin", type=float, default=0.5)
    p.add_argument("--window", type=float, default=4.0)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("split", help="train/val/test split for one task")
    common(p, "task")
    p.add_argument("--out", required=True, help="split CSV path")
    p.add_argument("--val", type=float, default=0.10)
    p.add_argument("--test", type=float, default=0.15)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a VGG-11 on the train split")
    common(p, "features", "splits", "task")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="training log CSV (default: CHECKPOINT.log.csv)")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int, default=6)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--width-scale", type=float, default=1.0)
    p.add_argument("--dropout", type=float, default=0.5)
    p.set_defaults(func=cmd_train)

    for name, func, help_ in (("eval", cmd_eval, "evaluate a checkpoint"),
                              ("compose", cmd_compose, "action scores from verb x noun checkpoints")):
        p = sub.add_parser(name, help=help_)
        if name == "eval":
            common(p, "features", "splits", "task")
            p.add_argument("--checkpoint", required=True)
        else:
            common(p, "features", "splits")
            p.add_argument("--verb-checkpoint", required=True)
            p.add_argument("--noun-checkpoint", required=True)
        p.add_argument("--out", required=True, help="report JSON path")
        p.add_argument("--topk", default="1,5")
        p.add_argument("--eval-split", choices=dataset.SPLITS, default="test")
        p.add_argument("--confusion-csv")
        p.add_argument("--confusion-pgm")
        p.set_defaults(func=func)

    p = sub.add_parser("baseline", help="chance accuracy of a split file")
    common(p, "splits")
    p.add_argument("--task", choices=dataset.TASKS)
    p.add_argument("--topk", default="1,5")
    p.add_argument("--out")
    p.set_defaults(func=cmd_baseline)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CommandError, EgoAudioError, OSError) as exc:
        print(f"egoaudio {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
