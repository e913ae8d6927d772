"""Manifest ingestion, class filtering, duration statistics and the three split procedures."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np

from egoaudio.errors import ConfigError, ManifestError

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("segment_id", "participant_id", "video_id", "start_sec", "stop_sec",
                    "verb_class", "noun_class", "audio_path")
SPLITS = ("train", "val", "test")
TASKS = ("verb", "noun", "action")
MIN_DURATION = 0.5


@dataclass(frozen=True)
class SegmentRecord:
    segment_id: str
    participant_id: str
    video_id: str
    start_sec: float
    stop_sec: float
    verb_class: int
    noun_class: int
    audio_path: str

    @property
    def duration(self) -> float:
        return self.stop_sec - self.start_sec

    @property
    def action(self) -> tuple[int, int]:
        return (self.verb_class, self.noun_class)

    def label(self, task: str):
        if task == "verb":
            return self.verb_class
        if task == "noun":
            return self.noun_class
        if task == "action":
            return self.action
        raise ConfigError(f"unknown task {task!r}")


@dataclass
class Manifest:
    records: list[SegmentRecord]
    verb_vocab: dict[int, str] = field(default_factory=dict)
    noun_vocab: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.segment_id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = next(i for i, c in Counter(ids).items() if c > 1)
            raise ManifestError(f"duplicate segment_id {dup!r}")
        if not self.verb_vocab:
            self.verb_vocab = {v: str(v) for v in sorted({r.verb_class for r in self.records})}
        if not self.noun_vocab:
            self.noun_vocab = {n: str(n) for n in sorted({r.noun_class for r in self.records})}
        for r in self.records:
            if r.verb_class not in self.verb_vocab or r.noun_class not in self.noun_vocab:
                raise ManifestError(f"{r.segment_id}: class id missing from vocabulary")

    def __len__(self):
        return len(self.records)

    def by_id(self) -> dict[str, SegmentRecord]:
        return {r.segment_id: r for r in self.records}

    def classes(self, task: str) -> list:
        """Sorted observed classes for a task; the list index is the model's class index."""
        return sorted({r.label(task) for r in self.records})


def load_manifest(data: bytes | str) -> Manifest:
    text = data.decode("utf-8-sig") if isinstance(data, bytes) else data
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise ManifestError(f"manifest is missing columns: {', '.join(missing)}")
    records = []
    for lineno, row in enumerate(reader, start=2):
        try:
            rec = SegmentRecord(
                segment_id=row["segment_id"],
                participant_id=row["participant_id"],
                video_id=row["video_id"],
                start_sec=float(row["start_sec"]),
                stop_sec=float(row["stop_sec"]),
                verb_class=int(row["verb_class"]),
                noun_class=int(row["noun_class"]),
                audio_path=row["audio_path"],
            )
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
        if not (math.isfinite(rec.start_sec) and math.isfinite(rec.stop_sec)) or rec.stop_sec <= rec.start_sec:
            raise ManifestError(f"line {lineno}: stop_sec must exceed start_sec ({rec.segment_id})")
        if rec.duration < MIN_DURATION:
            log.warning("%s: duration %.3f s is below %.1f s", rec.segment_id, rec.duration, MIN_DURATION)
        records.append(rec)
    return Manifest(records)


def read_manifest(path) -> Manifest:
    with open(path, "rb") as fh:
        return load_manifest(fh.read())


def filter_min_instances(manifest: Manifest, min_count: int = 100):
    """Keep segments whose verb *and* noun each occur more than ``min_count`` times.

    Counts are taken once on the input; removing segments does not trigger a recount.
    Returns ``(filtered manifest, retained verb ids, retained noun ids)``.
    """
    verbs = Counter(r.verb_class for r in manifest.records)
    nouns = Counter(r.noun_class for r in manifest.records)
    keep_v = sorted(v for v, c in verbs.items() if c > min_count)
    keep_n = sorted(n for n, c in nouns.items() if c > min_count)
    sv, sn = set(keep_v), set(keep_n)
    kept = [r for r in manifest.records if r.verb_class in sv and r.noun_class in sn]
    if not kept:
        log.warning("filter_min_instances(%d) removed every segment", min_count)
    return (
        Manifest(kept, {v: manifest.verb_vocab[v] for v in keep_v}, {n: manifest.noun_vocab[n] for n in keep_n}),
        keep_v,
        keep_n,
    )


# --- duration statistics ----------------------------------------------------

@dataclass
class DurationStats:
    min: float
    mean: float
    median: float
    std_dev: float
    mode: float
    max: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def _durations(manifest: Manifest) -> np.ndarray:
    if not manifest.records:
        raise ManifestError("empty manifest")
    return np.array([r.duration for r in manifest.records])


def _round_half_up(x: float, places: int = 1) -> float:
    # repr-based Decimal so 1.05 - 0.0 style float noise does not flip the tie
    q = Decimal(1).scaleb(-places)
    return float(Decimal(repr(round(float(x), 9))).quantize(q, rounding=ROUND_HALF_UP))


def duration_stats(manifest: Manifest) -> DurationStats:
    d = _durations(manifest)
    rounded = Counter(_round_half_up(x) for x in d)
    top = max(rounded.values())
    return DurationStats(
        min=float(d.min()),
        mean=float(d.mean()),
        median=float(np.median(d)),
        std_dev=float(d.std()),
        mode=min(v for v, c in rounded.items() if c == top),
        max=float(d.max()),
        count=len(d),
    )


def duration_histogram(manifest: Manifest, bin_size: float = 0.5) -> list[tuple[float, int, float]]:
    """Rows ``(bin_start, count, cumulative_percent)`` from the first to the last occupied bin.

    Bin ``i`` is the half-open interval ``[i*bin, (i+1)*bin)``.
    """
    if bin_size <= 0:
        raise ConfigError("bin size must be positive")
    d = _durations(manifest)
    idx = np.floor(d / bin_size + 1e-9).astype(int)
    counts = Counter(idx.tolist())
    rows, running = [], 0
    for i in range(min(counts), max(counts) + 1):
        running += counts.get(i, 0)
        rows.append((round(i * bin_size, 10), counts.get(i, 0), 100.0 * running / len(d)))
    return rows


def coverage_at(manifest: Manifest, window: float = 4.0) -> float:
    d = _durations(manifest)
    return float(np.mean(d <= window))


# --- splits -----------------------------------------------------------------

@dataclass
class SplitAssignment:
    assignment: dict[str, str]
    task: str
    seed: int
    val: float = 0.10
    test: float = 0.15

    def ids(self, split: str) -> list[str]:
        return sorted(s for s, v in self.assignment.items() if v == split)

    def counts(self) -> dict[str, int]:
        c = Counter(self.assignment.values())
        return {s: c.get(s, 0) for s in SPLITS}


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def split_counts(n: int, val: float, test: float) -> tuple[int, int]:
    """``(n_val, n_test)`` for a class of ``n`` items, each rounded half-up."""
    fv, ft = Fraction(str(val)), Fraction(str(test))
    return round_half_up(fv * n), round_half_up(ft * n)


def _check_proportions(val: float, test: float) -> None:
    if val < 0 or test < 0 or val + test >= 1:
        raise ConfigError(f"val ({val}) + test ({test}) must be non-negative and sum to < 1")


def _groups(manifest: Manifest, task: str) -> dict:
    groups = defaultdict(list)
    for r in manifest.records:
        groups[r.label(task)].append(r.segment_id)
    return {k: sorted(v) for k, v in sorted(groups.items())}


_TASK_STREAM = {"verb": 11, "noun": 12, "action": 13}


def stratified_split(manifest: Manifest, task: str, val: float = 0.10, test: float = 0.15,
                     seed: int = 0) -> SplitAssignment:
    """Per class: shuffle, take round(test*n) for test, round(val*n) for val, the rest train."""
    if task not in ("verb", "noun"):
        raise ConfigError("stratified_split handles the verb and noun tasks")
    _check_proportions(val, test)
    rng = np.random.default_rng([int(seed), _TASK_STREAM[task]])
    out = {}
    for ids in _groups(manifest, task).values():
        n_val, n_test = split_counts(len(ids), val, test)
        order = [ids[i] for i in rng.permutation(len(ids))]
        for i, sid in enumerate(order):
            out[sid] = "test" if i < n_test else "val" if i < n_test + n_val else "train"
    return SplitAssignment(out, task, seed, val, test)


def action_split(manifest: Manifest, val: float = 0.10, test: float = 0.15, seed: int = 0) -> SplitAssignment:
    """Per (verb, noun) class: first shuffled item to train, second (if any) to test,
    the remaining ``n - 2`` stratified like :func:`stratified_split`."""
    _check_proportions(val, test)
    rng = np.random.default_rng([int(seed), _TASK_STREAM["action"]])
    out = {}
    for ids in _groups(manifest, "action").values():
        order = [ids[i] for i in rng.permutation(len(ids))]
        out[order[0]] = "train"
        if len(order) >= 2:
            out[order[1]] = "test"
        rest = order[2:]
        n_val, n_test = split_counts(len(rest), val, test)
        for i, sid in enumerate(rest):
            out[sid] = "test" if i < n_test else "val" if i < n_test + n_val else "train"
    return SplitAssignment(out, "action", seed, val, test)


def make_split(manifest: Manifest, task: str, val: float = 0.10, test: float = 0.15,
               seed: int = 0) -> SplitAssignment:
    if task == "action":
        return action_split(manifest, val, test, seed)
    return stratified_split(manifest, task, val, test, seed)


# --- split files ------------------------------------------------------------

def encode_split_csv(split: SplitAssignment) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment_id", "split"])
    for sid in sorted(split.assignment):
        w.writerow([sid, split.assignment[sid]])
    return buf.getvalue()


def split_sidecar(split: SplitAssignment) -> dict:
    return {"task": split.task, "seed": split.seed, "val": split.val, "test": split.test,
            "counts": split.counts()}


def write_split(path, split: SplitAssignment) -> str:
    """Write the CSV at ``path`` and the JSON sidecar at ``path + '.json'``."""
    with open(path, "w", newline="") as fh:
        fh.write(encode_split_csv(split))
    sidecar = str(path) + ".json"
    with open(sidecar, "w") as fh:
        json.dump(split_sidecar(split), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sidecar


def read_split(path) -> SplitAssignment:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"segment_id", "split"}:
            raise ManifestError("split file needs segment_id,split columns")
        assignment = {}
        for row in reader:
            if row["split"] not in SPLITS:
                raise ManifestError(f"unknown split {row['split']!r} for {row['segment_id']}")
            assignment[row["segment_id"]] = row["split"]
    meta = {"task": "verb", "seed": 0, "val": 0.10, "test": 0.15}
    try:
        with open(str(path) + ".json") as fh:
            meta.update(json.load(fh))
    except FileNotFoundError:
        pass
    return SplitAssignment(assignment, meta["task"], meta["seed"], meta["val"], meta["test"])
