"""Synthetic three-class audio corpus (sine, white noise, linear chirp).

Used by the test suite and the end-to-end example run::

    python -m egoaudio.synthetic OUT_DIR --per-class 20 --seed 0
"""

from __future__ import annotations

import argparse
import csv
import os

import numpy as np

from egoaudio.audio_io import AudioClip, write_wav

KINDS = ("sine", "noise", "chirp")


def make_signal(kind: str, duration: float, rng: np.random.Generator, rate: int = 16000) -> np.ndarray:
    t = np.arange(int(round(duration * rate))) / rate
    amp = rng.uniform(0.2, 0.6)
    if kind == "sine":
        f = rng.uniform(300.0, 3000.0)
        x = amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    elif kind == "noise":
        x = rng.normal(0.0, amp / 2, size=t.shape)
    elif kind == "chirp":
        # sweep f0 -> f1 over the visible part of the clip (features keep the first 4 s)
        f0, f1 = rng.uniform(200.0, 1000.0), rng.uniform(3000.0, 6000.0)
        sweep = min(duration, 4.0)
        x = amp * np.sin(2 * np.pi * (f0 * t + (f1 - f0) * t ** 2 / (2 * sweep)))
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return np.clip(x, -1.0, 1.0)


def make_corpus(out_dir: str, per_class: int = 20, seed: int = 0,
                min_dur: float = 1.0, max_dur: float = 6.0, stereo: bool = True,
                nouns: str = "alternate") -> str:
    """Write one WAV per segment plus ``manifest.csv``; returns the manifest path.

    Each kind is its own verb class. Noun classes either alternate 0/1 within a
    kind (``nouns="alternate"``) or repeat the verb class (``nouns="same"``).
    Stereo files carry the same signal on both channels at slightly different gains.
    """
    if nouns not in ("alternate", "same"):
        raise ValueError(f"unknown noun mode {nouns!r}")
    rng = np.random.default_rng(seed)
    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    rows = []
    for verb, kind in enumerate(KINDS):
        for i in range(per_class):
            dur = round(float(rng.uniform(min_dur, max_dur)), 2)
            x = make_signal(kind, dur, rng)
            samples = np.stack([x, 0.9 * x]) if stereo else x
            seg_id = f"{kind}_{i:03d}"
            rel = f"audio/{seg_id}.wav"
            write_wav(os.path.join(out_dir, rel), AudioClip(samples, 16000))
            noun = verb if nouns == "same" else i % 2
            rows.append([seg_id, "P01", f"P01_{verb:02d}", 0.0, dur, verb, noun, rel])
    path = os.path.join(out_dir, "manifest.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "participant_id", "video_id", "start_sec", "stop_sec",
                    "verb_class", "noun_class", "audio_path"])
        w.writerows(rows)
    return path


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--per-class", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--nouns", choices=("alternate", "same"), default="alternate")
    args = ap.parse_args(argv)
    print(make_corpus(args.out_dir, args.per_class, args.seed, nouns=args.nouns))


if __name__ == "__main__":
    main()
