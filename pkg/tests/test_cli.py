import csv
import json
import os
import shutil

import numpy as np
import pytest

from egoaudio import dsp
from egoaudio.audio_io import AudioClip, write_wav
from egoaudio.cli import main, read_index
from egoaudio.dataset import read_split
from egoaudio.nnet import (
    ModelConfig,
    build_vgg11,
    load_checkpoint,
    model_from_checkpoint,
    predict,
    save_checkpoint,
    to_checkpoint,
)
from egoaudio.synthetic import make_corpus

TINY = "0.0625"


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = make_corpus(str(root), per_class=6, seed=3, max_dur=3.0)
    assert main(["featurize", "--manifest", manifest, "--audio-root", str(root),
                 "--features", str(root / "feats")]) == 0
    return root


def run(*args):
    return main([str(a) for a in args])


def write_manifest(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment_id", "participant_id", "video_id", "start_sec", "stop_sec",
                    "verb_class", "noun_class", "audio_path"])
        w.writerows(rows)
    return path


def test_featurize_two_segments_and_rerun(tmp_path, rng):
    write_wav(tmp_path / "v.wav", AudioClip(rng.uniform(-0.5, 0.5, (2, 16000 * 5)), 16000))
    m = write_manifest(tmp_path / "m.csv", [["a", "P", "V", 0.0, 2.0, 0, 0, "v.wav"],
                                            ["b", "P", "V", 1.5, 5.0, 1, 0, "v.wav"]])
    feats = tmp_path / "f"
    assert run("featurize", "--manifest", m, "--audio-root", tmp_path, "--features", feats) == 0
    index = read_index(str(feats))
    assert sorted(index) == ["a", "b"]
    img = dsp.read_feature(index["a"])
    assert img.valid_frames == 123 and img.values.shape == (331, 248)
    before = {p: open(feats / p, "rb").read() for p in os.listdir(feats)}
    assert run("featurize", "--manifest", m, "--audio-root", tmp_path, "--features", feats) == 1
    assert run("featurize", "--manifest", m, "--audio-root", tmp_path, "--features", feats, "--force") == 0
    assert {p: open(feats / p, "rb").read() for p in os.listdir(feats)} == before


def test_featurize_matches_library_path(tmp_path, rng):
    x = rng.uniform(-0.5, 0.5, (2, 16000 * 3))
    write_wav(tmp_path / "v.wav", AudioClip(x, 16000))
    m = write_manifest(tmp_path / "m.csv", [["a", "P", "V", 0.5, 2.5, 0, 0, "v.wav"]])
    run("featurize", "--manifest", m, "--audio-root", tmp_path, "--features", tmp_path / "f")
    ints = np.round(x * 32768) / 32768
    expected = dsp.featurize_samples(((ints[0] + ints[1]) / 2)[8000:40000])
    assert dsp.read_feature(tmp_path / "f" / "a.egospec").values.tobytes() == expected.values.tobytes()


def test_featurize_isolates_failures(tmp_path, rng):
    write_wav(tmp_path / "v.wav", AudioClip(rng.uniform(-0.5, 0.5, 16000 * 2), 16000))
    m = write_manifest(tmp_path / "m.csv", [["ok", "P", "V", 0.0, 1.5, 0, 0, "v.wav"],
                                            ["short", "P", "V", 0.0, 0.03, 0, 0, "v.wav"],
                                            ["gone", "P", "V", 0.0, 1.0, 0, 0, "missing.wav"]])
    assert run("featurize", "--manifest", m, "--audio-root", tmp_path, "--features", tmp_path / "f") == 1
    assert sorted(read_index(str(tmp_path / "f"))) == ["ok"]
    with open(tmp_path / "f" / "failures.csv") as fh:
        failed = {row["segment_id"]: row["error"] for row in csv.DictReader(fh)}
    assert set(failed) == {"short", "gone"} and "TooShortError" in failed["short"]


def test_stats_outputs(tmp_path):
    m = write_manifest(tmp_path / "m.csv", [[f"s{i}", "P", "V", 0.0, d, 0, 0, "x.wav"]
                                            for i, d in enumerate([1, 1, 4])])
    assert run("stats", "--manifest", m, "--out", tmp_path / "st") == 0
    stats = json.load(open(tmp_path / "st" / "stats.json"))
    assert (stats["min"], stats["mean"], stats["median"], stats["mode"], stats["max"]) == (1, 2, 1, 1, 4)
    rows = list(csv.reader(open(tmp_path / "st" / "histogram.csv")))
    assert rows[0] == ["bin_start", "count", "cumulative_percent"]
    starts = [float(r[0]) for r in rows[1:]]
    assert starts == sorted(starts) and float(rows[-1][2]) == 100.0


def test_stats_coverage(tmp_path):
    m = write_manifest(tmp_path / "m.csv", [[f"s{i}", "P", "V", 0.0, d, 0, 0, "x.wav"]
                                            for i, d in enumerate([2, 3, 5, 6])])
    assert run("stats", "--manifest", m, "--out", tmp_path / "st", "--window", 4.0) == 0
    assert json.load(open(tmp_path / "st" / "stats.json"))["coverage"] == 0.5


def test_split_deterministic_and_errors(corpus, tmp_path):
    m = corpus / "manifest.csv"
    for name in ("a.csv", "b.csv"):
        assert run("split", "--manifest", m, "--task", "verb", "--seed", 7, "--out", tmp_path / name) == 0
    assert open(tmp_path / "a.csv", "rb").read() == open(tmp_path / "b.csv", "rb").read()
    assert open(tmp_path / "a.csv.json", "rb").read() == open(tmp_path / "b.csv.json", "rb").read()
    assert run("split", "--manifest", m, "--task", "verb", "--val", 0.5, "--test", 0.5,
               "--out", tmp_path / "c.csv") == 1
    assert not (tmp_path / "c.csv").exists()
    assert run("split", "--manifest", m, "--task", "verb", "--seed", 7, "--out", tmp_path / "a.csv") == 1


def test_split_action_singleton_goes_to_train(tmp_path):
    m = write_manifest(tmp_path / "m.csv", [["solo", "P", "V", 0, 1, 4, 9, "x.wav"]] +
                       [[f"s{i}", "P", "V", 0, 1, 0, 0, "x.wav"] for i in range(5)])
    assert run("split", "--manifest", m, "--task", "action", "--out", tmp_path / "s.csv") == 0
    assert read_split(tmp_path / "s.csv").assignment["solo"] == "train"


@pytest.fixture(scope="module")
def trained(corpus):
    m = corpus / "manifest.csv"
    run("split", "--manifest", m, "--task", "verb", "--seed", 1, "--out", corpus / "verb.csv")
    code = run("train", "--manifest", m, "--features", corpus / "feats", "--splits", corpus / "verb.csv",
               "--task", "verb", "--checkpoint", corpus / "verb.ckpt", "--lr", 3e-4, "--epochs", 3,
               "--width-scale", TINY, "--seed", 5)
    assert code == 0
    return corpus


def test_train_writes_log_and_is_deterministic(trained, tmp_path):
    m = trained / "manifest.csv"
    code = run("train", "--manifest", m, "--features", trained / "feats", "--splits", trained / "verb.csv",
               "--task", "verb", "--checkpoint", tmp_path / "again.ckpt", "--lr", 3e-4, "--epochs", 3,
               "--width-scale", TINY, "--seed", 5)
    assert code == 0
    log_a = open(str(trained / "verb.ckpt") + ".log.csv").read()
    assert log_a == open(str(tmp_path / "again.ckpt") + ".log.csv").read()
    assert log_a.splitlines()[0] == "epoch,loss,top1" and len(log_a.splitlines()) == 4
    assert open(trained / "verb.ckpt", "rb").read() == open(tmp_path / "again.ckpt", "rb").read()


def test_train_lr_zero_equals_initialization(trained, tmp_path):
    code = run("train", "--manifest", trained / "manifest.csv", "--features", trained / "feats",
               "--splits", trained / "verb.csv", "--task", "verb", "--checkpoint", tmp_path / "z.ckpt",
               "--lr", 0, "--epochs", 1, "--width-scale", TINY, "--seed", 8)
    assert code == 0
    init = build_vgg11(ModelConfig(3, 0.0625, seed=8))
    loaded = model_from_checkpoint(load_checkpoint(tmp_path / "z.ckpt"))
    feat = dsp.read_feature(trained / "feats" / "sine_000.egospec")
    assert predict(loaded, feat).tobytes() == predict(init, feat).tobytes()


def test_train_missing_features(trained, tmp_path):
    feats = tmp_path / "feats"
    shutil.copytree(trained / "feats", feats)
    os.remove(feats / "noise_000.egospec")
    code = run("train", "--manifest", trained / "manifest.csv", "--features", feats, "--splits",
               trained / "verb.csv", "--task", "verb", "--checkpoint", tmp_path / "x.ckpt", "--epochs", 1,
               "--width-scale", TINY)
    split = read_split(trained / "verb.csv")
    assert code == (1 if split.assignment["noise_000"] == "train" else 0)


def test_eval_report(trained, tmp_path):
    out = tmp_path / "r.json"
    code = run("eval", "--manifest", trained / "manifest.csv", "--features", trained / "feats",
               "--splits", trained / "verb.csv", "--task", "verb", "--checkpoint", trained / "verb.ckpt",
               "--out", out, "--topk", "1,2,5", "--confusion-csv", tmp_path / "cm.csv",
               "--confusion-pgm", tmp_path / "cm.pgm")
    assert code == 0
    rep = json.load(open(out))
    acc = rep["top_k_accuracy"]
    assert acc["1"] <= acc["2"] <= acc["5"] == 1.0
    # 6 clips per class -> 1 test clip per class: uniform train and test distributions
    assert rep["chance_top1"] == pytest.approx(1 / 3, abs=1e-12)
    assert rep["num_examples"] == 3
    assert open(tmp_path / "cm.pgm", "rb").read().startswith(b"P5\n3 3\n255\n")
    assert (tmp_path / "cm.normalized.csv").exists()


def test_eval_class_count_mismatch(trained, tmp_path):
    ckpt = tmp_path / "five.ckpt"
    save_checkpoint(ckpt, to_checkpoint(build_vgg11(ModelConfig(5, 0.0625))))
    code = run("eval", "--manifest", trained / "manifest.csv", "--features", trained / "feats",
               "--splits", trained / "verb.csv", "--task", "verb", "--checkpoint", ckpt, "--out", tmp_path / "r.json")
    assert code == 1 and not (tmp_path / "r.json").exists()


def test_baseline(trained, capsys):
    assert run("baseline", "--manifest", trained / "manifest.csv", "--splits", trained / "verb.csv") == 0
    out = json.loads(capsys.readouterr().out)
    assert out["chance_top1"] == pytest.approx(1 / 3) and out["task"] == "verb"


def _uniform_checkpoint(path, num_classes):
    model = build_vgg11(ModelConfig(num_classes, 0.0625))
    last = model.layers[-1]
    last.params["weight"][:] = 0
    save_checkpoint(path, to_checkpoint(model))


def test_compose_uniform_checkpoints_hit_chance(tmp_path, corpus):
    # alternate nouns: 6 balanced actions; all-equal scores always pick action 0
    m = corpus / "manifest.csv"
    run("split", "--manifest", m, "--task", "action", "--seed", 2, "--out", tmp_path / "act.csv")
    _uniform_checkpoint(tmp_path / "v.ckpt", 3)
    _uniform_checkpoint(tmp_path / "n.ckpt", 2)
    code = run("compose", "--manifest", m, "--features", corpus / "feats", "--splits", tmp_path / "act.csv",
               "--verb-checkpoint", tmp_path / "v.ckpt", "--noun-checkpoint", tmp_path / "n.ckpt",
               "--out", tmp_path / "a.json")
    assert code == 0
    rep = json.load(open(tmp_path / "a.json"))
    assert rep["task"] == "action"
    assert rep["top_k_accuracy"]["1"] == pytest.approx(rep["chance_top1"], abs=1e-12)


def test_compose_missing_checkpoint(tmp_path, trained):
    code = run("compose", "--manifest", trained / "manifest.csv", "--features", trained / "feats",
               "--splits", trained / "verb.csv", "--verb-checkpoint", trained / "verb.ckpt",
               "--noun-checkpoint", tmp_path / "nope.ckpt", "--out", tmp_path / "a.json")
    assert code == 1 and not (tmp_path / "a.json").exists()


def test_topk_flag_validation(trained, tmp_path):
    code = run("eval", "--manifest", trained / "manifest.csv", "--features", trained / "feats",
               "--splits", trained / "verb.csv", "--task", "verb", "--checkpoint", trained / "verb.ckpt",
               "--out", tmp_path / "r.json", "--topk", "0")
    assert code == 1


def test_compose_perfect_components_give_perfect_actions(tmp_path):
    # nouns repeat verbs, so one checkpoint that fits the verbs fits the nouns too
    manifest = make_corpus(str(tmp_path), per_class=4, seed=5, max_dur=2.5, nouns="same")
    feats = tmp_path / "feats"
    assert run("featurize", "--manifest", manifest, "--audio-root", tmp_path, "--features", feats) == 0
    assert run("split", "--manifest", manifest, "--task", "action", "--seed", 0, "--out", tmp_path / "a.csv") == 0
    assert run("train", "--manifest", manifest, "--features", feats, "--splits", tmp_path / "a.csv",
               "--task", "verb", "--checkpoint", tmp_path / "v.ckpt", "--lr", "1e-3", "--epochs", 25,
               "--width-scale", TINY) == 0
    args = ["--manifest", manifest, "--features", feats, "--splits", tmp_path / "a.csv", "--eval-split", "train"]
    assert run("eval", *args, "--task", "verb", "--checkpoint", tmp_path / "v.ckpt", "--out", tmp_path / "v.json") == 0
    assert json.load(open(tmp_path / "v.json"))["top_k_accuracy"]["1"] == 1.0
    assert run("compose", *args, "--verb-checkpoint", tmp_path / "v.ckpt", "--noun-checkpoint", tmp_path / "v.ckpt",
               "--out", tmp_path / "act.json") == 0
    rep = json.load(open(tmp_path / "act.json"))
    assert rep["task"] == "action" and rep["top_k_accuracy"]["1"] == 1.0
