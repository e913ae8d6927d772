"""Exit criteria for the pipeline, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) and checks
its runtime budget alongside the numerical tolerance.
"""

import contextlib
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_RESULTS
from egoaudio import kernels
from egoaudio.audio_io import AudioClip
from egoaudio.cli import main as cli_main
from egoaudio.dataset import (
    Manifest,
    SegmentRecord,
    action_split,
    encode_split_csv,
    filter_min_instances,
    stratified_split,
)
from egoaudio.dsp import decode_feature, encode_feature, featurize_samples, featurize_segment, stft
from egoaudio.evaluate import (
    chance_accuracy,
    compose_action_scores,
    confusion_matrix,
    confusion_pgm,
    macro_precision_recall,
    topk_accuracy,
)
from egoaudio.nnet import (
    ModelConfig,
    TrainConfig,
    build_vgg11,
    decode_checkpoint,
    encode_checkpoint,
    train,
)
from egoaudio.nnet import layers as L
from egoaudio.synthetic import KINDS, make_corpus, make_signal
from gradcheck import numeric_grad, rel_error


@contextlib.contextmanager
def criterion(num, title, budget_s):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException as exc:
        ACCEPTANCE_RESULTS[num] = ("FAIL", f"{title}: {type(exc).__name__}: {str(exc).splitlines()[0][:120]}")
        raise
    elapsed = time.perf_counter() - t0
    if elapsed >= budget_s:
        ACCEPTANCE_RESULTS[num] = ("FAIL", f"{title}: {elapsed:.1f}s exceeds {budget_s}s budget")
        pytest.fail(f"criterion {num} took {elapsed:.1f}s (budget {budget_s}s)")
    ACCEPTANCE_RESULTS[num] = ("PASS", f"{title} ({elapsed:.2f}s)")


def naive_dft_frames(x, frame_len=661, hop=256, basis=None):
    n = np.arange(frame_len)
    w = 0.54 - 0.46 * np.cos(2 * np.pi * n / (frame_len - 1))
    count = 1 + (len(x) - frame_len) // hop
    frames = np.array([x[i * hop:i * hop + frame_len] * w for i in range(count)])
    return basis @ frames.T


def test_01_spectrogram_geometry():
    with criterion(1, "spectrogram geometry 331x248, valid frames 248 / 123", 1.0):
        rng = np.random.default_rng(1)
        four = featurize_segment(AudioClip(rng.uniform(-0.5, 0.5, 64000), 16000))
        assert four.values.shape == (331, 248) and four.valid_frames == 1 + (64000 - 661) // 256 == 248
        two = featurize_segment(AudioClip(rng.uniform(-0.5, 0.5, 32000), 16000))
        assert two.values.shape == (331, 248) and two.valid_frames == 1 + (32000 - 661) // 256 == 123
        assert not np.any(two.values[:, 123:])
        assert np.any(two.values[:, :123])


def test_02_stft_matches_naive_dft():
    with criterion(2, "STFT vs naive DFT, 100 signals, 1e-6 abs", 30.0):
        rng = np.random.default_rng(2)
        n = np.arange(661)
        basis = np.exp(-2j * np.pi * np.outer(np.arange(331), n) / 661)
        worst = 0.0
        for _ in range(100):
            x = rng.standard_normal(int(rng.integers(661, 4001)))
            worst = max(worst, float(np.max(np.abs(stft(x) - naive_dft_frames(x, basis=basis)))))
        assert worst < 1e-6, worst


def test_03_parseval_per_frame():
    with criterion(3, "per-frame Parseval, 1e-6 relative", 5.0):
        rng = np.random.default_rng(3)
        w = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(661) / 660)
        for _ in range(200):
            frame = rng.standard_normal(661) * rng.uniform(1e-3, 1e3)
            half = stft(frame)[:, 0]
            # N = 661 is odd: bins 1..330 each have a conjugate twin
            full_energy = abs(half[0]) ** 2 + 2 * np.sum(np.abs(half[1:]) ** 2)
            time_energy = np.sum((w * frame) ** 2)
            assert abs(full_energy / 661 - time_energy) <= 1e-6 * time_energy


def _gradcheck_all(rng):
    worst = {}

    def note(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(20):
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        k = int(rng.integers(1, 4))
        x, w, b = rng.standard_normal(shape), rng.standard_normal((k, shape[1], 3, 3)), rng.standard_normal(k)
        r = rng.standard_normal((shape[0], k) + shape[2:])
        f = lambda: float(np.sum(L.conv2d(x, w, b) * r))  # noqa: E731
        gx, gw, gb = L.conv2d_backward(x, w, r)
        note("conv2d", max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, w)),
                           rel_error(gb, numeric_grad(f, b))))

        n, fi, fo = (int(v) for v in rng.integers(1, 7, 3))
        x, w, b = rng.standard_normal((n, fi)), rng.standard_normal((fi, fo)), rng.standard_normal(fo)
        r = rng.standard_normal((n, fo))
        f = lambda: float(np.sum(L.linear(x, w, b) * r))  # noqa: E731
        gx, gw, gb = L.linear_backward(x, w, r)
        note("linear", max(rel_error(gx, numeric_grad(f, x)), rel_error(gw, numeric_grad(f, w)),
                           rel_error(gb, numeric_grad(f, b))))

        x = rng.standard_normal((n, fi + 2))
        x[np.abs(x) < 1e-3] = 0.1
        r = rng.standard_normal(x.shape)
        f = lambda: float(np.sum(L.relu(x) * r))  # noqa: E731
        note("relu", rel_error(L.relu_backward(x, r), numeric_grad(f, x)))

        x = rng.standard_normal((1, 2, int(rng.integers(1, 16)), int(rng.integers(1, 16))))
        r = rng.standard_normal((1, 2, 7, 7))
        f = lambda: float(np.sum(L.adaptive_avg_pool(x) * r))  # noqa: E731
        note("adaptive_avg_pool", rel_error(L.adaptive_avg_pool_backward(r, x.shape), numeric_grad(f, x)))

        z = rng.standard_normal((n, fo + 1)) * 3
        y = rng.integers(0, fo + 1, n)
        f = lambda: L.softmax_cross_entropy(z, y)[0]  # noqa: E731
        note("softmax_cross_entropy", rel_error(L.softmax_cross_entropy(z, y)[1], numeric_grad(f, z)))
    return worst


def test_04_gradient_checks():
    with criterion(4, "finite-difference gradient checks, rel err < 1e-3, 20 shapes each", 60.0):
        for name in kernels.available_backends():
            with kernels.use_backend(name):
                worst = _gradcheck_all(np.random.default_rng(4))
            assert set(worst) == {"conv2d", "linear", "relu", "adaptive_avg_pool", "softmax_cross_entropy"}
            assert all(v < 1e-3 for v in worst.values()), (name, worst)


def overfit_fixture(seed=0):
    rng = np.random.default_rng(seed)
    x, y = [], []
    for label, kind in enumerate(KINDS):
        for _ in range(4):
            x.append(featurize_samples(make_signal(kind, float(rng.uniform(1.0, 6.0)), rng)).values)
            y.append(label)
    return np.stack(x), np.array(y)


def test_05_overfit_fixture():
    with criterion(5, "1/16-width VGG-11 hits 100% train top-1 on 12 clips within 200 epochs", 300.0):
        x, y = overfit_fixture()
        runs = []
        for _ in range(2):
            model = build_vgg11(ModelConfig(3, 1 / 16, seed=0))
            res = train(model, x, y, TrainConfig(3e-4, 200, seed=0), target_accuracy=1.0)
            runs.append(res)
        hist = runs[0].history
        assert hist[-1].top1 == 1.0 and len(hist) <= 200
        assert [(e.loss, e.top1) for e in hist] == [(e.loss, e.top1) for e in runs[1].history]
        assert encode_checkpoint(runs[0].checkpoint) == encode_checkpoint(runs[1].checkpoint)


def test_06_end_to_end_synthetic(tmp_path):
    with criterion(6, "60-clip synthetic corpus featurize->split->train->eval, test top-1 >= 0.90", 600.0):
        manifest = make_corpus(str(tmp_path), per_class=20, seed=0)
        feats, split, ckpt, report = (tmp_path / n for n in ("feats", "split.csv", "verb.ckpt", "report.json"))
        assert cli_main(["featurize", "--manifest", manifest, "--audio-root", str(tmp_path),
                         "--features", str(feats)]) == 0
        assert cli_main(["split", "--manifest", manifest, "--task", "verb", "--seed", "0", "--out", str(split)]) == 0
        assert cli_main(["train", "--manifest", manifest, "--features", str(feats), "--splits", str(split),
                         "--task", "verb", "--checkpoint", str(ckpt), "--lr", "3e-4", "--epochs", "30",
                         "--width-scale", "0.0625", "--seed", "0"]) == 0
        assert cli_main(["eval", "--manifest", manifest, "--features", str(feats), "--splits", str(split),
                         "--task", "verb", "--checkpoint", str(ckpt), "--out", str(report)]) == 0
        rep = json.load(open(report))
        assert rep["num_examples"] == 9
        assert rep["top_k_accuracy"]["1"] >= 0.90, rep["top_k_accuracy"]


def test_07_chance_accuracy_oracle():
    with criterion(7, "chance accuracy vs 1e6-draw Monte-Carlo within 0.002; uniform exact", 30.0):
        rng = np.random.default_rng(7)
        for _ in range(10):
            c = int(rng.integers(2, 12))
            train_counts = rng.integers(0, 50, c) + 1
            test_counts = rng.integers(0, 50, c)
            test_counts[0] += 1
            pt, pe = train_counts / train_counts.sum(), test_counts / test_counts.sum()
            guesses = rng.choice(c, size=1_000_000, p=pt)
            truths = rng.choice(c, size=1_000_000, p=pe)
            assert abs(chance_accuracy(train_counts, test_counts) - np.mean(guesses == truths)) < 0.002
        for n in (2, 3, 4, 26, 71, 97):
            assert abs(chance_accuracy(np.full(n, 13), np.full(n, 5)) - 1 / n) < 1e-12


def _random_manifest(rng):
    n = int(rng.integers(1, 200))
    verbs = rng.integers(0, int(rng.integers(1, 8)), n)
    nouns = rng.integers(0, int(rng.integers(1, 8)), n)
    return Manifest([SegmentRecord(f"seg{i:04d}", "P", "V", 0.0, 1.0, int(v), int(m), "a.wav")
                     for i, (v, m) in enumerate(zip(verbs, nouns))])


def _expected_counts(n):
    # round-half-up of 0.10*n and 0.15*n in exact integer arithmetic
    return (n + 5) // 10, (3 * n + 10) // 20


def test_08_split_invariants():
    with criterion(8, "split partition / per-class counts / action rules on 50 manifests", 30.0):
        rng = np.random.default_rng(8)
        for _ in range(50):
            m = _random_manifest(rng)
            seed = int(rng.integers(0, 2**32))
            ids = {r.segment_id for r in m.records}
            for task in ("verb", "noun"):
                s = stratified_split(m, task, seed=seed)
                assert set(s.assignment) == ids
                for label in m.classes(task):
                    members = [s.assignment[r.segment_id] for r in m.records if r.label(task) == label]
                    assert (members.count("val"), members.count("test")) == _expected_counts(len(members))
                assert encode_split_csv(stratified_split(m, task, seed=seed)) == encode_split_csv(s)
            a = action_split(m, seed=seed)
            assert set(a.assignment) == ids
            for label in m.classes("action"):
                members = [a.assignment[r.segment_id] for r in m.records if r.action == label]
                n = len(members)
                assert members.count("train") >= 1
                if n >= 2:
                    assert members.count("test") >= 1
                    val, test = _expected_counts(n - 2)
                    assert (members.count("val"), members.count("test")) == (val, test + 1)
                else:
                    assert members == ["train"]
            assert encode_split_csv(action_split(m, seed=seed)) == encode_split_csv(a)


def test_09_metric_suite():
    with criterion(9, "top-k monotone, confusion rows, macro P/R fixture, compose argmax x1000", 10.0):
        rng = np.random.default_rng(9)
        for _ in range(50):
            c = int(rng.integers(2, 10))
            s = rng.random((30, c))
            y = rng.integers(0, c, 30)
            accs = [topk_accuracy(s, y, k) for k in range(1, c + 2)]
            assert all(b >= a for a, b in zip(accs, accs[1:])) and accs[c - 1] == 1.0
            pred = s.argmax(axis=1)
            cm = confusion_matrix(pred, y, c, normalized=True)
            sums = cm.sum(axis=1)
            has = np.bincount(y, minlength=c) > 0
            assert np.all(np.abs(sums[has] - 1) <= 1e-9)
        p, r = macro_precision_recall([0, 1, 1, 1], [0, 0, 1, 1], 2)
        assert abs(p - 0.8333333333333334) <= 1e-9 and abs(r - 0.75) <= 1e-9
        for _ in range(1000):
            v, n = int(rng.integers(2, 27)), int(rng.integers(2, 72))
            pv, pn = rng.dirichlet(np.ones(v)), rng.dirichlet(np.ones(n))
            vocab = [(i, j) for i in range(v) for j in range(n)]
            best = vocab[int(np.argmax(compose_action_scores(pv, pn, vocab)))]
            assert best == (int(pv.argmax()), int(pn.argmax()))


def test_10_format_round_trips():
    with criterion(10, "EGOSPEC1 / EGONET01 write-read-write bitwise; PGM header", 5.0):
        rng = np.random.default_rng(10)
        img = featurize_samples(rng.standard_normal(40000))
        blob = encode_feature(img)
        assert encode_feature(decode_feature(blob)) == blob
        model = build_vgg11(ModelConfig(4, 1 / 16, seed=10))
        from egoaudio.nnet import to_checkpoint
        net = encode_checkpoint(to_checkpoint(model, epoch=3))
        assert encode_checkpoint(decode_checkpoint(net)) == net
        pgm = confusion_pgm(confusion_matrix([0, 1, 2, 2, 4], [0, 1, 2, 3, 4], 5, normalized=True))
        assert pgm.startswith(b"P5\n5 5\n255\n") and len(pgm) == len(b"P5\n5 5\n255\n") + 25


def test_11_filter_boundary():
    with criterion(11, "filter keeps 101-instance classes, drops 100", 1.0):
        recs = [SegmentRecord(f"a{i}", "P", "V", 0, 1, 0, 0, "x") for i in range(101)]
        recs += [SegmentRecord(f"b{i}", "P", "V", 0, 1, 1, 0, "x") for i in range(100)]
        recs += [SegmentRecord(f"c{i}", "P", "V", 0, 1, 0, 1, "x") for i in range(100)]
        out, verbs, nouns = filter_min_instances(Manifest(recs))
        assert verbs == [0] and nouns == [0]
        assert {r.segment_id[0] for r in out.records} == {"a"} and len(out) == 101
