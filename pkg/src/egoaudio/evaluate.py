"""Top-k accuracy, macro precision/recall, confusion matrices, chance baselines, action fusion."""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass

import numpy as np

from egoaudio.errors import ConfigError, LabelError


def _check_labels(labels, num_classes):
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    return labels


def label_ranks(scores, labels) -> np.ndarray:
    """0-based rank of each true label; equal scores rank the smaller class index first."""
    s = np.asarray(scores, dtype=np.float64)
    labels = _check_labels(labels, s.shape[1])
    true = s[np.arange(len(s)), labels][:, None]
    cls = np.arange(s.shape[1])[None, :]
    ahead = (s > true) | ((s == true) & (cls < labels[:, None]))
    return ahead.sum(axis=1)


def topk_accuracy(scores, labels, k: int) -> float:
    s = np.asarray(scores)
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValueError("empty score matrix")
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(np.mean(label_ranks(s, labels) < k))


def argmax_predictions(scores) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the smallest class index on ties
    return np.asarray(scores).argmax(axis=1)


def macro_precision_recall(predictions, truths, num_classes: int) -> tuple[float, float]:
    """Unweighted mean precision/recall.

    Precision averages over classes that occur in the truths or the
    predictions (never-predicted classes count as 0); recall averages over
    classes present in the truths only.
    """
    pred = _check_labels(predictions, num_classes)
    true = _check_labels(truths, num_classes)
    cm = confusion_matrix(pred, true, num_classes)
    tp = np.diag(cm)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    in_truth = support > 0
    p_classes = in_truth | (predicted > 0)
    precision = np.divide(tp, predicted, out=np.zeros(num_classes), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros(num_classes), where=in_truth)
    avg_p = float(precision[p_classes].mean()) if p_classes.any() else 0.0
    avg_r = float(recall[in_truth].mean()) if in_truth.any() else 0.0
    return avg_p, avg_r


def confusion_matrix(predictions, truths, num_classes: int, normalized: bool = False) -> np.ndarray:
    """Entry ``(i, j)`` counts truth ``i`` predicted as ``j``; normalized rows sum to 1 where supported."""
    pred = _check_labels(predictions, num_classes)
    true = _check_labels(truths, num_classes)
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    if not normalized:
        return cm
    rows = cm.sum(axis=1, keepdims=True)
    return np.divide(cm, rows, out=np.zeros(cm.shape), where=rows > 0)


def chance_accuracy(train_counts, test_counts) -> float:
    """Expected accuracy of guessing from the train class distribution on the test distribution."""
    a = np.asarray(train_counts, dtype=np.float64)
    b = np.asarray(test_counts, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigError("train and test counts must cover the same classes")
    if a.sum() <= 0 or b.sum() <= 0:
        raise ConfigError("both splits need a positive total count")
    return float(np.dot(a / a.sum(), b / b.sum()))


def chance_topk(train_counts, test_counts, k: int) -> float:
    """Top-k accuracy of always ranking classes by train frequency (ties: smaller index)."""
    a = np.asarray(train_counts, dtype=np.float64)
    b = np.asarray(test_counts, dtype=np.float64)
    order = np.lexsort((np.arange(len(a)), -a))
    return float(b[order[:k]].sum() / b.sum())


def compose_action_scores(verb_scores, noun_scores, action_vocab) -> np.ndarray:
    """``score(v, n) = p_verb(v) * p_noun(n)`` for each pair in ``action_vocab`` (no renormalization).

    Accepts single vectors or ``(N, V)`` / ``(N, N_nouns)`` batches.
    """
    v = np.asarray(verb_scores, dtype=np.float64)
    n = np.asarray(noun_scores, dtype=np.float64)
    pairs = np.asarray(action_vocab, dtype=np.intp).reshape(-1, 2)
    if pairs.size and (pairs[:, 0].min() < 0 or pairs[:, 0].max() >= v.shape[-1]
                       or pairs[:, 1].min() < 0 or pairs[:, 1].max() >= n.shape[-1]):
        raise LabelError("action vocabulary references an unknown verb or noun")
    return v[..., pairs[:, 0]] * n[..., pairs[:, 1]]


@dataclass
class EvalReport:
    task: str
    top_k_accuracy: dict[int, float]
    avg_class_precision: float
    avg_class_recall: float
    confusion: list
    chance_top1: float | None
    num_examples: int

    def to_json(self) -> str:
        d = asdict(self)
        d["top_k_accuracy"] = {str(k): v for k, v in self.top_k_accuracy.items()}
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def evaluate(task: str, scores, labels, ks=(1, 5), chance_top1: float | None = None) -> EvalReport:
    s = np.asarray(scores, dtype=np.float64)
    c = s.shape[1]
    labels = _check_labels(labels, c)
    pred = argmax_predictions(s)
    p, r = macro_precision_recall(pred, labels, c)
    return EvalReport(
        task=task,
        top_k_accuracy={int(k): topk_accuracy(s, labels, int(k)) for k in ks},
        avg_class_precision=p,
        avg_class_recall=r,
        confusion=confusion_matrix(pred, labels, c, normalized=True).tolist(),
        chance_top1=chance_top1,
        num_examples=len(labels),
    )


def confusion_csv(matrix) -> str:
    m = np.asarray(matrix)
    buf = io.StringIO()
    if np.issubdtype(m.dtype, np.integer):
        cell = lambda x: str(int(x))  # noqa: E731
    else:
        cell = lambda x: repr(float(x))  # noqa: E731
    buf.write("truth," + ",".join(str(j) for j in range(m.shape[1])) + "\n")
    for i, row in enumerate(m):
        buf.write(f"{i}," + ",".join(cell(x) for x in row) + "\n")
    return buf.getvalue()


def confusion_pgm(normalized) -> bytes:
    """Binary PGM (P5), maxval 255; pixel = round(255 * entry), rows = truth."""
    m = np.asarray(normalized, dtype=np.float64)
    pixels = np.clip(np.floor(255.0 * m + 0.5), 0, 255).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or len(parts) < 5:
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    body = data[len(data) - w * h:]
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)
