"""
Confusion matrices, F-scores and paired significance at two granularities.

window unit: every sliding window is one sample; OOD is a scored category.
note unit:   every true note instance is one sample; a predicted segment
             matches an instance when labels agree and the overlap exceeds
             half the instance. Only training classes are scored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.metrics import confusion_matrix

from config import OOD_LABEL
from errors import RejectedInputError
from features.audio import window_count

logger = logging.getLogger(__name__)

Unit = Literal["window", "note"]


@dataclass(frozen=True)
class NoteInstance:
    """A labeled span; sample spans are end-exclusive, window spans inclusive."""

    label: str
    start: int
    end: int


@dataclass(frozen=True)
class GroundTruth:
    window_labels: np.ndarray                 # T labels over training classes + OOD
    instances: tuple[NoteInstance, ...]       # window-level, inclusive ends
    training_classes: tuple[str, ...]

    @property
    def alphabet(self) -> list[str]:
        return list(self.training_classes) + [OOD_LABEL]

    @classmethod
    def from_sample_instances(
        cls,
        instances: Sequence[NoteInstance],
        n_samples: int,
        window_len: int,
        overlap: int,
        training_classes: Sequence[str],
    ) -> "GroundTruth":
        training_classes = tuple(training_classes)
        mapped = [
            NoteInstance(i.label if i.label in training_classes else OOD_LABEL, i.start, i.end)
            for i in instances
        ]
        T = window_count(n_samples, window_len, overlap)
        labels = window_labels_from_instances(mapped, T, window_len, overlap)
        hop = window_len - overlap
        centres = np.arange(T) * hop + window_len // 2

        note_spans = []
        for inst in mapped:
            inside = np.flatnonzero((centres >= inst.start) & (centres < inst.end))
            if inside.size == 0:
                logger.debug("instance %s [%d, %d) covers no window centre", inst.label, inst.start, inst.end)
                continue
            note_spans.append(NoteInstance(inst.label, int(inside[0]), int(inside[-1])))
        return cls(window_labels=labels, instances=tuple(note_spans), training_classes=training_classes)


def window_labels_from_instances(instances: Sequence[NoteInstance], n_windows: int, window_len: int, overlap: int) -> np.ndarray:
    """Each window takes the label of the instance holding its centre sample."""
    hop = window_len - overlap
    ordered = sorted(instances, key=lambda i: i.start)
    starts = np.array([i.start for i in ordered])
    centres = np.arange(n_windows) * hop + window_len // 2
    idx = np.searchsorted(starts, centres, side="right") - 1
    out = np.empty(n_windows, dtype=object)
    for t, k in enumerate(idx):
        if k < 0 or centres[t] >= ordered[k].end:
            raise RejectedInputError(f"window {t} centre {centres[t]} lies outside every instance")
        out[t] = ordered[k].label
    return out


@dataclass
class EvalReport:
    unit: Unit
    labels: list[str]                # confusion row/column order
    confusion: np.ndarray            # rows true, columns predicted
    f_scores: dict[str, float]
    seed: int | None = None
    algorithm: str | None = None
    counts: dict[str, tuple[int, int, int]] = field(default_factory=dict)

    @property
    def macro_f(self) -> float:
        return float(np.mean(list(self.f_scores.values()))) if self.f_scores else 0.0

    def confusion_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.confusion, index=self.labels, columns=self.labels)
        frame.index.name = "true"
        return frame

    def ood_leaks(self) -> int:
        """True OOD samples assigned to a training class."""
        i = self.labels.index(OOD_LABEL)
        return int(self.confusion[i].sum() - self.confusion[i, i])

    def rows(self) -> list[dict]:
        base = {"seed": self.seed, "algorithm": self.algorithm, "unit": self.unit}
        out = [{**base, "label": label, "f_score": f} for label, f in self.f_scores.items()]
        out.append({**base, "label": "macro", "f_score": self.macro_f})
        return out


def f_score(tp: int, fp: int, fn: int) -> float:
    """2PR/(P+R) written as 2TP/(2TP+FP+FN); 0/0 is 0."""
    denominator = 2 * tp + fp + fn
    return 2.0 * tp / denominator if denominator else 0.0


def _check_alphabet(labels, alphabet, what: str):
    unknown = set(labels) - set(alphabet)
    if unknown:
        raise RejectedInputError(f"{what} contains labels outside {alphabet}: {sorted(map(str, unknown))}")


def _window_report(pred: np.ndarray, truth: GroundTruth) -> EvalReport:
    alphabet = truth.alphabet
    if pred.shape[0] != truth.window_labels.shape[0]:
        raise RejectedInputError(
            f"{pred.shape[0]} predicted windows against {truth.window_labels.shape[0]} true windows"
        )
    cm = confusion_matrix(truth.window_labels.astype(str), pred.astype(str), labels=alphabet)
    counts, scores = {}, {}
    for i, label in enumerate(alphabet):
        tp = int(cm[i, i])
        fp = int(cm[:, i].sum()) - tp
        fn = int(cm[i].sum()) - tp
        counts[label] = (tp, fp, fn)
        scores[label] = f_score(tp, fp, fn)
    return EvalReport(unit="window", labels=alphabet, confusion=cm, f_scores=scores, counts=counts)


def _segments(pred: np.ndarray) -> list[NoteInstance]:
    change = np.flatnonzero(pred[1:] != pred[:-1]) + 1
    starts = np.concatenate([[0], change])
    ends = np.concatenate([change, [pred.size]]) - 1
    return [NoteInstance(str(pred[a]), int(a), int(b)) for a, b in zip(starts, ends)]


def _overlap(a: NoteInstance, b: NoteInstance) -> int:
    return max(0, min(a.end, b.end) - max(a.start, b.start) + 1)


def _note_report(pred: np.ndarray, truth: GroundTruth) -> EvalReport:
    alphabet = truth.alphabet
    index = {label: i for i, label in enumerate(alphabet)}
    segments = _segments(pred)
    cm = np.zeros((len(alphabet), len(alphabet)), dtype=np.int64)
    matched_segments: set[int] = set()
    tp = dict.fromkeys(truth.training_classes, 0)
    fn = dict.fromkeys(truth.training_classes, 0)

    for inst in truth.instances:
        length = inst.end - inst.start + 1
        overlaps = [(_overlap(inst, s), j) for j, s in enumerate(segments)]
        hits = [j for ov, j in overlaps if segments[j].label == inst.label and ov > 0.5 * length]
        if hits:
            assigned = inst.label
            matched_segments.update(hits)
        else:
            best = max(overlaps, key=lambda o: (o[0], -o[1]))
            assigned = segments[best[1]].label
        cm[index[inst.label], index[assigned]] += 1
        if inst.label in tp:
            if hits:
                tp[inst.label] += 1
            else:
                fn[inst.label] += 1

    fp = dict.fromkeys(truth.training_classes, 0)
    for j, s in enumerate(segments):
        if s.label in fp and j not in matched_segments:
            fp[s.label] += 1

    counts = {c: (tp[c], fp[c], fn[c]) for c in truth.training_classes}
    scores = {c: f_score(*counts[c]) for c in truth.training_classes}
    return EvalReport(unit="note", labels=alphabet, confusion=cm, f_scores=scores, counts=counts)


def confusion(pred, truth: GroundTruth, unit: Unit = "window") -> EvalReport:
    """Confusion matrix plus per-class and macro F for one unit."""
    pred = np.asarray(pred, dtype=object)
    if pred.ndim != 1 or pred.size == 0:
        raise RejectedInputError("predictions must be a non-empty per-window label sequence")
    _check_alphabet(pred.tolist(), truth.alphabet, "predictions")
    _check_alphabet(truth.window_labels.tolist(), truth.alphabet, "ground truth")
    if unit == "window":
        return _window_report(pred, truth)
    if unit == "note":
        if pred.shape[0] != truth.window_labels.shape[0]:
            raise RejectedInputError("prediction length does not match the ground truth window count")
        return _note_report(pred, truth)
    raise RejectedInputError(f"unknown evaluation unit: {unit}")


def significance(per_seed_a, per_seed_b) -> float:
    """One-sided Wilcoxon signed-rank p-value for A > B on paired scores."""
    a = np.asarray(per_seed_a, dtype=np.float64)
    b = np.asarray(per_seed_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise RejectedInputError("significance needs two paired 1-D samples of equal length")
    if a.size < 5:
        raise RejectedInputError(f"significance needs at least 5 pairs, got {a.size}")
    d = a - b
    if np.all(d == 0):
        return 1.0
    exact = np.all(d != 0) and np.unique(np.abs(d)).size == d.size and d.size <= 50
    result = stats.wilcoxon(a, b, alternative="greater", method="exact" if exact else "approx")
    return float(result.pvalue)
