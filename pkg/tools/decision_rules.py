"""
Deterministic crisp-decision rules over per-window class scores.
Runs AFTER scoring; no step looks at the audio or the model.

Rule chain, applied strictly in order on the mutated track:
  1. scores below tau are discarded
  2. non-zero runs shorter than min_note_len are discarded per class
  3. a class beating all others for more than dominance_len windows is final
  4. each remaining undecided run gets its per-class mean score
  5. per-window argmax (ties -> lowest class index)
  6. crisp runs shorter than min_note_len become OOD
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
import pandas as pd

from config import OOD_LABEL, DecisionConfig
from errors import RejectedInputError

logger = logging.getLogger(__name__)

Semantics = Literal["distance", "similarity"]


@dataclass(frozen=True)
class ScoreTrack:
    """T x C scores aligned to sliding windows."""

    values: np.ndarray
    labels: tuple[str, ...]
    semantics: Semantics = "distance"
    hop: int = 48
    window_len: int = 96

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1:
            raise RejectedInputError("a score track needs at least one window")
        if values.shape[1] != len(self.labels):
            raise RejectedInputError("one label per score column")
        if not np.all(np.isfinite(values)):
            raise RejectedInputError("score track contains non-finite values")
        if self.semantics == "distance" and np.any(values < 0):
            raise RejectedInputError("raw distance scores must be nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_windows(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class DecisionSegment:
    start_window: int
    end_window: int     # inclusive
    label: str

    @property
    def length(self) -> int:
        return self.end_window - self.start_window + 1


def transform_scores(raw: ScoreTrack, floor: float = 1e-12) -> ScoreTrack:
    """-log(sqrt(max(x, floor))) entrywise; reverses order, higher = closer."""
    if raw.semantics != "distance":
        raise RejectedInputError("transform_scores expects raw distance scores")
    x = np.maximum(raw.values, floor)
    return replace(raw, values=-np.log(np.sqrt(x)), semantics="similarity")


def compute_tau(train_track: ScoreTrack, method: Literal["mddkm", "pknn"], config: DecisionConfig | None = None) -> float:
    """MDD-KM: numerator / max transformed score on training windows. PKNN: a constant."""
    config = config or DecisionConfig()
    if train_track is None or train_track.n_windows == 0:
        raise RejectedInputError("tau needs a non-empty training score track")
    if method == "pknn":
        return config.pknn_tau
    if method != "mddkm":
        raise RejectedInputError(f"unknown tau method: {method}")
    track = train_track
    if track.semantics == "distance":
        track = transform_scores(track, config.transform_floor)
    mu = float(track.values.max())
    if mu <= 0:
        raise RejectedInputError(f"maximum training score {mu} must be positive")
    floor_value = -np.log(np.sqrt(config.transform_floor))
    if mu >= floor_value:
        # a training window scored at or below the floor: tau no longer depends on the data
        logger.warning(
            "maximum training score %.6g sits at the transform floor %.6g; tau=%.6g is floor-determined",
            mu, floor_value, config.tau_numerator / mu,
        )
    return config.tau_numerator / mu


def runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal True runs as (start, stop) with stop exclusive."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(np.diff(m.astype(np.int8)))
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def label_runs(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """Maximal runs of equal integer labels as (start, stop, label)."""
    change = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], change])
    stops = np.concatenate([change, [labels.size]])
    return [(int(a), int(b), int(labels[a])) for a, b in zip(starts, stops)]


def decide(track: ScoreTrack, config: DecisionConfig | None = None, tau: float | None = None) -> list[DecisionSegment]:
    config = config or DecisionConfig()
    if track.semantics != "similarity":
        raise RejectedInputError("decide expects transformed or possibility scores (higher = closer)")
    tau = tau if tau is not None else config.tau
    if tau is None:
        raise RejectedInputError("no threshold: pass tau or set decision.tau")

    T, C = track.values.shape
    scores = track.values.copy()
    undecided = -1
    ood = C

    # --- RULE 1: THRESHOLD ---
    kept = scores >= tau

    # --- RULE 2: TOO SHORT TO BE A NOTE ---
    for c in range(C):
        for a, b in runs(kept[:, c]):
            if b - a < config.min_note_len:
                kept[a:b, c] = False
    scores[~kept] = 0.0

    crisp = np.full(T, undecided)
    crisp[~kept.any(axis=1)] = ood

    # --- RULE 3: SUSTAINED DOMINANCE ---
    masked = np.where(kept, scores, -np.inf)
    top = np.argmax(masked, axis=1)
    rows = np.arange(T)
    top_val = masked[rows, top]
    masked[rows, top] = -np.inf
    dominant = np.where(np.isfinite(top_val) & (top_val > masked.max(axis=1)), top, -1)
    for a, b, c in label_runs(dominant):
        if c >= 0 and b - a > config.dominance_len:
            crisp[a:b] = c

    # --- RULE 4 + 5: MEAN OVER UNDECIDED RUNS, THEN ARGMAX ---
    for a, b in runs(crisp == undecided):
        means = scores[a:b].mean(axis=0)
        crisp[a:b] = int(np.argmax(means))    # first maximum wins ties

    # --- RULE 6: SHORT CRISP RUNS ARE OOD ---
    for a, b, c in label_runs(crisp):
        if c != ood and b - a < config.min_note_len:
            crisp[a:b] = ood

    names = list(track.labels) + [OOD_LABEL]
    return [DecisionSegment(a, b - 1, names[c]) for a, b, c in label_runs(crisp)]


def segments_to_labels(segments: list[DecisionSegment], n_windows: int) -> np.ndarray:
    out = np.empty(n_windows, dtype=object)
    for s in segments:
        out[s.start_window:s.end_window + 1] = s.label
    return out


def segments_to_frame(segments: list[DecisionSegment], hop: int, window_len: int) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "start_sample": [s.start_window * hop for s in segments],
            "end_sample": [s.end_window * hop + window_len - 1 for s in segments],
            "start_window": [s.start_window for s in segments],
            "end_window": [s.end_window for s in segments],
            "label": [s.label for s in segments],
        }
    )


def segments_from_frame(frame: pd.DataFrame) -> list[DecisionSegment]:
    return [
        DecisionSegment(int(r.start_window), int(r.end_window), str(r.label))
        for r in frame.itertuples(index=False)
    ]
