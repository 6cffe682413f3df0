"""
One entry point per pipeline step for both scoring algorithms, so the CLI and
the experiment loop drive MDD-KM and PKNN the same way.
"""

from __future__ import annotations

from typing import Literal, Union

import numpy as np

from config import PipelineConfig
from errors import RejectedInputError, SchemaError
from scoring.mddkm import MddKmModel, MddKmTrainer, TrainingSet
from scoring.pknn import PrototypeSet, SomPrototypeLearner, possibility_batch
from tools.decision_rules import ScoreTrack, compute_tau, transform_scores

Algorithm = Literal["mddkm", "pknn"]
ALGORITHMS: tuple[Algorithm, ...] = ("mddkm", "pknn")
Model = Union[MddKmModel, PrototypeSet]


def training_set_from_windows(Z: np.ndarray, window_labels, classes) -> TrainingSet:
    """Groups T x D window features into one column block per training class."""
    labels = np.asarray(window_labels, dtype=object)
    blocks = []
    for c in classes:
        rows = np.flatnonzero(labels == c)
        if rows.size == 0:
            raise RejectedInputError(f"training class {c} has no windows")
        blocks.append(Z[rows].T)
    return TrainingSet(blocks, classes)


def fit(algorithm: Algorithm, training_set: TrainingSet, config: PipelineConfig, seed: int) -> Model:
    if algorithm == "mddkm":
        return MddKmTrainer(config.mddkm).train(training_set, seed=seed)
    if algorithm == "pknn":
        return SomPrototypeLearner(config.pknn).train(training_set, seed=seed)
    raise RejectedInputError(f"unknown algorithm: {algorithm}")


def algorithm_of(model: Model) -> Algorithm:
    return "mddkm" if isinstance(model, MddKmModel) else "pknn"


def raw_track(model: Model, Z: np.ndarray, config: PipelineConfig) -> ScoreTrack:
    """T x C scores as the algorithm emits them: distances for MDD-KM, possibilities for PKNN."""
    hlds = config.hlds
    if isinstance(model, MddKmModel):
        return ScoreTrack(
            values=model.score_batch(Z.T).T,
            labels=tuple(model.labels),
            semantics="distance",
            hop=hlds.hop,
            window_len=hlds.window_len,
        )
    return ScoreTrack(
        values=possibility_batch(model, Z.T, config.pknn.n_neighbors).T,
        labels=tuple(model.labels),
        semantics="similarity",
        hop=hlds.hop,
        window_len=hlds.window_len,
    )


def decision_track(track: ScoreTrack, config: PipelineConfig) -> ScoreTrack:
    """Higher-is-closer view the decision rules consume."""
    if track.semantics == "distance":
        return transform_scores(track, config.decision.transform_floor)
    return track


def threshold(model: Model, Z_train: np.ndarray, config: PipelineConfig) -> float:
    if config.decision.tau is not None:
        return config.decision.tau
    return compute_tau(raw_track(model, Z_train, config), algorithm_of(model), config.decision)


def model_to_document(model: Model, tau: float, provenance: dict) -> dict:
    document = model.to_document()
    document["metadata"] = {**document.get("metadata", {}), "tau": tau, **provenance}
    return document


def model_from_document(document: dict) -> tuple[Model, float | None]:
    kind = document.get("kind") if isinstance(document, dict) else None
    if kind == "mddkm":
        model = MddKmModel.from_document(document)
    elif kind == "pknn":
        model = PrototypeSet.from_document(document)
    else:
        raise SchemaError(f"unknown model kind: {kind!r}")
    tau = model.metadata.get("tau")
    return model, (float(tau) if tau is not None else None)
