"""
Possibilistic K-nearest-neighbor baseline.

Each class is summarized by P prototypes learned with a 1-D ring SOM. A test
signal gets, per class, a possibility in [0, 1]: the best representativeness-
weighted Gaussian similarity among that class's prototypes in its K-nearest
prototype set. Possibilities do not sum to one; all-low means outlier, more
than one high means ambiguous.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import PknnConfig, SomConfig
from errors import DimensionMismatchError, RejectedInputError, SchemaError
from scoring.kernels import as_columns, squared_distances
from scoring.mddkm import SCHEMA_VERSION, TrainingSet

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8


@dataclass(frozen=True)
class ClassPrototypes:
    label: str
    prototypes: np.ndarray   # D x P
    weights: np.ndarray      # P, representativeness in (0, 1]
    scales: np.ndarray       # P, mean distance of assigned points


@dataclass(frozen=True)
class PrototypeSet:
    classes: tuple[ClassPrototypes, ...]
    metadata: dict = field(default_factory=dict)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.classes]

    @property
    def dim(self) -> int:
        return self.classes[0].prototypes.shape[0]

    def stacked(self):
        """All prototypes as one D x (C*P) matrix with owner class, weight and scale per column."""
        protos = np.concatenate([c.prototypes for c in self.classes], axis=1)
        owner = np.concatenate([np.full(c.prototypes.shape[1], i) for i, c in enumerate(self.classes)])
        weights = np.concatenate([c.weights for c in self.classes])
        scales = np.concatenate([c.scales for c in self.classes])
        return protos, owner, weights, scales

    def to_document(self) -> dict:
        return PrototypeDocument(
            schema_version=SCHEMA_VERSION,
            classes=[
                ClassPrototypeDocument(
                    label=c.label,
                    prototypes=c.prototypes.tolist(),
                    weights=c.weights.tolist(),
                    scales=c.scales.tolist(),
                )
                for c in self.classes
            ],
            metadata=self.metadata,
        ).model_dump(mode="json")

    @classmethod
    def from_document(cls, document: dict) -> "PrototypeSet":
        try:
            doc = PrototypeDocument.model_validate(document)
        except ValidationError as e:
            raise SchemaError(f"invalid prototype document: {e}") from e
        return cls(
            classes=tuple(
                ClassPrototypes(
                    label=c.label,
                    prototypes=np.asarray(c.prototypes, dtype=np.float64),
                    weights=np.asarray(c.weights, dtype=np.float64),
                    scales=np.asarray(c.scales, dtype=np.float64),
                )
                for c in doc.classes
            ),
            metadata=doc.metadata,
        )


class ClassPrototypeDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label: str
    prototypes: list[list[float]]
    weights: list[float]
    scales: list[float]


class PrototypeDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal[1]
    kind: Literal["pknn"] = "pknn"
    classes: list[ClassPrototypeDocument] = Field(min_length=1)
    metadata: dict = Field(default_factory=dict)


class RingSom:
    """Online SOM on a ring of P nodes with decaying learning rate and radius."""

    def __init__(self, n_nodes: int, config: SomConfig | None = None):
        self.n_nodes = n_nodes
        self.config = config or SomConfig()
        idx = np.arange(n_nodes)
        gap = np.abs(idx[:, None] - idx[None, :])
        self.ring_distance = np.minimum(gap, n_nodes - gap).astype(np.float64)

    def fit(self, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """X is D x N; returns D x P prototypes."""
        cfg = self.config
        N = X.shape[1]
        P = self.n_nodes
        W = X[:, rng.choice(N, size=P, replace=False)].T.copy()   # P x D

        n_epochs = cfg.epochs_per_prototype * P
        total = n_epochs * N
        r0 = cfg.radius_start if cfg.radius_start is not None else max(P / 2.0, cfg.radius_end)
        r1 = cfg.radius_end
        step = 0
        for _ in range(n_epochs):
            for n in rng.permutation(N):
                frac = step / max(total - 1, 1)
                lr = cfg.learning_rate_start + (cfg.learning_rate_end - cfg.learning_rate_start) * frac
                radius = r0 * (r1 / r0) ** frac
                x = X[:, n]
                winner = int(np.argmin(np.sum((W - x) ** 2, axis=1)))
                d = self.ring_distance[winner]
                # truncated Gaussian neighborhood
                h = np.where(d <= radius, np.exp(-d**2 / (2.0 * radius**2)), 0.0)
                W += (lr * h)[:, None] * (x - W)
                step += 1
        return W.T.copy()


class SomPrototypeLearner:
    """Learns per-class prototypes, their representativeness and scale."""

    def __init__(self, config: PknnConfig | None = None):
        self.config = config or PknnConfig()

    def train(self, training_set: TrainingSet, seed: int = 0) -> PrototypeSet:
        P = self.config.n_prototypes
        smallest = min(b.shape[1] for b in training_set.blocks)
        if smallest < P:
            logger.warning("lowering prototypes per class from %d to %d (smallest class size)", P, smallest)
            P = smallest

        rng = np.random.default_rng(seed)
        classes = []
        for label, X_c in zip(training_set.labels, training_set.blocks):
            W = RingSom(P, self.config.som).fit(X_c, rng)
            classes.append(self._summarize(label, X_c, W))
        return PrototypeSet(
            classes=tuple(classes),
            metadata={"seed": seed, "n_prototypes": P, "n_neighbors": self.config.n_neighbors},
        )

    @staticmethod
    def _summarize(label: str, X_c: np.ndarray, W: np.ndarray) -> ClassPrototypes:
        N = X_c.shape[1]
        sq = squared_distances(W, X_c)          # P x N
        nearest = np.argmin(sq, axis=0)
        dist = np.sqrt(sq[nearest, np.arange(N)])
        P = W.shape[1]
        weights = np.empty(P)
        scales = np.empty(P)
        for j in range(P):
            members = nearest == j
            count = int(members.sum())
            # an unused prototype keeps the smallest positive weight a point can give
            weights[j] = max(count, 1) / N
            scales[j] = max(float(dist[members].mean()) if count else 0.0, SCALE_FLOOR)
        return ClassPrototypes(label=label, prototypes=W, weights=weights, scales=scales)


def train_prototypes(training_set: TrainingSet, P: int = 2, som_config: SomConfig | None = None, seed: int = 0) -> PrototypeSet:
    config = PknnConfig(n_prototypes=P, som=som_config or SomConfig())
    return SomPrototypeLearner(config).train(training_set, seed=seed)


def possibility_batch(prototypes: PrototypeSet, X_test, K: int) -> np.ndarray:
    """C x T matrix of possibilities in [0, 1]."""
    Z = as_columns(X_test)
    protos, owner, weights, scales = prototypes.stacked()
    if Z.shape[0] != protos.shape[0]:
        raise DimensionMismatchError(f"test signals have dimension {Z.shape[0]}, prototypes have {protos.shape[0]}")
    if not 1 <= K <= protos.shape[1]:
        raise RejectedInputError(f"K={K} must be between 1 and the prototype count {protos.shape[1]}")

    sq = squared_distances(protos, Z)                     # (C*P) x T
    sim = weights[:, None] * np.exp(-sq / scales[:, None] ** 2)
    # stable sort so equidistant prototypes keep class order
    order = np.argsort(sq, axis=0, kind="stable")[:K]
    in_k = np.zeros_like(sq, dtype=bool)
    np.put_along_axis(in_k, order, True, axis=0)
    sim = np.where(in_k, sim, 0.0)

    C = len(prototypes.classes)
    out = np.zeros((C, Z.shape[1]))
    for c in range(C):
        out[c] = sim[owner == c].max(axis=0)
    return np.clip(out, 0.0, 1.0)


def possibility(prototypes: PrototypeSet, x_star, K: int) -> np.ndarray:
    x = np.asarray(x_star, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError("possibility expects a single vector")
    return possibility_batch(prototypes, x[:, None], K)[:, 0]
