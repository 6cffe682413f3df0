"""
Pipeline configuration.

Every section is a pydantic model that rejects unknown keys and checks its own
invariants, so a config that loads is a config the pipeline can run. Reference
defaults are pre-filled; ``configs/default.json`` spells them out.
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import MissingArtifactError, SchemaError

load_dotenv()

OOD_LABEL = "OOD"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class HldsConfig(_Section):
    """Layer dims are bottom-to-top; the bottom layer is observed through H."""

    layer_dims: list[int] = Field(default_factory=lambda: [96, 24, 12])
    window_len: int = 96
    overlap: int = 48
    innovation_scale: float = Field(1e-3, gt=0)
    observation_scale: float = Field(1e-3, gt=0)
    innovations: list[float] | None = None
    observation_noise: float | None = Field(None, gt=0)
    observation_matrix: Literal["identity"] | list[list[float]] = "identity"
    initial_variance: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _check_layers(self):
        dims = self.layer_dims
        if not dims or any(d < 1 for d in dims):
            raise ValueError("layer_dims must be a non-empty list of positive integers")
        for lower, upper in zip(dims, dims[1:]):
            if lower % upper:
                raise ValueError(f"layer dim {lower} is not divisible by the next layer's dim {upper}")
        if not 0 <= self.overlap < self.window_len:
            raise ValueError("overlap must satisfy 0 <= overlap < window_len")
        if self.observation_matrix == "identity":
            if self.window_len != dims[0]:
                raise ValueError("with an identity observation matrix window_len must equal the bottom layer dim")
        else:
            rows = self.observation_matrix
            if len(rows) != self.window_len or any(len(r) != dims[0] for r in rows):
                raise ValueError("observation_matrix must be window_len x bottom layer dim")
        if self.innovations is not None:
            if len(self.innovations) != len(dims) or any(r <= 0 for r in self.innovations):
                raise ValueError("innovations needs one positive scale per layer")
        return self

    @property
    def hop(self) -> int:
        return self.window_len - self.overlap

    @property
    def layer_innovations(self) -> list[float]:
        """r for a layer of dim k is innovation_scale * k unless given explicitly."""
        if self.innovations is not None:
            return list(self.innovations)
        return [self.innovation_scale * d for d in self.layer_dims]

    @property
    def observation_variance(self) -> float:
        if self.observation_noise is not None:
            return self.observation_noise
        return self.observation_scale * self.window_len


class MddKmConfig(_Section):
    reg_mode: Literal["offset", "nugget"] = "offset"
    cond_threshold: float = Field(1e8, gt=1)
    optimize_sigma_reg: bool = False
    target: Literal["squared_norm", "linear_sum", "quadratic"] = "squared_norm"
    # (length-scale factor, signal factor) pairs around the median-distance / std(y) centre
    starts: list[tuple[float, float]] = Field(
        default_factory=lambda: [(1.0, 1.0), (0.5, 0.5), (0.5, 2.0), (2.0, 0.5), (2.0, 2.0)]
    )
    max_iter: int = Field(200, ge=1)
    log_bound_width: float = Field(10.0, gt=0)
    # select -> re-optimize passes after the multistart stage
    max_reg_rounds: int = Field(4, ge=1)

    @model_validator(mode="after")
    def _check_starts(self):
        if not self.starts or any(a <= 0 or b <= 0 for a, b in self.starts):
            raise ValueError("starts must be non-empty positive factor pairs")
        return self


class SomConfig(_Section):
    epochs_per_prototype: int = Field(200, ge=1)
    learning_rate_start: float = Field(0.5, gt=0)
    learning_rate_end: float = Field(0.01, gt=0)
    radius_start: float | None = Field(None, gt=0)
    radius_end: float = Field(0.5, gt=0)


class PknnConfig(_Section):
    n_prototypes: int = Field(2, ge=1)
    n_neighbors: int = Field(3, ge=1)
    som: SomConfig = Field(default_factory=SomConfig)


class DecisionConfig(_Section):
    tau: float | None = None
    tau_numerator: float = Field(1.8, gt=0)
    pknn_tau: float = Field(0.0015, ge=0)
    min_note_len: int = Field(35, ge=1)
    dominance_len: int = Field(60, ge=1)
    transform_floor: float = Field(1e-12, gt=0)

    @model_validator(mode="after")
    def _check_lengths(self):
        if self.dominance_len < self.min_note_len:
            raise ValueError("dominance_len must be >= min_note_len")
        return self


class NoteClassSpec(_Section):
    """Spectral signature of one synthetic note class."""

    name: str
    count: int = Field(ge=1)
    min_windows: int = Field(ge=1)
    max_windows: int = Field(ge=1)
    harmonics: list[float]
    harmonic_weights: list[float] | None = None
    sweep: float = 0.0
    am_rate: float = Field(6.0, ge=0)
    am_depth: float = Field(0.8, ge=0, le=1)
    amplitude: float = Field(0.5, gt=0, le=1)

    @model_validator(mode="after")
    def _check_signature(self):
        if not self.harmonics or any(f <= 0 for f in self.harmonics):
            raise ValueError(f"class {self.name}: harmonics must be positive frequencies")
        if self.harmonic_weights is not None and len(self.harmonic_weights) != len(self.harmonics):
            raise ValueError(f"class {self.name}: one weight per harmonic")
        if self.max_windows < self.min_windows:
            raise ValueError(f"class {self.name}: max_windows < min_windows")
        return self

    def signature(self) -> tuple:
        return (tuple(self.harmonics), self.sweep, self.am_rate, self.am_depth)


def _default_note_classes() -> list[NoteClassSpec]:
    band = 22050 / 2 / 12  # width of one top-layer band in Hz
    # training classes in bands 1, 3, 5 and OOD classes above; no sweep leaves its band within max_windows
    layout = [
        # name, count, band, am_rate, sweep (Hz/s)
        ("A", 15, 1, 5.0, 1200.0),
        ("B", 6, 3, 7.0, -1200.0),
        ("C", 4, 5, 4.0, 800.0),
        ("D", 4, 7, 6.0, 0.0),
        ("E", 4, 8, 9.0, 1000.0),
        ("F", 6, 9, 5.5, -1000.0),
        ("G", 7, 10, 8.0, 600.0),
        ("H", 10, 11, 3.5, -800.0),
    ]
    return [
        NoteClassSpec(
            name=name,
            count=count,
            min_windows=90,
            max_windows=150,
            harmonics=[(b + 0.5) * band],
            sweep=sweep,
            am_rate=am,
        )
        for name, count, b, am, sweep in layout
    ]


class CorpusConfig(_Section):
    sample_rate: int = Field(22050, gt=0)
    classes: list[NoteClassSpec] = Field(default_factory=_default_note_classes)
    training_classes: list[str] = Field(default_factory=lambda: ["A", "B", "C"])
    noise_floor: float = Field(1e-3, ge=0)

    @model_validator(mode="after")
    def _check_classes(self):
        if not self.classes:
            raise ValueError("corpus needs at least one class")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        if OOD_LABEL in names:
            raise ValueError(f"'{OOD_LABEL}' is reserved")
        signatures = [c.signature() for c in self.classes]
        if len(set(signatures)) != len(signatures):
            raise ValueError("class signatures must be pairwise distinct")
        unknown = set(self.training_classes) - set(names)
        if unknown or not self.training_classes:
            raise ValueError(f"training classes must be a non-empty subset of the corpus classes: {sorted(unknown)}")
        return self

    @property
    def ood_classes(self) -> list[str]:
        return [c.name for c in self.classes if c.name not in self.training_classes]


class PipelineConfig(_Section):
    hlds: HldsConfig = Field(default_factory=HldsConfig)
    mddkm: MddKmConfig = Field(default_factory=lambda: MddKmConfig(reg_mode="nugget"))
    pknn: PknnConfig = Field(default_factory=PknnConfig)
    decision: DecisionConfig = Field(default_factory=DecisionConfig)
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    instances_per_class: int = Field(2, ge=1)
    seed: int = 1
    seeds: list[int] = Field(default_factory=lambda: list(range(1, 51)))
    output_dir: str = Field(default_factory=lambda: os.getenv("NOTEFLOW_OUTPUT_DIR", "out"))

    def provenance(self) -> dict:
        """Metadata block embedded in every artifact; excludes output_dir."""
        body = self.model_dump(mode="json", exclude={"output_dir"})
        return {"config": body, "config_sha256": config_hash(self)}


def config_hash(config: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON form; identical configs hash identically."""
    content = json.dumps(config.model_dump(mode="json", exclude={"output_dir"}), sort_keys=True)
    return hashlib.sha256(content.encode()).hexdigest()


def load_pipeline_config(path: str | os.PathLike | None = None, **overrides) -> PipelineConfig:
    """Loads and validates a JSON config; falls back to $NOTEFLOW_CONFIG, then defaults."""
    path = path or os.getenv("NOTEFLOW_CONFIG")
    data = {}
    if path:
        p = Path(path)
        if not p.exists():
            raise MissingArtifactError(f"config file not found: {p}")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as e:
            raise SchemaError(f"config {p} is not valid JSON: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise SchemaError(f"invalid config: {e}") from e
