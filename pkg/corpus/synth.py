"""
Synthetic note corpus.

Each class is a tone family: harmonic frequencies, a linear frequency sweep
and an amplitude-modulation envelope. Instances vary in length, phase and
level, and are concatenated back-to-back with no silence between them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from config import CorpusConfig, HldsConfig, NoteClassSpec
from errors import RejectedInputError, SchemaError
from evaluation.metrics import NoteInstance

logger = logging.getLogger(__name__)

FADE_SAMPLES = 64


@dataclass(frozen=True)
class Corpus:
    samples: np.ndarray
    sample_rate: int
    instances: tuple[NoteInstance, ...]    # sample spans, end-exclusive

    @property
    def n_samples(self) -> int:
        return int(self.samples.size)

    def instances_of(self, label: str) -> list[int]:
        return [i for i, inst in enumerate(self.instances) if inst.label == label]

    def clip(self, indices) -> "Corpus":
        """Concatenates the chosen instances, in the given order, into a new clip."""
        parts, instances, cursor = [], [], 0
        for k in indices:
            inst = self.instances[k]
            piece = self.samples[inst.start:inst.end]
            parts.append(piece)
            instances.append(NoteInstance(inst.label, cursor, cursor + piece.size))
            cursor += piece.size
        if not parts:
            raise RejectedInputError("a clip needs at least one instance")
        return Corpus(samples=np.concatenate(parts), sample_rate=self.sample_rate, instances=tuple(instances))

    def manifest(self) -> dict:
        return {
            "sample_rate": self.sample_rate,
            "n_samples": self.n_samples,
            "instances": [
                {"index": i, "label": inst.label, "start_sample": inst.start, "end_sample": inst.end}
                for i, inst in enumerate(self.instances)
            ],
        }

    @classmethod
    def from_manifest(cls, samples: np.ndarray, sample_rate: int, manifest: dict) -> "Corpus":
        try:
            instances = tuple(
                NoteInstance(str(row["label"]), int(row["start_sample"]), int(row["end_sample"]))
                for row in manifest["instances"]
            )
            declared_rate = int(manifest["sample_rate"])
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"malformed manifest: {e}") from e
        if declared_rate != sample_rate:
            raise SchemaError(f"manifest says {declared_rate} Hz, audio is {sample_rate} Hz")
        cursor = 0
        for inst in instances:
            if inst.start != cursor or inst.end <= inst.start:
                raise SchemaError(f"manifest instances do not tile the clip at sample {cursor}")
            cursor = inst.end
        if cursor != samples.size:
            raise SchemaError(f"manifest covers {cursor} samples, audio has {samples.size}")
        return cls(samples=np.asarray(samples, dtype=np.float64), sample_rate=sample_rate, instances=instances)


class NoteSynthesizer:
    """Renders a CorpusConfig into audio plus exact instance boundaries."""

    def __init__(self, corpus: CorpusConfig | None = None, hlds: HldsConfig | None = None):
        self.corpus = corpus or CorpusConfig()
        self.hlds = hlds or HldsConfig()

    def duration(self, n_windows: int) -> int:
        """Samples spanned by n_windows sliding windows."""
        return (n_windows - 1) * self.hlds.hop + self.hlds.window_len

    def render_note(self, spec: NoteClassSpec, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        sr = self.corpus.sample_rate
        t = np.arange(n_samples) / sr
        weights = spec.harmonic_weights or [1.0] * len(spec.harmonics)
        tone = np.zeros(n_samples)
        for freq, weight in zip(spec.harmonics, weights):
            # sweep shifts every harmonic by the same Hz/s; clipped to stay below Nyquist
            inst_freq = np.clip(freq + spec.sweep * t, 1.0, sr / 2 - 1.0)
            phase = 2 * np.pi * np.cumsum(inst_freq) / sr + rng.uniform(0, 2 * np.pi)
            tone += weight * np.sin(phase)
        tone /= np.sum(np.abs(weights))

        envelope = 1.0 - 0.5 * spec.am_depth * (1.0 - np.cos(2 * np.pi * spec.am_rate * t + rng.uniform(0, 2 * np.pi)))
        fade = min(FADE_SAMPLES, n_samples // 2)
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(fade) / fade)
        envelope[:fade] *= ramp
        envelope[n_samples - fade:] *= ramp[::-1]

        level = spec.amplitude * rng.uniform(0.85, 1.15)
        return level * envelope * tone

    def synth(self, seed: int = 1) -> Corpus:
        if not self.corpus.classes:
            raise RejectedInputError("corpus spec has no classes")
        rng = np.random.default_rng(seed)

        # 1. Draw every instance, class by class
        drawn = []
        for spec in self.corpus.classes:
            for _ in range(spec.count):
                n_windows = int(rng.integers(spec.min_windows, spec.max_windows + 1))
                drawn.append((spec, self.render_note(spec, self.duration(n_windows), rng)))

        # 2. Shuffle and concatenate back-to-back
        order = rng.permutation(len(drawn))
        parts, instances, cursor = [], [], 0
        for k in order:
            spec, note = drawn[k]
            parts.append(note)
            instances.append(NoteInstance(spec.name, cursor, cursor + note.size))
            cursor += note.size
        samples = np.concatenate(parts)
        samples += self.corpus.noise_floor * rng.standard_normal(samples.size)
        samples = np.clip(samples, -1.0, 1.0)

        logger.info("synthesized %d instances, %d samples", len(instances), samples.size)
        return Corpus(samples=samples, sample_rate=self.corpus.sample_rate, instances=tuple(instances))


def synth(spec: CorpusConfig | None = None, seed: int = 1, hlds: HldsConfig | None = None) -> Corpus:
    return NoteSynthesizer(spec, hlds).synth(seed)
