"""
Multi-seed evaluation loop.

Per seed: pick two instances of every training class for training, shuffle
every other instance into one test clip, run features -> fit -> threshold ->
score -> decide for each algorithm, and report at window and note level.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from config import OOD_LABEL, PipelineConfig, config_hash
from corpus.synth import Corpus
from errors import RejectedInputError
from evaluation.metrics import EvalReport, GroundTruth, confusion, significance
from features.hlds import HldsFilter, assemble, extract_features
from scoring.backends import ALGORITHMS, decision_track, fit, raw_track, threshold, training_set_from_windows
from tools.decision_rules import decide, segments_to_labels

logger = logging.getLogger(__name__)

UNITS = ("window", "note")

# one filter per HLDS config per process; its gain schedule is data independent
_FILTERS: dict[str, HldsFilter] = {}


def hlds_filter_for(config: PipelineConfig) -> HldsFilter:
    key = config.hlds.model_dump_json()
    if key not in _FILTERS:
        _FILTERS[key] = HldsFilter(assemble(config.hlds))
    return _FILTERS[key]


@dataclass(frozen=True)
class Split:
    seed: int
    train: tuple[int, ...]    # corpus instance indices, clip order
    test: tuple[int, ...]

    def to_document(self) -> dict:
        return {"seed": self.seed, "train": list(self.train), "test": list(self.test)}


def split_corpus(corpus: Corpus, training_classes: Sequence[str], per_class: int, seed: int) -> Split:
    rng = np.random.default_rng(seed)
    train = []
    for c in training_classes:
        members = corpus.instances_of(c)
        if len(members) < per_class:
            raise RejectedInputError(
                f"class {c} has {len(members)} instances; {per_class} are needed for training"
            )
        picked = rng.choice(len(members), size=per_class, replace=False)
        train.extend(members[i] for i in sorted(picked))
    chosen = set(train)
    rest = [i for i in range(len(corpus.instances)) if i not in chosen]
    test = [rest[i] for i in rng.permutation(len(rest))]
    return Split(seed=seed, train=tuple(train), test=tuple(test))


@dataclass
class SeedResult:
    seed: int
    split: Split
    reports: list[EvalReport] = field(default_factory=list)
    taus: dict[str, float] = field(default_factory=dict)

    def report(self, algorithm: str, unit: str) -> EvalReport:
        return next(r for r in self.reports if r.algorithm == algorithm and r.unit == unit)


def run_seed(corpus: Corpus, config: PipelineConfig, seed: int, algorithms: Sequence[str] = ALGORITHMS) -> SeedResult:
    hlds = config.hlds
    training_classes = config.corpus.training_classes
    hlds_filter = hlds_filter_for(config)
    split = split_corpus(corpus, training_classes, config.instances_per_class, seed)

    # 1. Training clip -> features -> per-class blocks
    train_clip = corpus.clip(split.train)
    Z_train = extract_features(train_clip.samples, hlds, hlds_filter)
    train_truth = GroundTruth.from_sample_instances(
        train_clip.instances, train_clip.n_samples, hlds.window_len, hlds.overlap, training_classes
    )
    training_set = training_set_from_windows(Z_train, train_truth.window_labels, training_classes)

    # 2. Test clip -> features and ground truth
    test_clip = corpus.clip(split.test)
    Z_test = extract_features(test_clip.samples, hlds, hlds_filter)
    truth = GroundTruth.from_sample_instances(
        test_clip.instances, test_clip.n_samples, hlds.window_len, hlds.overlap, training_classes
    )

    result = SeedResult(seed=seed, split=split)
    for algorithm in algorithms:
        model = fit(algorithm, training_set, config, seed)
        tau = threshold(model, Z_train, config)
        track = decision_track(raw_track(model, Z_test, config), config)
        pred = segments_to_labels(decide(track, config.decision, tau), track.n_windows)
        result.taus[algorithm] = tau
        for unit in UNITS:
            report = confusion(pred, truth, unit)
            report.seed, report.algorithm = seed, algorithm
            result.reports.append(report)
        logger.info(
            "seed %d %s: tau=%.4g window F=%.3f note F=%.3f",
            seed, algorithm, tau, result.report(algorithm, "window").macro_f, result.report(algorithm, "note").macro_f,
        )
    return result


def _run_seed_job(job) -> SeedResult:
    corpus, config, seed, algorithms = job
    return run_seed(corpus, config, seed, algorithms)


@dataclass
class ExperimentResult:
    config: PipelineConfig
    algorithms: tuple[str, ...]
    seeds: list[SeedResult]

    def reports(self) -> list[EvalReport]:
        return [r for s in self.seeds for r in s.reports]

    def macro_series(self, algorithm: str, unit: str) -> list[float]:
        return [s.report(algorithm, unit).macro_f for s in self.seeds]

    def reports_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row for r in self.reports() for row in r.rows()])

    def summary(self) -> dict:
        """Mean per-class and macro F per algorithm and unit, plus paired p-values."""
        table = {}
        for algorithm in self.algorithms:
            table[algorithm] = {}
            for unit in UNITS:
                reports = [s.report(algorithm, unit) for s in self.seeds]
                labels = list(reports[0].f_scores)
                table[algorithm][unit] = {
                    "per_class": {c: float(np.mean([r.f_scores[c] for r in reports])) for c in labels},
                    "macro": float(np.mean([r.macro_f for r in reports])),
                }

        p_values = {}
        if set(ALGORITHMS) <= set(self.algorithms) and len(self.seeds) >= 5:
            for unit in UNITS:
                p_values[unit] = significance(self.macro_series("mddkm", unit), self.macro_series("pknn", unit))

        leaks = {}
        for algorithm in self.algorithms:
            per_seed = [s.report(algorithm, "note").ood_leaks() for s in self.seeds]
            leaks[algorithm] = {"per_seed": per_seed, "seeds_without_leak": sum(1 for n in per_seed if n == 0)}

        first = self.seeds[0]
        note_confusion = {
            a: {
                "seed": first.seed,
                "labels": first.report(a, "note").labels,
                "matrix": first.report(a, "note").confusion.tolist(),
            }
            for a in self.algorithms
        }

        return {
            "seeds": [s.seed for s in self.seeds],
            "f_scores": table,
            "note_confusion": note_confusion,
            "p_values": p_values,
            "ood_note_leaks": leaks,
            "ood_label": OOD_LABEL,
            "tau": {a: [s.taus[a] for s in self.seeds] for a in self.algorithms},
            "config_sha256": config_hash(self.config),
        }


def run_experiment(
    corpus: Corpus,
    seeds: Sequence[int],
    algorithms: Sequence[str] = ALGORITHMS,
    config: PipelineConfig | None = None,
    workers: int = 1,
) -> ExperimentResult:
    config = config or PipelineConfig()
    algorithms = tuple(algorithms)
    seeds = list(seeds)
    unknown = set(algorithms) - set(ALGORITHMS)
    if unknown or not algorithms:
        raise RejectedInputError(f"algorithms must be a non-empty subset of {ALGORITHMS}")
    if not seeds:
        raise RejectedInputError("at least one seed is required")
    # fail before any work if a class is too small
    split_corpus(corpus, config.corpus.training_classes, config.instances_per_class, seeds[0])

    jobs = [(corpus, config, seed, algorithms) for seed in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(job) for job in jobs]
    return ExperimentResult(config=config, algorithms=algorithms, seeds=results)
