import numpy as np
import pytest

from config import (
    CorpusConfig,
    HldsConfig,
    MddKmConfig,
    NoteClassSpec,
    PipelineConfig,
    PknnConfig,
    SomConfig,
)
from corpus.synth import NoteSynthesizer


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_hlds():
    return HldsConfig(layer_dims=[16, 4, 2], window_len=16, overlap=8)


def _tiny_classes():
    layout = [("A", 3, 1000.0, 5.0), ("B", 3, 3500.0, 7.0), ("C", 3, 6000.0, 4.0), ("D", 2, 9000.0, 6.0)]
    return [
        NoteClassSpec(name=n, count=c, min_windows=40, max_windows=60, harmonics=[f], am_rate=am)
        for n, c, f, am in layout
    ]


@pytest.fixture
def small_config(small_hlds, tmp_path):
    return PipelineConfig(
        hlds=small_hlds,
        mddkm=MddKmConfig(reg_mode="nugget", max_iter=30),
        pknn=PknnConfig(som=SomConfig(epochs_per_prototype=10)),
        corpus=CorpusConfig(classes=_tiny_classes(), training_classes=["A", "B", "C"]),
        seeds=[1, 2],
        output_dir=str(tmp_path / "out"),
    )


@pytest.fixture
def tiny_corpus(small_config):
    return NoteSynthesizer(small_config.corpus, small_config.hlds).synth(seed=3)


@pytest.fixture
def two_clusters(rng):
    """Two well separated 2-D classes, columns are signals."""
    a = rng.normal(loc=[[-3.0], [0.0]], scale=0.3, size=(2, 8))
    b = rng.normal(loc=[[3.0], [0.0]], scale=0.3, size=(2, 6))
    return a, b
