import json
import math

import pandas as pd
import pytest

from config import config_hash
from engine import NoteFlowEngine, main, parse_seeds
from errors import RejectedInputError
from features.audio import window_count
from memory.artifact_store import ArtifactStore


@pytest.fixture
def config_file(small_config, tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_config.model_dump(mode="json", exclude={"output_dir"})))
    return path


def _run(config_file, out, *args):
    return main([args[0], "--config", str(config_file), "--out", str(out), *args[1:]])


def test_parse_seeds():
    assert parse_seeds("1-5") == [1, 2, 3, 4, 5]
    assert parse_seeds("1,3,7") == [1, 3, 7]
    assert parse_seeds("2-3,9") == [2, 3, 9]
    with pytest.raises(RejectedInputError):
        parse_seeds("a-b")


def test_full_cli_pipeline(config_file, small_config, tmp_path, capsys):
    out = tmp_path / "run"
    store = ArtifactStore(out)
    digest = config_hash(small_config)
    hlds = small_config.hlds

    assert _run(config_file, out, "synth", "--seed", "3") == 0
    manifest = store.load_json("manifest.json")
    assert manifest["metadata"]["config_sha256"] == digest

    assert _run(config_file, out, "features") == 0
    features, header = store.load_frame("features.csv")
    assert header == digest
    assert len(features) == window_count(manifest["n_samples"], hlds.window_len, hlds.overlap)
    assert list(features.columns) == ["window", "start_sample", "z_0", "z_1"]

    for algorithm in ("mddkm", "pknn"):
        assert _run(config_file, out, "train", "--algorithm", algorithm, "--seed", "1") == 0
        assert _run(config_file, out, "score", "--algorithm", algorithm) == 0
        assert _run(config_file, out, "segment", "--algorithm", algorithm) == 0

        test_manifest = store.load_json("test_manifest.json")
        scores, header = store.load_frame(f"scores_{algorithm}.csv")
        assert header == digest
        assert len(scores) == window_count(test_manifest["n_samples"], hlds.window_len, hlds.overlap)
        assert {f"transformed_{c}" for c in "ABC"} <= set(scores.columns)

        segments, _ = store.load_frame(f"segments_{algorithm}.csv")
        assert segments["start_window"].iloc[0] == 0
        assert segments["end_window"].iloc[-1] == len(scores) - 1
        assert (segments["start_window"].iloc[1:].to_numpy() == segments["end_window"].iloc[:-1].to_numpy() + 1).all()
        assert set(segments["label"]) <= {"A", "B", "C", "OOD"}

    model = store.load_json("model_mddkm.json")
    assert model["metadata"]["config_sha256"] == digest
    assert model["metadata"]["tau"] > 0

    assert _run(config_file, out, "eval", "--seeds", "1-2") == 0
    summary = store.load_json("summary.json")
    assert summary["seeds"] == [1, 2]
    assert summary["config_sha256"] == digest
    assert (out / "confusion_pknn_note_seed2.csv").exists()
    reports, _ = store.load_frame("reports.csv")
    assert isinstance(reports, pd.DataFrame) and len(reports) > 0
    capsys.readouterr()


def test_synth_is_byte_identical(config_file, tmp_path):
    for name in ("a", "b"):
        assert _run(config_file, tmp_path / name, "synth", "--seed", "2") == 0
    assert (tmp_path / "a" / "corpus.wav").read_bytes() == (tmp_path / "b" / "corpus.wav").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_missing_model_exits_with_3(config_file, tmp_path, capsys):
    assert _run(config_file, tmp_path / "empty", "score", "--model", "nope.json") == 3
    assert "MissingArtifactError" in capsys.readouterr().err


def test_invalid_config_exits_with_4(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"hlds": {"layer_dims": [96, 25, 12]}}))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path)]) == 4


def test_engine_api_writes_under_out_dir(small_config, tmp_path):
    engine = NoteFlowEngine(small_config, out_dir=tmp_path / "api")
    result = engine.synth(seed=1)
    assert result["metadata"]["config_sha256"] == config_hash(small_config)
    assert all(p.startswith(str(tmp_path / "api")) for p in result["outputs"])


@pytest.mark.slow
def test_default_config_meets_the_acceptance_levels(tmp_path):
    """Mean MDD-KM note macro F of at least 0.85, and no OOD note leaking into a
    training class on nine seeds in ten."""
    out = tmp_path / "default"
    n_seeds = 10
    assert main(["synth", "--out", str(out)]) == 0
    assert main(["eval", "--out", str(out), "--seeds", f"1-{n_seeds}", "--workers", "2"]) == 0
    summary = ArtifactStore(out).load_json("summary.json")
    assert set(summary["f_scores"]) == {"mddkm", "pknn"}
    assert set(summary["p_values"]) == {"window", "note"}
    assert all(0.0 < p <= 1.0 for p in summary["p_values"].values())

    assert summary["f_scores"]["mddkm"]["note"]["macro"] >= 0.85
    assert summary["ood_note_leaks"]["mddkm"]["seeds_without_leak"] >= math.ceil(0.9 * n_seeds)
    # tau computed from a mu at the transform floor would be 1.8 / 13.8155
    assert all(tau > 1.8 / 13.8155 * 1.01 for tau in summary["tau"]["mddkm"])
