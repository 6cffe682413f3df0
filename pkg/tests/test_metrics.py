import itertools

import numpy as np
import pytest
from scipy import stats

from errors import RejectedInputError
from evaluation.metrics import GroundTruth, NoteInstance, confusion, f_score, significance


def _labels(*spans):
    return np.array([label for label, n in spans for _ in range(n)], dtype=object)


@pytest.fixture
def truth():
    """A for windows 0-99, OOD for 100-199, B for 200-299."""
    return GroundTruth(
        window_labels=_labels(("A", 100), ("OOD", 100), ("B", 100)),
        instances=(NoteInstance("A", 0, 99), NoteInstance("OOD", 100, 199), NoteInstance("B", 200, 299)),
        training_classes=("A", "B"),
    )


def test_f_score_toy_values():
    scores = [f_score(8, 2, 2), f_score(5, 0, 5), f_score(10, 0, 0)]
    assert scores == pytest.approx([0.8, 2 / 3, 1.0])
    assert np.mean(scores) == pytest.approx(0.8222, abs=1e-4)
    assert f_score(0, 0, 0) == 0.0


def test_perfect_predictions(truth):
    for unit in ("window", "note"):
        report = confusion(truth.window_labels.copy(), truth, unit)
        assert report.macro_f == 1.0
        assert report.ood_leaks() == 0
    assert set(confusion(truth.window_labels, truth, "window").f_scores) == {"A", "B", "OOD"}
    assert set(confusion(truth.window_labels, truth, "note").f_scores) == {"A", "B"}


def test_everything_predicted_ood(truth):
    pred = _labels(("OOD", 300))
    window = confusion(pred, truth, "window")
    assert window.f_scores["A"] == 0.0 and window.f_scores["B"] == 0.0
    assert window.f_scores["OOD"] == pytest.approx(0.5)

    note = confusion(pred, truth, "note")
    assert note.macro_f == 0.0
    assert note.counts["A"] == (0, 0, 1)
    frame = note.confusion_frame()
    assert frame.loc["A", "OOD"] == 1 and frame.loc["B", "OOD"] == 1


def test_confusion_rows_sum_to_true_counts(truth, rng):
    pred = rng.choice(np.array(["A", "B", "OOD"], dtype=object), size=300)
    window = confusion(pred, truth, "window")
    np.testing.assert_array_equal(window.confusion.sum(axis=1), [100, 100, 100])
    note = confusion(pred, truth, "note")
    np.testing.assert_array_equal(note.confusion.sum(axis=1), [1, 1, 1])


def test_window_confusion_is_permutation_invariant(truth, rng):
    pred = rng.choice(np.array(["A", "B", "OOD"], dtype=object), size=300)
    order = rng.permutation(300)
    shuffled = GroundTruth(truth.window_labels[order], (), truth.training_classes)
    np.testing.assert_array_equal(
        confusion(pred[order], shuffled, "window").confusion,
        confusion(pred, truth, "window").confusion,
    )


def test_delay_hurts_windows_but_not_notes(truth):
    pred = _labels(("OOD", 5), ("A", 100), ("OOD", 100), ("B", 95))
    window = confusion(pred, truth, "window")
    assert window.f_scores["A"] == pytest.approx(0.95)
    assert window.macro_f < 1.0
    note = confusion(pred, truth, "note")
    assert note.f_scores == {"A": 1.0, "B": 1.0}


def test_unmatched_segment_is_a_false_positive_and_an_ood_leak(truth):
    pred = _labels(("A", 100), ("OOD", 40), ("B", 50), ("OOD", 10), ("B", 100))
    note = confusion(pred, truth, "note")
    assert note.counts["B"] == (1, 1, 0)
    assert note.f_scores["B"] == pytest.approx(2 / 3)
    assert note.ood_leaks() == 1
    assert confusion(pred, truth, "window").ood_leaks() == 50


def test_rejects_labels_outside_the_alphabet(truth):
    pred = truth.window_labels.copy()
    pred[3] = "Z"
    with pytest.raises(RejectedInputError):
        confusion(pred, truth)
    with pytest.raises(RejectedInputError):
        confusion(truth.window_labels[:10], truth, "window")
    with pytest.raises(RejectedInputError):
        confusion(truth.window_labels, truth, "frame")


def test_window_labels_follow_the_centre_sample():
    instances = [NoteInstance("A", 0, 100), NoteInstance("B", 100, 300)]
    gt = GroundTruth.from_sample_instances(instances, 300, window_len=16, overlap=8, training_classes=["A", "B"])
    assert gt.window_labels.shape == (36,)
    assert gt.window_labels[11] == "A" and gt.window_labels[12] == "B"
    assert gt.instances == (NoteInstance("A", 0, 11), NoteInstance("B", 12, 35))


def test_non_training_classes_become_ood():
    instances = [NoteInstance("A", 0, 100), NoteInstance("B", 100, 300)]
    gt = GroundTruth.from_sample_instances(instances, 300, window_len=16, overlap=8, training_classes=["A"])
    assert gt.alphabet == ["A", "OOD"]
    assert set(gt.window_labels[12:]) == {"OOD"}


def test_rows_carry_macro_and_identity(truth):
    report = confusion(truth.window_labels, truth, "note")
    report.seed, report.algorithm = 7, "pknn"
    rows = report.rows()
    assert rows[-1] == {"seed": 7, "algorithm": "pknn", "unit": "note", "label": "macro", "f_score": 1.0}
    assert len(rows) == 3


# --- significance ---

def test_identical_samples_are_not_significant(rng):
    a = rng.uniform(size=20)
    assert significance(a, a.copy()) == 1.0


def test_uniform_improvement_is_significant(rng):
    b = rng.uniform(size=50)
    assert significance(b + 1.0, b) < 1e-3
    assert significance(b, b + 1.0) > 0.999


def test_exact_p_value_matches_sign_enumeration():
    d = np.array([0.5, -0.1, 1.2, 0.3, -0.7, 0.9, 1.5, -0.2, 0.8, 1.1])
    b = np.arange(10.0)
    a = b + d
    ranks = stats.rankdata(np.abs(a - b))
    observed = ranks[(a - b) > 0].sum()
    at_least = sum(
        ranks[np.array(signs, dtype=bool)].sum() >= observed for signs in itertools.product([0, 1], repeat=10)
    )
    assert significance(a, b) == pytest.approx(at_least / 2**10, rel=1e-9)


def test_significance_rejects_short_or_unpaired_input():
    with pytest.raises(RejectedInputError):
        significance([1, 2, 3, 4], [0, 1, 2, 3])
    with pytest.raises(RejectedInputError):
        significance(np.ones(6), np.ones(7))
