import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydemic.errors import DimensionError
from hydemic.metrics import (
    ConfidenceRecord, boundary_mask, confidence_histogram, confusion_matrix, density_histogram,
    evaluation_report, fd_bin_width, mcc_multiclass, prediction_confidence, tpr,
)
from hydemic.model import MineralMap


def binary_mcc(tp, fn, fp, tn):
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return (tp * tn - fp * fn) / math.sqrt(den)


def linear_quantile(values, q):
    """Quantile with linear interpolation between order statistics."""
    v = sorted(values)
    pos = q * (len(v) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (pos - lo) * (v[hi] - v[lo])


# --- confusion / MCC / TPR ---------------------------------------------------

def test_confusion_examples():
    np.testing.assert_array_equal(confusion_matrix([0, 1, 2], [0, 1, 2], 3).counts, np.eye(3))
    cm = confusion_matrix([0, 0], [1, 1], 2).counts
    np.testing.assert_array_equal(cm, [[0, 2], [0, 0]])


def test_confusion_row_sums_are_class_frequencies():
    rng = np.random.default_rng(0)
    t, p = rng.integers(0, 7, 500), rng.integers(0, 7, 500)
    cm = confusion_matrix(t, p, 7)
    np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(t, minlength=7))
    assert tpr(t, p) == pytest.approx(np.trace(cm.counts) / cm.total, abs=1e-15)


def test_confusion_errors():
    with pytest.raises(ValueError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(ValueError):
        confusion_matrix([0, 2], [0, 1], 2)


def test_mcc_matches_binary_formula():
    rng = np.random.default_rng(1)
    checked = 0
    while checked < 10_000:
        tp, fn, fp, tn = (int(v) for v in rng.integers(0, 1000, 4))
        if 0 in (tp + fp, tp + fn, tn + fp, tn + fn):
            continue
        # class 0 is "positive": rows are truth, columns prediction
        got = mcc_multiclass(np.array([[tp, fn], [fp, tn]]))
        assert abs(got - binary_mcc(tp, fn, fp, tn)) <= 1e-12
        checked += 1


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 10 ** 6), min_size=1, max_size=12))
def test_mcc_positive_diagonal_is_exactly_one(diag):
    if len(diag) == 1:
        assert mcc_multiclass(np.diag(diag)) == 0.0  # one class: degenerate
    else:
        assert mcc_multiclass(np.diag(diag)) == 1.0


def test_mcc_degenerate_cases():
    assert mcc_multiclass(np.array([[5, 0], [0, 0]])) == 0.0
    assert mcc_multiclass(np.array([[3, 4], [0, 0]])) == 0.0  # all truth in one class
    assert mcc_multiclass(np.array([[3, 0], [4, 0]])) == 0.0  # all predictions in one class
    with pytest.raises(ValueError):
        mcc_multiclass(np.zeros((3, 3), dtype=int))


def test_mcc_permutation_invariance():
    rng = np.random.default_rng(2)
    for _ in range(50):
        m = rng.integers(0, 30, (6, 6))
        perm = rng.permutation(6)
        assert mcc_multiclass(m[np.ix_(perm, perm)]) == pytest.approx(mcc_multiclass(m), abs=1e-14)


def test_tpr_examples():
    assert tpr([1, 2, 3], [1, 2, 3]) == 1.0
    assert tpr([0, 0, 1, 1], [0, 1, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        tpr([], [])


# --- confidence -----------------------------------------------------------------

def test_prediction_confidence_examples():
    assert prediction_confidence([[0.7, 0.2, 0.1]])[0] == pytest.approx(70.0, abs=1e-12)
    assert prediction_confidence(np.full((1, 116), 1 / 116))[0] == pytest.approx(100 / 116, abs=1e-12)
    with pytest.raises(ValueError):
        prediction_confidence([[0.5, 0.4]])


# --- Freedman-Diaconis / histograms -------------------------------------------------

def test_fd_examples():
    assert fd_bin_width([3.0] * 10) == 1.0
    assert fd_bin_width([1, 2, 3, 4, 5, 6, 7, 8]) == pytest.approx(3.5, abs=1e-12)
    with pytest.raises(ValueError):
        fd_bin_width([1.0])


def test_fd_matches_independent_formula():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 400))
        v = list(rng.uniform(90, 100, n))
        spread = linear_quantile(v, 0.75) - linear_quantile(v, 0.25)
        expected = min(2 * spread * n ** (-1 / 3), 5.0)
        assert abs(fd_bin_width(v) - expected) <= 1e-12


def test_histogram_hand_example():
    # 10 samples, bin width 2, five samples in the first bin
    v = [0.0, 0.5, 1.0, 1.5, 1.9, 2.0, 2.5, 3.0, 3.5, 4.0]
    assert fd_bin_width(v) == pytest.approx(2 * (2.875 - 1.125) * 10 ** (-1 / 3), abs=1e-12)
    edges = np.array([0.0, 2.0, 4.0])
    counts, _ = np.histogram(v, bins=edges)
    assert counts[0] == 5
    assert counts[0] / (10 * 2.0) == 0.25


def test_histogram_constant_values():
    hg = density_histogram([97.0] * 6)
    assert hg.bin_edges.size == 2
    assert hg.bin_edges[1] - hg.bin_edges[0] == 1.0
    assert hg.densities[0] == 1.0


def test_histogram_empty_group():
    recs = [ConfidenceRecord(0, 99.0, 1, 1), ConfidenceRecord(1, 98.0, 2, 2)]
    hg = confidence_histogram(recs, "incorrect")
    assert hg.n == 0 and hg.densities.size == 0
    with pytest.raises(ValueError):
        confidence_histogram(recs, "maybe")


def test_histogram_area_is_one_on_random_sets():
    rng = np.random.default_rng(4)
    for _ in range(100):
        n = int(rng.integers(2, 2000))
        v = 100 - rng.exponential(rng.uniform(0.01, 20), n)
        hg = density_histogram(v)
        assert abs(hg.area() - 1.0) <= 1e-9
        assert hg.bin_edges[0] <= v.min() and hg.bin_edges[-1] >= v.max()


@settings(max_examples=150, deadline=None)
@given(st.lists(st.floats(0.0, 100.0, allow_nan=False), min_size=1, max_size=300))
def test_histogram_area_property(values):
    assert abs(density_histogram(values).area() - 1.0) <= 1e-9


# --- reports ---------------------------------------------------------------------

def test_evaluation_report_perfect_prediction():
    truth = np.array([[0, 0, 1], [2, 2, 1]])
    mm = MineralMap(truth.copy(), np.full(truth.shape, 99.0))
    rep = evaluation_report(mm, truth)
    assert rep.mcc == 1.0 and rep.tpr == 1.0 and rep.n_incorrect == 0
    assert rep.mean_confidence == pytest.approx(99.0)
    assert rep.mean_confidence_incorrect is None
    with pytest.raises(DimensionError):
        evaluation_report(mm, truth[:1])


def test_report_files(tmp_path):
    truth = np.array([[0, 1], [1, 0]])
    mm = MineralMap(np.array([[0, 1], [0, 0]]), np.array([[99.0, 98.0], [60.0, 97.0]]))
    rep = evaluation_report(mm, truth, class_names=("a", "ground"))
    rep.write_json(tmp_path / "r.json")
    rep.write_csvs(tmp_path)
    lines = (tmp_path / "confidence_scatter.csv").read_text().splitlines()
    assert lines[0] == "pixel_index,confidence,correct,true_class,pred_class"
    assert lines[3] == "2,60.0,0,1,0"
    assert (tmp_path / "hist_incorrect.csv").read_text().count("\n") == 2


def test_boundary_mask():
    t = np.zeros((7, 7), dtype=int)
    t[:, 4:] = 1
    near = boundary_mask(t, radius=2)
    np.testing.assert_array_equal(near[0], [False, False, True, True, True, True, False])
