import numpy as np
import pytest

from mlpalda.metrics import (
    MetricsReport,
    average_accuracy,
    avg_class_log_likelihood,
    compute_report,
    micro_f1,
)


def test_accuracy_examples():
    t = np.array([[1, 0], [0, 1]])
    assert average_accuracy(t, t) == 1.0
    assert average_accuracy(1 - t, t) == 0.0
    assert average_accuracy(np.array([[1, 0], [0, 0]]), t) == 0.75


def test_micro_f1_examples():
    t = np.array([[1, 0], [0, 1]])
    assert micro_f1(t, t) == 1.0
    # TP=2, FP=1, FN=1
    pred = np.array([[1, 1, 0], [1, 0, 0]])
    truth = np.array([[1, 0, 1], [1, 0, 0]])
    assert micro_f1(pred, truth) == pytest.approx(2 * 2 / (2 * 2 + 1 + 1), abs=1e-15)
    zeros = np.zeros((3, 4), dtype=int)
    assert micro_f1(zeros, zeros) == 1.0


def test_micro_f1_is_one_only_for_exact_match():
    rng = np.random.default_rng(0)
    truth = (rng.random((6, 5)) < 0.4).astype(int)
    truth[0, 0] = 1  # at least one positive
    assert micro_f1(truth, truth) == 1.0
    for _ in range(20):
        pred = truth.copy()
        d, c = rng.integers(6), rng.integers(5)
        pred[d, c] = 1 - pred[d, c]
        assert micro_f1(pred, truth) < 1.0


def test_loglik_examples():
    t = np.array([[1, 0]])
    b = np.array([[0.9, 0.2]])
    expect = (np.log(0.9) + np.log(0.8)) / 2
    assert avg_class_log_likelihood(b, t) == pytest.approx(expect, abs=1e-12)
    uninformative = np.full((4, 3), 0.5)
    truth = np.zeros((4, 3), dtype=int)
    assert avg_class_log_likelihood(uninformative, truth) == pytest.approx(np.log(0.5), abs=1e-12)
    # hard correct beliefs are clamped, so the score sits just below zero
    hard = avg_class_log_likelihood(t.astype(float), t)
    assert hard == pytest.approx(np.log(1 - 1e-9), abs=1e-15)
    assert hard < 0.0
    # hard wrong beliefs stay finite thanks to the same clamp (the 1e-7
    # slack absorbs the float representation of the clamp boundary)
    wrong = avg_class_log_likelihood(1.0 - t.astype(float), t)
    assert np.isfinite(wrong) and wrong == pytest.approx(np.log(1e-9), abs=1e-7)


def test_loglik_maximized_at_truth():
    rng = np.random.default_rng(1)
    truth = (rng.random((5, 4)) < 0.5).astype(int)
    best = avg_class_log_likelihood(truth.astype(float), truth)
    for _ in range(30):
        noisy = np.clip(truth + rng.normal(0, 0.2, size=truth.shape), 0.0, 1.0)
        assert avg_class_log_likelihood(noisy, truth) <= best


def test_permutation_invariance():
    rng = np.random.default_rng(2)
    pred = (rng.random((7, 4)) < 0.5).astype(int)
    truth = (rng.random((7, 4)) < 0.5).astype(int)
    dp = rng.permutation(7)
    cp = rng.permutation(4)
    pred2 = pred[dp][:, cp]
    truth2 = truth[dp][:, cp]
    assert average_accuracy(pred2, truth2) == average_accuracy(pred, truth)
    assert micro_f1(pred2, truth2) == micro_f1(pred, truth)


def test_input_validation():
    with pytest.raises(ValueError, match="0 or 1"):
        average_accuracy(np.array([[2]]), np.array([[1]]))
    with pytest.raises(ValueError, match="mismatch"):
        micro_f1(np.zeros((2, 2), dtype=int), np.zeros((2, 3), dtype=int))
    with pytest.raises(ValueError, match="probabilities"):
        avg_class_log_likelihood(np.array([[1.2]]), np.array([[1]]))
    with pytest.raises(ValueError, match="matrix"):
        average_accuracy(np.array([1, 0]), np.array([1, 0]))


def test_report_csv():
    rep = compute_report(
        np.array([[1, 0]]), np.array([[0.75, 0.25]]), np.array([[1, 0]]), ann_rmse=0.05
    )
    lines = rep.to_csv().splitlines()
    assert lines[0] == "metric,value"
    assert lines[1] == "avg_accuracy,1"
    assert lines[2] == "micro_f1,1"
    assert lines[3].startswith("avg_class_loglik,-0.287682072451780")
    assert lines[4].startswith("ann_rmse,0.05")
    no_rmse = MetricsReport(1.0, 1.0, -0.1)
    assert "ann_rmse" not in no_rmse.to_csv()
    with pytest.raises(ValueError):
        MetricsReport(1.5, 1.0, -0.1)
    with pytest.raises(ValueError):
        MetricsReport(1.0, 1.0, 0.1)
