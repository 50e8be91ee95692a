import itertools

import numpy as np
import pytest

from keepfit.metrics import (
    MetricsError,
    accuracy,
    binary_auc,
    binary_average_precision,
    classification_metrics,
    macro_aupr,
    macro_ovr_auc,
)


def oracle_auc(positives: np.ndarray, scores: np.ndarray) -> float:
    """Brute-force pair counting: wins + half-ties over all pos-neg pairs."""
    pos_scores = scores[positives]
    neg_scores = scores[~positives]
    total = 0.0
    for p in pos_scores:
        for n in neg_scores:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos_scores) * len(neg_scores))


def oracle_average_precision(positives: np.ndarray, scores: np.ndarray) -> float:
    """Direct sweep over distinct thresholds, highest first."""
    n_pos = int(positives.sum())
    ap = 0.0
    recall_prev = 0.0
    for t in sorted(set(scores.tolist()), reverse=True):
        kept = scores >= t
        tp = int((positives & kept).sum())
        precision = tp / int(kept.sum())
        recall = tp / n_pos
        ap += (recall - recall_prev) * precision
        recall_prev = recall
    return ap


def test_accuracy_basics():
    labels = [0, 1, 2, 1]
    scores = np.eye(3)[[0, 1, 1, 1]]
    assert accuracy(labels, scores) == 0.75


def test_accuracy_tie_breaks_to_lowest_index():
    scores = np.array([[0.5, 0.5]])
    assert accuracy([0], scores) == 1.0
    assert accuracy([1], scores) == 0.0


def test_binary_auc_equals_pair_counting_oracle_random():
    rng = np.random.default_rng(0)
    for trial in range(50):
        n = int(rng.integers(3, 12))
        positives = rng.random(n) < 0.5
        if positives.all() or not positives.any():
            continue
        # Quantized scores force plenty of ties.
        scores = np.round(rng.random(n), 1)
        assert binary_auc(positives, scores) == oracle_auc(positives, scores)


def test_binary_ap_equals_threshold_oracle_random():
    rng = np.random.default_rng(1)
    for trial in range(50):
        n = int(rng.integers(2, 12))
        positives = rng.random(n) < 0.5
        if not positives.any():
            continue
        scores = np.round(rng.random(n), 1)
        assert binary_average_precision(positives, scores) == oracle_average_precision(
            positives, scores
        )


def test_perfect_and_inverted_rankings():
    positives = np.array([True, True, False, False])
    perfect = np.array([0.9, 0.8, 0.2, 0.1])
    assert binary_auc(positives, perfect) == 1.0
    assert binary_average_precision(positives, perfect) == 1.0
    assert binary_auc(positives, 1 - perfect) == 0.0


def test_all_tied_scores_give_half_auc():
    positives = np.array([True, False, True, False])
    scores = np.full(4, 0.3)
    assert binary_auc(positives, scores) == 0.5


def test_auc_requires_both_classes():
    with pytest.raises(MetricsError):
        binary_auc(np.array([True, True]), np.array([0.1, 0.2]))


def test_macro_metrics_match_oracle_exhaustively_small():
    rng = np.random.default_rng(2)
    for n in range(2, 7):
        for labels in itertools.product(range(3), repeat=n):
            y = np.array(labels)
            present = set(labels)
            if len(present) < 2:
                continue
            scores = np.round(rng.random((n, 3)), 1)
            auc_vals = [
                oracle_auc(y == c, scores[:, c]) for c in range(3) if c in present
            ] if len(present) == 3 else None
            if auc_vals is not None:
                assert macro_ovr_auc(y, scores) == float(np.mean(auc_vals))
            ap_vals = [
                oracle_average_precision(y == c, scores[:, c])
                for c in range(3)
                if c in present
            ]
            with pytest.warns(UserWarning) if len(present) < 3 else _nowarn():
                assert macro_aupr(y, scores) == float(np.mean(ap_vals))


class _nowarn:
    def __enter__(self):
        return self

    def __exit__(self, *args):
        return False


def test_absent_class_warns_and_averages_present_only():
    y = np.array([0, 0, 1, 1])
    scores = np.round(np.random.default_rng(3).random((4, 3)), 1)
    with pytest.warns(UserWarning, match="absent"):
        value = macro_ovr_auc(y, scores)
    expected = np.mean([oracle_auc(y == c, scores[:, c]) for c in (0, 1)])
    assert value == expected


def test_classification_metrics_report():
    y = [0, 1, 2, 0, 1, 2]
    rng = np.random.default_rng(4)
    scores = rng.random((6, 3))
    report = classification_metrics(y, scores)
    assert report.n_samples == 6
    assert 0.0 <= report.acc <= 1.0
    assert 0.0 <= report.auc <= 1.0
    assert 0.0 <= report.aupr <= 1.0
    assert set(report.to_dict()) >= {"acc", "auc", "aupr", "n_samples"}


def test_empty_labels_rejected():
    with pytest.raises(MetricsError):
        accuracy([], np.zeros((0, 2)))
