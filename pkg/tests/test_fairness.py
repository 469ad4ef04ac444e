
import numpy as np
import pytest

from fairdistill.errors import DomainError
from fairdistill.fairness import deo_metrics, deo_report, group_class_accuracy


def test_perfect_predictor():
    y = np.array([0, 1, 0, 1])
    a = np.array([0, 0, 1, 1])
    acc, support = group_class_accuracy(y, y, a, 2, 2)
    np.testing.assert_array_equal(acc, np.ones((2, 2)))
    np.testing.assert_array_equal(support, np.ones((2, 2)))


def test_single_wrong_sample():
    acc, support = group_class_accuracy([0], [1], [0], 2, 2)
    assert acc[0, 1] == 0.0 and support[0, 1] == 1
    assert np.isnan(acc[0, 0])


def test_counting_case():
    labels = np.zeros(8, dtype=int)
    groups = np.array([0] * 4 + [1] * 4)
    preds = np.array([0, 0, 0, 0, 0, 0, 1, 1])
    acc, _ = group_class_accuracy(preds, labels, groups, 2, 2)
    assert acc[0, 0] == 1.0 and acc[1, 0] == 0.5


def test_hand_case():
    rep = deo_metrics(np.array([[1.0, 0.8], [0.5, 0.8]]), np.ones((2, 2)))
    np.testing.assert_allclose(rep.gaps, [0.5, 0.0])
    assert rep.deo_m == 0.5 and rep.deo_a == 0.25


def test_single_group():
    rep = deo_metrics(np.array([[0.3, 0.9]]), np.ones((1, 2)))
    assert rep.deo_m == 0.0 and rep.deo_a == 0.0


def test_equal_accuracies():
    rep = deo_metrics(np.full((2, 3), 0.7), np.ones((2, 3)))
    assert rep.deo_m == 0.0 and rep.deo_a == 0.0


def test_all_cells_absent():
    with pytest.raises(DomainError):
        deo_metrics(np.full((2, 2), np.nan), np.zeros((2, 2)))


def test_absent_cell_is_skipped():
    acc = np.array([[1.0, np.nan], [0.5, 0.2]])
    rep = deo_metrics(acc, np.array([[1, 0], [1, 1]]))
    np.testing.assert_allclose(rep.gaps, [0.5, 0.0])


def test_report_record_and_overall():
    preds = np.array([0, 1, 1, 1])
    rep = deo_report(preds, np.array([0, 1, 0, 1]), np.array([0, 0, 1, 1]), 2, 2)
    assert rep.overall_acc == 0.75
    rec = rep.to_record("t_")
    assert rec["t_deo_m"] == 1.0 and rec["t_acc_a1_y0"] == 0.0


def test_constant_predictor_on_balanced_set():
    labels = np.repeat(np.arange(4), 10)
    groups = np.tile([0, 1], 20)
    rep = deo_report(np.zeros(40, dtype=int), labels, groups, 4, 2)
    assert rep.overall_acc == 0.25 and rep.deo_m == 0.0
