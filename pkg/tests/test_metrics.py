"""Confusion counting and macro metric arithmetic."""

from fractions import Fraction

import numpy as np
import pytest

from arcflux.metrics import (
    SWEEP_ROW_HEADER,
    ConfusionMatrix,
    confusion,
    per_class_rates,
    report,
    report_text,
    sweep_row,
)


class TestConfusion:
    def test_all_correct(self):
        cm = confusion([0, 1, 0, 1], [0, 1, 0, 1])
        assert (cm.fp, cm.fn) == (0, 0)
        assert (cm.tn, cm.tp) == (2, 2)

    def test_all_wrong(self):
        cm = confusion([1, 0, 1], [0, 1, 0])
        assert (cm.tp, cm.tn) == (0, 0)
        assert (cm.fp, cm.fn) == (2, 1)

    def test_hand_tally_six_elements(self):
        labels = [0, 0, 0, 1, 1, 1]
        preds = [0, 1, 0, 1, 0, 1]
        cm = confusion(preds, labels)
        assert (cm.tn, cm.fp, cm.fn, cm.tp) == (2, 1, 1, 2)
        assert cm.total == 6

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 2, 50)
        preds = rng.integers(0, 2, 50)
        order = rng.permutation(50)
        assert confusion(preds, labels) == confusion(preds[order], labels[order])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            confusion([0, 1], [0, 1, 1])

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError):
            confusion([0, 2], [0, 1])

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(tn=-1, fp=0, fn=0, tp=1)

    def test_matrix_layout(self):
        cm = ConfusionMatrix(tn=1, fp=2, fn=3, tp=4)
        np.testing.assert_array_equal(cm.as_array(), [[1, 2], [3, 4]])


class TestReport:
    def test_perfect_classifier(self):
        rep = report(ConfusionMatrix(tn=10, fp=0, fn=0, tp=10))
        assert rep.accuracy == rep.precision == rep.recall == rep.f1 == 1.0
        assert rep.degenerate == ()

    def test_reference_counts_exact_accuracy(self):
        # tn=2540, fp=102, fn=83, tp=2555: accuracy must equal the exact
        # rational 5095/5280 under float division
        rep = report(ConfusionMatrix(tn=2540, fp=102, fn=83, tp=2555))
        assert rep.accuracy == 5095 / 5280
        assert rep.accuracy == pytest.approx(0.96496, abs=5e-6)

    def test_reference_counts_macro_metrics(self):
        # independent rational-arithmetic oracle
        tn, fp, fn, tp = 2540, 102, 83, 2555
        p0 = Fraction(tn, tn + fn)
        r0 = Fraction(tn, tn + fp)
        p1 = Fraction(tp, tp + fp)
        r1 = Fraction(tp, tp + fn)
        precision = (p0 + p1) / 2
        recall = (r0 + r1) / 2
        f1 = 2 * precision * recall / (precision + recall)
        rep = report(ConfusionMatrix(tn=tn, fp=fp, fn=fn, tp=tp))
        assert rep.precision == pytest.approx(float(precision), rel=1e-15)
        assert rep.recall == pytest.approx(float(recall), rel=1e-15)
        assert rep.f1 == pytest.approx(float(f1), rel=1e-15)

    def test_f1_is_harmonic_mean_of_macro_pair(self):
        rep = report(ConfusionMatrix(tn=8, fp=3, fn=2, tp=7))
        expect = 2 * rep.precision * rep.recall / (rep.precision + rep.recall)
        assert rep.f1 == pytest.approx(expect, rel=1e-15)

    def test_degenerate_no_positive_predictions(self):
        rep = report(ConfusionMatrix(tn=5, fp=0, fn=5, tp=0))
        assert "precision_1" in rep.degenerate
        assert rep.accuracy == 0.5

    def test_degenerate_everything(self):
        rep = report(ConfusionMatrix(tn=0, fp=0, fn=3, tp=0))
        assert rep.precision == 0.0 or rep.recall == 0.0
        assert "f1" in rep.degenerate or rep.f1 == 0.0

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError):
            report(ConfusionMatrix(tn=0, fp=0, fn=0, tp=0))

    def test_accuracy_one_iff_no_errors(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            tn, fp, fn, tp = rng.integers(0, 6, 4)
            if tn + fp + fn + tp == 0:
                continue
            rep = report(ConfusionMatrix(tn=int(tn), fp=int(fp), fn=int(fn), tp=int(tp)))
            assert (rep.accuracy == 1.0) == (fp == 0 and fn == 0)

    def test_recount_oracle_1000_runs(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            n = int(rng.integers(1, 40))
            labels = rng.integers(0, 2, n)
            preds = rng.integers(0, 2, n)
            cm = confusion(preds, labels)
            # brute-force recount
            tally = {"tn": 0, "fp": 0, "fn": 0, "tp": 0}
            for t, p in zip(labels, preds):
                key = ("tn", "fp", "fn", "tp")[2 * t + p]
                tally[key] += 1
            assert (cm.tn, cm.fp, cm.fn, cm.tp) == (
                tally["tn"],
                tally["fp"],
                tally["fn"],
                tally["tp"],
            )
            rep = report(cm)
            rates = per_class_rates(cm)
            precision = (rates["precision_0"] + rates["precision_1"]) / 2
            recall = (rates["recall_0"] + rates["recall_1"]) / 2
            assert rep.accuracy == (cm.tp + cm.tn) / n
            assert rep.precision == precision
            assert rep.recall == recall


class TestSerialization:
    def test_text_document_stable(self):
        rep = report(ConfusionMatrix(tn=2, fp=1, fn=1, tp=2))
        text = report_text(rep)
        assert text == report_text(rep)
        assert '"accuracy"' in text and '"confusion"' in text

    def test_sweep_row_format(self):
        rep = report(ConfusionMatrix(tn=2, fp=1, fn=1, tp=2))
        row = sweep_row("k=128", rep)
        cells = row.split("\t")
        assert len(cells) == len(SWEEP_ROW_HEADER.split("\t"))
        assert cells[0] == "k=128"
        assert float(cells[1]) == pytest.approx(rep.accuracy, abs=1e-6)
