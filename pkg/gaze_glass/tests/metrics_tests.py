from unittest import TestCase

from hypothesis import given, settings, strategies as st
import numpy as np

from gaze_glass.exceptions import ContractError, ShapeError
from gaze_glass.metrics import macro_f1, pearson, vad_metrics
from gaze_glass.models import BEHAVIOR_CLASSES, BehaviorLabel, VADLabel


def brute_force_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    return cov / (vx * vy) ** 0.5


def brute_force_macro_f1(preds, labels):
    scores = []
    for name in BEHAVIOR_CLASSES:
        tp = sum(1 for p, l in zip(preds, labels) if p == name and l == name)
        fp = sum(1 for p, l in zip(preds, labels) if p == name and l != name)
        fn = sum(1 for p, l in zip(preds, labels) if p != name and l == name)
        scores.append(0.0 if tp == 0 else 2.0 * tp / (2.0 * tp + fp + fn))
    return sum(scores) / len(scores)


class PearsonTest(TestCase):
    def test_zero_variance(self):
        self.assertIsNone(pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0]))
        self.assertIsNone(pearson([1.0], [2.0]))

    def test_size_mismatch(self):
        with self.assertRaises(ShapeError):
            pearson([1.0, 2.0], [1.0, 2.0, 3.0])


class VadMetricsTest(TestCase):
    def test_perfect(self):
        labels = [VADLabel(0.1, 0.5, 0.9), VADLabel(0.3, 0.2, 0.6)]
        mae, r = vad_metrics(labels, labels)
        self.assertEqual(mae, 0.0)
        self.assertAlmostEqual(r, 1.0)

    def test_shift(self):
        """
        Tests that a constant shift of 0.1 costs 0.1 MAE and leaves r at 1.
        """
        labels = np.array([[0.1, 0.5, 0.7], [0.3, 0.2, 0.6], [0.4, 0.8, 0.2]])
        mae, r = vad_metrics(labels + 0.1, labels)
        self.assertAlmostEqual(mae, 0.1, places=12)
        self.assertAlmostEqual(r, 1.0, places=12)

    def test_hand_example(self):
        """
        Tests that [0.5, 0.5, 0.5] against [0.328, 0.410, 0.388] gives an MAE of 0.12467.
        """
        mae, r = vad_metrics([[0.5, 0.5, 0.5]], [VADLabel(0.328, 0.410, 0.388)])
        self.assertAlmostEqual(mae, (0.172 + 0.090 + 0.112) / 3, places=12)
        self.assertAlmostEqual(mae, 0.12467, places=5)
        self.assertIsNone(r)

    def test_brute_force(self):
        """
        Tests against a direct implementation on 100 random instances.
        """
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 20))
            preds, labels = rng.uniform(size=(n, 3)), rng.uniform(size=(n, 3))
            mae, r = vad_metrics(preds, labels)
            expected_mae = sum(sum(abs(p - l) for p, l in zip(pr, lr)) / 3 for pr, lr in zip(preds, labels)) / n
            self.assertAlmostEqual(mae, expected_mae, delta=1e-10)
            self.assertAlmostEqual(r, brute_force_pearson(preds.ravel().tolist(), labels.ravel().tolist()),
                                   delta=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10000))
    def test_order_invariant(self, seed):
        rng = np.random.default_rng(seed)
        preds, labels = rng.uniform(size=(8, 3)), rng.uniform(size=(8, 3))
        order = rng.permutation(8)
        self.assertAlmostEqual(vad_metrics(preds, labels)[0], vad_metrics(preds[order], labels[order])[0],
                               delta=1e-12)

    def test_errors(self):
        with self.assertRaises(ContractError):
            vad_metrics([], [])
        with self.assertRaises(ShapeError):
            vad_metrics([[0.1, 0.2, 0.3]], [])


class MacroF1Test(TestCase):
    def test_perfect(self):
        labels = ['laugh', 'sigh', 'cry', 'cry']
        self.assertEqual(macro_f1(labels, labels), 1.0)

    def test_all_laugh(self):
        """
        Tests that predicting laugh everywhere on a balanced set of 30 scores 1/6.
        """
        labels = [BehaviorLabel(name) for name in BEHAVIOR_CLASSES for _ in range(10)]
        self.assertAlmostEqual(macro_f1(['laugh'] * 30, labels), 1.0 / 6.0, places=12)

    def test_no_overlap(self):
        self.assertEqual(macro_f1(['sigh', 'sigh'], ['cry', 'laugh']), 0.0)

    def test_index_predictions(self):
        self.assertEqual(macro_f1([0, 1, 2], ['laugh', 'sigh', 'cry']), 1.0)

    def test_brute_force(self):
        """
        Tests against a direct implementation on 100 random instances, including shuffled copies.
        """
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(1, 30))
            preds = [BEHAVIOR_CLASSES[i] for i in rng.integers(0, 3, n)]
            labels = [BEHAVIOR_CLASSES[i] for i in rng.integers(0, 3, n)]
            score = macro_f1(preds, labels)
            self.assertAlmostEqual(score, brute_force_macro_f1(preds, labels), delta=1e-10)
            order = rng.permutation(n)
            self.assertEqual(score, macro_f1([preds[i] for i in order], [labels[i] for i in order]))

    def test_errors(self):
        with self.assertRaises(ContractError):
            macro_f1([], [])
        with self.assertRaises(ShapeError):
            macro_f1(['cry'], [])
