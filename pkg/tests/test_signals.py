#!/usr/bin/env python3
"""
Unit tests for teacher signal processing: soft scores, pair probabilities,
confidence and the confidence filter.

Run with:
    python -m unittest tests.test_signals
"""

import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from dotenv import load_dotenv

load_dotenv()

from pyqualitydistill.exceptions import ConfigurationError, InsufficientDataError, InvalidSignalError
from pyqualitydistill.signals import (
    filter_pairs,
    make_pair,
    make_point_signal,
    pair_confidence,
    pair_label,
    pair_probs,
    point_probs,
    point_score,
    sample_pairs,
)


def _pair_with_confidence(p_a, a="a", b="b"):
    # logit difference whose sigmoid is p_a
    return make_pair(a, b, float(np.log(p_a) - np.log1p(-p_a)), 0.0)


class TestPointSignals(unittest.TestCase):
    def test_uniform_logits(self):
        np.testing.assert_allclose(point_probs([0, 0, 0, 0, 0]), [0.2] * 5, atol=1e-15)
        self.assertAlmostEqual(point_score([0.2] * 5), 3.0, places=12)

    def test_descending_logits(self):
        probs = point_probs([2, 1, 0, -1, -2])
        np.testing.assert_allclose(probs, [0.636408, 0.234122, 0.086129, 0.031684, 0.011657], atol=1e-6)
        self.assertAlmostEqual(point_score(probs), 4.451940, delta=1e-5)

    def test_saturation(self):
        probs = point_probs([100, 0, 0, 0, 0])
        self.assertGreaterEqual(probs[0], 1.0 - 1e-40)
        self.assertTrue(np.all(probs[1:] < 1e-40))

    def test_large_magnitudes_do_not_overflow(self):
        probs = point_probs([1e4, -1e4, 0, 5e3, -5e3])
        self.assertTrue(np.all(np.isfinite(probs)))
        self.assertAlmostEqual(float(probs.sum()), 1.0, places=12)

    def test_one_hot_bad(self):
        self.assertEqual(point_score([0, 0, 0, 0, 1]), 1.0)

    def test_invalid_logits_name_image(self):
        with self.assertRaises(InvalidSignalError) as ctx:
            point_probs([0, float("nan"), 0, 0, 0], image_id="img_7")
        self.assertIn("img_7", str(ctx.exception))
        with self.assertRaises(InvalidSignalError):
            point_probs([0, 0, 0])

    def test_invalid_probabilities(self):
        with self.assertRaises(InvalidSignalError):
            point_score([0.5, 0.5, 0.5, 0, 0])
        with self.assertRaises(InvalidSignalError):
            point_score([1.2, -0.2, 0, 0, 0])

    def test_fuzz_sum_and_shift_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            logits = rng.normal(0.0, 5.0, size=5)
            probs = point_probs(logits)
            self.assertAlmostEqual(float(probs.sum()), 1.0, delta=1e-9)
            shifted = point_score(point_probs(logits + rng.normal(0.0, 50.0)))
            self.assertAlmostEqual(point_score(probs), shifted, delta=1e-9)
            self.assertTrue(1.0 <= point_score(probs) <= 5.0)

    def test_make_point_signal(self):
        signal = make_point_signal("img_0", [2, 1, 0, -1, -2])
        self.assertEqual(signal.image_id, "img_0")
        self.assertAlmostEqual(signal.soft_score, 4.451940, delta=1e-5)


class TestPairSignals(unittest.TestCase):
    def test_pair_probs_examples(self):
        self.assertEqual(pair_probs(0.0, 0.0), (0.5, 0.5))
        p_a, p_b = pair_probs(1.0, 0.0)
        self.assertAlmostEqual(p_a, 0.731059, delta=1e-6)
        self.assertAlmostEqual(p_b, 0.268941, delta=1e-6)
        p_a, p_b = pair_probs(-0.3, -1.5)
        self.assertAlmostEqual(p_a, 0.768525, delta=1e-6)
        self.assertAlmostEqual(p_b, 0.231475, delta=1e-6)

    def test_pair_probs_antisymmetry(self):
        rng = np.random.default_rng(1)
        for l_a, l_b in rng.normal(0.0, 3.0, size=(100, 2)):
            self.assertAlmostEqual(pair_probs(l_a, l_b)[0] + pair_probs(l_b, l_a)[0], 1.0, delta=1e-12)
            if l_a > l_b:
                self.assertEqual(pair_label(pair_probs(l_a, l_b)[0]), 1)

    def test_pair_probs_rejects_non_finite(self):
        with self.assertRaises(InvalidSignalError):
            pair_probs(float("inf"), 0.0)

    def test_pair_label(self):
        self.assertEqual(pair_label(0.5), 1)
        self.assertEqual(pair_label(0.731059), 1)
        self.assertEqual(pair_label(0.1), 0)
        with self.assertRaises(InvalidSignalError):
            pair_label(1.5)

    def test_pair_confidence_examples(self):
        self.assertAlmostEqual(pair_confidence(0.5), 0.0, delta=1e-15)
        self.assertEqual(pair_confidence(1.0), 1.0)
        self.assertEqual(pair_confidence(0.0), 1.0)
        self.assertAlmostEqual(pair_confidence(0.9), 0.531004, delta=1e-5)
        with self.assertRaises(InvalidSignalError):
            pair_confidence(-0.1)

    def test_pair_confidence_positive_next_to_half(self):
        x = 2e-9
        self.assertGreater(pair_confidence(0.5 + 1e-9), 0.0)
        self.assertAlmostEqual(pair_confidence(0.5 + 1e-9) / (x * x / (2.0 * np.log(2.0))), 1.0, delta=1e-6)
        self.assertGreater(pair_confidence(float(np.nextafter(0.5, 1.0))), 0.0)
        self.assertGreater(pair_confidence(float(np.nextafter(0.5, 0.0))), 0.0)
        # both branches agree where they meet
        self.assertAlmostEqual(pair_confidence(0.5 + 0.5e-3 - 1e-12), pair_confidence(0.5 + 0.5e-3 + 1e-12), delta=1e-12)
        self.assertAlmostEqual(pair_confidence(0.9), 0.531004, delta=1e-5)

    def test_pair_confidence_symmetric_and_monotone(self):
        grid = np.linspace(0.0, 1.0, 1001)
        omegas = [pair_confidence(float(p)) for p in grid]
        for p, w in zip(grid, omegas):
            self.assertAlmostEqual(w, pair_confidence(float(1.0 - p)), delta=1e-12)
        upper = omegas[500:]
        self.assertTrue(all(b > a for a, b in zip(upper, upper[1:])))

    def test_make_pair_rejects_self_pair(self):
        with self.assertRaises(InvalidSignalError):
            make_pair("x", "x", 0.1, 0.0)

    def test_make_pair_fields(self):
        pair = make_pair("a", "b", 1.0, 0.0)
        self.assertEqual(pair.t, 1)
        self.assertAlmostEqual(pair.p_a + pair.p_b, 1.0, delta=1e-15)
        self.assertAlmostEqual(pair.omega, pair_confidence(pair.p_a), delta=1e-15)


class TestSampling(unittest.TestCase):
    def test_count_matches_and_no_self_pairs(self):
        ids = [f"img_{i:05d}" for i in range(2000)]
        pairs = sample_pairs(ids, 2000, seed=3)
        self.assertEqual(len(pairs), 2000)
        self.assertTrue(all(a != b for a, b in pairs))

    def test_zero_count(self):
        self.assertEqual(sample_pairs(["a", "b"], 0, seed=0), [])

    def test_deterministic(self):
        ids = list(range(50))
        self.assertEqual(sample_pairs(ids, 300, seed=9), sample_pairs(ids, 300, seed=9))
        self.assertNotEqual(sample_pairs(ids, 300, seed=9), sample_pairs(ids, 300, seed=10))

    def test_unique_pairs(self):
        ids = list(range(5))
        pairs = sample_pairs(ids, 20, seed=0, unique=True)
        self.assertEqual(len(set(pairs)), 20)
        with self.assertRaises(ConfigurationError):
            sample_pairs(ids, 21, seed=0, unique=True)

    def test_too_few_ids(self):
        with self.assertRaises(InsufficientDataError):
            sample_pairs(["only"], 1, seed=0)


class TestFilter(unittest.TestCase):
    def setUp(self):
        self.pairs = [_pair_with_confidence(0.5, "a", "b"), _pair_with_confidence(0.7429, "c", "d"), _pair_with_confidence(0.9, "e", "f")]

    def test_tau_zero_keeps_everything(self):
        self.assertEqual(filter_pairs(self.pairs, 0.0), self.pairs)

    def test_tau_one_keeps_only_certain(self):
        certain = make_pair("g", "h", 60.0, 0.0)
        self.assertEqual(filter_pairs(self.pairs + [certain], 1.0), [certain])

    def test_intermediate_threshold(self):
        kept = filter_pairs(self.pairs, 0.2)
        self.assertEqual([p.a for p in kept], ["e"])

    def test_monotone_in_tau(self):
        rng = np.random.default_rng(4)
        pairs = [make_pair(i, i + 1, float(d), 0.0) for i, d in enumerate(rng.normal(0, 2, 200))]
        sizes = [len(filter_pairs(pairs, tau)) for tau in np.linspace(0, 1, 21)]
        self.assertTrue(all(b <= a for a, b in zip(sizes, sizes[1:])))

    def test_invalid_tau(self):
        with self.assertRaises(ConfigurationError):
            filter_pairs(self.pairs, 1.5)


if __name__ == "__main__":
    unittest.main()
