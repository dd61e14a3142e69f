#!/usr/bin/env python3
"""
Unit tests for the synthetic benchmark and the simulated teacher.

Run with:
    python -m unittest tests.test_synth
"""

import os
import sys
import unittest

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from dotenv import load_dotenv

load_dotenv()

from pyqualitydistill.config import SynthConfig
from pyqualitydistill.definitions import Split, TeacherBias
from pyqualitydistill.exceptions import ConfigurationError
from pyqualitydistill.metrics import srcc
from pyqualitydistill.providers.synth import (
    content_column,
    gen_features,
    gen_latent,
    gen_mos,
    make_benchmark,
    resample_pairs,
    split_sizes,
    teacher_belief,
    teacher_bias_map,
    teacher_pair_oracle,
    teacher_point_logits,
    teacher_point_oracle,
)
from pyqualitydistill.signals import make_pair, point_probs, point_score


class TestGenerators(unittest.TestCase):
    def test_latent_range_and_determinism(self):
        q = gen_latent(1000, seed=0)
        self.assertEqual(q.shape, (1000,))
        self.assertTrue(np.all((q >= 1.0) & (q <= 5.0)))
        self.assertTrue(np.array_equal(q, gen_latent(1000, seed=0)))
        self.assertFalse(np.array_equal(q, gen_latent(1000, seed=1)))
        with self.assertRaises(ConfigurationError):
            gen_latent(0, seed=0)

    def test_features_shape_and_least_squares_fit(self):
        config = SynthConfig(d=16, informative_dims=4, feature_noise=0.0)
        q = gen_latent(500, seed=0)
        x = gen_features(q, config)
        self.assertEqual(x.shape, (500, 16))
        design = np.column_stack([x, np.ones(len(q))])
        coef, *_ = np.linalg.lstsq(design, q, rcond=None)
        residual = q - design @ coef
        r2 = 1.0 - residual.var() / q.var()
        self.assertGreater(r2, 0.99)

    def test_informative_dims_bounds(self):
        config = SynthConfig(d=8, informative_dims=2)
        q = gen_latent(20, seed=0)
        self.assertEqual(gen_features(q, config, informative_dims=0).shape, (20, 8))
        with self.assertRaises(ConfigurationError):
            gen_features(q, config, informative_dims=9)

    def test_distractor_only_features_carry_no_signal(self):
        config = SynthConfig(d=8, informative_dims=1)
        q = gen_latent(2000, seed=3)
        x = gen_features(q, config, informative_dims=0)
        for j in range(x.shape[1]):
            self.assertLess(abs(srcc(x[:, j], q)), 0.1)

    def test_mos(self):
        q = gen_latent(200, seed=0)
        self.assertTrue(np.array_equal(gen_mos(q, 0.0, seed=0), q))
        y = gen_mos(q, 0.3, seed=0)
        self.assertTrue(np.all((y >= 1.0) & (y <= 5.0)))
        with self.assertRaises(ConfigurationError):
            gen_mos(q, -1.0, seed=0)


class TestTeacherOracles(unittest.TestCase):
    def test_bias_maps_are_increasing(self):
        q = np.linspace(1.0, 5.0, 50)
        for bias in TeacherBias:
            g = teacher_bias_map(q, SynthConfig(teacher_bias=bias))
            self.assertTrue(np.all(np.diff(g) > 0), bias)

    def test_point_oracle_peaks_at_teacher_belief(self):
        config = SynthConfig(teacher_bias="identity", teacher_noise=0.0)
        logits = teacher_point_oracle(3.0, config)
        self.assertEqual(logits.shape, (5,))
        self.assertEqual(int(np.argmax(logits)), 2)
        self.assertAlmostEqual(point_score(point_probs(logits)), 3.0, places=9)

    def test_noiseless_soft_score_is_monotone_in_q(self):
        config = SynthConfig(teacher_noise=0.0)
        scores = [point_score(point_probs(teacher_point_oracle(q, config))) for q in np.linspace(1.0, 5.0, 41)]
        self.assertTrue(all(b > a for a, b in zip(scores, scores[1:])))

    def test_pair_oracle_antisymmetric_before_noise(self):
        config = SynthConfig(pair_noise=0.0)
        rng = np.random.default_rng(0)
        for q_a, q_b in rng.uniform(1, 5, (50, 2)):
            l_a, l_b = teacher_pair_oracle(q_a, q_b, config)
            s_a, s_b = teacher_pair_oracle(q_b, q_a, config)
            self.assertEqual(l_a - l_b, -(s_a - s_b))

    def test_pair_oracle_prefers_better_image(self):
        config = SynthConfig(pair_noise=0.0)
        l_a, l_b = teacher_pair_oracle(4.0, 2.0, config)
        self.assertGreater(l_a, l_b)
        self.assertEqual(make_pair("a", "b", l_a, l_b).t, 1)

    def test_content_sways_point_and_pair_judgments(self):
        config = SynthConfig(teacher_bias="identity", teacher_noise=0.0, pair_noise=0.0)
        self.assertAlmostEqual(float(teacher_belief([3.0], config, [1.0])[0]), 3.35, delta=1e-12)
        plain = teacher_point_oracle(3.0, config)
        self.assertTrue(np.array_equal(teacher_point_oracle(3.0, config, content=0.0), plain))
        swayed = point_score(point_probs(teacher_point_oracle(3.0, config, content=1.0)))
        self.assertGreater(swayed, point_score(point_probs(plain)))

        l_a, l_b = teacher_pair_oracle(3.0, 3.0, config, content_a=1.0, content_b=0.0)
        self.assertAlmostEqual(l_a, 3.0 * 0.35 / 2.0, delta=1e-12)
        self.assertEqual(l_b, -l_a)
        unswayed = config.replace(content_bias=0.0)
        self.assertEqual(teacher_pair_oracle(3.0, 3.0, unswayed, content_a=1.0, content_b=0.0), (0.0, 0.0))
        with self.assertRaises(ConfigurationError):
            teacher_belief(np.array([1.0, 2.0]), config, np.array([1.0]))

    def test_content_bias_needs_a_distractor_column(self):
        with self.assertRaises(ConfigurationError):
            SynthConfig(d=4, informative_dims=4)
        self.assertEqual(SynthConfig(d=4, informative_dims=4, content_bias=0.0).informative_dims, 4)

    def test_pair_oracle_shapes(self):
        config = SynthConfig()
        l_a, l_b = teacher_pair_oracle(np.array([1.5, 2.5, 3.5]), np.array([2.0, 2.0, 2.0]), config)
        self.assertEqual(l_a.shape, (3,))
        with self.assertRaises(ConfigurationError):
            teacher_pair_oracle(np.array([1.0, 2.0]), np.array([1.0]), config)

    def test_heteroscedastic_confidence_tracks_correctness(self):
        config = SynthConfig(heteroscedastic=True)
        rng = np.random.default_rng(5)
        q_a = rng.uniform(1, 5, 10000)
        q_b = rng.uniform(1, 5, 10000)
        l_a, l_b = teacher_pair_oracle(q_a, q_b, config, rng=np.random.default_rng(6))
        pairs = [make_pair(i, i + 10000, a, b) for i, (a, b) in enumerate(zip(l_a.tolist(), l_b.tolist()))]
        omega = np.array([p.omega for p in pairs])
        correct = np.array([(p.t == 1) == (qa > qb) for p, qa, qb in zip(pairs, q_a, q_b)])
        edges = np.quantile(omega, np.linspace(0, 1, 11))
        bins = np.clip(np.searchsorted(edges, omega, side="right") - 1, 0, 9)
        accuracy = [correct[bins == k].mean() for k in range(10)]
        # small Monte-Carlo slack between neighbouring deciles
        self.assertTrue(all(b >= a - 0.03 for a, b in zip(accuracy, accuracy[1:])), accuracy)
        self.assertGreater(accuracy[-1], accuracy[0] + 0.1)


class TestBenchmark(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.config = SynthConfig(n=300, seed=2)
        cls.bench = make_benchmark(cls.config)

    def test_split_sizes(self):
        self.assertEqual(split_sizes(2000, SynthConfig()), (1400, 200, 400))
        ds = self.bench.dataset
        self.assertEqual(len(ds.ids_in(Split.TRAIN)), 210)
        self.assertEqual(len(ds.ids_in(Split.VAL)), 30)
        self.assertEqual(len(ds.ids_in(Split.TEST)), 60)

    def test_bundle_contents(self):
        bundle = self.bench.bundle
        self.assertEqual(len(bundle.pairs), 300)
        self.assertEqual(set(bundle.point_signals), set(bundle.dataset.ids))
        train = set(bundle.dataset.ids_in(Split.TRAIN))
        self.assertTrue(all(p.a in train and p.b in train for p in bundle.pairs))
        self.assertEqual(bundle.dataset.mos_reads, 0)

    def test_deterministic(self):
        again = make_benchmark(self.config)
        self.assertTrue(np.array_equal(again.dataset.features, self.bench.dataset.features))
        self.assertEqual(
            [(p.a, p.b, p.logit_a) for p in again.bundle.pairs],
            [(p.a, p.b, p.logit_a) for p in self.bench.bundle.pairs],
        )

    def test_resample_changes_only_pairs(self):
        pairs = resample_pairs(self.bench, seed=7)
        self.assertEqual(len(pairs), 300)
        self.assertNotEqual([(p.a, p.b) for p in pairs], [(p.a, p.b) for p in self.bench.bundle.pairs])
        self.assertEqual([(p.a, p.b) for p in pairs], [(p.a, p.b) for p in resample_pairs(self.bench, seed=7)])

    def test_teacher_ranks_well_but_is_off_scale(self):
        bench = make_benchmark(SynthConfig(seed=0))
        ids = bench.dataset.ids_in(Split.TEST)
        teacher = bench.bundle.teacher_scores(ids)
        latent = bench.latent(ids)
        self.assertTrue(0.75 <= srcc(teacher, latent) <= 0.95)
        self.assertGreater(abs(float(np.mean(teacher - latent))), 0.1)

    def test_teacher_error_follows_content_column(self):
        for content_bias, swayed in ((0.35, True), (0.0, False)):
            config = SynthConfig(seed=0, content_bias=content_bias)
            bench = make_benchmark(config)
            ids = list(bench.dataset.ids)
            clean = teacher_point_logits(bench.latent(ids), config.replace(content_bias=0.0, teacher_noise=0.0))
            residual = bench.bundle.teacher_scores(ids) - np.array([point_score(point_probs(row)) for row in clean])
            rho = srcc(residual, content_column(bench.dataset.features, config))
            if swayed:
                self.assertGreater(rho, 0.7)
            else:
                self.assertLess(abs(rho), 0.1)


if __name__ == "__main__":
    unittest.main()
