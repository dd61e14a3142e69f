#!/usr/bin/env python3
"""
Unit tests for the two-stage training pipeline, MOS budgets, checkpoint
selection, the affine teacher baseline and the multi-seed drivers.

Small benchmarks and short schedules keep this suite fast; the full-size
behaviour is covered by tests/test_acceptance.py.

Run with:
    python -m unittest tests.test_pipeline
"""

import os
import sys
import unittest
from unittest import mock

import numpy as np

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from dotenv import load_dotenv

load_dotenv()

from pyqualitydistill.config import SynthConfig, TrainConfig
from pyqualitydistill.dataset import DatasetBundle, FeatureDataset
from pyqualitydistill.definitions import AblationMode, CheckpointMode, Split
from pyqualitydistill.exceptions import (
    BudgetTooSmallError,
    ConfigurationError,
    DanglingPairError,
    DegenerateFitError,
    InsufficientDataError,
    MissingLabelsError,
    MissingSignalError,
    SeedRunError,
)
from pyqualitydistill.metrics import srcc
from pyqualitydistill.pipeline import (
    EpochRecord,
    RunLog,
    ablation_grid,
    affine_calibrate,
    dedupe_pair_list,
    evaluate,
    initial_params,
    label_efficiency_sweep,
    predict,
    run_pipeline,
    run_seeded_repeats,
    run_stage1,
    run_stage2,
    select_checkpoint,
    split_mos_budget,
    teacher_baseline,
    train_stage1,
)
from pyqualitydistill.providers.synth import make_benchmark, resample_pairs
from pyqualitydistill.pyqualitydistill import create_synthetic_engine
from pyqualitydistill.signals import make_pair
from pyqualitydistill.student import StudentParams

FAST = TrainConfig(
    hidden_sizes=(8,),
    stage1_epochs=3,
    stage1_batch=32,
    stage1_pair_batch=32,
    stage2_epochs=4,
    stage2_batch=8,
    mos_ratio=0.2,
)


def flat_dataset(n, split=Split.TRAIN, with_mos=True):
    ids = [f"x{i:04d}" for i in range(n)]
    mos = {i: float(k % 5) + 1.0 for k, i in enumerate(ids)} if with_mos else None
    return FeatureDataset(ids, np.zeros((n, 1)), {i: split for i in ids}, mos=mos)


def record(epoch, criterion, stage=1):
    return EpochRecord(stage, epoch, {"train_total": 0.0}, criterion, "c")


class TestMosBudget(unittest.TestCase):
    def test_ratio_extremes(self):
        ds = flat_dataset(50)
        self.assertEqual(split_mos_budget(ds, 0.0, seed=0)[0], [])
        labeled, unlabeled = split_mos_budget(ds, 1.0, seed=0)
        self.assertEqual(labeled, list(ds.ids))
        self.assertEqual(unlabeled, [])

    def test_ten_percent_of_two_thousand(self):
        ds = flat_dataset(2000)
        labeled, unlabeled = split_mos_budget(ds, 0.1, seed=4)
        self.assertEqual(len(labeled), 200)
        self.assertEqual(len(unlabeled), 1800)
        self.assertFalse(set(labeled) & set(unlabeled))
        self.assertEqual(labeled, split_mos_budget(ds, 0.1, seed=4)[0])
        self.assertNotEqual(labeled, split_mos_budget(ds, 0.1, seed=5)[0])
        self.assertEqual(ds.mos_reads, 0)

    def test_only_training_images(self):
        bench = make_benchmark(SynthConfig(n=100))
        labeled, _ = split_mos_budget(bench.dataset, 1.0, seed=0)
        self.assertEqual(set(labeled), set(bench.dataset.ids_in(Split.TRAIN)))

    def test_budget_too_small(self):
        with self.assertRaises(BudgetTooSmallError):
            split_mos_budget(flat_dataset(20), 0.01, seed=0)
        with self.assertRaises(ConfigurationError):
            split_mos_budget(flat_dataset(20), 1.5, seed=0)


class TestSelection(unittest.TestCase):
    def test_single_epoch(self):
        self.assertEqual(select_checkpoint([record(1, 0.4)], CheckpointMode.MOS_FREE), 0)

    def test_decreasing_loss_picks_last(self):
        history = [record(e, 1.0 / e) for e in range(1, 6)]
        self.assertEqual(select_checkpoint(history, CheckpointMode.MOS_FREE), 4)

    def test_ties_go_to_earlier_epoch(self):
        history = [record(1, 0.7), record(2, 0.5), record(3, 0.5)]
        self.assertEqual(select_checkpoint(history, CheckpointMode.MOS_FREE), 1)
        history = [record(0, 0.9, 2), record(1, 0.9, 2), record(2, 0.8, 2)]
        self.assertEqual(select_checkpoint(history, CheckpointMode.FEW_SHOT), 0)

    def test_missing_criterion_ranks_last(self):
        history = [record(0, None, 2), record(1, 0.2, 2)]
        self.assertEqual(select_checkpoint(history, CheckpointMode.FEW_SHOT), 1)

    def test_empty_history(self):
        with self.assertRaises(InsufficientDataError):
            select_checkpoint([], CheckpointMode.MOS_FREE)

    def test_run_log_validates_selection(self):
        with self.assertRaises(ConfigurationError):
            RunLog(stage=1, metric="c", records=[record(1, 0.1)], selected_epoch=7)
        log = RunLog(stage=1, metric="c", records=[record(1, 0.1), record(2, None)], selected_epoch=1)
        self.assertEqual(RunLog.from_records(log.to_records()), log)


class TestAffineBaseline(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(affine_calibrate([1.0, 2.0], [3.0, 5.0]), (2.0, 1.0))
        a, b = affine_calibrate([1.0, 2.5, 4.0], [1.0, 2.5, 4.0])
        self.assertAlmostEqual(a, 1.0, delta=1e-9)
        self.assertAlmostEqual(b, 0.0, delta=1e-9)

    def test_degenerate(self):
        with self.assertRaises(DegenerateFitError):
            affine_calibrate([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
        with self.assertRaises(DegenerateFitError):
            affine_calibrate([2.0], [1.0])

    def test_calibration_removes_bias_and_keeps_ranking(self):
        bench = make_benchmark(SynthConfig(teacher_bias="affine", affine_alpha=0.6, affine_beta=2.0, teacher_noise=0.3, seed=1))
        labeled, _ = split_mos_budget(bench.dataset, 0.3, seed=1)
        out = teacher_baseline(bench.bundle, labeled, Split.TEST)
        raw, fitted = out["teacher"], out["teacher_affine"]
        self.assertGreater(out["a"], 0.0)
        self.assertLessEqual(abs(fitted.mean_residual), 0.2 * abs(raw.mean_residual))
        self.assertAlmostEqual(fitted.srcc, raw.srcc, delta=1e-12)

    def test_without_labels(self):
        bench = make_benchmark(SynthConfig(n=100))
        out = teacher_baseline(bench.bundle, [], Split.TEST)
        self.assertIsNone(out["teacher_affine"])


class TestStage1(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.bench = make_benchmark(SynthConfig(n=200, seed=3))

    def _run(self, config, pairs=None):
        b = self.bench.bundle
        return run_stage1(config, b.dataset, b.point_signals, b.pairs if pairs is None else pairs)

    def test_zero_epochs_returns_initial_params(self):
        config = FAST.replace(stage1_epochs=0)
        params, log = self._run(config)
        fresh = initial_params(config, self.bench.dataset.dim)
        for a, b in zip(params.arrays(), fresh.arrays()):
            self.assertTrue(np.array_equal(a, b))
        self.assertEqual(log.records, [])
        self.assertIsNone(log.selected_epoch)

    def test_never_reads_mos(self):
        before = self.bench.dataset.mos_reads
        _, log = self._run(FAST)
        self.assertEqual(self.bench.dataset.mos_reads, before)
        self.assertEqual([r.epoch for r in log.records], [1, 2, 3])
        self.assertIn(log.selected_epoch, (1, 2, 3))

    def test_deterministic(self):
        p1, log1 = self._run(FAST)
        p2, log2 = self._run(FAST)
        self.assertEqual(log1.to_records(), log2.to_records())
        for a, b in zip(p1.arrays(), p2.arrays()):
            self.assertTrue(np.array_equal(a, b))

    def test_ablation_variants_train(self):
        for mode in (AblationMode.POINT, AblationMode.PAIR, AblationMode.PAIR_CONF):
            _, log = self._run(FAST.with_ablation(mode))
            self.assertEqual(len(log.records), 3)
            self.assertTrue(all(np.isfinite(r.criterion) for r in log.records))

    def test_point_term_alone_when_no_pair_survives(self):
        with self.assertLogs("pyqualitydistill.pipeline", level="WARNING"):
            _, log = self._run(FAST.replace(tau=1.0))
        self.assertEqual(len(log.records), 3)
        with self.assertRaises(InsufficientDataError):
            self._run(FAST.replace(tau=1.0, use_point=False))

    def test_dangling_pair(self):
        test_id = self.bench.dataset.ids_in(Split.TEST)[0]
        train_id = self.bench.dataset.ids_in(Split.TRAIN)[0]
        with self.assertRaises(DanglingPairError):
            self._run(FAST, pairs=[make_pair(train_id, test_id, 1.0, 0.0)])

    def test_missing_point_signal(self):
        b = self.bench.bundle
        points = dict(b.point_signals)
        points.pop(b.dataset.ids_in(Split.TRAIN)[0])
        with self.assertRaises(MissingSignalError):
            run_stage1(FAST, b.dataset, points, b.pairs)

    def test_few_shot_selection_uses_passed_labels_only(self):
        ds = self.bench.dataset
        labeled, _ = split_mos_budget(ds, 0.2, seed=0)
        hold = labeled[:6]
        labels = ds.labels(hold)
        before = ds.mos_reads
        result = train_stage1(FAST.replace(checkpoint_mode="few_shot"), ds, self.bench.bundle.point_signals, self.bench.bundle.pairs, (hold, labels))
        self.assertEqual(ds.mos_reads, before)
        self.assertEqual(result.log.metric, "holdout_plcc")
        self.assertIsNotNone(result.optimizer)

    def test_dedupe(self):
        p = make_pair("a", "b", 1.0, 0.0)
        q = make_pair("b", "a", 1.0, 0.0)
        self.assertEqual(dedupe_pair_list([p, q, p]), [p, q])


class TestStage2(unittest.TestCase):
    def test_exact_scores_are_kept(self):
        ids = [f"y{i}" for i in range(10)]
        x = np.linspace(1.0, 5.0, 10)
        ds = FeatureDataset(ids, x[:, None], {i: Split.TRAIN for i in ids}, mos=dict(zip(ids, x.tolist())))
        params = StudentParams((1, 1), [np.array([[1.0]])], [np.array([0.0])])
        new_params, log = run_stage2(FAST, params, ds, ids)
        self.assertEqual(log.records[0].epoch, 0)
        self.assertAlmostEqual(log.records[0].losses["fit_calib"], 0.0, delta=1e-12)
        self.assertEqual(log.selected_epoch, 0)
        self.assertTrue(np.array_equal(new_params.weights[0], params.weights[0]))
        self.assertTrue(np.array_equal(new_params.biases[0], params.biases[0]))

    def test_empty_labeled_set(self):
        params = StudentParams((1, 1), [np.array([[1.0]])], [np.array([0.0])])
        with self.assertRaises(MissingLabelsError):
            run_stage2(FAST, params, flat_dataset(10), [])

    def test_too_few_labels_for_holdout(self):
        params = StudentParams((1, 1), [np.array([[1.0]])], [np.array([0.0])])
        ds = flat_dataset(10)
        with self.assertRaises(BudgetTooSmallError):
            run_stage2(FAST, params, ds, list(ds.ids)[:3])

    def test_head_only_freezes_hidden_layers(self):
        bench = make_benchmark(SynthConfig(n=200, seed=4))
        params = initial_params(FAST, bench.dataset.dim)
        labeled, _ = split_mos_budget(bench.dataset, 0.5, seed=0)
        new_params, log = run_stage2(FAST.replace(head_only=True, stage2_lr=1e-2), params, bench.dataset, labeled)
        self.assertTrue(np.array_equal(new_params.weights[0], params.weights[0]))
        if log.selected_epoch > 0:
            self.assertFalse(np.array_equal(new_params.weights[-1], params.weights[-1]))
        self.assertEqual(len(log.records), FAST.stage2_epochs + 1)


class TestEndToEnd(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.bench = make_benchmark(SynthConfig(n=200, seed=5))

    def bundle_for_seed(self, seed):
        return DatasetBundle(self.bench.dataset, self.bench.bundle.point_signals, resample_pairs(self.bench, seed))

    def test_pipeline_reports(self):
        result = run_pipeline(FAST, self.bench.bundle, (Split.VAL, Split.TEST))
        self.assertEqual(sorted(result.reports), ["test", "val"])
        self.assertEqual(sorted(result.stage1.reports), ["test", "val"])
        self.assertIsNotNone(result.stage2)
        self.assertEqual(len(result.labeled_ids), int(0.2 * 140))
        report = evaluate(result.params, self.bench.dataset, Split.TEST)
        self.assertEqual(report, result.reports["test"])

    def test_zero_ratio_skips_calibration(self):
        result = run_pipeline(FAST.replace(mos_ratio=0.0), self.bench.bundle)
        self.assertIsNone(result.stage2)
        self.assertEqual(result.labeled_ids, [])

    def test_calibration_only(self):
        result = run_pipeline(FAST.with_ablation(AblationMode.CALIBRATION_ONLY), self.bench.bundle)
        self.assertEqual(result.stage1.records, [])
        self.assertIsNotNone(result.stage2)

    def test_against_latent(self):
        result = run_pipeline(FAST, self.bench.bundle, against_latent=True)
        ids = self.bench.dataset.ids_in(Split.TEST)
        expected = srcc(predict(result.params, self.bench.dataset, ids), self.bench.latent(ids))
        self.assertAlmostEqual(result.reports["test"].srcc, expected, delta=1e-12)

    def test_single_seed_repeat(self):
        report = run_seeded_repeats(FAST, [7], self.bundle_for_seed)
        self.assertEqual(report.seeds, [7])
        agg = report.aggregates["test"]
        self.assertEqual(agg["srcc_std"], 0.0)
        self.assertEqual(agg["srcc_mean"], report.per_seed[0].reports["test"].srcc)

    def test_seed_order_does_not_matter(self):
        a = run_seeded_repeats(FAST, [2, 0, 1], self.bundle_for_seed)
        b = run_seeded_repeats(FAST.replace(workers=3), [1, 2, 0], self.bundle_for_seed)
        self.assertEqual(a.seeds, [0, 1, 2])
        self.assertEqual(a.aggregates, b.aggregates)

    def test_duplicate_and_empty_seeds(self):
        with self.assertRaises(ConfigurationError):
            run_seeded_repeats(FAST, [1, 1], self.bundle_for_seed)
        with self.assertRaises(ConfigurationError):
            run_seeded_repeats(FAST, [], self.bundle_for_seed)

    def test_failing_seed_is_identified(self):
        def flaky(seed):
            if seed == 3:
                raise InsufficientDataError("no images for this seed")
            return self.bundle_for_seed(seed)

        with self.assertRaises(SeedRunError) as ctx:
            run_seeded_repeats(FAST, [4, 3, 1], flaky)
        self.assertEqual(ctx.exception.seed, 3)
        self.assertIsInstance(ctx.exception.cause, InsufficientDataError)

    def test_sweep_and_ablation_tables(self):
        curve = label_efficiency_sweep(FAST, [0.0, 0.2], [0, 1], self.bundle_for_seed)
        self.assertEqual(len(curve.rows), 6)
        self.assertEqual([r.seed for r in curve.rows[-2:]], [None, None])
        self.assertEqual(sorted(curve.means()), ["0.0", "0.2"])
        self.assertEqual(curve.records()[-1]["seed"], "mean")

        grid = ablation_grid(FAST, [AblationMode.POINT, AblationMode.CALIBRATION_ONLY], [0], self.bundle_for_seed)
        self.assertEqual([r.value for r in grid.rows], ["point", "cft_only", "point", "cft_only"])


class TestEngineCalibrate(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.engine = create_synthetic_engine(SynthConfig(n=200, seed=5), FAST)
        cls.stage1 = cls.engine.distill()

    def _calibrate(self, config, optimizer=None):
        return self.engine.calibrate(self.stage1.params, config, optimizer=optimizer)

    def test_distill_returns_optimizer_state(self):
        self.assertGreater(self.stage1.optimizer.step, 0)

    def test_reused_optimizer_reaches_stage2(self):
        config = FAST.replace(reuse_optimizer=True)
        saved = self.stage1.optimizer.copy()
        with mock.patch("pyqualitydistill.pyqualitydistill.run_stage2", wraps=run_stage2) as stage2:
            self._calibrate(config, self.stage1.optimizer)
        self.assertIs(stage2.call_args.kwargs["optimizer"], self.stage1.optimizer)

        _, resumed, _ = self._calibrate(config, self.stage1.optimizer)
        _, restarted, _ = self._calibrate(config)
        self.assertEqual(resumed.records[0].losses, restarted.records[0].losses)
        self.assertNotEqual(resumed.records[1].losses["fit_calib"], restarted.records[1].losses["fit_calib"])
        # Stage 2 works on a copy of the Stage-1 state
        self.assertEqual(self.stage1.optimizer.step, saved.step)
        for a, b in zip(self.stage1.optimizer.first_moment, saved.first_moment):
            self.assertTrue(np.array_equal(a, b))

    def test_optimizer_ignored_without_reuse(self):
        _, given, _ = self._calibrate(FAST, self.stage1.optimizer)
        _, fresh, _ = self._calibrate(FAST)
        self.assertEqual([r.losses for r in given.records], [r.losses for r in fresh.records])


if __name__ == "__main__":
    unittest.main()
