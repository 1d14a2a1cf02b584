#!/usr/bin/env python3
"""
Tests for classifier metrics, end-to-end gaze metrics and the evaluation report.
"""

import os
import sys
import tempfile
import unittest
import logging
from dataclasses import replace

import numpy as np

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from gaze.dataset import CLASS_ORDER, GazeClass, annotate_gaze, face_centroid
from gaze.errors import ConfigError, ErrorHandler, LengthMismatch, NoWorkspaceFrames
from gaze.geometry import backproject
from gaze.evaluation import (
    EvalReport, evaluate_classifier, evaluate_end_to_end, evaluate_split, load_report, mean_std,
    regressor_only_rmse, rmse_2d, save_report,
)
from gaze.pipeline import GazePipeline, PipelineResult
from gaze.regressor import init_regressor
from gaze.synthgen import SceneConfig, generate_dataset

logging.basicConfig(level=logging.ERROR)


class AlwaysWorkspace:
    def predict(self, x):
        return GazeClass.WORKSPACE, 1.0


def scene_frames(n_workspace=20, n_other=10, seed=3):
    scene = SceneConfig(n_eye_contact=n_other, n_icub=0, n_workspace=n_workspace, n_other=0,
                        noise_std=0.0, eye_dropout=0.0, seed=seed)
    return generate_dataset(scene)


def oracle_results(frames):
    """Workspace frames get ground-truth gaze, the rest their true class."""
    pipeline = GazePipeline(AlwaysWorkspace(), gaze_passthrough=True)
    results = []
    for frame in frames:
        if frame.label is GazeClass.WORKSPACE:
            results.append(pipeline.run(frame))
        else:
            results.append(PipelineResult(frame.frame_id, frame.label, 1.0))
    return results


class TestClassifierMetrics(unittest.TestCase):
    """Test confusion matrix and macro scores."""

    def test_two_class_confusion(self):
        truths = ['a', 'a', 'a', 'b', 'b', 'b']
        preds = ['a', 'a', 'b', 'b', 'b', 'b']
        metrics = evaluate_classifier(preds, truths, labels=['a', 'b'])
        self.assertEqual(metrics.confusion, [[2, 1], [0, 3]])
        self.assertAlmostEqual(metrics.accuracy, 5 / 6)
        self.assertAlmostEqual(metrics.per_class['a']['precision'], 1.0)
        self.assertAlmostEqual(metrics.per_class['a']['recall'], 2 / 3)
        self.assertAlmostEqual(metrics.precision, (1.0 + 0.75) / 2)
        self.assertAlmostEqual(metrics.recall, (2 / 3 + 1.0) / 2)
        self.assertEqual(metrics.per_class['b']['support'], 3)

    def test_constant_prediction(self):
        truths = list(CLASS_ORDER) * 5
        metrics = evaluate_classifier([CLASS_ORDER[0]] * len(truths), truths)
        self.assertAlmostEqual(metrics.accuracy, 0.25)
        self.assertAlmostEqual(metrics.recall, 0.25)
        self.assertAlmostEqual(metrics.precision, 0.0625)

    def test_uniform_random_predictor_scores_chance(self):
        rng = np.random.default_rng(21)
        truths = list(CLASS_ORDER) * 250
        preds = [CLASS_ORDER[i] for i in rng.integers(0, len(CLASS_ORDER), size=len(truths))]
        metrics = evaluate_classifier(preds, truths)
        # precision and recall both expect 1/4, so does their harmonic mean
        self.assertAlmostEqual(metrics.f1, 0.25, delta=0.05)
        self.assertAlmostEqual(metrics.accuracy, 0.25, delta=0.05)

    def test_perfect_prediction(self):
        truths = list(CLASS_ORDER) * 3
        metrics = evaluate_classifier(truths, truths)
        self.assertEqual(metrics.accuracy, 1.0)
        self.assertEqual(metrics.f1, 1.0)
        self.assertEqual(np.trace(metrics.confusion), 12)

    def test_absent_class_scores_zero(self):
        truths = [GazeClass.EYE_CONTACT, GazeClass.WORKSPACE]
        metrics = evaluate_classifier(truths, truths)
        self.assertEqual(metrics.accuracy, 1.0)
        self.assertAlmostEqual(metrics.recall, 0.5)

    def test_length_mismatch(self):
        with self.assertRaises(LengthMismatch):
            evaluate_classifier(['a'], ['a', 'b'], labels=['a', 'b'])

    def test_empty(self):
        metrics = evaluate_classifier([], [])
        self.assertEqual(metrics.accuracy, 0.0)
        self.assertEqual(metrics.confusion, [[0] * 4] * 4)


class TestGazeMetrics(unittest.TestCase):
    """Test RMSE and aggregation helpers."""

    def test_rmse_per_coordinate(self):
        self.assertAlmostEqual(rmse_2d([(3.0, 4.0)], [(0.0, 0.0)]), np.sqrt(12.5))
        self.assertEqual(rmse_2d([(1.0, 2.0), (3.0, 4.0)], [(1.0, 2.0), (3.0, 4.0)]), 0.0)

    def test_rmse_empty(self):
        with self.assertRaises(NoWorkspaceFrames):
            rmse_2d(np.zeros((0, 2)), np.zeros((0, 2)))

    def test_mean_std(self):
        self.assertEqual(mean_std([2.0]), (2.0, 0.0))
        self.assertEqual(mean_std([1.0, None, 3.0]), (2.0, 1.0))
        self.assertIsNone(mean_std([None, None]))


class TestSplitMetrics(unittest.TestCase):
    """Test per-split end-to-end metrics."""

    def test_oracle_results(self):
        frames = scene_frames()
        metrics = evaluate_split(oracle_results(frames), frames)
        self.assertEqual(metrics.classifier.accuracy, 1.0)
        self.assertEqual(metrics.workspace_fraction, 1.0)
        self.assertEqual(metrics.n_workspace_pairs, 20)
        self.assertLess(metrics.rmse_2d, 1e-9)
        self.assertLess(metrics.angular_error_mean, 1e-6)

    def test_missed_workspace_frames(self):
        frames = scene_frames()
        results = oracle_results(frames)
        workspace = [i for i, f in enumerate(frames) if f.label is GazeClass.WORKSPACE]
        for i in workspace[:5]:
            results[i] = PipelineResult(frames[i].frame_id, GazeClass.OTHER, 0.6)
        metrics = evaluate_split(results, frames)
        self.assertAlmostEqual(metrics.workspace_fraction, 15 / 20)
        self.assertEqual(metrics.n_workspace_pairs, 15)
        self.assertAlmostEqual(metrics.classifier.accuracy, 25 / 30)
        everything = evaluate_split(results, frames, denominator='all')
        self.assertAlmostEqual(everything.workspace_fraction, 15 / 30)

    def test_gaze_error_against_truth(self):
        frames = [f for f in scene_frames(n_other=0) if f.label is GazeClass.WORKSPACE]
        results = []
        for frame in frames:
            truth = annotate_gaze(frame)
            results.append(PipelineResult(frame.frame_id, GazeClass.WORKSPACE, 1.0,
                                          (truth.gaze2d[0] + 3.0, truth.gaze2d[1] - 4.0), 0.5, truth.gaze3d))
        metrics = evaluate_split(results, frames)
        self.assertAlmostEqual(metrics.rmse_2d, np.sqrt(12.5))
        self.assertLess(metrics.angular_error_mean, 1e-6)

    def test_no_workspace_pairs(self):
        frames = scene_frames(n_workspace=0)
        metrics = evaluate_split(oracle_results(frames), frames)
        self.assertIsNone(metrics.rmse_2d)
        self.assertIsNone(metrics.angular_error_mean)
        self.assertIsNone(metrics.workspace_fraction)
        self.assertEqual(metrics.n_workspace_pairs, 0)

    def test_failures_are_counted(self):
        frames = scene_frames()
        results = oracle_results(frames)
        results[0] = PipelineResult(frames[0].frame_id, error='NoValidKeypoints: empty')
        metrics = evaluate_split(results, frames)
        self.assertEqual(metrics.n_failures, 1)
        self.assertEqual(sum(sum(row) for row in metrics.classifier.confusion), 29)

    def test_length_mismatch(self):
        frames = scene_frames()
        with self.assertRaises(LengthMismatch):
            evaluate_split(oracle_results(frames)[1:], frames)

    def test_unknown_denominator(self):
        frames = scene_frames()
        with self.assertRaises(ConfigError):
            evaluate_split(oracle_results(frames), frames, denominator='some')

    def test_regressor_only_rmse(self):
        frames = scene_frames()
        net = init_regressor(seed=0)
        for name in ('W1', 'b1', 'W2', 'b2', 'W3', 'b3'):
            net.params[name][...] = 0.0
        truth = [annotate_gaze(f).gaze2d for f in frames if f.label is GazeClass.WORKSPACE]
        expected = rmse_2d(np.zeros((len(truth), 2)), truth)
        self.assertAlmostEqual(regressor_only_rmse(net, frames), expected)
        self.assertIsNone(regressor_only_rmse(net, scene_frames(n_workspace=0)))


    def test_unannotatable_workspace_frame_is_excluded(self):
        frames = scene_frames()
        results = oracle_results(frames)
        i = next(i for i, f in enumerate(frames) if f.label is GazeClass.WORKSPACE)
        centre = backproject(face_centroid(frames[i]), frames[i].depth(), frames[i].camera)
        frames[i] = replace(frames[i], target_ccs=tuple(centre))
        handler = ErrorHandler()
        metrics = evaluate_split(results, frames, error_handler=handler)
        self.assertEqual(metrics.n_excluded, 1)
        self.assertEqual(metrics.n_workspace_pairs, 19)
        self.assertEqual(metrics.workspace_fraction, 1.0)
        self.assertLess(metrics.rmse_2d, 1e-9)
        self.assertLess(metrics.angular_error_mean, 1e-6)
        self.assertEqual(handler.summary(), {'DegenerateTarget': 1})

        report = EvalReport(splits=[metrics])
        self.assertEqual(report.n_excluded, 1)
        self.assertEqual(report.to_dict()['n_excluded'], 1)
        self.assertEqual(report.to_dict()['splits'][0]['n_excluded'], 1)

    def test_regressor_only_rmse_skips_unannotatable_frames(self):
        frames = scene_frames()
        net = init_regressor(seed=0)
        for name in ('W1', 'b1', 'W2', 'b2', 'W3', 'b3'):
            net.params[name][...] = 0.0
        i = next(i for i, f in enumerate(frames) if f.label is GazeClass.WORKSPACE)
        frames[i] = replace(frames[i], target_ccs=None)
        truth = [annotate_gaze(f).gaze2d for f in frames if f.label is GazeClass.WORKSPACE and f.target_ccs is not None]
        self.assertEqual(len(truth), 19)
        self.assertAlmostEqual(regressor_only_rmse(net, frames), rmse_2d(np.zeros((19, 2)), truth))


class TestEvalReport(unittest.TestCase):
    """Test aggregation, persistence and rendering."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_single_split_has_zero_std(self):
        frames = scene_frames()
        report = evaluate_end_to_end([oracle_results(frames)], [frames])
        self.assertEqual(report.k, 1)
        accuracy = report.aggregate()['accuracy']
        self.assertEqual(accuracy, (1.0, 0.0))
        self.assertIsNone(report.aggregate()['regressor_rmse'])

    def test_mean_over_splits(self):
        first = scene_frames(seed=4)
        second = scene_frames(seed=5)
        results = oracle_results(second)
        for i, frame in enumerate(second):
            if frame.label is not GazeClass.WORKSPACE:
                results[i] = PipelineResult(frame.frame_id, GazeClass.OTHER, 0.5)
        report = evaluate_end_to_end([oracle_results(first), results], [first, second], k_splits=2)
        mean, std = report.aggregate()['accuracy']
        self.assertAlmostEqual(mean, (1.0 + 20 / 30) / 2)
        self.assertAlmostEqual(std, (1.0 - 20 / 30) / 2)

    def test_split_count_mismatch(self):
        frames = scene_frames()
        with self.assertRaises(LengthMismatch):
            evaluate_end_to_end([oracle_results(frames)], [frames], k_splits=5)
        with self.assertRaises(LengthMismatch):
            evaluate_end_to_end([oracle_results(frames)], [frames, frames])

    def test_save_and_load(self):
        frames = scene_frames()
        report = evaluate_end_to_end([oracle_results(frames)], [frames])
        json_path = os.path.join(self.tmp.name, 'reports', 'eval.json')
        table_path = os.path.join(self.tmp.name, 'reports', 'eval.txt')
        save_report(report, json_path, table_path)
        loaded = load_report(json_path)
        self.assertEqual(loaded.to_dict(), report.to_dict())
        with open(table_path, encoding='utf-8') as f:
            self.assertEqual(f.read(), report.format_table())

    def test_table_rows(self):
        frames = scene_frames(n_workspace=0)
        table = EvalReport([evaluate_split(oracle_results(frames), frames)]).format_table()
        self.assertIn('Accuracy', table)
        self.assertIn('1.00 +- 0.00', table)
        self.assertIn('n/a', table)
        self.assertNotIn('MLP', table)

    def test_table_workspace_percent(self):
        frames = scene_frames()
        table = evaluate_end_to_end([oracle_results(frames)], [frames]).format_table()
        self.assertIn('Classified as workspace [%]', table)
        self.assertIn('100.00 +- 0.00', table)


if __name__ == '__main__':
    unittest.main()
