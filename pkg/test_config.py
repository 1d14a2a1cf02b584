#!/usr/bin/env python3
"""
Tests for environment settings and the layered run configuration.
"""

import json
import os
import sys
import tempfile
import unittest
import logging
from unittest.mock import patch

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import GazeConfig, PipelineSettings, RunConfig, SvcSettings, load_run_config
from gaze.errors import ConfigError
from gaze.synthgen import SceneConfig

logging.basicConfig(level=logging.ERROR)


class TestGazeConfig(unittest.TestCase):
    """Test environment-backed settings."""

    def test_defaults_are_valid(self):
        with patch.object(GazeConfig, 'WORKERS', 1), patch.object(GazeConfig, 'DEPTH', 1.0), \
                patch.object(GazeConfig, 'LOG_LEVEL', 'INFO'):
            self.assertTrue(GazeConfig.validate_environment())

    def test_invalid_workers(self):
        with patch.object(GazeConfig, 'WORKERS', 0):
            self.assertFalse(GazeConfig.validate_environment())

    def test_invalid_log_level(self):
        with patch.object(GazeConfig, 'LOG_LEVEL', 'LOUD'):
            self.assertFalse(GazeConfig.validate_environment())

    def test_paths(self):
        with patch.object(GazeConfig, 'DATA_DIR', 'somewhere'):
            paths = GazeConfig.get_paths()
        self.assertEqual(paths['dataset'], os.path.join('somewhere', 'synthetic.jsonl'))
        self.assertEqual(set(paths), {'dataset', 'splits', 'annotations', 'models', 'reports'})


class TestSections(unittest.TestCase):
    """Test section validation."""

    def test_svc_grid_must_be_positive(self):
        with self.assertRaises(ConfigError):
            SvcSettings(C_grid=(1.0, 0.0))
        with self.assertRaises(ConfigError):
            SvcSettings(gamma_grid=())
        with self.assertRaises(ConfigError):
            SvcSettings(folds=1)

    def test_pipeline_sources(self):
        settings = PipelineSettings()
        self.assertIsNone(settings.sources('train'))
        self.assertEqual(settings.sources('test'), ('icub',))
        with self.assertRaises(ConfigError):
            PipelineSettings(test_source='kinect')
        with self.assertRaises(ConfigError):
            PipelineSettings(workspace_denominator='some')
        with self.assertRaises(ConfigError):
            PipelineSettings(depth=0.0)


class TestRunConfig(unittest.TestCase):
    """Test loading, merging and overriding run configurations."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, data, name='run.json'):
        path = os.path.join(self.tmp.name, name)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(data if isinstance(data, str) else json.dumps(data))
        return path

    def test_dict_round_trip(self):
        config = RunConfig.default()
        self.assertEqual(RunConfig.from_dict(config.to_dict()), config)
        self.assertEqual(json.loads(json.dumps(config.to_dict())), config.to_dict())

    def test_partial_sections_keep_defaults(self):
        config = RunConfig.from_dict({'scene': {'n_subjects': 6}, 'svc': {'C_grid': [1, 10]}})
        self.assertEqual(config.scene.n_subjects, 6)
        self.assertEqual(config.scene.n_workspace, SceneConfig().n_workspace)
        self.assertEqual(config.svc.C_grid, (1.0, 10.0))
        self.assertEqual(config.svc.folds, 5)

    def test_unknown_keys_lenient(self):
        config = RunConfig.from_dict({'scene': {'n_subjects': 6, 'colour': 'red'}, 'extra': {}})
        self.assertEqual(config.scene.n_subjects, 6)
        self.assertFalse(config.strict)

    def test_unknown_keys_strict(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'scene': {'colour': 'red'}}, strict=True)
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'extra': {}, 'strict': True})

    def test_invalid_values(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'train': {'lr_decay': 0.0}})
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'split': {'k': 0}})
        with self.assertRaises(ConfigError):
            RunConfig.from_dict({'scene': [1, 2]})
        with self.assertRaises(ConfigError):
            RunConfig.from_dict([])

    def test_file_round_trip(self):
        config = RunConfig.from_dict({'mlp': {'hidden': [16, 8]}, 'pipeline': {'workers': 2}})
        path = os.path.join(self.tmp.name, 'nested', 'run.json')
        config.save(path)
        loaded = RunConfig.from_file(path)
        self.assertEqual(loaded, config)
        self.assertEqual(loaded.mlp.hidden, (16, 8))

    def test_missing_and_broken_files(self):
        with self.assertRaises(ConfigError):
            RunConfig.from_file(os.path.join(self.tmp.name, 'absent.json'))
        with self.assertRaises(ConfigError):
            RunConfig.from_file(self.write('{"scene": ', 'broken.json'))

    def test_overrides(self):
        config = RunConfig.default().apply_overrides([
            'svc.C_grid=[1, 10]', 'pipeline.test_source=realsense', 'mlp.hidden=[8, 4]', 'split.k=3',
        ])
        self.assertEqual(config.svc.C_grid, (1.0, 10.0))
        self.assertEqual(config.pipeline.test_source, 'realsense')
        self.assertEqual(config.mlp.hidden, (8, 4))
        self.assertEqual(config.split.k, 3)

    def test_bad_overrides(self):
        config = RunConfig.default()
        for item in ('svc', 'folds=3', 'robot.speed=1', 'svc.speed=1', 'split.k=0'):
            with self.assertRaises(ConfigError, msg=item):
                config.apply_overrides([item])

    def test_layering(self):
        path = self.write({'split': {'k': 2, 'seed': 4}})
        config = load_run_config(path, ['split.k=3'])
        self.assertEqual(config.split.k, 3)
        self.assertEqual(config.split.seed, 4)
        self.assertTrue(load_run_config(None, strict=True).strict)
        self.assertFalse(load_run_config(None).strict)

    def test_model_paths(self):
        paths = RunConfig.from_dict({'paths': {'models': 'm'}}).model_paths(2)
        self.assertEqual(paths['svc'], os.path.join('m', 'svc_split2.json'))
        self.assertEqual(paths['regressor'], os.path.join('m', 'regressor_split2.json'))


if __name__ == '__main__':
    unittest.main()
