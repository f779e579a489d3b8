import json
import os
import shutil
import tempfile
from unittest import TestCase

import pandas as pd
import yaml

from gaze_glass.cli import CHECKPOINT_NAME, EVALUATIONS_NAME, METRICS_NAME, TRAINING_LOG_NAME, main
from gaze_glass.config import RESOLVED_CONFIG_NAME, load_run_config
from gaze_glass.reports import MetricsReport
from gaze_glass.run_lock import LOCK_FILE_NAME

FAST_CONFIG = {
    'synth': {'duration_seconds': 40.0, 'n_subjects': 3, 'val_subjects': 1},
    'model': {'input_frames': 30, 'output_frames': 30, 'patch_size': 10, 'model_dim': 16, 'encoder_layers': 1,
              'decoder_layers': 1, 'heads': 2},
    'optim': {'warmup_steps': 2, 'total_steps': 6},
    'pretrain': {'stride': 61, 'batch_size': 8},
    'window': {'task': 'vad', 'input_seconds': 2},
    'head': {'kind': 'mlp', 'hidden': 8},
    'finetune': {'epochs': 1},
    'baseline': {'epochs': 1, 'hidden': 8, 'cnn_hidden': 8},
    'sweep': {'seeds': [0, 1], 'input_seconds': [2, 5]},
}


class CliTest(TestCase):
    def setUp(self):
        self.work_dir = tempfile.mkdtemp()
        self.config = self.path('config.yaml')
        with open(self.config, 'w') as f:
            yaml.safe_dump(FAST_CONFIG, f)

    def tearDown(self):
        shutil.rmtree(self.work_dir, ignore_errors=True)

    def path(self, *parts):
        return os.path.join(self.work_dir, *parts)

    def run_cli(self, command, out, *extra):
        return main([command, '--config', self.config, '--out', self.path(out)] + list(extra))

    def synth(self):
        self.assertEqual(self.run_cli('synth', 'corpus'), 0)
        return self.path('corpus', 'manifest.csv')

    def read(self, *parts):
        with open(self.path(*parts), 'rb') as f:
            return f.read()


class UsageTest(CliTest):
    def test_unknown_flag(self):
        self.assertEqual(main(['synth', '--out', self.path('x'), '--frobnicate']), 2)

    def test_missing_required(self):
        self.assertEqual(main(['pretrain', '--out', self.path('x')]), 2)
        self.assertEqual(main([]), 2)

    def test_bad_choice(self):
        self.assertEqual(main(['baseline', '--out', self.path('x'), '--manifest', 'm.csv', '--kind', 'svm']), 2)

    def test_config_violation(self):
        """
        Tests that an invalid config value is reported as an error exit without a traceback.
        """
        with open(self.config, 'w') as f:
            yaml.safe_dump({'model': {'patch_size': 7}}, f)
        self.assertEqual(self.run_cli('synth', 'corpus'), 1)
        with open(self.config, 'w') as f:
            yaml.safe_dump({'model': {'width': 7}}, f)
        self.assertEqual(self.run_cli('synth', 'corpus'), 1)

    def test_missing_manifest(self):
        self.assertEqual(self.run_cli('pretrain', 'run', '--manifest', self.path('absent.csv')), 1)

    def test_foreign_lock(self):
        """
        Tests that a lock file without a creation time in the output directory is an error exit.
        """
        os.makedirs(self.path('corpus'))
        with open(self.path('corpus', LOCK_FILE_NAME), 'w') as f:
            json.dump({'token': 'other-run'}, f)
        self.assertEqual(self.run_cli('synth', 'corpus'), 1)


class SynthCommandTest(CliTest):
    def test_synth(self):
        """
        Tests that synthesis writes the manifest, one CSV and annotation file per subject and the resolved config.
        """
        manifest = pd.read_csv(self.synth())
        self.assertEqual(len(manifest), 3)
        self.assertEqual(sorted(manifest['split']), ['train', 'train', 'val'])
        for name in manifest['csv_path']:
            self.assertTrue(os.path.exists(self.path('corpus', name)))
        self.assertEqual(load_run_config(self.path('corpus', RESOLVED_CONFIG_NAME)).synth.n_subjects, 3)

    def test_deterministic(self):
        self.synth()
        self.assertEqual(self.run_cli('synth', 'again'), 0)
        manifest = pd.read_csv(self.path('corpus', 'manifest.csv'))
        for name in list(manifest['csv_path']) + list(manifest['annotation_path']):
            self.assertEqual(self.read('corpus', name), self.read('again', name))


class PretrainCommandTest(CliTest):
    def test_pretrain_reruns_identical(self):
        """
        Tests that pretraining twice with the same config writes byte-identical checkpoints and metrics.
        """
        manifest = self.synth()
        self.assertEqual(self.run_cli('pretrain', 'first', '--manifest', manifest), 0)
        self.assertEqual(self.run_cli('pretrain', 'second', '--manifest', manifest), 0)
        for name in (CHECKPOINT_NAME, METRICS_NAME, TRAINING_LOG_NAME, RESOLVED_CONFIG_NAME):
            self.assertEqual(self.read('first', name), self.read('second', name), name)
        metrics = pd.read_csv(self.path('first', METRICS_NAME))
        self.assertEqual(list(metrics['stage']), ['pretrain', 'pretrain', 'baseline_reference'])

    def test_sweep(self):
        """
        Tests that a sweep writes one run directory per axis value plus a reference row.
        """
        manifest = self.synth()
        self.assertEqual(self.run_cli('pretrain', 'sweep', '--manifest', manifest, '--sweep-axis', 'input_seconds'),
                         0)
        for run_id in ('input_seconds_2', 'input_seconds_5'):
            self.assertTrue(os.path.exists(self.path('sweep', run_id, CHECKPOINT_NAME)))
            resolved = load_run_config(self.path('sweep', run_id, RESOLVED_CONFIG_NAME))
            self.assertEqual(resolved.model.input_frames, int(run_id.split('_')[-1]) * 30)
        metrics = pd.read_csv(self.path('sweep', METRICS_NAME), dtype={'config_hash': str})
        self.assertEqual(len(metrics), 5)
        self.assertEqual(metrics['config_hash'].iloc[:4].nunique(), 2)
        self.assertEqual(metrics['run_id'].iloc[-1], 'predict_previous')

    def test_eval_and_report(self):
        manifest = self.synth()
        self.assertEqual(self.run_cli('pretrain', 'run', '--manifest', manifest), 0)
        checkpoint = self.path('run', CHECKPOINT_NAME)
        self.assertEqual(self.run_cli('eval', 'eval', '--manifest', manifest, '--checkpoint', checkpoint), 0)
        self.assertEqual(len(pd.read_csv(self.path('eval', METRICS_NAME))), 2)
        self.assertEqual(self.run_cli('report', 'report', '--logs', self.path('run', TRAINING_LOG_NAME),
                                      '--metrics', self.path('run', METRICS_NAME)), 1)
        self.assertEqual(self.run_cli('report', 'plots', '--logs', self.path('run', TRAINING_LOG_NAME)), 0)
        self.assertTrue(os.path.exists(self.path('plots', 'learning_curves.svg')))
        self.assertEqual(self.run_cli('report', 'empty'), 1)


class DownstreamCommandTest(CliTest):
    def test_finetune(self):
        """
        Tests one evaluation row per bootstrap seed, tagged with the checkpoint's config hash.
        """
        manifest = self.synth()
        self.assertEqual(self.run_cli('pretrain', 'run', '--manifest', manifest), 0)
        self.assertEqual(self.run_cli('finetune', 'tuned', '--manifest', manifest, '--checkpoint',
                                      self.path('run', CHECKPOINT_NAME), '--heads', 'mlp', 'gru'), 0)
        evaluations = pd.read_csv(self.path('tuned', EVALUATIONS_NAME))
        self.assertEqual(list(evaluations['head']), ['mlp', 'mlp', 'gru', 'gru'])
        self.assertEqual(list(evaluations['seed']), [0, 1, 0, 1])
        pretrain_hash = pd.read_csv(self.path('run', METRICS_NAME), dtype={'config_hash': str})['config_hash'][0]
        metrics = pd.read_csv(self.path('tuned', METRICS_NAME), dtype={'config_hash': str})
        self.assertEqual(set(metrics['config_hash']), {pretrain_hash})
        self.assertEqual(set(metrics['metric']), {'mae', 'pearson_r'})

    def test_baseline(self):
        manifest = self.synth()
        self.assertEqual(self.run_cli('baseline', 'cnn', '--manifest', manifest, '--kind', 'cnn'), 0)
        evaluations = pd.read_csv(self.path('cnn', EVALUATIONS_NAME))
        self.assertEqual(list(evaluations['head']), ['cnn', 'cnn'])
        self.assertTrue(evaluations['chunk_seconds'].isna().all())


class RerunTest(CliTest):
    """
    Tests that every downstream command writes byte-identical files when run twice with the same inputs.
    """
    def assert_same_outputs(self, first, second, names=None):
        names = names or sorted(os.listdir(self.path(first)))
        self.assertEqual(sorted(os.listdir(self.path(second))), sorted(os.listdir(self.path(first))))
        for name in names:
            self.assertEqual(self.read(first, name), self.read(second, name), name)

    def test_finetune_and_eval(self):
        manifest = self.synth()
        self.assertEqual(self.run_cli('pretrain', 'run', '--manifest', manifest), 0)
        checkpoint = self.path('run', CHECKPOINT_NAME)
        for out in ('tuned', 'tuned_again'):
            self.assertEqual(self.run_cli('finetune', out, '--manifest', manifest, '--checkpoint', checkpoint,
                                          '--heads', 'mlp', 'gru', '--chunk-seconds', '0.5', '1'), 0)
        self.assert_same_outputs('tuned', 'tuned_again', [EVALUATIONS_NAME, METRICS_NAME])
        self.assertEqual(len(pd.read_csv(self.path('tuned', EVALUATIONS_NAME))), 8)
        for out in ('eval', 'eval_again'):
            self.assertEqual(self.run_cli('eval', out, '--manifest', manifest, '--checkpoint', checkpoint), 0)
        self.assert_same_outputs('eval', 'eval_again', [METRICS_NAME])

    def test_baseline(self):
        manifest = self.synth()
        for kind in ('stats_eyes', 'cnn'):
            for out in (kind, kind + '_again'):
                self.assertEqual(self.run_cli('baseline', out, '--manifest', manifest, '--kind', kind), 0)
            self.assert_same_outputs(kind, kind + '_again', [EVALUATIONS_NAME, METRICS_NAME])

    def test_report(self):
        """
        Tests that correlation tables and every plot repeat byte for byte.
        """
        report = MetricsReport()
        for i, (corr, mae, r) in enumerate([(0.5, 0.25, 0.125), (0.625, 0.125, 0.25), (0.75, 0.0625, 0.5)]):
            report.add('run{0}'.format(i), 'pretrain', 'h{0}'.format(i), 'val_gaze_corr', corr)
            report.add('run{0}'.format(i), 'finetune', 'h{0}'.format(i), 'mae', mae, seed=0)
            report.add('run{0}'.format(i), 'finetune', 'h{0}'.format(i), 'pearson_r', r, seed=0)
        report.add('predict_previous', 'baseline_reference', '', 'val_gaze_corr', 0.375)
        metrics = self.path('metrics.csv')
        report.to_csv(metrics)
        logs = []
        for run_id, scale in (('small', 1.0), ('base', 0.5)):
            os.makedirs(self.path('logs', run_id))
            logs.append(self.path('logs', run_id, TRAINING_LOG_NAME))
            pd.DataFrame({'step': [10, 20, 30], 'val_corr': [0.25 * scale, 0.5 * scale, 0.75 * scale]}).to_csv(
                logs[-1], index=False)
        for out in ('report', 'report_again'):
            self.assertEqual(self.run_cli('report', out, '--metrics', metrics, '--logs', *logs), 0)
        self.assert_same_outputs('report', 'report_again')
        written = os.listdir(self.path('report'))
        for name in ('correlations.csv', 'correlation_points.csv', 'learning_curves.svg',
                     'correlation_pearson_r.svg'):
            self.assertIn(name, written)
