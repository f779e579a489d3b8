"""
The ``gaze-glass`` command line: corpus synthesis, pretraining and sweeps, fine-tuning, baselines, checkpoint
evaluation and reports.
"""
import argparse
from collections import OrderedDict
from dataclasses import replace
import logging
import os
import sys

import numpy as np
import pandas as pd

from .baselines import BASELINE_KINDS, fit_baseline
from .config import RESOLVED_CONFIG_NAME, SWEEP_AXES, config_hash, dump_run_config, load_run_config
from .emotion import CHUNK_SECONDS, HEAD_KINDS, run_bootstrap, summarize_runs
from .exceptions import ConfigError, GlassError
from .gaze_data import (
    extract_windows, load_labeled_dataset, normalize, parse_openface_csv, read_manifest, split_manifest,
    synth_corpus,
)
from .glass_model import model_size_config, read_checkpoint, save_checkpoint
from .models import NormStats
from .pretrain import evaluate_forecast, prepare_pretraining_data, run_pretraining
from .reports import MetricsReport, correlate_report, emit_plots, write_evaluations
from .run_lock import run_lock
from .version import __version__


LOG = logging.getLogger(__name__)

VERBOSITY_LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}
SIZE_SHARED_FIELDS = ('input_dims', 'input_frames', 'output_frames', 'patch_size', 'rope_base', 'mlp_ratio')
CHECKPOINT_NAME = 'checkpoint.glss'
TRAINING_LOG_NAME = 'training_log.csv'
METRICS_NAME = 'metrics.csv'
EVALUATIONS_NAME = 'evaluations.csv'


def _write_resolved(cfg, out_dir):
    dump_run_config(cfg, os.path.join(out_dir, RESOLVED_CONFIG_NAME))


def _pretrain_once(cfg, entries, out_dir, report, run_id):
    """
    Pretrains one forecaster into ``out_dir`` and appends its rows to ``report``. Returns the result.
    """
    os.makedirs(out_dir, exist_ok=True)
    digest = config_hash(cfg)
    data = prepare_pretraining_data(entries, cfg.model.window_spec(cfg.pretrain.stride), cfg.pretrain.fps)
    result = run_pretraining(data, cfg.model, cfg.loss, cfg.optim, cfg.schedule, cfg.sweep.seed, cfg.pretrain,
                             metadata={'config_hash': digest, 'run_id': run_id})
    save_checkpoint(result.model, os.path.join(out_dir, CHECKPOINT_NAME), result.checkpoint.metadata)
    result.log.to_csv(os.path.join(out_dir, TRAINING_LOG_NAME), index=False)
    final_loss = result.log['train_loss'].iloc[-1] if len(result.log) else None
    report.add(run_id, 'pretrain', digest, 'train_loss', final_loss, cfg.sweep.seed)
    report.add(run_id, 'pretrain', digest, 'val_gaze_corr', result.best_val_corr, cfg.sweep.seed)
    return result


def sweep(cfg, axis, entries, out_dir):
    """
    Runs one pretraining per value of ``axis`` with the shared seed. Each run writes its checkpoint and training
    log under ``<out_dir>/<axis>_<value>``; the report closes with a predict-previous reference row.

    :rtype: :class:`MetricsReport <gaze_glass.reports.MetricsReport>`
    """
    report = MetricsReport()
    baseline = None
    for value in cfg.sweep.values(axis):
        if axis == 'model_size':
            overrides = dict((k, getattr(cfg.model, k)) for k in SIZE_SHARED_FIELDS)
            model = model_size_config(value, **overrides)
        elif axis == 'input_seconds':
            model = replace(cfg.model, input_frames=int(round(value * cfg.pretrain.fps)))
        else:
            model = replace(cfg.model, output_frames=int(round(value * cfg.pretrain.fps)))
        run_cfg = replace(cfg, model=model)
        run_id = '{0}_{1}'.format(axis, value)
        LOG.info('Sweep %s: pretraining %s', axis, run_id)
        result = _pretrain_once(run_cfg, entries, os.path.join(out_dir, run_id), report, run_id)
        _write_resolved(run_cfg, os.path.join(out_dir, run_id))
        if baseline is None:
            baseline = result.baseline_corr
    report.add('predict_previous', 'baseline_reference', '', 'val_gaze_corr', baseline, cfg.sweep.seed)
    return report


def cmd_synth(args, cfg):
    synth_corpus(cfg.synth, cfg.sweep.seed, args.out)


def cmd_pretrain(args, cfg):
    entries = read_manifest(args.manifest)
    if args.sweep_axis:
        report = sweep(cfg, args.sweep_axis, entries, args.out)
    else:
        report = MetricsReport()
        result = _pretrain_once(cfg, entries, args.out, report, 'pretrain')
        report.add('predict_previous', 'baseline_reference', '', 'val_gaze_corr', result.baseline_corr,
                   cfg.sweep.seed)
    report.to_csv(os.path.join(args.out, METRICS_NAME))


def _dataset(args, cfg):
    return load_labeled_dataset(read_manifest(args.manifest), cfg.window.task, cfg.window.input_seconds,
                                cfg.window.stride_seconds, cfg.pretrain.fps)


def cmd_finetune(args, cfg):
    checkpoint = read_checkpoint(args.checkpoint)
    digest = checkpoint.metadata.get('config_hash', '')
    dataset = _dataset(args, cfg)
    heads = args.heads or [cfg.head.kind]
    chunk_sizes = args.chunk_seconds or [cfg.chunk.chunk_seconds]
    report, records = MetricsReport(), []
    for kind in heads:
        for chunk_seconds in chunk_sizes:
            head = replace(cfg.head, kind=kind)
            chunk_cfg = replace(cfg.chunk, chunk_seconds=chunk_seconds)
            runs = run_bootstrap(checkpoint, dataset, head, chunk_cfg, cfg.window.task, cfg.sweep.seeds,
                                 cfg.finetune)
            run_id = '{0}_{1}s'.format(kind, chunk_seconds)
            for record in runs:
                report.add_record(record, run_id, 'finetune', digest)
            records.extend(runs)
            LOG.info('%s on %s: %s', run_id, cfg.window.task, summarize_runs(runs))
    write_evaluations(records, os.path.join(args.out, EVALUATIONS_NAME))
    report.to_csv(os.path.join(args.out, METRICS_NAME))


def cmd_baseline(args, cfg):
    dataset = _dataset(args, cfg)
    report, records = MetricsReport(), []
    for seed in cfg.sweep.seeds:
        _, record = fit_baseline(dataset, args.kind, cfg.window.task, seed, cfg.baseline, cfg.pretrain.fps)
        report.add_record(record, args.kind, 'baseline', '')
        records.append(record)
    LOG.info('%s baseline on %s: %s', args.kind, cfg.window.task, summarize_runs(records))
    write_evaluations(records, os.path.join(args.out, EVALUATIONS_NAME))
    report.to_csv(os.path.join(args.out, METRICS_NAME))


def cmd_eval(args, cfg):
    checkpoint = read_checkpoint(args.checkpoint)
    model = checkpoint.to_model()
    stats = NormStats(mean=model.norm_mean.double().numpy(), std=model.norm_std.double().numpy(),
                      clamped=np.zeros(model.config.input_dims, dtype=bool))
    _, val_entries = split_manifest(read_manifest(args.manifest))
    spec = model.config.window_spec(cfg.pretrain.stride)
    windows = []
    for entry in val_entries:
        seq = parse_openface_csv(entry.csv_path, fps=cfg.pretrain.fps, subject_id=entry.subject_id)
        windows.extend(extract_windows(normalize(seq, stats), spec))
    if not windows:
        raise ConfigError('the validation split yields no {0}-frame window'.format(spec.span))
    inputs = np.array([w.input for w in windows])
    targets = np.array([w.target for w in windows])
    result = evaluate_forecast(model, inputs, targets, cfg.pretrain.eval_batch_size)
    digest = checkpoint.metadata.get('config_hash', '')
    report = MetricsReport()
    report.add('eval', 'pretrain', digest, 'val_gaze_corr', result.glass_corr, checkpoint.metadata.get('seed', 0))
    report.add('predict_previous', 'baseline_reference', '', 'val_gaze_corr', result.baseline_corr)
    report.to_csv(os.path.join(args.out, METRICS_NAME))
    LOG.info('Validation gaze correlation over %d windows: model=%s predict-previous=%s', result.windows,
             result.glass_corr, result.baseline_corr)


def cmd_report(args, cfg):
    if not args.metrics and not args.logs:
        raise ConfigError('report needs --metrics, --logs or both')
    combined = MetricsReport()
    for path in args.metrics or []:
        combined.extend(MetricsReport.from_csv(path))
    if args.metrics:
        correlation = correlate_report(combined, combined)
        correlation.points.to_csv(os.path.join(args.out, 'correlation_points.csv'))
        pd.DataFrame(list(correlation.correlations.items()), columns=['metric', 'r']).to_csv(
            os.path.join(args.out, 'correlations.csv'), index=False)
        emit_plots(correlation, args.out)
    if args.logs:
        logs = OrderedDict(
            (os.path.basename(os.path.dirname(os.path.abspath(path))), pd.read_csv(path)) for path in args.logs)
        references = [row.value for row in combined.filter(stage='baseline_reference') if row.value is not None]
        emit_plots(logs, args.out, name='learning_curves', baseline=references[0] if references else None)


COMMANDS = OrderedDict([
    ('synth', cmd_synth), ('pretrain', cmd_pretrain), ('finetune', cmd_finetune), ('baseline', cmd_baseline),
    ('eval', cmd_eval), ('report', cmd_report),
])


def build_parser():
    parser = argparse.ArgumentParser(prog='gaze-glass', description=__doc__.strip())
    parser.add_argument('--version', action='version', version='%(prog)s {0}'.format(__version__))
    parser.add_argument('--verbosity', type=int, choices=sorted(VERBOSITY_LEVELS), default=1,
                        help='0 = warnings, 1 = progress, 2 = debug')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    def command(name, help_text, manifest=False, checkpoint=False):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument('--config', help='YAML run config; defaults apply when omitted')
        sub.add_argument('--out', required=True, help='output directory')
        if manifest:
            sub.add_argument('--manifest', required=True, help='manifest CSV of the corpus')
        if checkpoint:
            sub.add_argument('--checkpoint', required=True, help='pretrained checkpoint')
        return sub

    command('synth', 'write a synthetic gaze/affect corpus and its manifest')
    pretrain = command('pretrain', 'pretrain a gaze forecaster', manifest=True)
    pretrain.add_argument('--sweep-axis', choices=SWEEP_AXES, help='pretrain once per value of this axis')
    finetune = command('finetune', 'fine-tune emotion heads over bootstrap seeds', manifest=True, checkpoint=True)
    finetune.add_argument('--heads', nargs='+', choices=HEAD_KINDS, help='head kinds to evaluate')
    finetune.add_argument('--chunk-seconds', nargs='+', type=float, choices=CHUNK_SECONDS, help='chunk sizes')
    baseline = command('baseline', 'fit a baseline over bootstrap seeds', manifest=True)
    baseline.add_argument('--kind', choices=BASELINE_KINDS, default=BASELINE_KINDS[0])
    command('eval', 'score a checkpoint against predict-previous on the validation split', manifest=True,
            checkpoint=True)
    report = command('report', 'correlate pretraining with downstream metrics and plot')
    report.add_argument('--metrics', nargs='+', help='metrics CSVs to join')
    report.add_argument('--logs', nargs='+', help='training logs to plot')
    return parser


def main(argv=None):
    """
    Runs one command and returns its exit code: 0 on success, 1 on a gaze_glass error, 2 on usage errors.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    logging.basicConfig(level=VERBOSITY_LEVELS[args.verbosity], stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        cfg = load_run_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        with run_lock(args.out, ttl_seconds=cfg.lock.ttl_seconds):
            _write_resolved(cfg, args.out)
            COMMANDS[args.command](args, cfg)
    except GlassError as e:
        sys.stderr.write('error: {0}: {1}\n'.format(type(e).__name__, e))
        return 1
    except OSError as e:
        sys.stderr.write('error: {0}: {1}\n'.format(type(e).__name__, e))
        return 1
    return 0
