"""
Run reports: long-form metric rows, per-seed evaluation records, the pretraining versus downstream correlation
table and deterministic SVG plots.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
import logging
import os

import matplotlib
matplotlib.use('Agg')
from matplotlib.figure import Figure  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .exceptions import InsufficientDataError, ReportError  # noqa: E402
from .metrics import pearson  # noqa: E402


LOG = logging.getLogger(__name__)

METRIC_NAMES = ('train_loss', 'val_gaze_corr', 'mae', 'pearson_r', 'macro_f1')
REPORT_COLUMNS = ('run_id', 'stage', 'config_hash', 'metric', 'value', 'seed')
DOWNSTREAM_METRICS = OrderedDict([('neg_mae', 'mae'), ('pearson_r', 'pearson_r'), ('macro_f1', 'macro_f1')])
SVG_RC = {'svg.hashsalt': 'gaze-glass', 'svg.fonttype': 'none', 'path.simplify': False}


def _clean(value):
    if value is None:
        return None
    value = float(value)
    return None if np.isnan(value) else value


@dataclass(frozen=True)
class MetricRow:
    run_id: str
    stage: str
    config_hash: str
    metric: str
    value: float
    seed: int = 0

    def __post_init__(self):
        if self.metric not in METRIC_NAMES:
            raise ReportError('unknown metric {0!r}, expected one of {1}'.format(self.metric, METRIC_NAMES))


@dataclass(frozen=True)
class EvaluationRecord:
    """
    The test-set result of one fine-tuning or baseline run. Metrics that do not apply to the task are ``None``.
    """
    seed: int
    task: str
    head: str
    chunk_seconds: float
    input_seconds: float
    mae: float = None
    pearson_r: float = None
    macro_f1: float = None

    def metrics(self):
        values = OrderedDict([('mae', self.mae), ('pearson_r', self.pearson_r)]) if self.task == 'vad' else \
            OrderedDict([('macro_f1', self.macro_f1)])
        return values


EVALUATION_COLUMNS = tuple(f.name for f in fields(EvaluationRecord))


class MetricsReport(object):
    """
    An ordered collection of :class:`MetricRow`. Rows sharing a ``config_hash`` describe the same pretraining
    configuration.
    """
    def __init__(self, rows=None):
        self.rows = list(rows or [])

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def add(self, run_id, stage, config_hash, metric, value, seed=0):
        self.rows.append(MetricRow(str(run_id), stage, str(config_hash), metric, _clean(value), int(seed)))

    def add_record(self, record, run_id, stage, config_hash):
        for metric, value in record.metrics().items():
            self.add(run_id, stage, config_hash, metric, value, record.seed)

    def extend(self, other):
        self.rows.extend(other.rows)
        return self

    def filter(self, stage=None, metric=None):
        return MetricsReport([
            row for row in self.rows
            if (stage is None or row.stage == stage) and (metric is None or row.metric == metric)
        ])

    def to_frame(self):
        return pd.DataFrame([asdict(row) for row in self.rows], columns=list(REPORT_COLUMNS))

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path):
        frame = pd.read_csv(path, dtype={'run_id': str, 'stage': str, 'config_hash': str, 'metric': str},
                            keep_default_na=False, na_values=[''])
        missing = [c for c in REPORT_COLUMNS if c not in frame.columns]
        if missing:
            raise ReportError('{0} lacks columns {1}'.format(path, ', '.join(missing)))
        report = cls()
        for row in frame.itertuples(index=False):
            report.add(row.run_id, row.stage, row.config_hash, row.metric, row.value, row.seed)
        return report


def write_evaluations(records, path):
    pd.DataFrame([asdict(r) for r in records], columns=list(EVALUATION_COLUMNS)).to_csv(path, index=False)


def read_evaluations(path):
    frame = pd.read_csv(path, keep_default_na=False, na_values=[''])
    return [
        EvaluationRecord(
            seed=int(row.seed), task=str(row.task), head=str(row.head), chunk_seconds=_clean(row.chunk_seconds),
            input_seconds=float(row.input_seconds), mae=_clean(row.mae), pearson_r=_clean(row.pearson_r),
            macro_f1=_clean(row.macro_f1),
        )
        for row in frame.itertuples(index=False)
    ]


@dataclass(eq=False)
class CorrelationReport:
    """
    ``points`` has one row per joined config hash with the ``val_gaze_corr`` column and the downstream columns
    ``neg_mae``, ``pearson_r`` and ``macro_f1``. ``correlations`` maps each downstream column to its Pearson r
    against ``val_gaze_corr`` (``None`` when undefined).
    """
    points: pd.DataFrame
    correlations: OrderedDict


def _mean_by_hash(report, metric):
    values = {}
    for row in report.filter(metric=metric):
        if row.value is not None:
            values.setdefault(row.config_hash, []).append(row.value)
    return dict((key, float(np.mean(v))) for key, v in values.items())


def correlate_report(pretrain_rows, downstream_rows, min_points=3):
    """
    Joins pretraining validation gaze correlation with mean downstream metrics on ``config_hash`` and
    correlates them. MAE enters negated so that higher is better on every axis.

    :raises: :class:`InsufficientDataError <gaze_glass.exceptions.InsufficientDataError>` with fewer than
        ``min_points`` joined configurations
    """
    gaze = _mean_by_hash(pretrain_rows.filter(stage='pretrain'), 'val_gaze_corr')
    downstream = dict((column, _mean_by_hash(downstream_rows, metric))
                      for column, metric in DOWNSTREAM_METRICS.items())
    hashes = sorted(h for h in gaze if any(h in values for values in downstream.values()))
    if len(hashes) < min_points:
        raise InsufficientDataError('correlation needs {0} joined configurations, got {1}'.format(
            min_points, len(hashes)))

    points = pd.DataFrame(index=pd.Index(hashes, name='config_hash'))
    points['val_gaze_corr'] = [gaze[h] for h in hashes]
    for column, values in downstream.items():
        sign = -1.0 if column == 'neg_mae' else 1.0
        points[column] = [sign * values[h] if h in values else np.nan for h in hashes]

    correlations = OrderedDict()
    for column in DOWNSTREAM_METRICS:
        usable = points[['val_gaze_corr', column]].dropna()
        correlations[column] = pearson(usable['val_gaze_corr'], usable[column]) if len(usable) >= 2 else None
        LOG.info('Correlation of val_gaze_corr with %s over %d points: %s', column, len(usable),
                 correlations[column])
    return CorrelationReport(points=points, correlations=correlations)


def _save(figure, path):
    try:
        with matplotlib.rc_context(SVG_RC):
            figure.savefig(path, format='svg', metadata={'Date': None})
    except OSError as e:
        raise ReportError('cannot write {0}: {1}'.format(path, e))
    LOG.info('Wrote %s', path)
    return path


def _prepare_dir(out_dir):
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise ReportError('cannot create {0}: {1}'.format(out_dir, e))


def plot_learning_curves(logs, path, baseline=None, title='Validation gaze correlation'):
    """
    Plots ``val_corr`` against ``step`` for each labeled training log, with an optional horizontal
    predict-previous reference line.
    """
    with matplotlib.rc_context(SVG_RC):
        figure = Figure(figsize=(6, 4))
        axes = figure.add_subplot(1, 1, 1)
        for label, log in logs.items():
            axes.plot(log['step'], log['val_corr'].astype(float), marker='o', markersize=3, label=str(label))
        if baseline is not None:
            axes.axhline(baseline, color='gray', linestyle='--', label='predict-previous')
        axes.set_xlabel('step')
        axes.set_ylabel('validation gaze correlation')
        axes.set_title(title)
        axes.legend(loc='lower right')
        figure.tight_layout()
    return _save(figure, path)


def plot_correlations(correlation_report, out_dir):
    """
    Writes one scatter plot per downstream metric, named ``correlation_<metric>.svg``.
    """
    paths = []
    points = correlation_report.points
    for column in DOWNSTREAM_METRICS:
        usable = points[['val_gaze_corr', column]].dropna()
        if usable.empty:
            continue
        r = correlation_report.correlations.get(column)
        with matplotlib.rc_context(SVG_RC):
            figure = Figure(figsize=(4, 4))
            axes = figure.add_subplot(1, 1, 1)
            axes.scatter(usable['val_gaze_corr'], usable[column])
            axes.set_xlabel('validation gaze correlation')
            axes.set_ylabel(column)
            axes.set_title('r = {0}'.format('n/a' if r is None else '{0:.3f}'.format(r)))
            figure.tight_layout()
        paths.append(_save(figure, os.path.join(out_dir, 'correlation_{0}.svg'.format(column))))
    return paths


def emit_plots(report, out_dir, name='learning_curve', baseline=None):
    """
    Renders ``report`` as SVG files in ``out_dir`` and returns their paths. A training log DataFrame or a
    ``{label: log}`` dict becomes a learning-curve plot; a :class:`CorrelationReport` becomes one scatter per
    metric.

    :raises: :class:`ReportError <gaze_glass.exceptions.ReportError>` for an empty report (no file is written)
        or an unwritable directory
    """
    if isinstance(report, CorrelationReport):
        if report.points.empty:
            raise ReportError('nothing to plot: empty correlation report')
        _prepare_dir(out_dir)
        return plot_correlations(report, out_dir)
    logs = report if isinstance(report, dict) else {name: report}
    logs = OrderedDict((label, log) for label, log in logs.items() if log is not None and len(log))
    if not logs:
        raise ReportError('nothing to plot: empty training log')
    _prepare_dir(out_dir)
    return [plot_learning_curves(logs, os.path.join(out_dir, '{0}.svg'.format(name)), baseline)]
