"""
Evaluation metrics shared by pretraining, fine-tuning and the baselines.
"""
import numpy as np
from sklearn.metrics import f1_score

from .exceptions import ContractError, ShapeError
from .models import BEHAVIOR_CLASSES, BehaviorLabel, VADLabel


def pearson(x, y):
    """
    Pearson correlation of two equally sized arrays, pooled over all elements. Returns ``None`` when either side
    has zero variance or fewer than two values.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ShapeError('cannot correlate {0} values with {1}'.format(x.size, y.size))
    if x.size < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    dx = x - x.mean()
    dy = y - y.mean()
    denom = np.sqrt(np.dot(dx, dx) * np.dot(dy, dy))
    if denom == 0:
        return None
    return float(np.clip(np.dot(dx, dy) / denom, -1.0, 1.0))


def _vad_array(values):
    return np.array([v.as_array() if isinstance(v, VADLabel) else np.asarray(v, dtype=np.float64)
                     for v in values], dtype=np.float64).reshape(-1, 3)


def vad_metrics(preds, labels):
    """
    Returns ``(mae, r)``: the mean over samples of the per-sample mean absolute error, and the Pearson
    correlation over all pooled (sample, dimension) pairs (``None`` when undefined).

    :param preds: VADLabels or length-3 arrays
    :param labels: VADLabels or length-3 arrays
    """
    preds, labels = _vad_array(preds), _vad_array(labels)
    if preds.shape != labels.shape:
        raise ShapeError('{0} predictions for {1} labels'.format(len(preds), len(labels)))
    if not len(labels):
        raise ContractError('vad_metrics needs at least one sample')
    mae = float(np.abs(preds - labels).mean(axis=1).mean())
    return mae, pearson(preds, labels)


def _behavior_name(value):
    if isinstance(value, BehaviorLabel):
        return value.behavior
    if isinstance(value, (int, np.integer)):
        return BEHAVIOR_CLASSES[int(value)]
    return BehaviorLabel(value).behavior


def macro_f1(preds, labels):
    """
    Unweighted mean of the per-class F1 over laugh, sigh and cry. A class absent from both predictions and
    labels scores 0.
    """
    preds = [_behavior_name(p) for p in preds]
    labels = [_behavior_name(l) for l in labels]
    if len(preds) != len(labels):
        raise ShapeError('{0} predictions for {1} labels'.format(len(preds), len(labels)))
    if not labels:
        raise ContractError('macro_f1 needs at least one sample')
    return float(f1_score(labels, preds, labels=list(BEHAVIOR_CLASSES), average='macro', zero_division=0))
