"""
Reference predictors for the emotion tasks: a small MLP over statistical window features (eyes only, or eyes
plus facial action units) and a 1-D temporal CNN over raw gaze.
"""
from dataclasses import dataclass
import logging

import numpy as np
import torch
from torch import nn

from .emotion import FinetuneConfig, OUTPUTS, evaluate, head_forward, label_targets, predict, split_dataset, \
    train_predictor
from .exceptions import ConfigError, ShapeError


LOG = logging.getLogger(__name__)

BASELINE_KINDS = ('stats_eyes', 'stats_face', 'cnn')


def stat_feature_count(k):
    return 4 * k + k * (k - 1) // 2


def stat_features(window, face_aux=None, include_face=False):
    """
    Per column: mean, std, mean absolute first difference and mean absolute second difference; then the
    Pearson correlation of every column pair (i < j). Pairs with a constant column correlate as 0.

    :param window: (T, k) gaze frames
    :param face_aux: (T, m) facial action-unit intensities, appended as extra columns when ``include_face``
    :rtype: numpy.ndarray
    """
    values = np.asarray(window, dtype=np.float64)
    if include_face:
        if face_aux is None:
            raise ConfigError('eyes+face features need facial action-unit columns')
        values = np.concatenate([values, np.asarray(face_aux, dtype=np.float64)], axis=1)
    if values.ndim != 2 or values.shape[0] < 3:
        raise ShapeError('statistical features need at least 3 frames, got {0}'.format(values.shape))

    velocity = np.abs(np.diff(values, n=1, axis=0)).mean(axis=0)
    acceleration = np.abs(np.diff(values, n=2, axis=0)).mean(axis=0)
    constant = np.ptp(values, axis=0) == 0
    centered = values - values.mean(axis=0)
    std = np.where(constant, 0.0, np.sqrt((centered ** 2).mean(axis=0)))
    norms = np.sqrt((centered ** 2).sum(axis=0))
    norms[constant] = 1.0
    corr = (centered.T @ centered) / np.outer(norms, norms)
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    upper = np.triu_indices(values.shape[1], k=1)
    return np.concatenate([values.mean(axis=0), std, velocity, acceleration, np.clip(corr[upper], -1.0, 1.0)])


class StatsPredictor(nn.Module):
    """
    Standardizes feature vectors with training-set statistics and applies a two-layer MLP.
    """
    def __init__(self, n_features, hidden=64):
        super(StatsPredictor, self).__init__()
        self.register_buffer('feature_mean', torch.zeros(n_features))
        self.register_buffer('feature_std', torch.ones(n_features))
        self.net = nn.Sequential(nn.Linear(n_features, hidden), nn.ReLU(), nn.Linear(hidden, OUTPUTS))

    def fit_scaler(self, features):
        std = features.std(dim=0, unbiased=False)
        self.feature_mean.copy_(features.mean(dim=0))
        self.feature_std.copy_(torch.where(std > 0, std, torch.ones_like(std)))

    def forward(self, features):
        return self.net((features - self.feature_mean) / self.feature_std)


class TemporalCNN(nn.Module):
    """
    Unpadded 1-D convolutions over gaze channels, each followed by ReLU, BatchNorm and Dropout, then global mean
    pooling over time and an MLP.
    """
    def __init__(self, channels=6, hidden=32, layers=3, kernel=5, dropout=0.1):
        super(TemporalCNN, self).__init__()
        blocks = []
        width = channels
        for _ in range(layers):
            blocks.extend([nn.Conv1d(width, hidden, kernel), nn.ReLU(), nn.BatchNorm1d(hidden), nn.Dropout(dropout)])
            width = hidden
        self.convs = nn.Sequential(*blocks)
        self.mlp = nn.Sequential(nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, OUTPUTS))
        self.receptive_field = 1 + layers * (kernel - 1)

    def forward(self, window):
        if window.shape[-2] < self.receptive_field:
            raise ShapeError('window of {0} frames is shorter than the receptive field of {1}'.format(
                window.shape[-2], self.receptive_field))
        hidden = self.convs(window.transpose(-1, -2))
        return self.mlp(hidden.mean(dim=-1))


def temporal_cnn_forward(window, model, task):
    """
    Evaluation-mode prediction for a (T, 6) or (B, T, 6) window: VAD values in [0, 1] or 3 behavior logits.
    """
    model.eval()
    window = torch.as_tensor(window, dtype=torch.float32)
    single = window.dim() == 2
    with torch.no_grad():
        out = head_forward(window.unsqueeze(0) if single else window, model, task)
    return out[0] if single else out


@dataclass(frozen=True)
class BaselineConfig:
    epochs: int = 60
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    hidden: int = 64
    cnn_hidden: int = 32
    cnn_layers: int = 3
    cnn_kernel: int = 5
    dropout: float = 0.1
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.cnn_kernel < 1 or self.cnn_layers < 1:
            raise ConfigError('the temporal CNN needs at least one layer with a positive kernel')

    @property
    def finetune(self):
        return FinetuneConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                              weight_decay=self.weight_decay, test_fraction=self.test_fraction)


def _stats_matrix(items, include_face):
    return torch.as_tensor(
        np.array([stat_features(item.input, item.face_aux, include_face) for item in items]), dtype=torch.float32)


def fit_baseline(dataset, kind, task, split_seed, cfg=BaselineConfig(), fps=30.0):
    """
    Trains and scores one baseline on the same seeded split :func:`run_finetune
    <gaze_glass.emotion.run_finetune>` would use.

    :rtype: tuple
    :returns: ``(model, EvaluationRecord)``
    """
    if kind not in BASELINE_KINDS:
        raise ConfigError('unknown baseline {0!r}, expected one of {1}'.format(kind, BASELINE_KINDS))
    finetune_cfg = cfg.finetune
    train, test = split_dataset(dataset, task, split_seed, finetune_cfg)
    train_y = label_targets([item.label for item in train], task)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(split_seed)
        if kind == 'cnn':
            model = TemporalCNN(train[0].input.shape[1], cfg.cnn_hidden, cfg.cnn_layers, cfg.cnn_kernel, cfg.dropout)
            train_x = torch.as_tensor(np.array([item.input for item in train]), dtype=torch.float32)
            test_x = torch.as_tensor(np.array([item.input for item in test]), dtype=torch.float32)
        else:
            include_face = kind == 'stats_face'
            train_x = _stats_matrix(train, include_face)
            test_x = _stats_matrix(test, include_face)
            model = StatsPredictor(train_x.shape[1], cfg.hidden)
            model.fit_scaler(train_x)
    train_predictor(model, train_x, train_y, task, finetune_cfg, split_seed)
    preds = predict(model, test_x, task)

    input_seconds = len(test[0].input) / fps
    record = evaluate(preds, [item.label for item in test], task, split_seed, kind, None, input_seconds)
    LOG.info('Fitted %s baseline on %s (seed=%d): %s', kind, task, split_seed, record.metrics())
    return model, record
