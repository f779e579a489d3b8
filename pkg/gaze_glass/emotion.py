"""
Fine-tuning: the decoder is replaced by an emotion head reading chunked encoder features (embeddings and their
first and second temporal derivatives). Covers VAD regression and laugh/sigh/cry classification.
"""
import copy
from dataclasses import dataclass, replace
import logging

import numpy as np
from sklearn.model_selection import train_test_split
import torch
from torch import nn
import torch.nn.functional as F

from .exceptions import ConfigError, ShapeError
from .gaze_data import upsample_tail
from .glass_model import Checkpoint, GlassModel, load_checkpoint
from .metrics import macro_f1, vad_metrics
from .neural_core import LayerNorm, Linear, TransformerBlock
from .pretrain import AdamW, OptimConfig, minibatches
from .reports import EvaluationRecord


LOG = logging.getLogger(__name__)

CHUNK_SECONDS = (0.5, 1.0, 2.0, 4.0)
HEAD_KINDS = ('mlp', 'tcn', 'gru', 'transformer')
TASKS = ('vad', 'behavior')
OUTPUTS = 3


@dataclass(frozen=True)
class ChunkConfig:
    """
    Chunks span ``round(chunk_seconds * fps / patch_size)`` encoder rows. The default keeps one row per chunk at
    the standard 15 frame patch.
    """
    chunk_seconds: float = 0.5
    fps: float = 30.0
    patch_size: int = 15

    def __post_init__(self):
        if self.chunk_seconds not in CHUNK_SECONDS:
            raise ConfigError('chunk_seconds must be one of {0}, got {1}'.format(CHUNK_SECONDS, self.chunk_seconds))
        if self.chunk_seconds * self.patch_rate < 1:
            raise ConfigError('a {0}s chunk holds less than one patch at {1} patches per second'.format(
                self.chunk_seconds, self.patch_rate))

    @property
    def patch_rate(self):
        return self.fps / self.patch_size

    @property
    def rows_per_chunk(self):
        return max(1, int(round(self.chunk_seconds * self.patch_rate)))


@dataclass(frozen=True)
class HeadSpec:
    kind: str = 'gru'
    hidden: int = 64
    tcn_layers: int = 3
    tcn_kernel: int = 3
    gru_layers: int = 1
    transformer_blocks: int = 2
    transformer_heads: int = 4
    dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError('unknown head kind {0!r}, expected one of {1}'.format(self.kind, HEAD_KINDS))
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError('dropout must lie in [0, 1), got {0}'.format(self.dropout))


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 1e-4
    freeze_encoder: bool = True
    test_fraction: float = 0.2
    upsample_sd: float = 2.0
    upsample_ratio: float = 1.0 / 3.0

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError('test_fraction must lie in (0, 1), got {0}'.format(self.test_fraction))
        for name in ('epochs', 'batch_size'):
            if getattr(self, name) <= 0:
                raise ConfigError('{0} must be positive, got {1}'.format(name, getattr(self, name)))

    @property
    def optim(self):
        return OptimConfig(base_lr=self.lr, warmup_steps=0, weight_decay=self.weight_decay, total_steps=1)


def encoder_features(enc):
    """
    Concatenates (..., n, d) encoder states with central-difference first and second derivative estimates along
    the patch axis. First derivatives use one-sided differences at the edges; second derivatives replicate
    their neighbors there.

    :raises: :class:`ShapeError <gaze_glass.exceptions.ShapeError>` for fewer than 3 rows
    """
    if enc.dim() < 2 or enc.shape[-2] < 3:
        raise ShapeError('derivative features need at least 3 encoder rows, got {0}'.format(tuple(enc.shape)))
    d1 = torch.cat([
        enc[..., 1:2, :] - enc[..., 0:1, :],
        (enc[..., 2:, :] - enc[..., :-2, :]) / 2.0,
        enc[..., -1:, :] - enc[..., -2:-1, :],
    ], dim=-2)
    interior = enc[..., 2:, :] - 2.0 * enc[..., 1:-1, :] + enc[..., :-2, :]
    d2 = torch.cat([interior[..., :1, :], interior, interior[..., -1:, :]], dim=-2)
    return torch.cat([enc, d1, d2], dim=-1)


def chunk(features, cfg):
    """
    Mean-pools consecutive groups of ``cfg.rows_per_chunk`` rows; a shorter trailing group is kept.
    """
    if features.shape[-2] == 0:
        raise ShapeError('cannot chunk an empty feature sequence')
    size = cfg.rows_per_chunk
    groups = [features[..., i:i + size, :].mean(dim=-2) for i in range(0, features.shape[-2], size)]
    return torch.stack(groups, dim=-2)


class MLPHead(nn.Module):
    """
    Averages chunks over time, then applies a two-layer MLP. The average is taken over sorted values, so the
    output does not depend on chunk order.
    """
    def __init__(self, input_dim, spec):
        super(MLPHead, self).__init__()
        self.net = nn.Sequential(
            nn.Linear(input_dim, spec.hidden), nn.ReLU(), nn.Dropout(spec.dropout), nn.Linear(spec.hidden, OUTPUTS))

    def forward(self, chunks):
        pooled = torch.sort(chunks, dim=-2).values.mean(dim=-2)
        return self.net(pooled)


class TCNHead(nn.Module):
    """
    Temporal convolutions (conv, ReLU, BatchNorm, Dropout per layer) over the chunk sequence, global mean pooling
    and an MLP.
    """
    def __init__(self, input_dim, spec):
        super(TCNHead, self).__init__()
        layers = []
        channels = input_dim
        for _ in range(spec.tcn_layers):
            layers.extend([
                nn.Conv1d(channels, spec.hidden, spec.tcn_kernel, padding=spec.tcn_kernel // 2),
                nn.ReLU(),
                nn.BatchNorm1d(spec.hidden),
                nn.Dropout(spec.dropout),
            ])
            channels = spec.hidden
        self.tcn = nn.Sequential(*layers)
        self.mlp = nn.Sequential(nn.Linear(spec.hidden, spec.hidden), nn.ReLU(), nn.Linear(spec.hidden, OUTPUTS))

    def forward(self, chunks):
        hidden = self.tcn(chunks.transpose(-1, -2))
        return self.mlp(hidden.mean(dim=-1))


class GRUHead(nn.Module):
    def __init__(self, input_dim, spec):
        super(GRUHead, self).__init__()
        self.gru = nn.GRU(input_dim, spec.hidden, num_layers=spec.gru_layers, batch_first=True,
                          dropout=spec.dropout if spec.gru_layers > 1 else 0.0)
        self.out = nn.Linear(spec.hidden, OUTPUTS)

    def forward(self, chunks):
        _, hidden = self.gru(chunks)
        return self.out(hidden[-1])


class TransformerHead(nn.Module):
    def __init__(self, input_dim, spec):
        super(TransformerHead, self).__init__()
        self.embed = Linear(input_dim, spec.hidden)
        self.blocks = nn.ModuleList([
            TransformerBlock(spec.hidden, spec.transformer_heads) for _ in range(spec.transformer_blocks)])
        self.norm = LayerNorm(spec.hidden)
        self.dropout = nn.Dropout(spec.dropout)
        self.out = Linear(spec.hidden, OUTPUTS)

    def forward(self, chunks):
        hidden = self.embed(chunks)
        positions = torch.arange(hidden.shape[-2], device=hidden.device)
        for block in self.blocks:
            hidden = block(hidden, positions)
        return self.out(self.dropout(self.norm(hidden).mean(dim=-2)))


HEADS = {'mlp': MLPHead, 'tcn': TCNHead, 'gru': GRUHead, 'transformer': TransformerHead}


def build_head(spec, input_dim):
    if spec.kind not in HEADS:
        raise ConfigError('unknown head kind {0!r}, expected one of {1}'.format(spec.kind, HEAD_KINDS))
    return HEADS[spec.kind](input_dim, spec)


def head_forward(chunks, head, task):
    """
    Runs ``head`` on (..., chunks, 3d) features, or any predictor on its own inputs. VAD outputs pass through a
    logistic map onto [0, 1]; behavior outputs are 3 logits.
    """
    if task not in TASKS:
        raise ConfigError('unknown task {0!r}'.format(task))
    out = head(chunks)
    return torch.sigmoid(out) if task == 'vad' else out


class EmotionModel(nn.Module):
    """
    A pretrained encoder with its decoder replaced by an emotion head. Windows are raw gaze; the encoder's
    stored statistics normalize them. Chunk features are standardized per column with statistics fitted on the
    training windows.
    """
    def __init__(self, glass, head, chunk_cfg, task, freeze_encoder=True):
        super(EmotionModel, self).__init__()
        self.glass = glass
        self.head = head
        self.chunk_cfg = chunk_cfg
        self.task = task
        self.freeze_encoder = freeze_encoder
        for name in ('decoder_embed', 'decoder_blocks', 'decoder_norm', 'head'):
            setattr(self.glass, name, None)
        self.glass.start_token = None
        if freeze_encoder:
            self.glass.requires_grad_(False)
        width = 3 * glass.config.model_dim
        self.register_buffer('feature_mean', torch.zeros(width))
        self.register_buffer('feature_std', torch.ones(width))

    def train(self, mode=True):
        super(EmotionModel, self).train(mode)
        if self.freeze_encoder:
            self.glass.eval()
        return self

    def raw_features(self, window):
        return chunk(encoder_features(self.glass.encode(self.glass.normalize_input(window))), self.chunk_cfg)

    def fit_feature_scaler(self, windows, batch_size=256):
        """
        Sets the feature statistics from the chunks of ``windows``, computed with the encoder in evaluation mode.
        """
        was_training = self.training
        self.eval()
        with torch.no_grad():
            rows = torch.cat([
                self.raw_features(windows[start:start + batch_size]).reshape(-1, self.feature_mean.shape[0])
                for start in range(0, len(windows), batch_size)
            ], dim=0)
            std = rows.std(dim=0, unbiased=False)
            self.feature_mean.copy_(rows.mean(dim=0))
            self.feature_std.copy_(torch.where(std > 0, std, torch.ones_like(std)))
        self.train(was_training)

    def features(self, window):
        return (self.raw_features(window) - self.feature_mean) / self.feature_std

    def forward(self, window):
        return self.head(self.features(window))


def label_targets(labels, task):
    if task == 'vad':
        return torch.as_tensor(np.array([label.as_array() for label in labels]), dtype=torch.float32)
    return torch.as_tensor([label.index for label in labels], dtype=torch.long)


def _task_loss(prediction, target, task):
    """
    Mean absolute error on VAD values, cross-entropy on behavior logits; ``prediction`` comes from
    :func:`head_forward`.
    """
    if task == 'vad':
        return (prediction - target).abs().mean()
    return F.cross_entropy(prediction, target)


def train_predictor(model, inputs, targets, task, cfg, seed=0):
    """
    Fits ``model`` to ``targets`` through :func:`head_forward` with AdamW at a constant learning rate. Only
    parameters that require gradients are updated.
    """
    optimizer = AdamW(model.named_parameters(), cfg.optim)
    rng = np.random.default_rng(seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model.train()
        for epoch in range(cfg.epochs):
            losses = []
            for batch in minibatches(len(targets), cfg.batch_size, rng):
                for p in optimizer.params.values():
                    p.grad = None
                loss = _task_loss(head_forward(inputs[batch], model, task), targets[batch], task)
                loss.backward()
                optimizer.step(cfg.lr)
                losses.append(loss.item())
            LOG.debug('epoch=%d task=%s loss=%.5f', epoch + 1, task, float(np.mean(losses)))
    model.eval()
    return model


def predict(model, inputs, task, batch_size=256):
    """
    VAD values in [0, 1] as an (N, 3) array, or behavior class indices as an (N,) array.
    """
    model.eval()
    outputs = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            outputs.append(head_forward(inputs[start:start + batch_size], model, task))
    out = torch.cat(outputs, dim=0)
    return out.numpy().astype(np.float64) if task == 'vad' else out.argmax(dim=-1).numpy()


def evaluate(preds, labels, task, seed, head, chunk_seconds, input_seconds):
    if task == 'vad':
        mae, r = vad_metrics(preds, labels)
        return EvaluationRecord(seed, task, head, chunk_seconds, input_seconds, mae=mae, pearson_r=r)
    return EvaluationRecord(seed, task, head, chunk_seconds, input_seconds,
                            macro_f1=macro_f1(list(preds), labels))


def split_dataset(dataset, task, split_seed, cfg=FinetuneConfig()):
    """
    An 80-20 style train-test split seeded by ``split_seed``; behavior splits are stratified when every class
    has two samples. The VAD training part is tail-upsampled; the test part never is.

    :raises: :class:`ConfigError <gaze_glass.exceptions.ConfigError>` for an empty dataset, a dataset too small to
        split, or a single-class behavior training set
    """
    if task not in TASKS:
        raise ConfigError('unknown task {0!r}'.format(task))
    dataset = [item for item in dataset if item.task == task]
    if not dataset:
        raise ConfigError('empty {0} dataset'.format(task))
    stratify = None
    if task == 'behavior':
        classes = [item.label.index for item in dataset]
        if min(np.bincount(classes)[sorted(set(classes))]) >= 2:
            stratify = classes
    try:
        train_idx, test_idx = train_test_split(
            np.arange(len(dataset)), test_size=cfg.test_fraction, random_state=split_seed, stratify=stratify)
    except ValueError as e:
        raise ConfigError('cannot split {0} samples: {1}'.format(len(dataset), e))
    train = [dataset[i] for i in train_idx]
    test = [dataset[i] for i in test_idx]
    if task == 'behavior':
        if len({item.label.behavior for item in train}) < 2:
            raise ConfigError('behavior training set holds a single class')
    elif len(train) >= 2:
        train = upsample_tail(train, cfg.upsample_sd, cfg.upsample_ratio, seed=split_seed).samples
    return train, test


def _windows(items):
    return torch.as_tensor(np.array([item.input for item in items]), dtype=torch.float32)


def _as_glass(checkpoint):
    if isinstance(checkpoint, GlassModel):
        return copy.deepcopy(checkpoint)
    if isinstance(checkpoint, Checkpoint):
        return checkpoint.to_model()
    return load_checkpoint(checkpoint)


def run_finetune(checkpoint, dataset, head_spec, chunk_cfg, task, split_seed, cfg=FinetuneConfig()):
    """
    Fine-tunes an emotion head on one seeded split and scores it on the held-out part.

    :param checkpoint: A :class:`GlassModel`, a :class:`Checkpoint` or a checkpoint path
    :param dataset: :class:`LabeledWindow <gaze_glass.models.LabeledWindow>` items of ``task``
    :rtype: tuple
    :returns: ``(EmotionModel, EvaluationRecord)``
    """
    train, test = split_dataset(dataset, task, split_seed, cfg)
    glass = _as_glass(checkpoint)
    if chunk_cfg.patch_size != glass.config.patch_size:
        chunk_cfg = replace(chunk_cfg, patch_size=glass.config.patch_size)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(split_seed)
        head = build_head(head_spec, 3 * glass.config.model_dim)
    model = EmotionModel(glass, head, chunk_cfg, task, freeze_encoder=cfg.freeze_encoder)
    train_x = _windows(train)
    train_y = label_targets([item.label for item in train], task)
    test_x = _windows(test)
    model.fit_feature_scaler(train_x)

    if cfg.freeze_encoder:
        model.eval()
        with torch.no_grad():
            train_features = model.features(train_x)
            test_features = model.features(test_x)
        train_predictor(model.head, train_features, train_y, task, cfg, split_seed)
        preds = predict(model.head, test_features, task)
    else:
        train_predictor(model, train_x, train_y, task, cfg, split_seed)
        preds = predict(model, test_x, task)

    input_seconds = len(test[0].input) / chunk_cfg.fps
    record = evaluate(preds, [item.label for item in test], task, split_seed, head_spec.kind,
                      chunk_cfg.chunk_seconds, input_seconds)
    LOG.info('Fine-tuned %s head on %s (seed=%d, train=%d, test=%d): %s', head_spec.kind, task, split_seed,
             len(train), len(test), record.metrics())
    return model, record


def run_bootstrap(checkpoint, dataset, head_spec, chunk_cfg, task, seeds=(0, 1, 2, 3, 4), cfg=FinetuneConfig()):
    """
    Repeats :func:`run_finetune` once per split seed and returns the evaluation records.
    """
    return [run_finetune(checkpoint, dataset, head_spec, chunk_cfg, task, seed, cfg)[1] for seed in seeds]


def summarize_runs(records):
    """
    Mean and population standard deviation of each metric over the runs that define it.

    :rtype: dict
    :returns: metric name -> ``(mean, std)``; metrics no run defines are omitted
    """
    summary = {}
    for metric in ('mae', 'pearson_r', 'macro_f1'):
        values = [getattr(r, metric) for r in records if getattr(r, metric) is not None]
        if values:
            summary[metric] = (float(np.mean(values)), float(np.std(values)))
    return summary
