"""
Self-supervised pretraining of the gaze forecaster: joint coordinate and velocity Huber loss, scheduled
sampling, AdamW with a linear-warmup cosine learning rate and autoregressive validation.
"""
from collections import OrderedDict
import copy
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import pandas as pd
import torch

from .exceptions import ConfigError, ContractError, NumericError, ShapeError
from .gaze_data import compute_norm_stats, extract_windows, normalize, parse_openface_csv, split_manifest
from .glass_model import Checkpoint, DEFAULT_STRIDE, build_model, predict_previous
from .metrics import pearson
from .models import ManifestEntry
from .neural_core import backward, reset_grads


LOG = logging.getLogger(__name__)

LOG_COLUMNS = ('step', 'lr', 'tf_prob', 'train_loss', 'val_corr')


@dataclass(frozen=True)
class LossConfig:
    lambda_velocity: float = 0.2
    huber_delta: float = 1.0

    def __post_init__(self):
        if self.lambda_velocity < 0:
            raise ConfigError('lambda_velocity must not be negative, got {0}'.format(self.lambda_velocity))
        if self.huber_delta <= 0:
            raise ConfigError('huber_delta must be positive, got {0}'.format(self.huber_delta))


@dataclass(frozen=True)
class OptimConfig:
    base_lr: float = 3e-4
    warmup_steps: int = 3000
    weight_decay: float = 1e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    total_steps: int = 6000

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ConfigError('warmup_steps {0} must lie in [0, total_steps={1}]'.format(
                self.warmup_steps, self.total_steps))
        if self.total_steps <= 0:
            raise ConfigError('total_steps must be positive, got {0}'.format(self.total_steps))
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError('betas must be two values in [0, 1), got {0}'.format(self.betas))


@dataclass(frozen=True)
class SamplingSchedule:
    end_fraction: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.end_fraction <= 1.0:
            raise ConfigError('end_fraction must lie in (0, 1], got {0}'.format(self.end_fraction))


@dataclass(frozen=True)
class PretrainConfig:
    """
    Loop settings. Validation runs every ``val_every_epochs`` epochs and after the final step.
    """
    batch_size: int = 32
    clip_norm: float = 1.0
    stride: int = DEFAULT_STRIDE
    fps: float = 30.0
    val_every_epochs: int = 1
    eval_batch_size: int = 64

    def __post_init__(self):
        for name in ('batch_size', 'stride', 'val_every_epochs', 'eval_batch_size'):
            if getattr(self, name) <= 0:
                raise ConfigError('{0} must be positive, got {1}'.format(name, getattr(self, name)))
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError('clip_norm must be positive, got {0}'.format(self.clip_norm))


def huber(residual, delta=1.0):
    """
    ``0.5 r**2`` when ``|r| <= delta``, else ``delta * (|r| - 0.5 delta)``. Works elementwise on tensors.
    """
    if delta <= 0:
        raise ConfigError('huber delta must be positive, got {0}'.format(delta))
    if isinstance(residual, torch.Tensor):
        size = residual.abs()
        return torch.where(size <= delta, 0.5 * residual ** 2, delta * (size - 0.5 * delta))
    size = abs(residual)
    return 0.5 * residual ** 2 if size <= delta else delta * (size - 0.5 * delta)


def _residuals(pred, target):
    if pred.shape != target.shape:
        raise ShapeError('prediction {0} does not match target {1}'.format(tuple(pred.shape), tuple(target.shape)))
    coordinate = pred - target
    velocity = torch.diff(pred, dim=-2) - torch.diff(target, dim=-2)
    return coordinate, velocity


def huber_branches(pred, target, cfg):
    """
    The quadratic/linear branch taken by every Huber term of :func:`joint_loss`, as one boolean tensor.
    """
    coordinate, velocity = _residuals(pred, target)
    return torch.cat([(coordinate.abs() <= cfg.huber_delta).reshape(-1),
                      (velocity.abs() <= cfg.huber_delta).reshape(-1)])


def joint_loss(pred, target, cfg):
    """
    Mean coordinate Huber loss plus ``lambda_velocity`` times the mean Huber loss of the frame-to-frame
    velocity error. Velocities are taken along the time axis (T_o - 1 rows).
    """
    coordinate, velocity = _residuals(pred, target)
    loss = huber(coordinate, cfg.huber_delta).mean()
    if velocity.shape[-2] and cfg.lambda_velocity:
        loss = loss + cfg.lambda_velocity * huber(velocity, cfg.huber_delta).mean()
    return loss


def tf_probability(progress, sched):
    if not 0.0 <= progress <= 1.0:
        raise ContractError('progress must lie in [0, 1], got {0}'.format(progress))
    return max(0.0, 1.0 - progress / sched.end_fraction)


def lr_at(step, cfg):
    """
    Linear warmup from 0 to ``base_lr`` over ``warmup_steps``, then cosine decay to 0 at ``total_steps``.
    """
    step = min(max(step, 0), cfg.total_steps)
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    if cfg.total_steps == cfg.warmup_steps:
        return cfg.base_lr
    progress = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def adamw_step(params, grads, state, lr, cfg):
    """
    Applies one AdamW update in place.

    :type params: dict
    :param params: Name -> parameter tensor
    :type grads: dict
    :param grads: Name -> gradient; parameters without a gradient are left alone
    :type state: dict
    :param state: Name -> ``{'step', 'exp_avg', 'exp_avg_sq'}``, created on first use

    :raises: :class:`NumericError <gaze_glass.exceptions.NumericError>` naming the first parameter whose
        gradient is not finite; no parameter is updated in that case
    """
    for name, grad in grads.items():
        if grad is not None and not torch.isfinite(grad).all():
            raise NumericError('gradient of {0} is not finite'.format(name))
    beta1, beta2 = cfg.betas
    with torch.no_grad():
        for name, p in params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            slot = state.setdefault(name, {
                'step': 0, 'exp_avg': torch.zeros_like(p), 'exp_avg_sq': torch.zeros_like(p)})
            slot['step'] += 1
            p.mul_(1.0 - lr * cfg.weight_decay)
            slot['exp_avg'].mul_(beta1).add_(grad, alpha=1.0 - beta1)
            slot['exp_avg_sq'].mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)
            bias_correction1 = 1.0 - beta1 ** slot['step']
            bias_correction2 = 1.0 - beta2 ** slot['step']
            denom = (slot['exp_avg_sq'].sqrt() / math.sqrt(bias_correction2)).add_(cfg.eps)
            p.addcdiv_(slot['exp_avg'], denom, value=-lr / bias_correction1)


class AdamW(object):
    """
    Holds the moment state of :func:`adamw_step` for a fixed set of named parameters.
    """
    def __init__(self, named_params, cfg):
        self.params = OrderedDict((name, p) for name, p in named_params if p.requires_grad)
        self.cfg = cfg
        self.state = {}

    def step(self, lr):
        grads = OrderedDict((name, p.grad) for name, p in self.params.items() if p.grad is not None)
        adamw_step(self.params, grads, self.state, lr, self.cfg)


def minibatches(n, batch_size, rng):
    """
    Shuffled index batches covering ``range(n)``. A trailing batch of one sample joins the previous batch.
    """
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def gaze_correlation(preds, targets):
    """
    Pearson correlation over all flattened (window, frame, dimension) pairs; ``None`` when undefined.
    """
    preds = np.asarray([np.asarray(p, dtype=np.float64) for p in preds])
    targets = np.asarray([np.asarray(t, dtype=np.float64) for t in targets])
    if not preds.size:
        raise ContractError('gaze_correlation needs at least one window')
    if preds.shape != targets.shape:
        raise ShapeError('predictions {0} do not match targets {1}'.format(preds.shape, targets.shape))
    return pearson(preds, targets)


def predict_previous_correlation(inputs, targets):
    inputs = np.asarray(inputs)
    return gaze_correlation(predict_previous(inputs, np.asarray(targets).shape[-2]), targets)


def forecast(model, inputs, batch_size=64):
    """
    Autoregressive forecasts (no teacher forcing) for an (N, T_i, D) array of normalized windows.
    """
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    outputs = []
    with torch.no_grad():
        for start in range(0, len(inputs), batch_size):
            batch = torch.as_tensor(np.asarray(inputs[start:start + batch_size]), dtype=dtype)
            outputs.append(model(batch).cpu().numpy())
    model.train(was_training)
    if not outputs:
        return np.zeros((0, model.config.output_frames, model.config.input_dims))
    return np.concatenate(outputs, axis=0).astype(np.float64)


@dataclass(frozen=True)
class ForecastEvaluation:
    glass_corr: float
    baseline_corr: float
    windows: int


def evaluate_forecast(model, inputs, targets, batch_size=64):
    """
    Scores the model's autoregressive forecasts and the predict-previous baseline on the same windows.
    """
    preds = forecast(model, inputs, batch_size)
    return ForecastEvaluation(
        glass_corr=gaze_correlation(preds, targets),
        baseline_corr=predict_previous_correlation(inputs, targets),
        windows=len(preds),
    )


@dataclass(eq=False)
class PretrainData:
    """
    Normalized training and validation windows as (N, T, D) arrays, plus the training-split statistics.
    """
    train_inputs: np.ndarray
    train_targets: np.ndarray
    val_inputs: np.ndarray
    val_targets: np.ndarray
    norm_stats: object = None


def _stack(windows, spec):
    inputs = np.array([w.input for w in windows]).reshape(-1, spec.input_frames, len(windows[0].input[0]))
    targets = np.array([w.target for w in windows]).reshape(-1, spec.output_frames, inputs.shape[-1])
    return inputs, targets


def prepare_pretraining_data(entries, window_spec, fps=30.0, column_map=None):
    """
    Parses the manifest's subjects, normalizes with training-split statistics and cuts windows.

    :raises: :class:`ConfigError <gaze_glass.exceptions.ConfigError>` when a split is empty, subjects overlap or
        a split yields no window
    """
    train_entries, val_entries = split_manifest(entries)

    def parse(group):
        return [parse_openface_csv(e.csv_path, column_map=column_map, fps=fps, subject_id=e.subject_id)
                for e in group]

    train_seqs, val_seqs = parse(train_entries), parse(val_entries)
    stats = compute_norm_stats(train_seqs)
    splits = {}
    for split, seqs in (('train', train_seqs), ('val', val_seqs)):
        windows = [w for seq in seqs for w in extract_windows(normalize(seq, stats), window_spec)]
        if not windows:
            raise ConfigError('the {0} split yields no {1}-frame window'.format(split, window_spec.span))
        splits[split] = _stack(windows, window_spec)
    LOG.info('Prepared %d training and %d validation windows', len(splits['train'][0]), len(splits['val'][0]))
    return PretrainData(splits['train'][0], splits['train'][1], splits['val'][0], splits['val'][1], stats)


@dataclass(eq=False)
class PretrainResult:
    """
    ``model`` holds the best-validation parameters and ``checkpoint`` their serialized form.
    """
    model: object
    checkpoint: Checkpoint
    log: pd.DataFrame
    step_losses: list = field(default_factory=list)
    best_step: int = 0
    best_val_corr: float = None
    baseline_corr: float = None


def _better(candidate, best):
    if best is None:
        return candidate is not None
    return candidate is not None and candidate > best


def run_pretraining(data, glass_cfg, loss_cfg=LossConfig(), optim_cfg=OptimConfig(), sched=SamplingSchedule(),
                    seed=0, pretrain_cfg=PretrainConfig(), metadata=None):
    """
    Trains a forecaster from scratch and returns the checkpoint with the best validation gaze correlation.

    :param data: A :class:`PretrainData` or a list of :class:`ManifestEntry <gaze_glass.models.ManifestEntry>`
    :type seed: int
    :param seed: Seeds initialization, batch order and the teacher-forcing draws
    :rtype: :class:`PretrainResult`
    """
    if isinstance(data, (list, tuple)) and all(isinstance(e, ManifestEntry) for e in data):
        data = prepare_pretraining_data(data, glass_cfg.window_spec(pretrain_cfg.stride), pretrain_cfg.fps)
    if not len(data.train_inputs) or not len(data.val_inputs):
        raise ConfigError('pretraining needs at least one training and one validation window')

    model = build_model(glass_cfg, seed)
    if data.norm_stats is not None:
        model.set_norm_stats(data.norm_stats)
    model.train()
    optimizer = AdamW(model.named_parameters(), optim_cfg)
    train_x = torch.as_tensor(data.train_inputs, dtype=torch.float32)
    train_y = torch.as_tensor(data.train_targets, dtype=torch.float32)
    rng = np.random.default_rng(seed)
    baseline_corr = predict_previous_correlation(data.val_inputs, data.val_targets)
    LOG.info('Predict-previous validation correlation: %s', baseline_corr)

    rows, step_losses = [], []
    best_state, best_step, best_corr = None, 0, None
    step, epoch = 0, 0
    while step < optim_cfg.total_steps:
        epoch += 1
        epoch_losses = []
        for batch in minibatches(len(train_x), pretrain_cfg.batch_size, rng):
            if step >= optim_cfg.total_steps:
                break
            tf_prob = tf_probability(step / optim_cfg.total_steps, sched)
            lr = lr_at(step, optim_cfg)
            tf_seed = int(np.random.SeedSequence([seed, step]).generate_state(1)[0])
            x, y = train_x[batch], train_y[batch]
            reset_grads(model)
            loss = joint_loss(model(x, y, tf_prob=tf_prob, rng_seed=tf_seed), y, loss_cfg)
            if not torch.isfinite(loss):
                raise NumericError('training loss diverged at step {0}'.format(step))
            backward(loss, model)
            if pretrain_cfg.clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), pretrain_cfg.clip_norm)
            optimizer.step(lr)
            step += 1
            step_losses.append(loss.item())
            epoch_losses.append(loss.item())

        if epoch % pretrain_cfg.val_every_epochs and step < optim_cfg.total_steps:
            continue
        val_corr = gaze_correlation(forecast(model, data.val_inputs, pretrain_cfg.eval_batch_size),
                                    data.val_targets)
        rows.append(OrderedDict([
            ('step', step), ('lr', lr), ('tf_prob', tf_prob),
            ('train_loss', float(np.mean(epoch_losses))), ('val_corr', val_corr),
        ]))
        LOG.info('epoch=%d step=%d lr=%.3g tf_prob=%.3f train_loss=%.5f val_corr=%s',
                 epoch, step, lr, tf_prob, rows[-1]['train_loss'], val_corr)
        if best_state is None or _better(val_corr, best_corr):
            best_state, best_step, best_corr = copy.deepcopy(model.state_dict()), step, val_corr

    model.load_state_dict(best_state)
    model.eval()
    meta = dict(metadata or {}, best_step=best_step, seed=seed)
    return PretrainResult(
        model=model,
        checkpoint=Checkpoint.from_model(model, meta),
        log=pd.DataFrame(rows, columns=list(LOG_COLUMNS)),
        step_losses=step_losses,
        best_step=best_step,
        best_val_corr=best_corr,
        baseline_corr=baseline_corr,
    )
