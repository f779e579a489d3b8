"""
The numeric kernel shared by the forecaster, the emotion heads and the baselines: linear maps, layer norm,
multi-head attention with rotary position embeddings, pre-norm Transformer blocks, guarded reverse-mode
gradients and a central finite-difference gradient checker.
"""
from dataclasses import dataclass, field
import logging
import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .exceptions import AccumulationError, ConfigError, ContractError, NumericError, ShapeError


LOG = logging.getLogger(__name__)

ROPE_BASE = 10000.0
LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class AttentionConfig:
    model_dim: int
    heads: int
    causal: bool = False

    def __post_init__(self):
        if self.heads <= 0 or self.model_dim % self.heads:
            raise ConfigError('model_dim {0} is not divisible by {1} heads'.format(self.model_dim, self.heads))
        if self.head_dim % 2:
            raise ConfigError('per-head dim {0} must be even for rotary embeddings'.format(self.head_dim))

    @property
    def head_dim(self):
        return self.model_dim // self.heads


def linear(x, weight, bias=None):
    """
    Computes ``x @ weight + bias`` for ``x`` of shape (..., a), ``weight`` (a, b) and ``bias`` (b,).

    :raises: :class:`ShapeError <gaze_glass.exceptions.ShapeError>` naming both shapes on disagreement
    """
    if weight.dim() != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError('cannot multiply input {0} by weight {1}'.format(tuple(x.shape), tuple(weight.shape)))
    if bias is not None and tuple(bias.shape) != (weight.shape[1],):
        raise ShapeError('bias {0} does not match weight {1}'.format(tuple(bias.shape), tuple(weight.shape)))
    out = x @ weight
    return out if bias is None else out + bias


def rope_rotate(x, positions, base=ROPE_BASE):
    """
    Rotates each consecutive pair ``(x[2i], x[2i+1])`` of the last axis by ``m * base ** (-2i / p)`` where ``m``
    is the token position.

    :param x: Tensor of shape (..., n, heads, p)
    :param positions: n token positions
    """
    p = x.shape[-1]
    if p % 2:
        raise ConfigError('rotary embeddings need an even per-head dim, got {0}'.format(p))
    positions = torch.as_tensor(positions, dtype=x.dtype, device=x.device)
    if positions.shape != (x.shape[-3],):
        raise ShapeError('positions {0} do not match {1} tokens of {2}'.format(
            tuple(positions.shape), x.shape[-3], tuple(x.shape)))
    theta = base ** (-torch.arange(0, p, 2, dtype=x.dtype, device=x.device) / p)
    angles = positions[:, None] * theta[None, :]
    cos = torch.cos(angles)[:, None, :]
    sin = torch.sin(angles)[:, None, :]
    even, odd = x[..., 0::2], x[..., 1::2]
    return torch.stack([even * cos - odd * sin, even * sin + odd * cos], dim=-1).flatten(-2)


def causal_mask(n_q, n_k, device=None):
    """
    Boolean mask letting query ``i`` see keys up to ``i + n_k - n_q``. Queries are aligned to the last keys.
    """
    return torch.ones(n_q, n_k, dtype=torch.bool, device=device).tril(diagonal=n_k - n_q)


def _split_heads(x, heads):
    return x.reshape(*x.shape[:-1], heads, x.shape[-1] // heads)


def attention(q, k, v, cfg, mask=None, q_positions=None, k_positions=None, rope_base=ROPE_BASE,
              return_weights=False):
    """
    Scaled dot-product attention over already projected queries, keys and values of width ``cfg.model_dim``.
    Queries and keys are split per head and rotated when positions are given.

    :param q: Tensor of shape (..., n_q, d)
    :param k: Tensor of shape (..., n_k, d)
    :param v: Tensor of shape (..., n_k, d)
    :param mask: Optional boolean (n_q, n_k) tensor, True where attention is allowed
    :returns: The (..., n_q, d) output, and the (..., heads, n_q, n_k) weights when ``return_weights`` is set
    """
    for name, tensor in (('q', q), ('k', k), ('v', v)):
        if tensor.shape[-1] != cfg.model_dim:
            raise ShapeError('{0} has width {1}, expected {2}'.format(name, tensor.shape[-1], cfg.model_dim))
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError('keys {0} and values {1} disagree'.format(tuple(k.shape), tuple(v.shape)))
    n_q, n_k = q.shape[-2], k.shape[-2]

    qh = _split_heads(q, cfg.heads)
    kh = _split_heads(k, cfg.heads)
    vh = _split_heads(v, cfg.heads)
    if q_positions is not None:
        qh = rope_rotate(qh, q_positions, rope_base)
    if k_positions is not None:
        kh = rope_rotate(kh, k_positions, rope_base)

    scores = torch.einsum('...qhp,...khp->...hqk', qh, kh) / math.sqrt(cfg.head_dim)
    allowed = None
    if mask is not None:
        mask = torch.as_tensor(mask, dtype=torch.bool, device=q.device)
        if tuple(mask.shape) != (n_q, n_k):
            raise ShapeError('mask {0} does not match scores ({1}, {2})'.format(tuple(mask.shape), n_q, n_k))
        allowed = mask
    if cfg.causal:
        causal = causal_mask(n_q, n_k, device=q.device)
        allowed = causal if allowed is None else allowed & causal
    if allowed is not None:
        scores = scores.masked_fill(~allowed, float('-inf'))
    weights = torch.softmax(scores, dim=-1)

    out = torch.einsum('...hqk,...khp->...qhp', weights, vh).reshape(*q.shape[:-1], cfg.model_dim)
    return (out, weights) if return_weights else out


def layer_norm(x, gain, offset, eps=LAYER_NORM_EPS):
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gain + offset


class Linear(nn.Module):
    """
    A linear map holding its weight as (in, out), initialized uniformly in +/- 1/sqrt(in).
    """
    def __init__(self, in_features, out_features, bias=True):
        super(Linear, self).__init__()
        bound = 1.0 / math.sqrt(in_features)
        self.weight = nn.Parameter(torch.empty(in_features, out_features).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.empty(out_features).uniform_(-bound, bound)) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class LayerNorm(nn.Module):
    def __init__(self, dim, eps=LAYER_NORM_EPS):
        super(LayerNorm, self).__init__()
        self.gain = nn.Parameter(torch.ones(dim))
        self.offset = nn.Parameter(torch.zeros(dim))
        self.eps = eps

    def forward(self, x):
        return layer_norm(x, self.gain, self.offset, self.eps)


class MultiHeadAttention(nn.Module):
    """
    Self-attention when called with one sequence, cross-attention when given a ``context``.
    """
    def __init__(self, cfg, rope_base=ROPE_BASE):
        super(MultiHeadAttention, self).__init__()
        self.cfg = cfg
        self.rope_base = rope_base
        self.q_proj = Linear(cfg.model_dim, cfg.model_dim)
        self.k_proj = Linear(cfg.model_dim, cfg.model_dim)
        self.v_proj = Linear(cfg.model_dim, cfg.model_dim)
        self.out_proj = Linear(cfg.model_dim, cfg.model_dim)

    def forward(self, x, positions=None, context=None, context_positions=None, mask=None):
        if context is None:
            context, context_positions = x, positions
        out = attention(
            self.q_proj(x), self.k_proj(context), self.v_proj(context), self.cfg, mask=mask,
            q_positions=positions, k_positions=context_positions, rope_base=self.rope_base,
        )
        return self.out_proj(out)


class FeedForward(nn.Module):
    def __init__(self, dim, ratio=4):
        super(FeedForward, self).__init__()
        self.up = Linear(dim, ratio * dim)
        self.down = Linear(ratio * dim, dim)

    def forward(self, x):
        return self.down(F.gelu(self.up(x)))


class TransformerBlock(nn.Module):
    """
    A pre-norm residual block: norm, attention, add; optionally norm, cross-attention, add; then norm, GELU MLP,
    add.
    """
    def __init__(self, model_dim, heads, causal=False, cross_attention=False, mlp_ratio=4, rope_base=ROPE_BASE):
        super(TransformerBlock, self).__init__()
        self.self_norm = LayerNorm(model_dim)
        self.self_attn = MultiHeadAttention(AttentionConfig(model_dim, heads, causal), rope_base)
        self.cross_norm = LayerNorm(model_dim) if cross_attention else None
        self.cross_attn = MultiHeadAttention(AttentionConfig(model_dim, heads), rope_base) if cross_attention \
            else None
        self.mlp_norm = LayerNorm(model_dim)
        self.mlp = FeedForward(model_dim, mlp_ratio)

    def forward(self, x, positions=None, context=None, context_positions=None):
        x = x + self.self_attn(self.self_norm(x), positions)
        if self.cross_attn is not None:
            if context is None:
                raise ContractError('cross-attention block called without encoder states')
            x = x + self.cross_attn(self.cross_norm(x), positions, context, context_positions)
        return x + self.mlp(self.mlp_norm(x))


def named_parameters(parameters):
    """
    Normalizes a module or a name -> parameter mapping into a list of ``(name, parameter)`` pairs.
    """
    if isinstance(parameters, nn.Module):
        return list(parameters.named_parameters())
    return list(parameters.items())


def backward(loss, parameters):
    """
    Populates ``.grad`` of every parameter reachable from ``loss``.

    :raises: :class:`AccumulationError <gaze_glass.exceptions.AccumulationError>` when a gradient from a previous
        call was never reset
    """
    if loss.dim() != 0:
        raise ShapeError('backward needs a scalar loss, got shape {0}'.format(tuple(loss.shape)))
    stale = [name for name, p in named_parameters(parameters) if p.grad is not None]
    if stale:
        raise AccumulationError('gradients of {0} were not reset before backward'.format(', '.join(stale)))
    loss.backward()


def reset_grads(parameters):
    for _, p in named_parameters(parameters):
        p.grad = None


@dataclass
class GradCheckReport:
    """
    The outcome of :func:`grad_check`. ``excluded`` lists ``(name, flat_index)`` coordinates whose finite
    differences straddle a branch change (for example a Huber kink); they are not scored.
    """
    max_rel_error: float
    passed: bool
    checked: int
    excluded: list = field(default_factory=list)
    worst: tuple = None
    errors: dict = field(default_factory=dict)


def _split_output(output):
    if isinstance(output, tuple):
        return output[0], output[1]
    return output, None


def _same_branch(a, b):
    if a is None and b is None:
        return True
    if isinstance(a, torch.Tensor):
        return torch.equal(a, b)
    return a == b


def grad_check(f, parameters, step=1e-4, tol=1e-4, coords_per_parameter=3, seed=0, min_scale=1e-6):
    """
    Compares reverse-mode gradients with central finite differences on sampled coordinates.

    :param f: A zero-argument callable returning a scalar loss tensor, or ``(loss, branch_signature)`` where the
        signature identifies the piecewise branch the evaluation took. Coordinates whose perturbed evaluations
        report a different signature are excluded.
    :param parameters: A module or a name -> parameter mapping. Every parameter must be float64.
    :type coords_per_parameter: int
    :param coords_per_parameter: Coordinates sampled per parameter; ``None`` checks all of them
    :param min_scale: Floor of the relative-error denominator
    :rtype: :class:`GradCheckReport`

    :raises:
        * :class:`ContractError <gaze_glass.exceptions.ContractError>` when a parameter is not float64
        * :class:`NumericError <gaze_glass.exceptions.NumericError>` on non-finite losses or gradients
    """
    named = named_parameters(parameters)
    for name, p in named:
        if p.dtype != torch.float64:
            raise ContractError('grad_check needs float64 parameters, {0} is {1}'.format(name, p.dtype))

    reset_grads(parameters)
    loss, signature = _split_output(f())
    if not torch.isfinite(loss):
        raise NumericError('loss is not finite: {0}'.format(loss.item()))
    backward(loss, parameters)
    analytic = {}
    for name, p in named:
        grad = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.isfinite(grad).all():
            raise NumericError('gradient of {0} is not finite'.format(name))
        analytic[name] = grad.reshape(-1)
    reset_grads(parameters)

    def evaluate():
        with torch.no_grad():
            value, branch = _split_output(f())
        if not torch.isfinite(value):
            raise NumericError('loss is not finite under perturbation: {0}'.format(value.item()))
        return value.item(), branch

    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_error=0.0, passed=True, checked=0)
    for name, p in named:
        size = p.numel()
        count = size if coords_per_parameter is None else min(size, coords_per_parameter)
        flat = p.data.view(-1)
        for index in rng.choice(size, size=count, replace=False):
            index = int(index)
            original = flat[index].item()
            flat[index] = original + step
            plus, plus_branch = evaluate()
            flat[index] = original - step
            minus, minus_branch = evaluate()
            flat[index] = original
            if not (_same_branch(plus_branch, signature) and _same_branch(minus_branch, signature)):
                report.excluded.append((name, index))
                continue
            numeric = (plus - minus) / (2.0 * step)
            exact = analytic[name][index].item()
            rel = abs(exact - numeric) / max(abs(exact), abs(numeric), min_scale)
            report.checked += 1
            report.errors[name] = max(report.errors.get(name, 0.0), rel)
            if rel > report.max_rel_error or report.worst is None:
                report.max_rel_error = max(rel, report.max_rel_error)
                report.worst = (name, index)

    report.passed = report.max_rel_error < tol
    if not report.passed:
        LOG.warning('Gradient check failed: max relative error %.3g at %s', report.max_rel_error, report.worst)
    return report
