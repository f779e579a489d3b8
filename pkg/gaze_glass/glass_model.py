"""
The gaze forecaster: windows are cut into patches, embedded, encoded by self-attention blocks and decoded
patch by patch with a causal decoder that cross-attends to the encoder states.
"""
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
import json
import logging
import struct

import numpy as np
import torch
from torch import nn

from .exceptions import ConfigError, ContractError, FormatError, NumericError, ShapeError
from .models import GAZE_DIMS, WindowSpec
from .neural_core import ROPE_BASE, LayerNorm, Linear, TransformerBlock


LOG = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b'GLSS'
CHECKPOINT_VERSION = 1
DEFAULT_STRIDE = 151

SIZE_PRESETS = {
    'small': dict(model_dim=32, encoder_layers=2, decoder_layers=2, heads=4),
    'base': dict(model_dim=64, encoder_layers=4, decoder_layers=4, heads=4),
    'large': dict(model_dim=128, encoder_layers=6, decoder_layers=6, heads=8),
}


@dataclass(frozen=True)
class GlassConfig:
    """
    Architecture hyperparameters. ``patch_size`` must divide both frame counts and ``model_dim / heads`` must be
    even.
    """
    input_dims: int = GAZE_DIMS
    input_frames: int = 150
    output_frames: int = 150
    patch_size: int = 15
    model_dim: int = 32
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    size_name: str = 'small'
    rope_base: float = ROPE_BASE
    mlp_ratio: int = 4

    def __post_init__(self):
        for name in ('input_dims', 'input_frames', 'output_frames', 'patch_size', 'model_dim', 'heads',
                     'mlp_ratio'):
            if getattr(self, name) <= 0:
                raise ConfigError('{0} must be positive, got {1}'.format(name, getattr(self, name)))
        for name in ('encoder_layers', 'decoder_layers'):
            if getattr(self, name) < 0:
                raise ConfigError('{0} must not be negative, got {1}'.format(name, getattr(self, name)))
        for name in ('input_frames', 'output_frames'):
            if getattr(self, name) % self.patch_size:
                raise ConfigError('patch size {0} does not divide {1}={2}'.format(
                    self.patch_size, name, getattr(self, name)))
        if self.model_dim % self.heads or (self.model_dim // self.heads) % 2:
            raise ConfigError('model_dim {0} must split into {1} heads of even width'.format(
                self.model_dim, self.heads))
        if self.size_name not in SIZE_PRESETS:
            raise ConfigError('unknown size {0!r}, expected one of {1}'.format(self.size_name, sorted(SIZE_PRESETS)))

    @property
    def input_patches(self):
        return self.input_frames // self.patch_size

    @property
    def output_patches(self):
        return self.output_frames // self.patch_size

    @property
    def patch_width(self):
        return self.patch_size * self.input_dims

    def window_spec(self, stride=DEFAULT_STRIDE):
        return WindowSpec(self.input_frames, self.output_frames, stride)


def model_size_config(size_name, **overrides):
    """
    Returns the :class:`GlassConfig` of a named size (``small``, ``base`` or ``large``) with ``overrides``
    applied.
    """
    if size_name not in SIZE_PRESETS:
        raise ConfigError('unknown size {0!r}, expected one of {1}'.format(size_name, sorted(SIZE_PRESETS)))
    values = dict(SIZE_PRESETS[size_name], size_name=size_name)
    values.update(overrides)
    return GlassConfig(**values)


def window_spec_for(input_seconds, output_seconds, fps=30.0, stride=DEFAULT_STRIDE):
    return WindowSpec(int(round(input_seconds * fps)), int(round(output_seconds * fps)), stride)


def patchify(window, patch_size):
    """
    Reshapes (..., T, D) into (..., T / P, P * D); patch ``j`` holds frames ``jP .. (j + 1)P - 1``.
    """
    frames, dims = window.shape[-2], window.shape[-1]
    if patch_size <= 0 or frames % patch_size:
        raise ShapeError('patch size {0} does not divide window {1}'.format(patch_size, tuple(window.shape)))
    return window.reshape(*window.shape[:-2], frames // patch_size, patch_size * dims)


def unpatchify(patches, patch_size):
    count, width = patches.shape[-2], patches.shape[-1]
    if patch_size <= 0 or width % patch_size:
        raise ShapeError('patch size {0} does not divide patch width of {1}'.format(
            patch_size, tuple(patches.shape)))
    return patches.reshape(*patches.shape[:-2], count * patch_size, width // patch_size)


def predict_previous(window, output_frames):
    """
    Repeats the last observed frame of a (..., T_i, D) window for ``output_frames`` frames.
    """
    if window.shape[-2] < 1:
        raise ShapeError('predict_previous needs at least one input frame, got {0}'.format(tuple(window.shape)))
    last = window[..., -1:, :]
    if isinstance(window, np.ndarray):
        return np.repeat(last, output_frames, axis=-2)
    return last.repeat_interleave(output_frames, dim=-2)


class GlassModel(nn.Module):
    """
    The encoder-decoder forecaster. Windows fed to :meth:`encode` are expected in normalized units; the
    normalization statistics travel with the model as the ``norm_mean`` and ``norm_std`` buffers.
    """
    def __init__(self, config):
        super(GlassModel, self).__init__()
        self.config = config
        d = config.model_dim
        self.patch_embed = Linear(config.patch_width, d)
        self.encoder_blocks = nn.ModuleList([
            TransformerBlock(d, config.heads, mlp_ratio=config.mlp_ratio, rope_base=config.rope_base)
            for _ in range(config.encoder_layers)
        ])
        self.encoder_norm = LayerNorm(d)
        self.start_token = nn.Parameter(0.02 * torch.randn(d))
        self.decoder_embed = Linear(config.patch_width, d)
        self.decoder_blocks = nn.ModuleList([
            TransformerBlock(d, config.heads, causal=True, cross_attention=True, mlp_ratio=config.mlp_ratio,
                             rope_base=config.rope_base)
            for _ in range(config.decoder_layers)
        ])
        self.decoder_norm = LayerNorm(d)
        self.head = Linear(d, config.patch_width)
        self.register_buffer('norm_mean', torch.zeros(config.input_dims))
        self.register_buffer('norm_std', torch.ones(config.input_dims))

    def set_norm_stats(self, stats):
        with torch.no_grad():
            self.norm_mean.copy_(torch.as_tensor(stats.mean, dtype=self.norm_mean.dtype))
            self.norm_std.copy_(torch.as_tensor(stats.std, dtype=self.norm_std.dtype))

    def normalize_input(self, window):
        return (window - self.norm_mean) / self.norm_std

    def encode(self, window):
        """
        Maps a (..., T, D) window to (..., T / P, d) encoder states. Patch ``i`` sits at rotary position ``i``.
        Pretraining uses ``T = T_i``; fine-tuning may encode any multiple of P.
        """
        if not torch.isfinite(window).all():
            raise NumericError('encoder input contains non-finite values')
        if window.dim() < 2 or window.shape[-1] != self.config.input_dims:
            raise ShapeError('window {0} does not have {1} gaze dims'.format(
                tuple(window.shape), self.config.input_dims))
        hidden = self.patch_embed(patchify(window, self.config.patch_size))
        positions = torch.arange(hidden.shape[-2], device=hidden.device)
        for block in self.encoder_blocks:
            hidden = block(hidden, positions)
        return self.encoder_norm(hidden)

    def decode(self, enc, target=None, tf_prob=0.0, rng_seed=0):
        """
        Generates T_o / P patches left to right and returns the (..., T_o, D) forecast.

        At every step each previously generated patch is independently replaced by the ground-truth patch with
        probability ``tf_prob``, drawn from a generator seeded with ``rng_seed``. Decoder token ``k`` (the start
        token is ``k = 0``) sits at rotary position ``n_in + k``.

        :raises: :class:`ContractError <gaze_glass.exceptions.ContractError>` when ``tf_prob > 0`` without a
            target
        """
        if not 0.0 <= tf_prob <= 1.0:
            raise ContractError('tf_prob must lie in [0, 1], got {0}'.format(tf_prob))
        if tf_prob > 0 and target is None:
            raise ContractError('teacher forcing with probability {0} needs a target'.format(tf_prob))
        config = self.config
        n_in = enc.shape[-2]
        batch_shape = tuple(enc.shape[:-2])
        enc_positions = torch.arange(n_in, device=enc.device)

        target_patches, generator = None, None
        if tf_prob > 0:
            target_patches = patchify(target, config.patch_size)
            generator = torch.Generator().manual_seed(int(rng_seed))

        start = self.start_token.expand(*batch_shape, 1, config.model_dim)
        predictions = []
        for step in range(config.output_patches):
            tokens = [start]
            for j, prediction in enumerate(predictions):
                if target_patches is not None:
                    forced = torch.rand(batch_shape, generator=generator) < tf_prob
                    prediction = torch.where(forced.unsqueeze(-1).to(enc.device), target_patches[..., j, :],
                                             prediction)
                tokens.append(self.decoder_embed(prediction).unsqueeze(-2))
            hidden = torch.cat(tokens, dim=-2)
            positions = torch.arange(n_in, n_in + step + 1, device=enc.device)
            for block in self.decoder_blocks:
                hidden = block(hidden, positions, enc, enc_positions)
            predictions.append(self.head(self.decoder_norm(hidden[..., -1, :])))
        return unpatchify(torch.stack(predictions, dim=-2), config.patch_size)

    def forward(self, window, target=None, tf_prob=0.0, rng_seed=0):
        return self.decode(self.encode(window), target, tf_prob, rng_seed)


def build_model(config, seed=0, dtype=torch.float32):
    """
    Builds a :class:`GlassModel` whose initial parameters depend only on ``(config, seed)``.
    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = GlassModel(config)
    return model.to(dtype)


@dataclass(eq=False)
class Checkpoint:
    """
    A model configuration, free-form metadata and named float32 tensors (parameters and buffers).
    """
    config: GlassConfig
    tensors: OrderedDict
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model, metadata=None):
        tensors = OrderedDict(
            (name, value.detach().cpu().to(torch.float32).numpy().copy())
            for name, value in model.state_dict().items()
        )
        return cls(config=model.config, tensors=tensors, metadata=dict(metadata or {}))

    def to_model(self, dtype=torch.float32):
        model = GlassModel(self.config)
        expected = model.state_dict()
        unknown = sorted(set(self.tensors) - set(expected))
        if unknown:
            raise FormatError('unknown tensors in checkpoint: {0}'.format(', '.join(unknown)))
        missing = sorted(set(expected) - set(self.tensors))
        if missing:
            raise FormatError('checkpoint lacks tensors: {0}'.format(', '.join(missing)))
        state = OrderedDict()
        for name, value in self.tensors.items():
            if tuple(value.shape) != tuple(expected[name].shape):
                raise FormatError('tensor {0} has shape {1}, model expects {2}'.format(
                    name, value.shape, tuple(expected[name].shape)))
            state[name] = torch.from_numpy(value.copy())
        model.load_state_dict(state)
        return model.to(dtype)

    def to_bytes(self):
        header = json.dumps({'model': asdict(self.config), 'metadata': self.metadata}, sort_keys=True).encode('utf-8')
        chunks = [CHECKPOINT_MAGIC, struct.pack('<II', CHECKPOINT_VERSION, len(header)), header,
                  struct.pack('<I', len(self.tensors))]
        for name, value in self.tensors.items():
            encoded = name.encode('utf-8')
            chunks.append(struct.pack('<H', len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack('<B', value.ndim))
            chunks.append(struct.pack('<{0}I'.format(value.ndim), *value.shape))
            chunks.append(np.ascontiguousarray(value, dtype='<f4').tobytes())
        return b''.join(chunks)

    @classmethod
    def from_bytes(cls, data):
        reader = _Reader(data)
        magic = reader.take(4, 'magic')
        if magic != CHECKPOINT_MAGIC:
            raise FormatError('bad magic {0!r}'.format(magic), 0)
        version_offset = reader.offset
        version, header_length = reader.unpack('<II', 'header')
        if version != CHECKPOINT_VERSION:
            raise FormatError('unsupported checkpoint version {0}'.format(version), version_offset)
        header_offset = reader.offset
        try:
            header = json.loads(reader.take(header_length, 'config').decode('utf-8'))
            config = GlassConfig(**header['model'])
        except (ValueError, KeyError, TypeError, ConfigError) as e:
            raise FormatError('bad config: {0}'.format(e), header_offset)
        (count,) = reader.unpack('<I', 'tensor count')
        tensors = OrderedDict()
        for _ in range(count):
            name_offset = reader.offset
            (name_length,) = reader.unpack('<H', 'tensor name length')
            try:
                name = reader.take(name_length, 'tensor name').decode('utf-8')
            except UnicodeDecodeError:
                raise FormatError('tensor name is not utf-8', name_offset)
            (rank,) = reader.unpack('<B', 'tensor rank')
            dims = reader.unpack('<{0}I'.format(rank), 'tensor dims')
            size = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(reader.take(4 * size, 'values of {0}'.format(name)), dtype='<f4')
            tensors[name] = values.reshape(dims).astype(np.float32)
        if reader.offset != len(data):
            raise FormatError('{0} trailing bytes'.format(len(data) - reader.offset), reader.offset)
        return cls(config=config, tensors=tensors, metadata=header.get('metadata', {}))


class _Reader(object):
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def take(self, size, what):
        if self.offset + size > len(self.data):
            raise FormatError('truncated while reading {0}'.format(what), self.offset)
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def save_checkpoint(model, path, metadata=None):
    """
    Writes ``model`` to ``path`` in the little-endian ``GLSS`` container. Values are stored as float32, so
    float32 models round-trip bit-exactly.
    """
    data = Checkpoint.from_model(model, metadata).to_bytes()
    with open(path, 'wb') as handle:
        handle.write(data)
    LOG.info('Wrote checkpoint %s (%d bytes)', path, len(data))


def read_checkpoint(path):
    with open(path, 'rb') as handle:
        return Checkpoint.from_bytes(handle.read())


def load_checkpoint(path, dtype=torch.float32):
    """
    Loads the model stored at ``path``.

    :raises: :class:`FormatError <gaze_glass.exceptions.FormatError>` on bad magic, version, truncation or
        tensors that do not fit the stored config
    """
    return read_checkpoint(path).to_model(dtype)
