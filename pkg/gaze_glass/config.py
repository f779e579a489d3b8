"""
Run configuration: one YAML document with a section per concern. Every section maps onto a frozen dataclass
whose defaults are the documented defaults; unknown sections and keys are rejected.
"""
from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import logging

import yaml

from .baselines import BaselineConfig
from .emotion import ChunkConfig, FinetuneConfig, HeadSpec
from .exceptions import ConfigError
from .gaze_data import INPUT_SECONDS_CHOICES, SynthConfig
from .glass_model import SIZE_PRESETS, GlassConfig
from .pretrain import LossConfig, OptimConfig, PretrainConfig, SamplingSchedule
from .run_lock import DEFAULT_TTL_SECONDS


LOG = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = 'resolved_config.yaml'
SWEEP_AXES = ('model_size', 'input_seconds', 'output_seconds')
HASHED_SECTIONS = ('model', 'loss', 'optim', 'schedule', 'pretrain')


@dataclass(frozen=True)
class WindowConfig:
    """
    Labeled-window settings for the emotion tasks.
    """
    task: str = 'vad'
    input_seconds: int = 5
    stride_seconds: float = 3.0

    def __post_init__(self):
        if self.task not in ('vad', 'behavior'):
            raise ConfigError('unknown task {0!r}'.format(self.task))
        if self.input_seconds not in INPUT_SECONDS_CHOICES:
            raise ConfigError('input_seconds must be one of {0}, got {1}'.format(
                INPUT_SECONDS_CHOICES, self.input_seconds))
        if self.stride_seconds <= 0:
            raise ConfigError('stride_seconds must be positive, got {0}'.format(self.stride_seconds))


@dataclass(frozen=True)
class SweepConfig:
    """
    ``seed`` is shared by synthesis and every pretraining run; ``seeds`` are the bootstrap split seeds of the
    fine-tuning and baseline stages. The remaining fields list the values of each sweep axis.
    """
    seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    model_size: tuple = ('small', 'base', 'large')
    input_seconds: tuple = (2, 5, 10)
    output_seconds: tuple = (2, 5, 10)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError('at least one bootstrap seed is required')
        unknown = [v for v in self.model_size if v not in SIZE_PRESETS]
        if unknown:
            raise ConfigError('unknown model sizes {0}'.format(unknown))
        for axis in ('input_seconds', 'output_seconds'):
            bad = [v for v in getattr(self, axis) if v not in INPUT_SECONDS_CHOICES]
            if bad:
                raise ConfigError('{0} values must come from {1}, got {2}'.format(axis, INPUT_SECONDS_CHOICES, bad))

    def values(self, axis):
        if axis not in SWEEP_AXES:
            raise ConfigError('unknown sweep axis {0!r}, expected one of {1}'.format(axis, SWEEP_AXES))
        return getattr(self, axis)


@dataclass(frozen=True)
class LockConfig:
    ttl_seconds: float = DEFAULT_TTL_SECONDS


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    model: GlassConfig = field(default_factory=GlassConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: SamplingSchedule = field(default_factory=SamplingSchedule)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    chunk: ChunkConfig = field(default_factory=ChunkConfig)
    head: HeadSpec = field(default_factory=HeadSpec)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    lock: LockConfig = field(default_factory=LockConfig)


SECTIONS = dict((f.name, f.default_factory) for f in fields(RunConfig))


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _listed(value):
    if isinstance(value, (tuple, list)):
        return [_listed(v) for v in value]
    if isinstance(value, dict):
        return dict((k, _listed(v)) for k, v in value.items())
    return value


def _build_section(name, values):
    cls = SECTIONS[name]
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError('section {0} must be a mapping, got {1!r}'.format(name, values))
    known = set(f.name for f in fields(cls))
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError('unknown keys in section {0}: {1}'.format(name, ', '.join(map(str, unknown))))
    try:
        return cls(**dict((key, _tupled(value)) for key, value in values.items()))
    except (TypeError, ValueError) as e:
        raise ConfigError('bad value in section {0}: {1}'.format(name, e))


def parse_run_config(document):
    """
    Builds a :class:`RunConfig` from a parsed YAML document (``None`` means all defaults).
    """
    document = document or {}
    if not isinstance(document, dict):
        raise ConfigError('a run config must be a mapping of sections')
    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ConfigError('unknown config sections: {0}'.format(', '.join(map(str, unknown))))
    return RunConfig(**dict((name, _build_section(name, document.get(name))) for name in SECTIONS))


def load_run_config(path=None):
    """
    Loads a run config from ``path``; no path yields the defaults.

    :raises: :class:`ConfigError <gaze_glass.exceptions.ConfigError>` for unreadable files, malformed YAML,
        unknown sections or keys, and invalid values
    """
    if path is None:
        return RunConfig()
    try:
        with open(path, 'r') as handle:
            document = yaml.safe_load(handle)
    except OSError as e:
        raise ConfigError('cannot read config {0}: {1}'.format(path, e))
    except yaml.YAMLError as e:
        raise ConfigError('malformed config {0}: {1}'.format(path, e))
    LOG.debug('Loaded run config from %s', path)
    return parse_run_config(document)


def config_document(cfg):
    return _listed(asdict(cfg))


def dump_run_config(cfg, path):
    with open(path, 'w') as handle:
        yaml.safe_dump(config_document(cfg), handle, sort_keys=True, default_flow_style=False)


def config_hash(cfg):
    """
    The first 12 hex digits of the SHA-256 of the canonical JSON of the pretraining sections. Runs with equal
    hashes pretrain the same forecaster configuration.
    """
    document = config_document(cfg)
    canonical = json.dumps(dict((name, document[name]) for name in HASHED_SECTIONS), sort_keys=True,
                           separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:12]
