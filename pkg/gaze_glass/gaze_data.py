"""
Gaze data plumbing: OpenFace CSV parsing and writing, synthetic corpora, normalization, annotation and manifest
files, pretraining windows, labeled windows and tail upsampling of VAD labels.
"""
from dataclasses import dataclass
import json
import logging
import math
import os

import numpy as np
import pandas as pd

from .exceptions import ConfigError, ParseError, SchemaError
from .models import (
    FACE_COLUMNS, GAZE_COLUMNS, BehaviorAnnotation, BehaviorLabel, GazeSequence, GazeWindow,
    LabeledWindow, ManifestEntry, NormStats, VADAnnotation, VADLabel,
)


LOG = logging.getLogger(__name__)

DEFAULT_COLUMN_MAP = dict(
    [('frame', 'frame'), ('success', 'success'), ('confidence', 'confidence')]
    + [(name, name) for name in GAZE_COLUMNS]
    + [(name, name) for name in FACE_COLUMNS]
)
DEFAULT_CONFIDENCE_THRESHOLD = 0.75
NORM_EPSILON = 1e-8
INPUT_SECONDS_CHOICES = (2, 5, 10)
MANIFEST_COLUMNS = ('csv_path', 'annotation_path', 'subject_id', 'split')

# Resting gaze direction: both eyes looking slightly down towards the camera.
BASE_GAZE = np.array([0.05, 0.08, -0.99, -0.05, 0.08, -0.99])


def _numeric_column(frame, name):
    values = pd.to_numeric(frame[name], errors='coerce')
    bad = values.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise ParseError('non-numeric value {0!r} in column {1} at row {2}'.format(
            frame[name].iloc[row], name, row + 1))
    return values.to_numpy(dtype=np.float64)


def _frame_offsets(numbers):
    """
    Offsets of each row from the first frame number.

    :raises: :class:`ParseError <gaze_glass.exceptions.ParseError>` for a fractional or non-increasing frame number
    """
    fractional = numbers != np.round(numbers)
    if fractional.any():
        row = int(np.flatnonzero(fractional)[0])
        raise ParseError('fractional frame number {0} at row {1}'.format(numbers[row], row + 1))
    not_increasing = np.diff(numbers) <= 0
    if not_increasing.any():
        row = int(np.flatnonzero(not_increasing)[0]) + 1
        raise ParseError('frame number {0:g} at row {1} does not follow {2:g}'.format(
            numbers[row], row + 1, numbers[row - 1]))
    return (numbers - numbers[0]).astype(np.int64) if len(numbers) else np.zeros(0, dtype=np.int64)


def _fill_gaps(offsets, rows):
    """
    Scatters per-row arrays onto a frame grid of ``offsets[-1] + 1`` frames; frames without a row stay zero.
    """
    n_frames = int(offsets[-1]) + 1
    filled = []
    for values in rows:
        if values is None:
            filled.append(None)
            continue
        grid = np.zeros((n_frames,) + values.shape[1:], dtype=values.dtype)
        grid[offsets] = values
        filled.append(grid)
    return filled


def parse_openface_csv(stream, column_map=None, fps=30.0, subject_id='',
                       confidence_threshold=DEFAULT_CONFIDENCE_THRESHOLD):
    """
    Parses an OpenFace 2.0 style CSV into a :class:`GazeSequence`. Frame ``i`` of the sequence is frame number
    ``first + i``; frame numbers missing from the file become invalid frames.

    :param stream: A path or text stream with a header row and one row per frame
    :type column_map: dict
    :param column_map: Maps CSV column names to roles. Roles are the OpenFace names ``frame``, ``success``,
        ``confidence``, ``gaze_0_x`` .. ``gaze_1_z`` and the ``AU*_r`` face columns. Defaults to the identity map.
    :param confidence_threshold: Rows with confidence below this value are marked invalid

    :raises:
        * :class:`SchemaError <gaze_glass.exceptions.SchemaError>` when the frame column or a gaze column is
          missing
        * :class:`ParseError <gaze_glass.exceptions.ParseError>` when a cell is not numeric or the frame numbers
          do not increase
    """
    column_map = DEFAULT_COLUMN_MAP if column_map is None else column_map
    roles = {role: name for name, role in column_map.items()}
    frame = pd.read_csv(stream, dtype=str, skipinitialspace=True, keep_default_na=False)
    frame.columns = [str(c).strip() for c in frame.columns]

    frame_name = roles.get('frame', 'frame')
    if frame_name not in frame.columns:
        raise SchemaError('missing frame column {0}'.format(frame_name))
    gaze_names = []
    for role in GAZE_COLUMNS:
        name = roles.get(role, role)
        if name not in frame.columns:
            raise SchemaError('missing gaze column {0}'.format(name))
        gaze_names.append(name)

    offsets = _frame_offsets(_numeric_column(frame, frame_name))
    gaze = np.stack([_numeric_column(frame, name) for name in gaze_names], axis=1) if len(frame) else \
        np.zeros((0, len(GAZE_COLUMNS)))
    valid = np.ones(len(frame), dtype=bool)
    success_name = roles.get('success')
    if success_name in frame.columns:
        valid &= _numeric_column(frame, success_name) != 0
    confidence_name = roles.get('confidence')
    if confidence_name in frame.columns:
        valid &= _numeric_column(frame, confidence_name) >= confidence_threshold

    face_names = [roles[role] for role in FACE_COLUMNS if roles.get(role) in frame.columns]
    face_aux = None
    if face_names and len(frame):
        face_aux = np.stack([_numeric_column(frame, name) for name in face_names], axis=1)

    if len(frame) and offsets[-1] + 1 != len(frame):
        LOG.warning('Marking %d skipped frames of %s invalid', int(offsets[-1]) + 1 - len(frame),
                    subject_id or 'gaze CSV')
        gaze, valid, face_aux = _fill_gaps(offsets, (gaze, valid, face_aux))

    return GazeSequence(gaze=gaze, valid=valid, fps=fps, subject_id=subject_id, face_aux=face_aux)


def write_openface_csv(seq, stream):
    """
    Writes a :class:`GazeSequence` with OpenFace column names. Invalid frames get ``success=0``.
    """
    columns = {
        'frame': np.arange(len(seq)),
        'timestamp': seq.times,
        'confidence': np.where(seq.valid, 1.0, 0.0),
        'success': seq.valid.astype(int),
    }
    for i, name in enumerate(GAZE_COLUMNS):
        columns[name] = seq.gaze[:, i]
    if seq.face_aux is not None:
        for i, name in enumerate(FACE_COLUMNS[:seq.face_aux.shape[1]]):
            columns[name] = seq.face_aux[:, i]
    pd.DataFrame(columns).to_csv(stream, index=False)


def extract_windows(seq, spec):
    """
    Slices a sequence into pretraining windows starting at 0, stride, 2 * stride, ... Windows that contain an
    invalid frame are skipped.

    :rtype: list of :class:`GazeWindow`
    """
    span = spec.span
    if len(seq) < span:
        return []
    invalid_before = np.concatenate([[0], np.cumsum(~seq.valid)])
    windows = []
    for start in range(0, len(seq) - span + 1, spec.stride):
        if invalid_before[start + span] != invalid_before[start]:
            LOG.debug('Skipping window at frame %d of %s: invalid frames', start, seq.subject_id)
            continue
        windows.append(GazeWindow(
            input=seq.gaze[start:start + spec.input_frames].copy(),
            target=seq.gaze[start + spec.input_frames:start + span].copy(),
            origin=(seq.subject_id, start),
        ))
    return windows


def compute_norm_stats(seqs, eps=NORM_EPSILON):
    """
    Computes per-dimension mean and population std over the valid frames of ``seqs``. A dimension with zero
    variance gets its std clamped to ``eps`` and is flagged in ``clamped``.
    """
    valid = [seq.gaze[seq.valid] for seq in seqs]
    stacked = np.concatenate(valid, axis=0) if valid else np.zeros((0, len(GAZE_COLUMNS)))
    if not len(stacked):
        raise ConfigError('normalization needs at least one valid frame')
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    clamped = std < eps
    if clamped.any():
        LOG.warning('Clamping std of gaze dimensions %s to %g', np.flatnonzero(clamped).tolist(), eps)
    std = np.where(clamped, eps, std)
    return NormStats(mean=mean, std=std, clamped=clamped)


def normalize(seq, stats):
    gaze = seq.gaze.copy()
    gaze[seq.valid] = (gaze[seq.valid] - stats.mean) / stats.std
    return seq.replace(gaze=gaze, norm_stats=stats)


def denormalize(seq, stats=None):
    stats = stats or seq.norm_stats
    gaze = seq.gaze.copy()
    gaze[seq.valid] = gaze[seq.valid] * stats.std + stats.mean
    return seq.replace(gaze=gaze, norm_stats=None)


def interpolate_invalid(seq):
    """
    Returns a copy of ``seq`` whose invalid frames are filled by linear interpolation between the nearest valid
    frames (held constant beyond the first and last valid frame). Validity flags are unchanged.
    """
    if seq.valid.all() or not seq.valid.any():
        return seq
    index = np.arange(len(seq))
    known = np.flatnonzero(seq.valid)

    def fill(values):
        return np.stack([np.interp(index, known, values[known, i]) for i in range(values.shape[1])], axis=1)

    face_aux = None if seq.face_aux is None else fill(seq.face_aux)
    return seq.replace(gaze=fill(seq.gaze), face_aux=face_aux)


@dataclass(frozen=True)
class SynthConfig:
    """
    Generator settings for a synthetic gaze/affect corpus.

    Each subject switches between ``n_regimes`` latent regimes. A regime fixes a per-dimension sinusoid
    amplitude, frequency and phase; gaze is the resting direction plus the active regime's sinusoids plus
    Ornstein-Uhlenbeck noise, with occasional invalid blink gaps. VAD labels are a fixed affine function of the
    regime's mean frequency and amplitude, and behavior events fire in high-amplitude regimes.
    """
    duration_seconds: float = 120.0
    fps: float = 30.0
    n_regimes: int = 4
    regime_seconds: float = 15.0
    min_regime_seconds: float = 6.0
    amplitude_range: tuple = (0.02, 0.15)
    frequency_range: tuple = (0.15, 1.2)
    noise_scale: float = 0.01
    ou_theta: float = 2.0
    blink_rate: float = 0.03
    blink_frames: tuple = (2, 5)
    label_noise: float = 0.02
    sentence_seconds: tuple = (5.0, 10.0)
    sentence_gap_seconds: tuple = (0.5, 2.0)
    behavior_rate: float = 0.15
    behavior_threshold: float = 0.07
    face_noise: float = 0.05
    n_subjects: int = 12
    val_subjects: int = 2

    def __post_init__(self):
        if self.duration_seconds <= 0:
            raise ConfigError('duration_seconds must be positive, got {0}'.format(self.duration_seconds))
        if self.fps <= 0:
            raise ConfigError('fps must be positive, got {0}'.format(self.fps))
        if self.n_regimes < 1:
            raise ConfigError('n_regimes must be at least 1, got {0}'.format(self.n_regimes))
        if not 0 <= self.val_subjects < self.n_subjects:
            raise ConfigError('val_subjects must lie in [0, n_subjects), got {0}'.format(self.val_subjects))


def _unit_interval(value, bounds):
    low, high = bounds
    return 0.0 if high <= low else float(np.clip((value - low) / (high - low), 0.0, 1.0))


def regime_vad(amplitudes, frequencies, params):
    """
    The noiseless VAD label of a regime: valence rises with mean frequency, arousal with mean amplitude, and
    dominance with both.
    """
    a = _unit_interval(float(np.mean(amplitudes)), params.amplitude_range)
    f = _unit_interval(float(np.mean(frequencies)), params.frequency_range)
    return np.array([0.15 + 0.7 * f, 0.15 + 0.7 * a, 0.25 + 0.35 * a + 0.15 * f])


def regime_behavior(frequencies, params):
    f = _unit_interval(float(np.mean(frequencies)), params.frequency_range)
    if f < 1.0 / 3.0:
        return 'sigh'
    if f < 2.0 / 3.0:
        return 'cry'
    return 'laugh'


def _regime_segments(rng, n_frames, params):
    segments = []
    start = 0
    previous = None
    while start < n_frames:
        length = max(params.min_regime_seconds, rng.exponential(params.regime_seconds))
        end = min(n_frames, start + max(1, int(round(length * params.fps))))
        regime = int(rng.integers(params.n_regimes))
        if params.n_regimes > 1 and regime == previous:
            regime = (regime + 1) % params.n_regimes
        segments.append((start, end, regime))
        previous = regime
        start = end
    return segments


def _ou_noise(rng, n_frames, params):
    noise = np.zeros((n_frames, len(GAZE_COLUMNS)))
    if params.noise_scale <= 0 or not n_frames:
        return noise
    decay = math.exp(-params.ou_theta / params.fps)
    kick = params.noise_scale * math.sqrt(1.0 - decay ** 2)
    shocks = rng.standard_normal((n_frames, len(GAZE_COLUMNS)))
    noise[0] = params.noise_scale * shocks[0]
    for i in range(1, n_frames):
        noise[i] = decay * noise[i - 1] + kick * shocks[i]
    return noise


def synth_gaze(params, seed, subject_id='synthetic'):
    """
    Generates one synthetic subject. Deterministic given ``(params, seed)``.

    :rtype: tuple
    :returns: ``(GazeSequence, list of VADAnnotation, list of BehaviorAnnotation)``
    """
    rng = np.random.default_rng(seed)
    n_frames = int(round(params.duration_seconds * params.fps))
    dims = len(GAZE_COLUMNS)
    amplitudes = rng.uniform(params.amplitude_range[0], params.amplitude_range[1], (params.n_regimes, dims))
    frequencies = rng.uniform(params.frequency_range[0], params.frequency_range[1], (params.n_regimes, dims))
    phases = rng.uniform(0.0, 2.0 * np.pi, (params.n_regimes, dims))

    segments = _regime_segments(rng, n_frames, params)
    regime_of = np.zeros(n_frames, dtype=int)
    for start, end, regime in segments:
        regime_of[start:end] = regime
    t = np.arange(n_frames)[:, None] / params.fps
    gaze = BASE_GAZE + amplitudes[regime_of] * np.sin(2.0 * np.pi * frequencies[regime_of] * t + phases[regime_of])
    gaze = gaze + _ou_noise(rng, n_frames, params)

    vad = np.array([regime_vad(amplitudes[r], frequencies[r], params) for r in range(params.n_regimes)])
    face = np.zeros((n_frames, len(FACE_COLUMNS)))
    face[:, 1] = 2.0 * vad[regime_of, 1]
    face[:, 2] = 1.5 * vad[regime_of, 1]
    face[:, 3] = 2.0 * (1.0 - vad[regime_of, 0])
    face[:, 1:] += params.face_noise * rng.standard_normal((n_frames, len(FACE_COLUMNS) - 1))

    valid = np.ones(n_frames, dtype=bool)
    n_blinks = int(rng.poisson(params.blink_rate * params.duration_seconds))
    for start in np.sort(rng.integers(0, max(1, n_frames), n_blinks)):
        length = int(rng.integers(params.blink_frames[0], params.blink_frames[1] + 1))
        valid[start:start + length] = False
    gaze[~valid] = 0.0
    face[~valid, 0] = 3.0
    face = np.clip(face, 0.0, None)

    vad_annotations = []
    cursor = int(round(rng.uniform(*params.sentence_gap_seconds) * params.fps))
    while True:
        length = int(round(rng.uniform(*params.sentence_seconds) * params.fps))
        end = cursor + length
        if end > n_frames:
            break
        values = vad[regime_of[(cursor + end) // 2]] + params.label_noise * rng.standard_normal(3)
        values = np.clip(values, 0.0, 1.0)
        vad_annotations.append(VADAnnotation(cursor, end, VADLabel(*(float(v) for v in values))))
        cursor = end + int(round(rng.uniform(*params.sentence_gap_seconds) * params.fps))

    behavior_annotations = []
    for start, end, regime in segments:
        if np.mean(amplitudes[regime]) <= params.behavior_threshold:
            continue
        count = int(rng.poisson(params.behavior_rate * (end - start) / params.fps))
        behavior = regime_behavior(frequencies[regime], params)
        for frame in np.sort(rng.integers(start, end, count)):
            behavior_annotations.append(BehaviorAnnotation(int(frame), BehaviorLabel(behavior)))

    seq = GazeSequence(gaze=gaze, valid=valid, fps=params.fps, subject_id=subject_id, face_aux=face)
    return seq, vad_annotations, behavior_annotations


def write_annotations(vad_annotations, behavior_annotations, path):
    """
    Writes annotations as JSON lines ``{kind, start_frame, end_frame, values}``.
    """
    with open(path, 'w') as handle:
        for item in vad_annotations:
            record = {
                'kind': 'vad', 'start_frame': item.start_frame, 'end_frame': item.end_frame,
                'values': [item.label.valence, item.label.arousal, item.label.dominance],
            }
            handle.write(json.dumps(record, sort_keys=True) + '\n')
        for item in behavior_annotations:
            record = {'kind': 'behavior', 'start_frame': item.frame, 'end_frame': item.frame,
                      'values': item.label.behavior}
            handle.write(json.dumps(record, sort_keys=True) + '\n')


def read_annotations(path):
    """
    Reads a JSON-lines annotation file.

    :rtype: tuple
    :returns: ``(list of VADAnnotation, list of BehaviorAnnotation)``
    """
    vad_annotations, behavior_annotations = [], []
    with open(path, 'r') as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if record['kind'] == 'vad':
                    vad_annotations.append(VADAnnotation(
                        int(record['start_frame']), int(record['end_frame']), VADLabel(*record['values'])))
                elif record['kind'] == 'behavior':
                    behavior_annotations.append(BehaviorAnnotation(
                        int(record['start_frame']), BehaviorLabel(record['values'])))
                else:
                    raise ValueError('unknown kind {0!r}'.format(record['kind']))
            except (ValueError, KeyError, TypeError, ConfigError) as e:
                raise ParseError('bad annotation at {0} line {1}: {2}'.format(path, line_number, e))
    return vad_annotations, behavior_annotations


def write_manifest(entries, path):
    frame = pd.DataFrame(
        [[e.csv_path, e.annotation_path, e.subject_id, e.split] for e in entries], columns=list(MANIFEST_COLUMNS))
    frame.to_csv(path, index=False)


def read_manifest(path):
    """
    Reads a manifest CSV. Relative paths are resolved against the manifest's directory.
    """
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    for column in MANIFEST_COLUMNS:
        if column not in frame.columns:
            raise SchemaError('missing manifest column {0}'.format(column))
    root = os.path.dirname(os.path.abspath(path))
    return [
        ManifestEntry(
            csv_path=os.path.join(root, row.csv_path),
            annotation_path=os.path.join(root, row.annotation_path) if row.annotation_path else '',
            subject_id=row.subject_id,
            split=row.split,
        )
        for row in frame.itertuples(index=False)
    ]


def split_manifest(entries):
    """
    Splits manifest entries into training and validation lists.

    :raises: :class:`ConfigError <gaze_glass.exceptions.ConfigError>` when a split is empty or a subject
        appears in both splits
    """
    train = [e for e in entries if e.split == 'train']
    val = [e for e in entries if e.split == 'val']
    shared = sorted({e.subject_id for e in train} & {e.subject_id for e in val})
    if shared:
        raise ConfigError('validation subjects also appear in training: {0}'.format(', '.join(shared)))
    if not train:
        raise ConfigError('empty training split')
    if not val:
        raise ConfigError('empty validation split')
    return train, val


def synth_corpus(params, seed, out_dir):
    """
    Writes ``params.n_subjects`` synthetic subjects (CSV + annotations) and a manifest into ``out_dir``. The last
    ``params.val_subjects`` subjects form the validation split. Every subject gets its own spawned seed.

    :rtype: list of :class:`ManifestEntry`
    """
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(params.n_subjects)):
        subject_id = 'S{0:03d}'.format(i)
        seq, vad_annotations, behavior_annotations = synth_gaze(
            params, int(child.generate_state(1)[0]), subject_id=subject_id)
        csv_name = 'gaze_{0}.csv'.format(subject_id)
        annotation_name = 'annotations_{0}.jsonl'.format(subject_id)
        write_openface_csv(seq, os.path.join(out_dir, csv_name))
        write_annotations(vad_annotations, behavior_annotations, os.path.join(out_dir, annotation_name))
        split = 'val' if i >= params.n_subjects - params.val_subjects else 'train'
        entries.append(ManifestEntry(csv_name, annotation_name, subject_id, split))
        LOG.info('Synthesized subject %s (%d frames, %d VAD sentences, %d behavior events, split=%s)',
                 subject_id, len(seq), len(vad_annotations), len(behavior_annotations), split)
    write_manifest(entries, os.path.join(out_dir, 'manifest.csv'))
    return entries


def _vad_label(sample):
    label = sample.label if hasattr(sample, 'label') else sample[1]
    if not isinstance(label, VADLabel):
        raise ConfigError('upsampling needs VAD labels, got {0!r}'.format(label))
    return label


@dataclass(eq=False)
class UpsampleResult:
    """
    ``samples`` holds every input sample plus the duplicated tail samples, shuffled. ``empty_tail`` is the
    warning flag raised when no sample lies in the tail.
    """
    samples: list
    n_tail: int
    n_added: int
    empty_tail: bool


def tail_mask(labels, sd_threshold=2.0):
    """
    Flags labels whose Euclidean distance from the mean VAD has a z-score of at least ``sd_threshold``. The
    z-score is taken over the distribution of distances.
    """
    values = np.array([label.as_array() for label in labels])
    distances = np.linalg.norm(values - values.mean(axis=0), axis=1)
    spread = distances.std()
    if spread == 0:
        return np.zeros(len(labels), dtype=bool)
    return (distances - distances.mean()) / spread >= sd_threshold


def upsample_tail(samples, sd_threshold=2.0, target_ratio=1.0 / 3.0, seed=0):
    """
    Duplicates tail samples (sampling with replacement) until tail samples make up at least ``target_ratio`` of
    the result. Samples are ``(window, VADLabel)`` pairs or objects with a ``label`` attribute.

    :rtype: :class:`UpsampleResult`
    """
    samples = list(samples)
    if len(samples) < 2:
        raise ConfigError('upsampling needs at least 2 labels, got {0}'.format(len(samples)))
    if not 0.0 < target_ratio < 1.0:
        raise ConfigError('target_ratio must lie in (0, 1), got {0}'.format(target_ratio))
    tail = np.flatnonzero(tail_mask([_vad_label(s) for s in samples], sd_threshold))
    if not len(tail):
        LOG.warning('No VAD label lies %g standard deviations from the mean; nothing to upsample', sd_threshold)
        return UpsampleResult(samples=samples, n_tail=0, n_added=0, empty_tail=True)

    n_body = len(samples) - len(tail)
    wanted = math.ceil(target_ratio * n_body / (1.0 - target_ratio) - 1e-9)
    n_added = max(0, wanted - len(tail))
    rng = np.random.default_rng(seed)
    picks = rng.choice(tail, size=n_added, replace=True) if n_added else np.zeros(0, dtype=int)
    order = np.concatenate([np.arange(len(samples)), picks])
    order = order[rng.permutation(len(order))]
    return UpsampleResult(
        samples=[samples[i] for i in order], n_tail=len(tail) + n_added, n_added=n_added, empty_tail=False)


def label_windows(seq, annotations, input_seconds, stride_seconds=3.0):
    """
    Builds labeled windows from the frames immediately preceding each label instant. A VAD annotation yields one
    instant every ``stride_seconds`` inside its frame range; a behavior annotation yields its event frame.
    Instants with fewer than ``input_seconds`` of preceding frames are skipped. Invalid frames are filled by
    interpolation.

    :rtype: list of :class:`LabeledWindow`
    """
    if input_seconds not in INPUT_SECONDS_CHOICES:
        raise ConfigError('input_seconds must be one of {0}, got {1}'.format(INPUT_SECONDS_CHOICES, input_seconds))
    length = int(round(input_seconds * seq.fps))
    stride = max(1, int(round(stride_seconds * seq.fps)))
    filled = interpolate_invalid(seq)

    instants = []
    for annotation in annotations:
        if isinstance(annotation, VADAnnotation):
            instants.extend((p, annotation.label) for p in range(annotation.start_frame, annotation.end_frame, stride))
        else:
            instants.append((annotation.frame, annotation.label))

    windows = []
    skipped = 0
    for instant, label in instants:
        if instant - length < 0 or instant > len(seq):
            skipped += 1
            continue
        aux = None if filled.face_aux is None else filled.face_aux[instant - length:instant].copy()
        windows.append(LabeledWindow(
            input=filled.gaze[instant - length:instant].copy(), label=label, origin=(seq.subject_id, instant),
            face_aux=aux))
    if skipped:
        LOG.warning('Skipped %d label instants of %s without %gs of preceding gaze', skipped, seq.subject_id,
                    input_seconds)
    return windows


def load_labeled_dataset(entries, task, input_seconds, stride_seconds=3.0, fps=30.0, column_map=None):
    """
    Parses every manifest entry and returns the labeled windows of ``task`` (``vad`` or ``behavior``).
    """
    if task not in ('vad', 'behavior'):
        raise ConfigError('unknown task {0!r}'.format(task))
    dataset = []
    for entry in entries:
        seq = parse_openface_csv(entry.csv_path, column_map=column_map, fps=fps, subject_id=entry.subject_id)
        vad_annotations, behavior_annotations = read_annotations(entry.annotation_path)
        annotations = vad_annotations if task == 'vad' else behavior_annotations
        dataset.extend(label_windows(seq, annotations, input_seconds, stride_seconds))
    LOG.info('Built %d %s windows of %ss from %d subjects', len(dataset), task, input_seconds, len(entries))
    return dataset
