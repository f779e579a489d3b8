"""
Domain records shared across the package: gaze frames and sequences, windows, labels and manifest entries.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np

from .exceptions import ConfigError, ShapeError


GAZE_COLUMNS = ('gaze_0_x', 'gaze_0_y', 'gaze_0_z', 'gaze_1_x', 'gaze_1_y', 'gaze_1_z')
FACE_COLUMNS = ('AU45_r', 'AU01_r', 'AU02_r', 'AU04_r')
GAZE_DIMS = len(GAZE_COLUMNS)
BEHAVIOR_CLASSES = ('laugh', 'sigh', 'cry')
SPLITS = ('train', 'val')


@dataclass(frozen=True)
class GazeFrame:
    """
    One OpenFace frame.

    :type index: int
    :param index: 0-based frame number
    :type t: float
    :param t: Time of the frame in seconds
    :type gaze: tuple
    :param gaze: Left eye XYZ followed by right eye XYZ direction components
    :type valid: bool
    :param valid: False when OpenFace failed on this frame
    :type face_aux: tuple
    :param face_aux: Optional blink/eyebrow action-unit intensities
    """
    index: int
    t: float
    gaze: Tuple[float, ...]
    valid: bool = True
    face_aux: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if len(self.gaze) != GAZE_DIMS:
            raise ShapeError('gaze frame needs {0} components, got {1}'.format(GAZE_DIMS, len(self.gaze)))


@dataclass(eq=False)
class NormStats:
    """
    Per-dimension normalization statistics. ``clamped`` flags dimensions whose std was clamped to epsilon.
    """
    mean: np.ndarray
    std: np.ndarray
    clamped: np.ndarray


@dataclass(eq=False)
class GazeSequence:
    """
    A per-subject gaze recording stored column-wise. ``gaze`` is an (n, 6) array and ``valid`` an (n,) boolean
    array; frame ``i`` is at time ``i / fps``.
    """
    gaze: np.ndarray
    valid: np.ndarray
    fps: float = 30.0
    subject_id: str = ''
    face_aux: Optional[np.ndarray] = None
    norm_stats: Optional[NormStats] = None

    def __post_init__(self):
        self.gaze = np.asarray(self.gaze, dtype=np.float64).reshape(-1, GAZE_DIMS)
        self.valid = np.asarray(self.valid, dtype=bool).reshape(-1)
        if self.fps <= 0:
            raise ConfigError('fps must be positive, got {0}'.format(self.fps))
        if self.valid.shape[0] != self.gaze.shape[0]:
            raise ShapeError('valid flags {0} do not match gaze {1}'.format(self.valid.shape, self.gaze.shape))
        if self.face_aux is not None:
            self.face_aux = np.asarray(self.face_aux, dtype=np.float64)
            if self.face_aux.ndim != 2 or self.face_aux.shape[0] != self.gaze.shape[0]:
                raise ShapeError('face features {0} do not match gaze {1}'.format(
                    self.face_aux.shape, self.gaze.shape))

    def __len__(self):
        return self.gaze.shape[0]

    @property
    def times(self):
        return np.arange(len(self)) / self.fps

    @property
    def frames(self):
        """
        The sequence as a list of :class:`GazeFrame`.
        """
        aux = self.face_aux
        return [
            GazeFrame(
                index=i,
                t=i / self.fps,
                gaze=tuple(float(v) for v in self.gaze[i]),
                valid=bool(self.valid[i]),
                face_aux=None if aux is None else tuple(float(v) for v in aux[i]),
            )
            for i in range(len(self))
        ]

    @classmethod
    def from_frames(cls, frames, fps=30.0, subject_id=''):
        frames = list(frames)
        for expected, frame in enumerate(frames):
            if frame.index != expected:
                raise ShapeError('frame indices must be contiguous from 0, got {0} at position {1}'.format(
                    frame.index, expected))
        has_aux = bool(frames) and frames[0].face_aux is not None
        return cls(
            gaze=np.array([f.gaze for f in frames], dtype=np.float64).reshape(-1, GAZE_DIMS),
            valid=np.array([f.valid for f in frames], dtype=bool),
            fps=fps,
            subject_id=subject_id,
            face_aux=np.array([f.face_aux for f in frames], dtype=np.float64) if has_aux else None,
        )

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class WindowSpec:
    """
    Frame counts of a pretraining window. The defaults take 5 s in, 5 s out at 30 FPS with a stride of 151 frames,
    so no patch of a divisor size of 150 repeats across windows.
    """
    input_frames: int = 150
    output_frames: int = 150
    stride: int = 151

    def __post_init__(self):
        for name in ('input_frames', 'output_frames', 'stride'):
            if getattr(self, name) <= 0:
                raise ConfigError('{0} must be positive, got {1}'.format(name, getattr(self, name)))

    @property
    def span(self):
        return self.input_frames + self.output_frames


@dataclass(eq=False)
class GazeWindow:
    input: np.ndarray
    target: Optional[np.ndarray]
    origin: Tuple[str, int]


@dataclass(frozen=True)
class VADLabel:
    valence: float
    arousal: float
    dominance: float

    def __post_init__(self):
        for name in ('valence', 'arousal', 'dominance'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError('{0} must lie in [0, 1], got {1}'.format(name, value))

    def as_array(self):
        return np.array([self.valence, self.arousal, self.dominance], dtype=np.float64)


@dataclass(frozen=True)
class BehaviorLabel:
    behavior: str

    def __post_init__(self):
        if self.behavior not in BEHAVIOR_CLASSES:
            raise ConfigError('unknown behavior {0!r}, expected one of {1}'.format(self.behavior, BEHAVIOR_CLASSES))

    @property
    def index(self):
        return BEHAVIOR_CLASSES.index(self.behavior)


@dataclass(frozen=True)
class VADAnnotation:
    """
    A VAD label covering frames ``start_frame`` (inclusive) to ``end_frame`` (exclusive).
    """
    start_frame: int
    end_frame: int
    label: VADLabel


@dataclass(frozen=True)
class BehaviorAnnotation:
    frame: int
    label: BehaviorLabel


@dataclass(eq=False)
class LabeledWindow:
    """
    The gaze frames immediately preceding a label instant, paired with that label.
    """
    input: np.ndarray
    label: Union[VADLabel, BehaviorLabel]
    origin: Tuple[str, int]
    face_aux: Optional[np.ndarray] = None

    @property
    def task(self):
        return 'vad' if isinstance(self.label, VADLabel) else 'behavior'


@dataclass(frozen=True)
class ManifestEntry:
    csv_path: str
    annotation_path: str
    subject_id: str
    split: str = field(default='train')

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigError('unknown split {0!r} for subject {1}'.format(self.split, self.subject_id))
