"""
Dataset
Keypoint frame schema, JSONL ingestion/serialisation, participant-wise splits
and ground-truth gaze annotation.
"""

import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from gaze.errors import (
    DegenerateTarget, GazeError, MalformedRecord, NoValidKeypoints, TooFewSubjects, WrongKeypointCount,
)
from gaze.geometry import CameraIntrinsics, backproject, project

logger = logging.getLogger(__name__)

EYE_POINTS = 8
KEYPOINT_NAMES: Tuple[str, ...] = (
    ('nose', 'ear_L', 'ear_R')
    + tuple(f'eyeL_{i}' for i in range(EYE_POINTS))
    + tuple(f'eyeR_{i}' for i in range(EYE_POINTS))
)
NUM_KEYPOINTS = len(KEYPOINT_NAMES)
EYE_INDICES: Tuple[int, ...] = tuple(range(3, NUM_KEYPOINTS))

DEFAULT_DEPTH = 1.0
GAZE_VERSOR_LENGTH = 0.1
DEGENERATE_TARGET_DISTANCE = 1e-6

SOURCES = ('icub', 'realsense')

# Pose-estimator ingestion table: canonical name -> (model, index).
# Body indices follow BODY_25, face indices the 70-point face model. Each eye
# uses its 6 contour points, the pupil and the inner brow point.
OPENPOSE_INDEX_MAP: Dict[str, Tuple[str, int]] = {
    'nose': ('body', 0),
    'ear_L': ('body', 18),
    'ear_R': ('body', 17),
    **{f'eyeL_{i}': ('face', 42 + i) for i in range(6)},
    'eyeL_6': ('face', 69),
    'eyeL_7': ('face', 22),
    **{f'eyeR_{i}': ('face', 36 + i) for i in range(6)},
    'eyeR_6': ('face', 68),
    'eyeR_7': ('face', 21),
}


class GazeClass(str, Enum):
    """Where the person is looking."""
    EYE_CONTACT = 'eye_contact'
    ICUB = 'icub'
    WORKSPACE = 'workspace'
    OTHER = 'other'


# Fixed order for model outputs and tie-breaking.
CLASS_ORDER: Tuple[GazeClass, ...] = (
    GazeClass.EYE_CONTACT, GazeClass.OTHER, GazeClass.ICUB, GazeClass.WORKSPACE,
)
CLASS_INDEX: Dict[GazeClass, int] = {c: i for i, c in enumerate(CLASS_ORDER)}


def encode_labels(labels: Iterable[Union[GazeClass, str]]) -> np.ndarray:
    """GazeClass labels -> indices into CLASS_ORDER."""
    return np.array([CLASS_INDEX[GazeClass(label)] for label in labels], dtype=int)


def decode_label(index: int) -> GazeClass:
    return CLASS_ORDER[int(index)]


@dataclass(frozen=True)
class Keypoint:
    name: str
    x: float
    y: float
    k: float

    @property
    def valid(self) -> bool:
        return self.k > 0


@dataclass(frozen=True)
class KeypointFrame:
    """One frame of facial keypoints with camera metadata and optional ground truth."""
    frame_id: str
    subject_id: str
    camera: CameraIntrinsics
    keypoints: Tuple[Keypoint, ...]
    label: Optional[GazeClass] = None
    target_ccs: Optional[Tuple[float, float, float]] = None
    centroid_depth: Optional[float] = None
    source: str = 'icub'
    extras: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.keypoints) != NUM_KEYPOINTS:
            raise WrongKeypointCount(
                f"frame {self.frame_id}: expected {NUM_KEYPOINTS} keypoints, got {len(self.keypoints)}"
            )
        for expected, kp in zip(KEYPOINT_NAMES, self.keypoints):
            if kp.name != expected:
                raise MalformedRecord(f"frame {self.frame_id}: keypoint '{kp.name}' out of canonical order, expected '{expected}'")
            if not 0.0 <= kp.k <= 1.0:
                raise MalformedRecord(f"frame {self.frame_id}: confidence {kp.k} of '{kp.name}' outside [0, 1]")
        if self.label is not None and not isinstance(self.label, GazeClass):
            object.__setattr__(self, 'label', GazeClass(self.label))
        if self.target_ccs is not None:
            object.__setattr__(self, 'target_ccs', tuple(float(v) for v in self.target_ccs))
        if self.source not in SOURCES:
            raise MalformedRecord(f"frame {self.frame_id}: unknown camera source '{self.source}'")

    def as_array(self) -> np.ndarray:
        """(19, 3) array of x, y, k."""
        return np.array([[kp.x, kp.y, kp.k] for kp in self.keypoints], dtype=float)

    def depth(self, default: float = DEFAULT_DEPTH) -> float:
        """Measured centroid depth when available, else the constant assumption."""
        return self.centroid_depth if self.centroid_depth is not None else default


def make_keypoints(xyk: np.ndarray) -> Tuple[Keypoint, ...]:
    """Build the canonical keypoint tuple from a (19, 3) array."""
    xyk = np.asarray(xyk, dtype=float)
    if xyk.shape != (NUM_KEYPOINTS, 3):
        raise WrongKeypointCount(f"expected ({NUM_KEYPOINTS}, 3) keypoint array, got {xyk.shape}")
    return tuple(Keypoint(name, float(x), float(y), float(k)) for name, (x, y, k) in zip(KEYPOINT_NAMES, xyk))


def from_openpose(frame_id: str, subject_id: str, camera: CameraIntrinsics,
                  body: np.ndarray, face: np.ndarray, **kwargs) -> KeypointFrame:
    """Frame from raw pose-estimator arrays (BODY_25 (25, 3) and face (70, 3))."""
    arrays = {'body': np.asarray(body, dtype=float), 'face': np.asarray(face, dtype=float)}
    rows = []
    for name in KEYPOINT_NAMES:
        model, index = OPENPOSE_INDEX_MAP[name]
        if index >= len(arrays[model]):
            raise MalformedRecord(f"{model} array too short for index {index} ('{name}')")
        x, y, k = arrays[model][index]
        rows.append((x, y, min(max(k, 0.0), 1.0)))
    return KeypointFrame(frame_id, subject_id, camera, make_keypoints(np.array(rows)), **kwargs)


@dataclass(frozen=True)
class GazeAnnotation:
    """Ground-truth gaze for one frame."""
    gaze2d: Tuple[float, float]
    centroid_px: Tuple[float, float]
    gaze3d: Tuple[float, float, float]
    target_ccs: Tuple[float, float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'gaze2d': list(self.gaze2d),
            'centroid_px': list(self.centroid_px),
            'gaze3d': list(self.gaze3d),
            'target_ccs': list(self.target_ccs),
        }


def face_centroid(frame: KeypointFrame) -> np.ndarray:
    """Mean pixel position of the keypoints with positive confidence."""
    xyk = frame.as_array()
    valid = xyk[:, 2] > 0
    if not np.any(valid):
        raise NoValidKeypoints(f"frame {frame.frame_id} has no keypoint with k > 0")
    return xyk[valid, :2].mean(axis=0)


def annotate_gaze(frame: KeypointFrame, target_ccs: Optional[Sequence[float]] = None,
                  depth: Optional[float] = None) -> GazeAnnotation:
    """Gaze versor from the head centroid to the target, and its 10 cm image projection."""
    if target_ccs is None:
        target_ccs = frame.target_ccs
    if target_ccs is None:
        raise DegenerateTarget(f"frame {frame.frame_id} has no gaze target")
    if depth is None:
        depth = frame.depth()

    cam = frame.camera
    centroid_px = face_centroid(frame)
    centroid3d = backproject(centroid_px, depth, cam)
    target = np.asarray(target_ccs, dtype=float)
    offset = target - centroid3d
    distance = float(np.linalg.norm(offset))
    if distance < DEGENERATE_TARGET_DISTANCE:
        raise DegenerateTarget(f"frame {frame.frame_id}: target coincides with head centroid")
    gaze3d = offset / distance
    tip_px = project(centroid3d + GAZE_VERSOR_LENGTH * gaze3d, cam)
    gaze2d = tip_px - project(centroid3d, cam)
    return GazeAnnotation(
        gaze2d=(float(gaze2d[0]), float(gaze2d[1])),
        centroid_px=(float(centroid_px[0]), float(centroid_px[1])),
        gaze3d=tuple(float(v) for v in gaze3d),
        target_ccs=tuple(float(v) for v in target),
    )


@dataclass(frozen=True)
class Split:
    train_subjects: Tuple[str, ...]
    test_subjects: Tuple[str, ...]


@dataclass(frozen=True)
class SplitPlan:
    """k random participant-wise train/test partitions."""
    k: int
    ratio: Tuple[int, int]
    seed: int
    splits: Tuple[Split, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'k': self.k,
            'ratio': list(self.ratio),
            'seed': self.seed,
            'splits': [
                {'train_subjects': list(s.train_subjects), 'test_subjects': list(s.test_subjects)}
                for s in self.splits
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SplitPlan":
        return cls(
            k=int(data['k']),
            ratio=tuple(data['ratio']),
            seed=int(data['seed']),
            splits=tuple(
                Split(tuple(s['train_subjects']), tuple(s['test_subjects'])) for s in data['splits']
            ),
        )


def split_by_subject(frames_or_subjects: Iterable[Union[KeypointFrame, str]], k: int = 5,
                     ratio: Tuple[int, int] = (19, 5), seed: int = 0) -> SplitPlan:
    """Draw k independent participant-wise splits with the given train:test ratio."""
    subjects = sorted({
        item.subject_id if isinstance(item, KeypointFrame) else str(item)
        for item in frames_or_subjects
    })
    if len(subjects) < 2:
        raise TooFewSubjects(f"need at least 2 subjects to split, got {len(subjects)}")
    n = len(subjects)
    n_test = int(round(n * ratio[1] / float(ratio[0] + ratio[1])))
    n_test = min(max(n_test, 1), n - 1)

    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(k):
        order = rng.permutation(n)
        test = tuple(sorted(subjects[i] for i in order[:n_test]))
        train = tuple(sorted(subjects[i] for i in order[n_test:]))
        splits.append(Split(train, test))
    logger.info(f"Split {n} subjects into {k} plans of {n - n_test} train / {n_test} test")
    return SplitPlan(k=k, ratio=tuple(ratio), seed=seed, splits=tuple(splits))


def select_frames(frames: Iterable[KeypointFrame], subjects: Iterable[str],
                  sources: Optional[Iterable[str]] = None) -> List[KeypointFrame]:
    """Frames of the given subjects, optionally restricted to camera sources."""
    subjects = set(subjects)
    sources = set(sources) if sources is not None else None
    return [
        f for f in frames
        if f.subject_id in subjects and (sources is None or f.source in sources)
    ]


# JSONL serialisation

_KNOWN_KEYS = (
    'frame_id', 'subject_id', 'camera', 'keypoints', 'label',
    'target_ccs', 'centroid_depth', 'source',
)


def frame_to_record(frame: KeypointFrame) -> Dict[str, Any]:
    record: Dict[str, Any] = {
        'frame_id': frame.frame_id,
        'subject_id': frame.subject_id,
        'camera': frame.camera.to_dict(),
        'keypoints': [{'name': kp.name, 'x': kp.x, 'y': kp.y, 'k': kp.k} for kp in frame.keypoints],
    }
    if frame.label is not None:
        record['label'] = frame.label.value
    if frame.target_ccs is not None:
        record['target_ccs'] = list(frame.target_ccs)
    if frame.centroid_depth is not None:
        record['centroid_depth'] = frame.centroid_depth
    if frame.source != 'icub':
        record['source'] = frame.source
    for key, value in frame.extras.items():
        record[key] = value
    return record


def frame_from_record(record: Dict[str, Any], line: Optional[int] = None,
                      strict: bool = False) -> KeypointFrame:
    if not isinstance(record, dict):
        raise MalformedRecord("record is not an object", line)
    unknown = {key: record[key] for key in record if key not in _KNOWN_KEYS}
    if unknown and strict:
        raise MalformedRecord(f"unknown fields {sorted(unknown)}", line)
    try:
        raw_keypoints = record['keypoints']
        if len(raw_keypoints) != NUM_KEYPOINTS:
            raise WrongKeypointCount(f"expected {NUM_KEYPOINTS} keypoints, got {len(raw_keypoints)}", line)
        keypoints = tuple(
            Keypoint(str(kp['name']), float(kp['x']), float(kp['y']), float(kp['k']))
            for kp in raw_keypoints
        )
        label = record.get('label')
        target = record.get('target_ccs')
        depth = record.get('centroid_depth')
        return KeypointFrame(
            frame_id=str(record['frame_id']),
            subject_id=str(record['subject_id']),
            camera=CameraIntrinsics.from_dict(record['camera']),
            keypoints=keypoints,
            label=GazeClass(label) if label is not None else None,
            target_ccs=tuple(float(v) for v in target) if target is not None else None,
            centroid_depth=float(depth) if depth is not None else None,
            source=str(record.get('source', 'icub')),
            extras=unknown,
        )
    except WrongKeypointCount as e:
        if e.line is None:
            raise WrongKeypointCount(str(e), line) from e
        raise
    except MalformedRecord as e:
        if e.line is None:
            raise MalformedRecord(str(e), line) from e
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise MalformedRecord(f"{type(e).__name__}: {e}", line) from e


@dataclass(frozen=True)
class JsonlEntry:
    """One non-blank JSONL line: the parsed frame, or the error that line raised."""
    line: int
    frame_id: str
    frame: Optional[KeypointFrame] = None
    error: Optional[GazeError] = None


def scan_jsonl(path: str, strict: bool = False) -> Iterator[JsonlEntry]:
    """Parse a JSONL file line by line; a bad record yields an error entry instead of stopping."""
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            frame_id = f"line {line_no}"
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                yield JsonlEntry(line_no, frame_id, error=MalformedRecord(f"invalid JSON: {e.msg}", line_no))
                continue
            if isinstance(record, dict) and 'frame_id' in record:
                frame_id = str(record['frame_id'])
            try:
                frame = frame_from_record(record, line_no, strict)
            except GazeError as e:
                yield JsonlEntry(line_no, frame_id, error=e)
                continue
            yield JsonlEntry(line_no, frame_id, frame=frame)


def iter_jsonl(path: str, strict: bool = False) -> Iterator[KeypointFrame]:
    """Stream frames from a JSONL file, one record per line; blank lines are skipped."""
    for entry in scan_jsonl(path, strict):
        if entry.error is not None:
            raise entry.error
        yield entry.frame


def read_jsonl(path: str, strict: bool = False) -> List[KeypointFrame]:
    frames = list(iter_jsonl(path, strict))
    logger.info(f"Loaded {len(frames)} frames from {path}")
    return frames


def write_jsonl(path: str, frames: Iterable[KeypointFrame]) -> int:
    """Write frames one per line; returns the number written."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for frame in frames:
            f.write(json.dumps(frame_to_record(frame)) + '\n')
            count += 1
    logger.info(f"Wrote {count} frames to {path}")
    return count


def class_counts(frames: Iterable[KeypointFrame]) -> Dict[str, int]:
    """Label histogram in CLASS_ORDER; unlabelled frames are counted under 'unlabelled'."""
    counts = {c.value: 0 for c in CLASS_ORDER}
    for frame in frames:
        key = frame.label.value if frame.label is not None else 'unlabelled'
        counts[key] = counts.get(key, 0) + 1
    return counts
