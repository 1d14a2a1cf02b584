"""
Synthetic Scene Generator
Parametric head, marker board and robot-body markers producing labelled
keypoint frames with exact ground truth.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.neighbors import NearestCentroid

from gaze.dataset import (
    CLASS_ORDER, DEFAULT_DEPTH, EYE_INDICES, NUM_KEYPOINTS, GazeClass, KeypointFrame,
    encode_labels, face_centroid, make_keypoints,
)
from gaze.errors import ConfigError, TooFewSamples
from gaze.features import build_feature_matrix
from gaze.geometry import (
    BoardLayout, CameraIntrinsics, Pose, angular_error_deg, apply_pose, backproject,
    board_marker_point, normalize, project,
)

logger = logging.getLogger(__name__)

ROBOT_MARKERS: Tuple[Tuple[float, float, float], ...] = (
    (0.12, 0.12, 0.05),
    (-0.12, 0.12, 0.05),
    (0.2, 0.3, 0.15),
    (-0.2, 0.3, 0.15),
    (0.0, 0.2, 0.02),
)
CONTOUR_POINTS = 6
MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class HeadModel:
    """Face points in the head frame (x right, y down, the face looks along -z).

    The left eye and ear sit at +x.
    """
    ear_half_width: float = 0.075
    eye_half_width: float = 0.032
    eye_height: float = -0.03
    eye_depth: float = -0.075
    eyeball_radius: float = 0.012
    nose: Tuple[float, float, float] = (0.0, 0.015, -0.105)
    contour_rx: float = 0.014
    contour_ry: float = 0.006
    contour_front: float = 0.008
    brow_offset: Tuple[float, float, float] = (0.0, -0.02, -0.01)
    scale: float = 1.0

    def eyeball_centers(self) -> np.ndarray:
        """(2, 3) left then right, scaled."""
        return self.scale * np.array([
            [self.eye_half_width, self.eye_height, self.eye_depth],
            [-self.eye_half_width, self.eye_height, self.eye_depth],
        ])

    def points(self, target_head: Sequence[float]) -> np.ndarray:
        """(19, 3) canonical keypoints with both pupils turned toward ``target_head``."""
        s = self.scale
        target = np.asarray(target_head, dtype=float)
        pts = np.zeros((NUM_KEYPOINTS, 3))
        pts[0] = s * np.asarray(self.nose)
        pts[1] = s * np.array([self.ear_half_width, 0.0, 0.0])
        pts[2] = s * np.array([-self.ear_half_width, 0.0, 0.0])
        angles = np.arange(CONTOUR_POINTS) * 2.0 * math.pi / CONTOUR_POINTS
        for eye, (centre, mirror) in enumerate(zip(self.eyeball_centers(), (1.0, -1.0))):
            base = 3 + eye * 8
            for i, theta in enumerate(angles):
                pts[base + i] = centre + s * np.array([
                    mirror * self.contour_rx * math.cos(theta),
                    self.contour_ry * math.sin(theta),
                    -self.contour_front,
                ])
            pts[base + 6] = centre + s * self.eyeball_radius * normalize(target - centre)
            pts[base + 7] = centre + s * np.asarray(self.brow_offset)
        return pts


@dataclass(frozen=True)
class SceneConfig:
    fx: float = 600.0
    fy: float = 600.0
    width: int = 640
    height: int = 480
    realsense_fx: float = 615.0
    realsense_fy: float = 615.0
    realsense_fraction: float = 0.2
    head_position: Tuple[float, float, float] = (0.0, -0.05, 1.0)
    head_position_std: Tuple[float, float, float] = (0.05, 0.03, 0.05)
    head_jitter: float = 0.01
    head_follow: float = 0.6
    head_follow_std: float = 0.1
    board_rotvec: Tuple[float, float, float] = (0.0, math.pi / math.sqrt(2.0), -math.pi / math.sqrt(2.0))
    board_translation: Tuple[float, float, float] = (0.14, 0.35, 0.81)
    board_rows: int = 4
    board_cols: int = 5
    marker_size: float = 0.07
    marker_gap: float = 0.07
    origin_marker_id: int = 16
    robot_markers: Tuple[Tuple[float, float, float], ...] = ROBOT_MARKERS
    n_eye_contact: int = 400
    n_icub: int = 300
    n_workspace: int = 500
    n_other: int = 250
    n_subjects: int = 24
    noise_std: float = 1.5
    tau: float = 10.0
    eye_dropout: float = 0.05
    subject_scale_std: float = 0.05
    subject_shape_std: float = 0.004
    subject_pose_bias_deg: float = 4.0
    other_min_angle_deg: float = 25.0
    other_distance: Tuple[float, float] = (1.5, 3.0)
    default_depth: float = DEFAULT_DEPTH
    seed: int = 0

    def __post_init__(self):
        for name in ('head_position', 'head_position_std', 'board_rotvec', 'board_translation', 'other_distance'):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, 'robot_markers', tuple(tuple(float(v) for v in m) for m in self.robot_markers))
        counts = (self.n_eye_contact, self.n_icub, self.n_workspace, self.n_other)
        if any(n < 0 for n in counts):
            raise ConfigError("sample counts must be non-negative")
        if self.n_subjects < 1:
            raise ConfigError("at least one subject is required")
        if self.noise_std < 0 or self.tau <= 0:
            raise ConfigError("noise_std must be >= 0 and tau > 0")
        if not (0.0 <= self.eye_dropout <= 1.0 and 0.0 <= self.realsense_fraction <= 1.0):
            raise ConfigError("eye_dropout and realsense_fraction must lie in [0, 1]")
        if len(self.robot_markers) == 0:
            raise ConfigError("at least one robot marker is required")

    @property
    def total(self) -> int:
        return self.n_eye_contact + self.n_icub + self.n_workspace + self.n_other

    def camera(self, source: str = 'icub') -> CameraIntrinsics:
        fx, fy = (self.fx, self.fy) if source == 'icub' else (self.realsense_fx, self.realsense_fy)
        return CameraIntrinsics(fx, fy, self.width / 2.0, self.height / 2.0, self.width, self.height)

    def board_layout(self) -> BoardLayout:
        return BoardLayout(self.board_rows, self.board_cols, self.marker_size, self.marker_gap, self.origin_marker_id)

    def board_pose(self) -> Pose:
        return Pose(self.board_rotvec, self.board_translation)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = [list(v) if isinstance(v, tuple) else v for v in value]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown scene keys {unknown}")
        return cls(**data)


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str
    head: HeadModel
    offset: np.ndarray
    yaw_bias: float
    pitch_bias: float


@dataclass
class SyntheticSample:
    """A generated frame together with the generator's own ground truth."""
    frame: KeypointFrame
    gaze3d: np.ndarray
    centroid3d: np.ndarray
    depth: float
    points_ccs: np.ndarray
    eyeball_centers_ccs: np.ndarray
    head_rotation: np.ndarray = field(repr=False)


def make_subjects(cfg: SceneConfig, rng: np.random.Generator) -> List[SubjectProfile]:
    subjects = []
    bias = math.radians(cfg.subject_pose_bias_deg)
    for j in range(cfg.n_subjects):
        head = replace(
            HeadModel(),
            scale=max(0.5, 1.0 + rng.normal(0.0, cfg.subject_scale_std)),
            eye_height=HeadModel.eye_height + rng.normal(0.0, cfg.subject_shape_std),
            eye_half_width=HeadModel.eye_half_width + rng.normal(0.0, cfg.subject_shape_std / 2.0),
        )
        subjects.append(SubjectProfile(
            subject_id=f"S{j:02d}",
            head=head,
            offset=rng.normal(0.0, cfg.head_position_std),
            yaw_bias=float(rng.normal(0.0, bias)),
            pitch_bias=float(rng.normal(0.0, bias)),
        ))
    return subjects


def _reference_targets(cfg: SceneConfig) -> np.ndarray:
    layout, pose = cfg.board_layout(), cfg.board_pose()
    board = [apply_pose(pose, board_marker_point(layout, mid)) for mid in layout.marker_ids]
    return np.vstack([np.zeros((1, 3)), np.asarray(cfg.robot_markers), np.asarray(board)])


def choose_target(label: GazeClass, head_pos: np.ndarray, cfg: SceneConfig,
                  rng: np.random.Generator, references: Optional[np.ndarray] = None) -> np.ndarray:
    """Gaze target in camera coordinates for a class."""
    if label is GazeClass.EYE_CONTACT:
        return np.zeros(3)
    if label is GazeClass.ICUB:
        return np.asarray(cfg.robot_markers[rng.integers(len(cfg.robot_markers))], dtype=float)
    if label is GazeClass.WORKSPACE:
        layout = cfg.board_layout()
        marker = layout.marker_ids[rng.integers(len(layout.marker_ids))]
        return apply_pose(cfg.board_pose(), board_marker_point(layout, marker))

    references = references if references is not None else _reference_targets(cfg)
    for _ in range(MAX_REJECTIONS):
        direction = normalize(rng.normal(size=3))
        # keep targets on the camera side of the head
        if direction[2] > 0.2:
            continue
        if all(angular_error_deg(direction, ref - head_pos) >= cfg.other_min_angle_deg for ref in references):
            return head_pos + rng.uniform(*cfg.other_distance) * direction
    raise ConfigError(f"no 'other' target found {cfg.other_min_angle_deg} deg away from the scene targets")


def head_rotation(head_pos: np.ndarray, target: np.ndarray, follow: float,
                  yaw_bias: float = 0.0, pitch_bias: float = 0.0) -> np.ndarray:
    """Head orientation turned ``follow`` of the way from the camera toward the target."""
    to_camera = normalize(-head_pos)
    to_target = normalize(target - head_pos)
    facing = normalize((1.0 - follow) * to_camera + follow * to_target)
    yaw = math.atan2(-facing[0], -facing[2]) + yaw_bias
    pitch = math.asin(max(-1.0, min(1.0, facing[1]))) + pitch_bias
    return Rotation.from_euler('YX', [yaw, pitch]).as_matrix()


def _render(points_ccs: np.ndarray, cam: CameraIntrinsics, cfg: SceneConfig,
            rng: np.random.Generator) -> np.ndarray:
    xyk = np.zeros((NUM_KEYPOINTS, 3))
    for i, p in enumerate(points_ccs):
        xyk[i, :2] = project(p, cam)
    noise = rng.normal(0.0, cfg.noise_std, size=(NUM_KEYPOINTS, 2)) if cfg.noise_std > 0 else np.zeros((NUM_KEYPOINTS, 2))
    xyk[:, :2] += noise
    xyk[:, 2] = np.clip(np.exp(-np.sum(noise ** 2, axis=1) / cfg.tau), 0.0, 1.0)
    if rng.random() < cfg.eye_dropout:
        xyk[list(EYE_INDICES)] = 0.0
    return xyk


def generate_samples(cfg: SceneConfig) -> List[SyntheticSample]:
    """Frames plus internal ground truth, deterministic in ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    subjects = make_subjects(cfg, rng)
    references = _reference_targets(cfg)
    labels = (
        [GazeClass.EYE_CONTACT] * cfg.n_eye_contact + [GazeClass.ICUB] * cfg.n_icub
        + [GazeClass.WORKSPACE] * cfg.n_workspace + [GazeClass.OTHER] * cfg.n_other
    )
    labels = [labels[i] for i in rng.permutation(len(labels))]
    base = np.asarray(cfg.head_position)

    samples = []
    for index, label in enumerate(labels):
        subject = subjects[rng.integers(len(subjects))]
        head_pos = base + subject.offset + rng.normal(0.0, cfg.head_jitter, size=3)
        source = 'realsense' if rng.random() < cfg.realsense_fraction else 'icub'
        target = choose_target(label, head_pos, cfg, rng, references)
        follow = float(np.clip(cfg.head_follow + rng.normal(0.0, cfg.head_follow_std), 0.0, 1.0))
        R = head_rotation(head_pos, target, follow, subject.yaw_bias, subject.pitch_bias)

        points_ccs = subject.head.points(R.T @ (target - head_pos)) @ R.T + head_pos
        cam = cfg.camera(source)
        xyk = _render(points_ccs, cam, cfg, rng)
        valid = xyk[:, 2] > 0
        centroid_depth = float(points_ccs[valid, 2].mean()) if source == 'realsense' else None

        frame = KeypointFrame(
            frame_id=f"syn{index:05d}",
            subject_id=subject.subject_id,
            camera=cam,
            keypoints=make_keypoints(xyk),
            label=label,
            target_ccs=tuple(float(v) for v in target),
            centroid_depth=centroid_depth,
            source=source,
        )
        depth = frame.depth(cfg.default_depth)
        centroid3d = backproject(face_centroid(frame), depth, cam)
        samples.append(SyntheticSample(
            frame=frame,
            gaze3d=normalize(target - centroid3d),
            centroid3d=centroid3d,
            depth=depth,
            points_ccs=points_ccs,
            eyeball_centers_ccs=subject.head.eyeball_centers() @ R.T + head_pos,
            head_rotation=R,
        ))
    logger.info(f"Generated {len(samples)} synthetic frames for {cfg.n_subjects} subjects (seed {cfg.seed})")
    return samples


def generate_dataset(cfg: SceneConfig) -> List[KeypointFrame]:
    return [sample.frame for sample in generate_samples(cfg)]


@dataclass
class SeparabilityReport:
    """Cross-validated nearest-centroid accuracy: a floor any classifier should beat."""
    accuracy: float
    fold_accuracies: List[float]
    n_samples: int
    class_counts: Dict[str, int]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy': self.accuracy,
            'fold_accuracies': self.fold_accuracies,
            'n_samples': self.n_samples,
            'class_counts': self.class_counts,
        }


def separability_from_features(X: np.ndarray, y: np.ndarray, folds: int = 5, seed: int = 0) -> SeparabilityReport:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    counts = np.bincount(y, minlength=len(CLASS_ORDER))
    present = counts[counts > 0]
    if len(present) < 2 or present.min() < folds:
        raise TooFewSamples(f"nearest-centroid report needs 2+ classes with {folds}+ samples each")
    cv = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    scores = cross_val_score(NearestCentroid(), X, y, cv=cv)
    return SeparabilityReport(
        accuracy=float(np.mean(scores)),
        fold_accuracies=[float(s) for s in scores],
        n_samples=len(y),
        class_counts={CLASS_ORDER[i].value: int(n) for i, n in enumerate(counts)},
    )


def class_separability_report(frames: Sequence[KeypointFrame], folds: int = 5, seed: int = 0) -> SeparabilityReport:
    labelled = [f for f in frames if f.label is not None]
    report = separability_from_features(build_feature_matrix(labelled), encode_labels(f.label for f in labelled), folds, seed)
    logger.info(f"Nearest-centroid separability: {report.accuracy:.4f} over {report.n_samples} frames")
    return report
