"""
Gaze Pipeline
Two-layer inference (classifier, then the regressor for workspace frames only)
and reconstruction of the 3D gaze direction on a virtual sphere around the face.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from gaze.dataset import DEFAULT_DEPTH, GAZE_VERSOR_LENGTH, GazeClass, KeypointFrame, annotate_gaze
from gaze.errors import ErrorHandler, GazeError
from gaze.features import normalize_keypoints
from gaze.geometry import CameraIntrinsics, backproject, normalize, ray_sphere_intersect
from gaze.regressor import CguRegressor, forward as regressor_forward

logger = logging.getLogger(__name__)

SPHERE_RADIUS = GAZE_VERSOR_LENGTH


class ReconstructionFlag(str, Enum):
    OK = 'ok'
    TANGENT_FALLBACK = 'tangent_fallback'
    NONE = 'none'


class GazeClassifier(Protocol):
    def predict(self, x: np.ndarray) -> Tuple[GazeClass, float]: ...


@dataclass(frozen=True)
class PipelineResult:
    """Per-frame output. A failed frame carries only ``frame_id`` and ``error``."""
    frame_id: str
    predicted_class: Optional[GazeClass] = None
    class_confidence: Optional[float] = None
    gaze2d: Optional[Tuple[float, float]] = None
    sigma: Optional[float] = None
    gaze3d: Optional[Tuple[float, float, float]] = None
    reconstruction_flag: ReconstructionFlag = ReconstructionFlag.NONE
    error: Optional[str] = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> Dict[str, Any]:
        if self.failed:
            return {'frame_id': self.frame_id, 'error': self.error}
        record: Dict[str, Any] = {
            'frame_id': self.frame_id,
            'predicted_class': self.predicted_class.value,
            'class_confidence': self.class_confidence,
            'reconstruction_flag': self.reconstruction_flag.value,
        }
        if self.gaze2d is not None:
            record['gaze2d'] = list(self.gaze2d)
            record['sigma'] = self.sigma
            record['gaze3d'] = list(self.gaze3d)
        return record

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PipelineResult":
        if 'error' in data:
            return cls(frame_id=data['frame_id'], error=data['error'])
        gaze2d = data.get('gaze2d')
        gaze3d = data.get('gaze3d')
        return cls(
            frame_id=data['frame_id'],
            predicted_class=GazeClass(data['predicted_class']),
            class_confidence=float(data['class_confidence']),
            gaze2d=tuple(gaze2d) if gaze2d is not None else None,
            sigma=data.get('sigma'),
            gaze3d=tuple(gaze3d) if gaze3d is not None else None,
            reconstruction_flag=ReconstructionFlag(data.get('reconstruction_flag', 'none')),
        )


def reconstruct_3d(gaze2d: Sequence[float], centroid_px: Sequence[float], cam: CameraIntrinsics,
                   depth: float, radius: float = SPHERE_RADIUS) -> Tuple[np.ndarray, ReconstructionFlag]:
    """Unit gaze direction from a 2D gaze vector.

    The ray through the gaze tip pixel is intersected with a sphere of
    ``radius`` around the back-projected centroid; the nearer root is used.
    On a miss the ray point closest to the centre is pushed radially onto
    the sphere and the result is flagged tangent_fallback.
    """
    centre = backproject(centroid_px, depth, cam)
    tip_px = np.asarray(centroid_px, dtype=float) + np.asarray(gaze2d, dtype=float)
    direction = normalize(backproject(tip_px, 1.0, cam))
    roots = ray_sphere_intersect(np.zeros(3), direction, centre, radius)
    if roots:
        point = roots[0] * direction
        flag = ReconstructionFlag.OK
    else:
        closest = float(direction @ centre) * direction
        point = centre + radius * normalize(closest - centre)
        flag = ReconstructionFlag.TANGENT_FALLBACK
    return normalize(point - centre), flag


class GazePipeline:
    """Runs frames through the classifier and, for workspace frames, the regressor."""

    def __init__(self, classifier: GazeClassifier, regressor: Optional[CguRegressor] = None,
                 depth: float = DEFAULT_DEPTH, radius: float = SPHERE_RADIUS,
                 gaze_passthrough: bool = False, error_handler: Optional[ErrorHandler] = None):
        if regressor is None and not gaze_passthrough:
            raise ValueError("a regressor is required unless gaze_passthrough is set")
        self.classifier = classifier
        self.regressor = regressor
        self.depth = depth
        self.radius = radius
        self.gaze_passthrough = gaze_passthrough
        self.error_handler = error_handler or ErrorHandler()

    def _gaze2d(self, frame: KeypointFrame, fv: np.ndarray, depth: float) -> Tuple[Tuple[float, float], Optional[float]]:
        if self.gaze_passthrough:
            return annotate_gaze(frame, depth=depth).gaze2d, None
        gx, gy, sigma = regressor_forward(self.regressor, fv)
        return (gx, gy), sigma

    def run(self, frame: KeypointFrame) -> PipelineResult:
        try:
            fv, centroid, _ = normalize_keypoints(frame.as_array(), frame.frame_id)
            predicted, confidence = self.classifier.predict(fv)
            if predicted is not GazeClass.WORKSPACE:
                return PipelineResult(frame.frame_id, predicted, confidence)
            depth = frame.depth(self.depth)
            gaze2d, sigma = self._gaze2d(frame, fv, depth)
            gaze3d, flag = reconstruct_3d(gaze2d, centroid, frame.camera, depth, self.radius)
            return PipelineResult(
                frame_id=frame.frame_id,
                predicted_class=predicted,
                class_confidence=confidence,
                gaze2d=(float(gaze2d[0]), float(gaze2d[1])),
                sigma=sigma,
                gaze3d=tuple(float(v) for v in gaze3d),
                reconstruction_flag=flag,
            )
        except GazeError as e:
            self.error_handler.handle(e, f"frame {frame.frame_id}")
            return PipelineResult(frame.frame_id, error=self.error_handler.failure_message(e))

    def run_batch(self, frames: Sequence[KeypointFrame], workers: int = 1) -> List[PipelineResult]:
        """Results in input order; failed frames become failure records."""
        if workers <= 1 or len(frames) < 2:
            results = [self.run(frame) for frame in frames]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(self.run, frames))
        failures = sum(1 for r in results if r.failed)
        if failures:
            logger.warning(f"{failures}/{len(results)} frames failed")
        return results


def run(frame: KeypointFrame, classifier: GazeClassifier, regressor: Optional[CguRegressor],
        depth: float = DEFAULT_DEPTH, gaze_passthrough: bool = False) -> PipelineResult:
    return GazePipeline(classifier, regressor, depth, gaze_passthrough=gaze_passthrough).run(frame)


def run_batch(frames: Sequence[KeypointFrame], classifier: GazeClassifier, regressor: Optional[CguRegressor],
              depth: float = DEFAULT_DEPTH, workers: int = 1, gaze_passthrough: bool = False) -> List[PipelineResult]:
    pipeline = GazePipeline(classifier, regressor, depth, gaze_passthrough=gaze_passthrough)
    return pipeline.run_batch(frames, workers)
