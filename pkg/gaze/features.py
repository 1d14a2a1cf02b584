"""
Features
Normalised 57-element (x, y, k) feature vector and the geometric transforms
used for augmentation.
"""

import math
from typing import Iterable, List, Tuple

import numpy as np

from gaze.dataset import EYE_INDICES, NUM_KEYPOINTS, KeypointFrame
from gaze.errors import DegenerateGeometry, NoValidKeypoints

FEATURE_SIZE = 3 * NUM_KEYPOINTS
MIN_SCALE = 1e-9

# A feature vector is a float64 array of shape (57,): 19 flattened (x, y, k) triplets
# in canonical keypoint order.
FeatureVector = np.ndarray


def as_triplets(fv: FeatureVector) -> np.ndarray:
    """View a feature vector as (19, 3)."""
    return np.asarray(fv, dtype=float).reshape(NUM_KEYPOINTS, 3)


def normalize_keypoints(xyk: np.ndarray, frame_id: str = "") -> Tuple[FeatureVector, np.ndarray, float]:
    """Centre valid keypoints on their mean and scale by the farthest one.

    Returns the feature vector, the centroid (pixels) and the scale (pixels).
    """
    xyk = np.asarray(xyk, dtype=float)
    valid = xyk[:, 2] > 0
    if not np.any(valid):
        raise NoValidKeypoints(f"frame {frame_id} has no keypoint with k > 0")
    centroid = xyk[valid, :2].mean(axis=0)
    centred = xyk[valid, :2] - centroid
    scale = float(np.sqrt((centred ** 2).sum(axis=1)).max())
    if scale < MIN_SCALE:
        raise DegenerateGeometry(f"frame {frame_id}: valid keypoints are coincident")

    out = np.zeros((NUM_KEYPOINTS, 3))
    out[valid, :2] = centred / scale
    out[:, 2] = xyk[:, 2]
    return out.reshape(FEATURE_SIZE), centroid, scale


def build_feature(frame: KeypointFrame) -> FeatureVector:
    fv, _, _ = normalize_keypoints(frame.as_array(), frame.frame_id)
    return fv


def build_feature_matrix(frames: Iterable[KeypointFrame]) -> np.ndarray:
    rows: List[FeatureVector] = [build_feature(f) for f in frames]
    if not rows:
        return np.zeros((0, FEATURE_SIZE))
    return np.vstack(rows)


def rotate_feature(fv: FeatureVector, angle: float) -> FeatureVector:
    """Rotate every (x, y) about the origin by ``angle`` degrees; k is untouched.

    Points at the origin (missing keypoints) stay there.
    """
    theta = math.radians(angle)
    c, s = math.cos(theta), math.sin(theta)
    triplets = as_triplets(fv).copy()
    x, y = triplets[:, 0].copy(), triplets[:, 1].copy()
    triplets[:, 0] = c * x - s * y
    triplets[:, 1] = s * x + c * y
    return triplets.reshape(FEATURE_SIZE)


def zero_eye_keypoints(fv: FeatureVector, zero_confidence: bool = False) -> FeatureVector:
    """Simulate a detector that missed both eyes: eye coordinates set to 0.

    Confidences are kept unless ``zero_confidence`` is set.
    """
    triplets = as_triplets(fv).copy()
    eyes = list(EYE_INDICES)
    triplets[eyes, 0] = 0.0
    triplets[eyes, 1] = 0.0
    if zero_confidence:
        triplets[eyes, 2] = 0.0
    return triplets.reshape(FEATURE_SIZE)


def zero_eye_matrix(X: np.ndarray, zero_confidence: bool = False) -> np.ndarray:
    """zero_eye_keypoints applied row-wise."""
    X = np.asarray(X, dtype=float).reshape(-1, NUM_KEYPOINTS, 3).copy()
    eyes = list(EYE_INDICES)
    X[:, eyes, 0] = 0.0
    X[:, eyes, 1] = 0.0
    if zero_confidence:
        X[:, eyes, 2] = 0.0
    return X.reshape(-1, FEATURE_SIZE)


def rotate_matrix(X: np.ndarray, angle: float) -> np.ndarray:
    """rotate_feature applied row-wise."""
    if len(X) == 0:
        return np.zeros((0, FEATURE_SIZE))
    return np.vstack([rotate_feature(row, angle) for row in X])
