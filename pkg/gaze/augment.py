"""
Augmentation
Training-set augmentation for the classifier and the regressor, and class weights.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from gaze.dataset import CLASS_INDEX, CLASS_ORDER, GazeClass
from gaze.errors import ConfigError, MissingClass
from gaze.features import FEATURE_SIZE, rotate_matrix, zero_eye_matrix

logger = logging.getLogger(__name__)

# Absorbs binary representation error in fraction * n (e.g. 0.57 * 100).
COUNT_EPS = 1e-9


@dataclass(frozen=True)
class AugmentPlan:
    """Augmentation settings.

    Each rotation angle gets one independent draw rotated by +angle and
    another rotated by -angle, both of size floor(fraction * N_eye_contact).
    """
    rotation_angles: Tuple[float, ...] = (15.0, 30.0, 45.0, 60.0)
    rotation_fractions: Tuple[float, ...] = (0.05, 0.10, 0.10, 0.05)
    eye_zero_fraction_regressor: float = 0.40
    zero_confidence: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'rotation_angles', tuple(float(a) for a in self.rotation_angles))
        object.__setattr__(self, 'rotation_fractions', tuple(float(f) for f in self.rotation_fractions))
        if len(self.rotation_angles) != len(self.rotation_fractions):
            raise ConfigError("rotation_angles and rotation_fractions must have the same length")
        if any(a <= 0 for a in self.rotation_angles):
            raise ConfigError("rotation angles must be positive")
        fractions = self.rotation_fractions + (self.eye_zero_fraction_regressor,)
        if any(not 0.0 <= f <= 1.0 for f in fractions):
            raise ConfigError("augmentation fractions must lie in [0, 1]")


def fraction_count(fraction: float, n: int) -> int:
    return int(math.floor(fraction * n + COUNT_EPS))


def expected_classifier_count(counts: Dict[GazeClass, int], plan: AugmentPlan) -> int:
    """Output size of augment_classifier_set for the given class counts."""
    n_total = sum(counts.values())
    n_ec = counts.get(GazeClass.EYE_CONTACT, 0)
    n_icub = counts.get(GazeClass.ICUB, 0)
    rotated = sum(2 * fraction_count(f, n_ec) for f in plan.rotation_fractions)
    return n_total + n_ec + n_icub + rotated


def augment_classifier_set(X: np.ndarray, y: np.ndarray, plan: AugmentPlan) -> Tuple[np.ndarray, np.ndarray]:
    """Append zeroed-eye copies of eye_contact/icub samples and rotated eye_contact copies.

    ``y`` holds class indices (CLASS_ORDER). Output order: originals, zeroed
    copies in input order, then rotated copies angle by angle (+angle draw,
    then -angle draw). Rotation draws come from the original eye_contact samples.
    """
    X = np.asarray(X, dtype=float).reshape(-1, FEATURE_SIZE)
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(plan.seed)

    ec = CLASS_INDEX[GazeClass.EYE_CONTACT]
    icub = CLASS_INDEX[GazeClass.ICUB]
    zero_mask = (y == ec) | (y == icub)
    parts_X = [X, zero_eye_matrix(X[zero_mask], plan.zero_confidence)]
    parts_y = [y, y[zero_mask]]

    X_ec = X[y == ec]
    n_ec = len(X_ec)
    for angle, fraction in zip(plan.rotation_angles, plan.rotation_fractions):
        n = fraction_count(fraction, n_ec)
        for signed in (angle, -angle):
            idx = rng.choice(n_ec, size=n, replace=False) if n else np.zeros(0, dtype=int)
            parts_X.append(rotate_matrix(X_ec[idx], signed))
            parts_y.append(np.full(n, ec, dtype=int))

    X_out = np.vstack(parts_X) if len(X) else np.zeros((0, FEATURE_SIZE))
    y_out = np.concatenate(parts_y).astype(int)
    logger.info(f"Classifier augmentation: {len(X)} -> {len(X_out)} samples")
    return X_out, y_out


def augment_regressor_set(X: np.ndarray, Y: np.ndarray, plan: AugmentPlan) -> Tuple[np.ndarray, np.ndarray]:
    """Append floor(fraction * N) zeroed-eye copies with their targets unchanged."""
    X = np.asarray(X, dtype=float).reshape(-1, FEATURE_SIZE)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y.reshape(len(X), -1)
    rng = np.random.default_rng(plan.seed)
    n = fraction_count(plan.eye_zero_fraction_regressor, len(X))
    idx = rng.choice(len(X), size=n, replace=False) if n else np.zeros(0, dtype=int)
    X_out = np.vstack([X, zero_eye_matrix(X[idx], plan.zero_confidence)])
    Y_out = np.concatenate([Y, Y[idx]])
    logger.info(f"Regressor augmentation: {len(X)} -> {len(X_out)} samples")
    return X_out, Y_out


def class_weights(labels: Iterable[Union[int, GazeClass, str]],
                  classes: Optional[Sequence[Union[int, GazeClass, str]]] = None) -> Dict[Any, float]:
    """Weights inversely proportional to class frequency: N / (K * n_c).

    K counts the distinct classes present. When ``classes`` is given, each of
    them must occur at least once.
    """
    labels = list(labels)
    counts: Dict[Any, int] = {}
    for label in labels:
        counts[label] = counts.get(label, 0) + 1
    if classes is not None:
        missing = [c for c in classes if counts.get(c, 0) == 0]
        if missing:
            names = [decode_any(c) for c in missing]
            raise MissingClass(f"classes without samples: {names}", names)
    n_total = len(labels)
    k = len(counts)
    return {label: n_total / (k * n) for label, n in counts.items()}


def decode_any(label: Union[int, GazeClass, str]) -> str:
    if isinstance(label, GazeClass):
        return label.value
    if isinstance(label, (int, np.integer)):
        return CLASS_ORDER[int(label)].value
    return str(label)
