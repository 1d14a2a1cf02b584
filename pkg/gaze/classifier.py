"""
Gaze Classifier
One-vs-rest RBF support vector classifier trained with an SMO solver,
grid-search model selection with stratified cross-validation, and model files.
"""

import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax
from sklearn.model_selection import StratifiedKFold

from gaze.augment import class_weights as balanced_weights
from gaze.dataset import CLASS_ORDER, GazeClass, decode_label
from gaze.errors import MissingClass, ModelMissing, NonConvergence, TooFewSamples
from gaze.features import FEATURE_SIZE

logger = logging.getLogger(__name__)

SVC_FORMAT = "gaze-svc/1"
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER_FACTOR = 100_000
SUPPORT_THRESHOLD = 1e-12
TAU = 1e-12
DEFAULT_C_GRID = (0.1, 1.0, 10.0, 100.0)
FIXED_GAMMAS = (0.001, 0.01, 0.1, 1.0)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> float:
    """exp(-gamma * |a - b|^2)."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(np.exp(-gamma * float(d @ d)))


def rbf_kernel_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(np.atleast_2d(A), np.atleast_2d(B), 'sqeuclidean'))


class KernelRowCache:
    """LRU cache of kernel rows K(x_i, X) with access statistics.

    When a precomputed Gram matrix is supplied rows are served from it directly.
    """

    def __init__(self, X: np.ndarray, gamma: float, max_size: int = 2048,
                 gram: Optional[np.ndarray] = None):
        self.X = X
        self.gamma = gamma
        self.max_size = max_size
        self.gram = gram
        self.cache: "OrderedDict[int, np.ndarray]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def row(self, i: int) -> np.ndarray:
        if self.gram is not None:
            self.hits += 1
            return self.gram[i]
        entry = self.cache.get(i)
        if entry is not None:
            self.hits += 1
            self.cache.move_to_end(i)
            return entry
        self.misses += 1
        if len(self.cache) >= self.max_size:
            self.cache.popitem(last=False)
        entry = rbf_kernel_matrix(self.X[i], self.X, self.gamma)[0]
        self.cache[i] = entry
        return entry

    def clear(self) -> None:
        self.cache.clear()

    def get_stats(self) -> Dict[str, Any]:
        total = self.hits + self.misses
        return {
            'total_entries': len(self.cache),
            'max_size': self.max_size,
            'utilization': len(self.cache) / self.max_size if self.max_size else 0.0,
            'hits': self.hits,
            'misses': self.misses,
            'hit_rate': self.hits / total if total else 0.0,
        }


@dataclass
class BinarySvm:
    """Trained binary RBF machine: f(x) = sum_i dual_coef_i K(sv_i, x) + bias."""
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    C: float
    support_indices: np.ndarray
    n_iter: int = 0
    kkt_gap: float = 0.0

    def decision(self, x: np.ndarray) -> float:
        return float(self.decision_matrix(np.atleast_2d(x))[0])

    def decision_matrix(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(self.dual_coef) == 0:
            return np.full(len(X), self.bias)
        return rbf_kernel_matrix(X, self.support_vectors, self.gamma) @ self.dual_coef + self.bias

    def alphas(self, n_train: int) -> np.ndarray:
        """Dual variables over the training set (zeros for non-support points)."""
        alpha = np.zeros(n_train)
        alpha[self.support_indices] = np.abs(self.dual_coef)
        return alpha

    def to_dict(self) -> Dict[str, Any]:
        return {
            'support_vectors': self.support_vectors.tolist(),
            'dual_coef': self.dual_coef.tolist(),
            'bias': self.bias,
            'gamma': self.gamma,
            'C': self.C,
            'support_indices': self.support_indices.tolist(),
            'n_iter': self.n_iter,
            'kkt_gap': self.kkt_gap,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BinarySvm":
        return cls(
            support_vectors=np.asarray(data['support_vectors'], dtype=float).reshape(len(data['dual_coef']), -1)
            if data['support_vectors'] else np.zeros((0, FEATURE_SIZE)),
            dual_coef=np.asarray(data['dual_coef'], dtype=float),
            bias=float(data['bias']),
            gamma=float(data['gamma']),
            C=float(data['C']),
            support_indices=np.asarray(data['support_indices'], dtype=int),
            n_iter=int(data.get('n_iter', 0)),
            kkt_gap=float(data.get('kkt_gap', 0.0)),
        )


def decision(model: BinarySvm, x: np.ndarray) -> float:
    return model.decision(x)


def _select_working_set(y: np.ndarray, G: np.ndarray, alpha: np.ndarray,
                        Cs: np.ndarray) -> Tuple[int, int, float, float, float]:
    """Maximal violating pair (i in I_up, j in I_low) and the gap m - M."""
    minus_yG = -y * G
    up = ((y > 0) & (alpha < Cs)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < Cs))
    up_vals = np.where(up, minus_yG, -np.inf)
    low_vals = np.where(low, minus_yG, np.inf)
    i = int(np.argmax(up_vals))
    j = int(np.argmin(low_vals))
    m, M = float(up_vals[i]), float(low_vals[j])
    return i, j, m - M, m, M


def train_binary_svm(X: np.ndarray, y: np.ndarray, C: float, gamma: float,
                     sample_weight: Optional[np.ndarray] = None, tol: float = DEFAULT_TOL,
                     max_iter_factor: int = DEFAULT_MAX_ITER_FACTOR,
                     gram: Optional[np.ndarray] = None, cache_size: int = 2048) -> BinarySvm:
    """Solve the weighted soft-margin dual with SMO.

    Box constraints are 0 <= alpha_i <= C * sample_weight_i; labels are +1/-1.
    Raises NonConvergence when the iteration budget (max_iter_factor * n) runs out.
    """
    X = np.asarray(X, dtype=float)
    y = np.where(np.asarray(y) > 0, 1.0, -1.0)
    n = len(y)
    if not (np.any(y > 0) and np.any(y < 0)):
        raise MissingClass("binary SVM needs both +1 and -1 samples")
    weights = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
    Cs = C * weights

    cache = KernelRowCache(X, gamma, max_size=cache_size, gram=gram)
    alpha = np.zeros(n)
    G = -np.ones(n)
    max_iter = max_iter_factor * n

    n_iter = 0
    while True:
        i, j, gap, m, M = _select_working_set(y, G, alpha, Cs)
        if gap < tol:
            break
        if n_iter >= max_iter:
            raise NonConvergence("SMO did not converge", violation=gap, iterations=n_iter)
        n_iter += 1

        Ki, Kj = cache.row(i), cache.row(j)
        Q_i = y[i] * y * Ki
        Q_j = y[j] * y * Kj
        quad = Ki[i] + Kj[j] - 2.0 * Ki[j]
        if quad <= 0:
            quad = TAU
        old_i, old_j = alpha[i], alpha[j]
        C_i, C_j = Cs[i], Cs[j]

        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = old_i - old_j
            a_i, a_j = old_i + delta, old_j + delta
            if diff > 0:
                if a_j < 0:
                    a_j, a_i = 0.0, diff
            elif a_i < 0:
                a_i, a_j = 0.0, -diff
            if diff > C_i - C_j:
                if a_i > C_i:
                    a_i, a_j = C_i, C_i - diff
            elif a_j > C_j:
                a_j, a_i = C_j, C_j + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = old_i + old_j
            a_i, a_j = old_i - delta, old_j + delta
            if total > C_i:
                if a_i > C_i:
                    a_i, a_j = C_i, total - C_i
            elif a_j < 0:
                a_j, a_i = 0.0, total
            if total > C_j:
                if a_j > C_j:
                    a_j, a_i = C_j, total - C_j
            elif a_i < 0:
                a_i, a_j = 0.0, total

        alpha[i], alpha[j] = a_i, a_j
        G += Q_i * (a_i - old_i) + Q_j * (a_j - old_j)

    free = (alpha > 0) & (alpha < Cs)
    if np.any(free):
        bias = float(np.mean(-y[free] * G[free]))
    else:
        bias = (m + M) / 2.0

    support = np.flatnonzero(alpha > SUPPORT_THRESHOLD)
    logger.debug(f"SMO finished: {n_iter} iterations, gap {gap:.2e}, {len(support)} support vectors, cache {cache.get_stats()}")
    return BinarySvm(
        support_vectors=X[support].copy(),
        dual_coef=alpha[support] * y[support],
        bias=bias,
        gamma=float(gamma),
        C=float(C),
        support_indices=support,
        n_iter=n_iter,
        kkt_gap=float(gap),
    )


def kkt_residuals(model: BinarySvm, X: np.ndarray, y: np.ndarray, Cs: np.ndarray) -> np.ndarray:
    """Per-sample KKT violation (0 when satisfied)."""
    y = np.where(np.asarray(y) > 0, 1.0, -1.0)
    margin = y * model.decision_matrix(X)
    alpha = model.alphas(len(y))
    at_zero = alpha <= SUPPORT_THRESHOLD
    at_bound = alpha >= Cs - SUPPORT_THRESHOLD
    free = ~at_zero & ~at_bound
    violation = np.zeros(len(y))
    violation[at_zero] = np.maximum(0.0, 1.0 - margin[at_zero])
    violation[free] = np.abs(margin[free] - 1.0)
    violation[at_bound & ~at_zero] = np.maximum(0.0, margin[at_bound & ~at_zero] - 1.0)
    return violation


def dual_objective(model: BinarySvm, X: np.ndarray, y: np.ndarray) -> float:
    """sum(alpha) - 1/2 alpha^T Q alpha for the trained multipliers."""
    y = np.where(np.asarray(y) > 0, 1.0, -1.0)
    alpha = model.alphas(len(y))
    K = rbf_kernel_matrix(X, X, model.gamma)
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


@dataclass
class SvcModel:
    """One-vs-rest set of binary machines, one per gaze class in CLASS_ORDER."""
    machines: Dict[GazeClass, BinarySvm]
    class_weights: Dict[GazeClass, float]
    C: float
    gamma: float
    class_order: Tuple[GazeClass, ...] = CLASS_ORDER

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        return self.decision_matrix(np.atleast_2d(x))[0]

    def decision_matrix(self, X: np.ndarray) -> np.ndarray:
        """(n, 4) decision values in class order."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([self.machines[c].decision_matrix(X) for c in self.class_order])

    def predict(self, x: np.ndarray) -> Tuple[GazeClass, float]:
        return confidence_from_decisions(self.decision_values(x), self.class_order)

    def predict_batch(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Class indices and confidences for each row of X."""
        D = self.decision_matrix(X)
        idx = np.argmax(D, axis=1)
        conf = softmax(D, axis=1)[np.arange(len(D)), idx]
        return idx, conf

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format': SVC_FORMAT,
            'class_order': [c.value for c in self.class_order],
            'class_weights': {c.value: self.class_weights[c] for c in self.class_order if c in self.class_weights},
            'C': self.C,
            'gamma': self.gamma,
            'machines': {c.value: self.machines[c].to_dict() for c in self.class_order},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SvcModel":
        if data.get('format') != SVC_FORMAT:
            raise ModelMissing(f"unsupported SVC model format {data.get('format')!r}")
        order = tuple(GazeClass(c) for c in data['class_order'])
        return cls(
            machines={GazeClass(k): BinarySvm.from_dict(v) for k, v in data['machines'].items()},
            class_weights={GazeClass(k): float(v) for k, v in data['class_weights'].items()},
            C=float(data['C']),
            gamma=float(data['gamma']),
            class_order=order,
        )


def confidence_from_decisions(values: np.ndarray, class_order: Sequence[GazeClass] = CLASS_ORDER) -> Tuple[GazeClass, float]:
    """Argmax class (first in class order on ties) and its softmax probability."""
    values = np.asarray(values, dtype=float)
    idx = int(np.argmax(values))
    return class_order[idx], float(softmax(values)[idx])


def predict(svc: SvcModel, x: np.ndarray) -> Tuple[GazeClass, float]:
    return svc.predict(x)


def train_svc(X: np.ndarray, y: np.ndarray, C: float, gamma: float,
              weights: Optional[Dict[int, float]] = None, tol: float = DEFAULT_TOL,
              max_iter_factor: int = DEFAULT_MAX_ITER_FACTOR,
              gram: Optional[np.ndarray] = None) -> SvcModel:
    """Fit one machine per class; ``y`` holds class indices, ``weights`` maps index -> weight.

    Without explicit weights, balanced weights are computed from ``y``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if weights is None:
        weights = balanced_weights(y.tolist(), classes=list(range(len(CLASS_ORDER))))
    missing = [CLASS_ORDER[c].value for c in range(len(CLASS_ORDER)) if not np.any(y == c)]
    if missing:
        raise MissingClass(f"no training samples for classes {missing}", missing)

    sample_weight = np.array([weights[int(label)] for label in y])
    if gram is None:
        gram = rbf_kernel_matrix(X, X, gamma) if len(X) <= 4096 else None
    machines = {}
    for index, cls in enumerate(CLASS_ORDER):
        y_bin = np.where(y == index, 1.0, -1.0)
        machines[cls] = train_binary_svm(X, y_bin, C, gamma, sample_weight, tol, max_iter_factor, gram=gram)
        logger.info(
            f"Trained {cls.value} machine (C={C}, gamma={gamma:.4g}): "
            f"{len(machines[cls].dual_coef)} support vectors, {machines[cls].n_iter} iterations"
        )
    return SvcModel(
        machines=machines,
        class_weights={CLASS_ORDER[int(k)]: float(v) for k, v in weights.items()},
        C=float(C),
        gamma=float(gamma),
    )


def default_gamma_grid(X: np.ndarray) -> List[float]:
    """Variance-scaled gamma followed by a fixed logarithmic bracket."""
    var = float(np.var(X))
    grid = [1.0 / (FEATURE_SIZE * var)] if var > 0 else []
    return grid + list(FIXED_GAMMAS)


# Maps a fold's training part (X, y) to its augmented version.
FoldAugment = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


@dataclass
class GridSearchReport:
    """Mean cross-validated accuracy per (C, gamma) and the selected pair."""
    scores: List[Dict[str, Any]]
    selected: Tuple[float, float]
    folds: int
    seed: int
    fold_assignments: List[int] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'scores': self.scores,
            'selected': {'C': self.selected[0], 'gamma': self.selected[1]},
            'folds': self.folds,
            'seed': self.seed,
            'fold_assignments': self.fold_assignments,
        }


def grid_search_cv(X: np.ndarray, y: np.ndarray, C_grid: Sequence[float] = DEFAULT_C_GRID,
                   gamma_grid: Optional[Sequence[float]] = None, folds: int = 5, seed: int = 0,
                   tol: float = DEFAULT_TOL, max_iter_factor: int = DEFAULT_MAX_ITER_FACTOR,
                   augment: Optional[FoldAugment] = None) -> GridSearchReport:
    """Exhaustive (C, gamma) search scored by stratified k-fold accuracy.

    Folds are drawn over the given samples. ``augment``, when set, is applied
    to each fold's training part only; held-out samples stay unaugmented.
    Ties go to the smaller C, then the smaller gamma.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    counts = np.bincount(y, minlength=len(CLASS_ORDER))
    if np.any(counts < folds):
        short = {CLASS_ORDER[i].value: int(n) for i, n in enumerate(counts) if n < folds}
        raise TooFewSamples(f"need at least {folds} samples per class for {folds}-fold CV, got {short}")
    if gamma_grid is None:
        gamma_grid = default_gamma_grid(X)
    C_values = sorted(set(float(c) for c in C_grid))
    gamma_values = sorted(set(float(g) for g in gamma_grid))

    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    assignment = np.zeros(len(y), dtype=int)
    fold_acc: Dict[Tuple[float, float], List[float]] = {(c, g): [] for c in C_values for g in gamma_values}

    for fold, (train_idx, test_idx) in enumerate(splitter.split(X, y)):
        assignment[test_idx] = fold
        X_tr, y_tr, X_te, y_te = X[train_idx], y[train_idx], X[test_idx], y[test_idx]
        if augment is not None:
            X_tr, y_tr = augment(X_tr, y_tr)
        weights = balanced_weights(y_tr.tolist(), classes=list(range(len(CLASS_ORDER))))
        d_train = cdist(X_tr, X_tr, 'sqeuclidean')
        d_test = cdist(X_te, X_tr, 'sqeuclidean')
        for gamma in gamma_values:
            gram = np.exp(-gamma * d_train)
            gram_test = np.exp(-gamma * d_test)
            for C in C_values:
                model = train_svc(X_tr, y_tr, C, gamma, weights, tol, max_iter_factor, gram=gram)
                D = np.column_stack([
                    gram_test[:, m.support_indices] @ m.dual_coef + m.bias
                    for m in (model.machines[c] for c in CLASS_ORDER)
                ])
                acc = float(np.mean(np.argmax(D, axis=1) == y_te))
                fold_acc[(C, gamma)].append(acc)
                logger.info(f"Fold {fold + 1}/{folds} C={C} gamma={gamma:.4g}: accuracy {acc:.4f}")

    scores = [
        {'C': c, 'gamma': g, 'mean_accuracy': float(np.mean(accs)), 'fold_accuracies': accs}
        for (c, g), accs in sorted(fold_acc.items())
    ]
    best = min(scores, key=lambda s: (-s['mean_accuracy'], s['C'], s['gamma']))
    logger.info(f"Grid search selected C={best['C']} gamma={best['gamma']:.4g} (mean accuracy {best['mean_accuracy']:.4f})")
    return GridSearchReport(
        scores=scores,
        selected=(best['C'], best['gamma']),
        folds=folds,
        seed=seed,
        fold_assignments=assignment.tolist(),
    )


def save_svc(model: SvcModel, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(model.to_dict(), f, indent=1)
        f.write('\n')


def load_svc(path: str) -> SvcModel:
    if not os.path.exists(path):
        raise ModelMissing(f"SVC model not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return SvcModel.from_dict(json.load(f))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ModelMissing(f"cannot read SVC model {path}: {e}") from e


def class_name(index: int) -> str:
    return decode_label(index).value
