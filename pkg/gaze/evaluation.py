"""
Evaluation
Classifier metrics, end-to-end gaze metrics per split and their mean/std
aggregation, plus the machine-readable report and its table rendering.
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from gaze.dataset import CLASS_ORDER, DEFAULT_DEPTH, GazeClass, KeypointFrame, annotate_gaze
from gaze.errors import ConfigError, ErrorHandler, GazeError, LengthMismatch, NoWorkspaceFrames
from gaze.features import build_feature
from gaze.geometry import angular_error_deg
from gaze.pipeline import PipelineResult
from gaze.regressor import CguRegressor, predict_batch as regressor_predict_batch

logger = logging.getLogger(__name__)

REPORT_FORMAT = "gaze-eval/1"
DENOMINATORS = ('true_workspace', 'all')

CLASSIFIER_ROWS = ('accuracy', 'precision', 'recall', 'f1')
PIPELINE_ROWS = ('workspace_fraction', 'rmse_2d', 'angular_error')
ROW_TITLES = {
    'accuracy': 'Accuracy',
    'precision': 'Precision (macro)',
    'recall': 'Recall (macro)',
    'f1': 'F1-score (macro)',
    'workspace_fraction': 'Classified as workspace',
    'rmse_2d': '2D RMSE [px]',
    'angular_error': '3D angular error [deg]',
    'regressor_rmse': 'Regressor-only 2D RMSE [px]',
}

Label = Union[GazeClass, str]


def _label_value(label: Label) -> str:
    return label.value if isinstance(label, GazeClass) else str(label)


@dataclass
class ClassifierMetrics:
    labels: List[str]
    confusion: List[List[int]]
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_class: Dict[str, Dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'labels': self.labels,
            'confusion': self.confusion,
            'accuracy': self.accuracy,
            'precision': self.precision,
            'recall': self.recall,
            'f1': self.f1,
            'per_class': self.per_class,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ClassifierMetrics":
        return cls(**data)


def evaluate_classifier(predictions: Sequence[Label], truths: Sequence[Label],
                        labels: Sequence[Label] = CLASS_ORDER) -> ClassifierMetrics:
    """Confusion matrix (rows = truth), accuracy and macro P/R/F1 over ``labels``.

    A class absent from the truth scores 0 in every macro average.
    """
    if len(predictions) != len(truths):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(truths)} truths")
    names = [_label_value(label) for label in labels]
    y_pred = [_label_value(p) for p in predictions]
    y_true = [_label_value(t) for t in truths]

    absent = [name for name in names if name not in set(y_true)]
    if absent:
        logger.warning(f"Classes absent from ground truth contribute 0 to macro averages: {absent}")

    if not y_true:
        matrix = np.zeros((len(names), len(names)), dtype=int)
        return ClassifierMetrics(names, matrix.tolist(), 0.0, 0.0, 0.0, 0.0)

    matrix = confusion_matrix(y_true, y_pred, labels=names)
    precision, recall, f1, support = precision_recall_fscore_support(
        y_true, y_pred, labels=names, average=None, zero_division=0
    )
    per_class = {
        name: {'precision': float(p), 'recall': float(r), 'f1': float(f), 'support': int(s)}
        for name, p, r, f, s in zip(names, precision, recall, f1, support)
    }
    return ClassifierMetrics(
        labels=names,
        confusion=matrix.astype(int).tolist(),
        accuracy=float(accuracy_score(y_true, y_pred)),
        precision=float(np.mean(precision)),
        recall=float(np.mean(recall)),
        f1=float(np.mean(f1)),
        per_class=per_class,
    )


def rmse_2d(predicted: np.ndarray, truth: np.ndarray) -> float:
    """sqrt(mean over samples and both axes of the squared error)."""
    predicted = np.asarray(predicted, dtype=float).reshape(-1, 2)
    truth = np.asarray(truth, dtype=float).reshape(-1, 2)
    if len(predicted) == 0:
        raise NoWorkspaceFrames("RMSE of zero gaze vectors")
    return float(np.sqrt(np.mean((predicted - truth) ** 2)))


def angular_errors(predicted: Sequence[Sequence[float]], truth: Sequence[Sequence[float]]) -> np.ndarray:
    return np.array([angular_error_deg(p, t) for p, t in zip(predicted, truth)], dtype=float)


@dataclass
class SplitMetrics:
    split: int
    classifier: ClassifierMetrics
    workspace_fraction: Optional[float]
    rmse_2d: Optional[float]
    angular_error_mean: Optional[float]
    angular_error_std: Optional[float]
    n_workspace_pairs: int
    n_failures: int = 0
    n_excluded: int = 0
    regressor_rmse: Optional[float] = None
    baseline: Optional[ClassifierMetrics] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'split': self.split,
            'classifier': self.classifier.to_dict(),
            'workspace_fraction': self.workspace_fraction,
            'rmse_2d': self.rmse_2d,
            'angular_error_mean': self.angular_error_mean,
            'angular_error_std': self.angular_error_std,
            'n_workspace_pairs': self.n_workspace_pairs,
            'n_failures': self.n_failures,
            'n_excluded': self.n_excluded,
            'regressor_rmse': self.regressor_rmse,
            'baseline': self.baseline.to_dict() if self.baseline is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SplitMetrics":
        data = dict(data)
        data['classifier'] = ClassifierMetrics.from_dict(data['classifier'])
        if data.get('baseline') is not None:
            data['baseline'] = ClassifierMetrics.from_dict(data['baseline'])
        return cls(**data)

    def row_value(self, row: str) -> Optional[float]:
        if row in CLASSIFIER_ROWS:
            return getattr(self.classifier, row)
        if row == 'angular_error':
            return self.angular_error_mean
        return getattr(self, row)


def evaluate_split(results: Sequence[PipelineResult], truths: Sequence[KeypointFrame], split: int = 0,
                   depth: float = DEFAULT_DEPTH, denominator: str = 'true_workspace',
                   error_handler: Optional[ErrorHandler] = None) -> SplitMetrics:
    """Metrics of one split. Gaze errors use frames both labelled and predicted workspace.

    A pair whose ground truth cannot be annotated is excluded from the gaze
    errors and counted in ``n_excluded``.
    """
    if len(results) != len(truths):
        raise LengthMismatch(f"{len(results)} results for {len(truths)} frames")
    if denominator not in DENOMINATORS:
        raise ConfigError(f"unknown workspace denominator '{denominator}', expected one of {DENOMINATORS}")
    error_handler = error_handler or ErrorHandler()

    scored = [(r, t) for r, t in zip(results, truths) if not r.failed and t.label is not None]
    n_failures = sum(1 for r in results if r.failed)
    classifier = evaluate_classifier([r.predicted_class for r, _ in scored], [t.label for _, t in scored])

    true_ws = [(r, t) for r, t in zip(results, truths) if t.label is GazeClass.WORKSPACE]
    pairs = [(r, t) for r, t in true_ws if not r.failed and r.predicted_class is GazeClass.WORKSPACE]
    base = len(true_ws) if denominator == 'true_workspace' else len(truths)
    workspace_fraction = len(pairs) / base if base else None

    annotated = []
    for result, truth in pairs:
        try:
            annotated.append((result, annotate_gaze(truth, depth=truth.depth(depth))))
        except GazeError as e:
            error_handler.handle(e, f"split {split} frame {truth.frame_id}")
    n_excluded = len(pairs) - len(annotated)

    rmse = ang_mean = ang_std = None
    try:
        if not annotated:
            raise NoWorkspaceFrames(f"split {split}: no annotatable frame is both labelled and predicted workspace")
        rmse = rmse_2d([r.gaze2d for r, _ in annotated], [a.gaze2d for _, a in annotated])
        errors = angular_errors([r.gaze3d for r, _ in annotated], [a.gaze3d for _, a in annotated])
        ang_mean, ang_std = float(errors.mean()), float(errors.std())
    except NoWorkspaceFrames as e:
        logger.warning(f"Gaze metrics absent: {e}")

    return SplitMetrics(
        split=split,
        classifier=classifier,
        workspace_fraction=workspace_fraction,
        rmse_2d=rmse,
        angular_error_mean=ang_mean,
        angular_error_std=ang_std,
        n_workspace_pairs=len(annotated),
        n_failures=n_failures,
        n_excluded=n_excluded,
    )


def regressor_only_rmse(regressor: CguRegressor, frames: Sequence[KeypointFrame],
                        depth: float = DEFAULT_DEPTH) -> Optional[float]:
    """2D RMSE of the regressor on every labelled workspace frame, ignoring the classifier.

    Frames whose features or ground truth cannot be computed are skipped.
    """
    features, truth = [], []
    for frame in frames:
        if frame.label is not GazeClass.WORKSPACE:
            continue
        try:
            gaze2d = annotate_gaze(frame, depth=frame.depth(depth)).gaze2d
            fv = build_feature(frame)
        except GazeError as e:
            logger.warning(f"Regressor-only RMSE skips frame {frame.frame_id}: {e}")
            continue
        features.append(fv)
        truth.append(gaze2d)
    if not features:
        return None
    return rmse_2d(regressor_predict_batch(regressor, np.stack(features))[:, :2], truth)


def mean_std(values: Sequence[Optional[float]]) -> Optional[Tuple[float, float]]:
    """Mean and population std over the defined values."""
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    arr = np.asarray(defined, dtype=float)
    return float(arr.mean()), float(arr.std())


@dataclass
class EvalReport:
    splits: List[SplitMetrics]
    denominator: str = 'true_workspace'

    @property
    def k(self) -> int:
        return len(self.splits)

    @property
    def n_excluded(self) -> int:
        return sum(s.n_excluded for s in self.splits)

    def aggregate(self) -> Dict[str, Optional[Tuple[float, float]]]:
        rows = list(CLASSIFIER_ROWS) + list(PIPELINE_ROWS) + ['regressor_rmse']
        return {row: mean_std([s.row_value(row) for s in self.splits]) for row in rows}

    def aggregate_baseline(self) -> Optional[Dict[str, Optional[Tuple[float, float]]]]:
        if not any(s.baseline is not None for s in self.splits):
            return None
        return {
            row: mean_std([getattr(s.baseline, row) for s in self.splits if s.baseline is not None])
            for row in CLASSIFIER_ROWS
        }

    def to_dict(self) -> Dict[str, Any]:
        def pack(agg):
            return {row: (list(v) if v is not None else None) for row, v in agg.items()}

        baseline = self.aggregate_baseline()
        return {
            'format': REPORT_FORMAT,
            'k': self.k,
            'denominator': self.denominator,
            'n_excluded': self.n_excluded,
            'splits': [s.to_dict() for s in self.splits],
            'aggregate': pack(self.aggregate()),
            'baseline_aggregate': pack(baseline) if baseline is not None else None,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalReport":
        return cls(
            splits=[SplitMetrics.from_dict(s) for s in data['splits']],
            denominator=data.get('denominator', 'true_workspace'),
        )

    def format_table(self) -> str:
        """Aligned mean +- std table: classifier rows, then pipeline rows."""
        agg = self.aggregate()
        baseline = self.aggregate_baseline()
        lines = [f"Gaze pipeline evaluation over {self.k} split(s)", ""]

        header = f"{'Classifier metric':<32}{'SVC':>20}"
        if baseline is not None:
            header += f"{'MLP':>20}"
        lines += [header, '-' * len(header)]
        for row in CLASSIFIER_ROWS:
            line = f"{ROW_TITLES[row]:<32}{_fmt(agg[row]):>20}"
            if baseline is not None:
                line += f"{_fmt(baseline[row]):>20}"
            lines.append(line)

        lines += ["", f"{'Pipeline metric':<32}{'mean +- std':>20}", '-' * 52]
        for row in PIPELINE_ROWS:
            value = agg[row]
            if row == 'workspace_fraction' and value is not None:
                value = (100.0 * value[0], 100.0 * value[1])
                lines.append(f"{ROW_TITLES[row] + ' [%]':<32}{_fmt(value):>20}")
            else:
                lines.append(f"{ROW_TITLES[row]:<32}{_fmt(value):>20}")
        if agg['regressor_rmse'] is not None:
            lines.append(f"{ROW_TITLES['regressor_rmse']:<32}{_fmt(agg['regressor_rmse']):>20}")
        return "\n".join(lines) + "\n"


def _fmt(value: Optional[Tuple[float, float]]) -> str:
    if value is None or any(math.isnan(v) for v in value):
        return "n/a"
    return f"{value[0]:.2f} +- {value[1]:.2f}"


def evaluate_end_to_end(results: Sequence[Sequence[PipelineResult]], truths: Sequence[Sequence[KeypointFrame]],
                        k_splits: Optional[int] = None, depth: float = DEFAULT_DEPTH,
                        denominator: str = 'true_workspace') -> EvalReport:
    """Per-split metrics for aligned result/truth lists, aggregated as mean +- std."""
    if len(results) != len(truths):
        raise LengthMismatch(f"{len(results)} result splits for {len(truths)} truth splits")
    if k_splits is not None and k_splits != len(results):
        raise LengthMismatch(f"expected {k_splits} splits, got {len(results)}")
    splits = [
        evaluate_split(res, tru, split=i, depth=depth, denominator=denominator)
        for i, (res, tru) in enumerate(zip(results, truths))
    ]
    return EvalReport(splits=splits, denominator=denominator)


def save_report(report: EvalReport, json_path: str, table_path: Optional[str] = None) -> None:
    directory = os.path.dirname(json_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(json_path, 'w', encoding='utf-8') as f:
        json.dump(report.to_dict(), f, indent=1)
        f.write('\n')
    if table_path:
        with open(table_path, 'w', encoding='utf-8') as f:
            f.write(report.format_table())


def load_report(path: str) -> EvalReport:
    with open(path, 'r', encoding='utf-8') as f:
        return EvalReport.from_dict(json.load(f))
