#!/usr/bin/env python3
"""
Gaze Pipeline
Command-line entry point: synthesise data, annotate, split, train, evaluate
and run inference with the two-layer gaze estimator.
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config import GazeConfig, RunConfig, load_run_config
from gaze import __version__
from gaze.augment import augment_classifier_set, augment_regressor_set, class_weights
from gaze.baseline import load_mlp, save_mlp, train_mlp_classifier
from gaze.classifier import GridSearchReport, default_gamma_grid, grid_search_cv, load_svc, save_svc, train_svc
from gaze.dataset import (
    CLASS_ORDER, GazeClass, KeypointFrame, SplitPlan, annotate_gaze, class_counts,
    encode_labels, read_jsonl, scan_jsonl, select_frames, split_by_subject, write_jsonl,
)
from gaze.errors import EXIT_OK, EXIT_USAGE, ErrorHandler, GazeError, MissingClass
from gaze.evaluation import EvalReport, evaluate_classifier, evaluate_split, regressor_only_rmse, save_report
from gaze.features import build_feature_matrix
from gaze.monitor import ResourceMonitor
from gaze.pipeline import GazePipeline, PipelineResult
from gaze.regressor import load_regressor, save_regressor, train as train_regressor
from gaze.synthgen import class_separability_report, generate_dataset

logger = logging.getLogger(__name__)


def setup_logging(level: str = GazeConfig.LOG_LEVEL, log_file: Optional[str] = GazeConfig.LOG_FILE) -> None:
    """Console plus sidecar file log; timestamps only ever go to the logs."""
    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    if log_file:
        directory = os.path.dirname(log_file)
        if directory:
            os.makedirs(directory, exist_ok=True)
        handlers.insert(0, logging.FileHandler(log_file))
    logging.basicConfig(
        format=GazeConfig.LOG_FORMAT,
        level=getattr(logging, level.upper(), logging.INFO),
        handlers=handlers,
        force=True,
    )


def write_json(path: str, data: Dict[str, Any]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=1)
        f.write('\n')


def load_or_create_splits(config: RunConfig, frames: Sequence[KeypointFrame], path: Optional[str]) -> SplitPlan:
    path = path or config.paths.splits
    if os.path.exists(path):
        with open(path, 'r', encoding='utf-8') as f:
            plan = SplitPlan.from_dict(json.load(f))
        logger.info(f"Using {plan.k} splits from {path}")
        return plan
    plan = split_by_subject(frames, config.split.k, config.split.ratio, config.split.seed)
    write_json(path, plan.to_dict())
    return plan


# Commands

def cmd_synth(config: RunConfig, output: Optional[str] = None) -> int:
    output = output or config.paths.dataset
    frames = generate_dataset(config.scene)
    write_jsonl(output, frames)
    for name, count in class_counts(frames).items():
        print(f"{name}: {count}")
    print(f"Wrote {len(frames)} frames to {output}")
    try:
        report = class_separability_report(frames, config.svc.folds, config.svc.cv_seed)
        print(f"Nearest-centroid separability: {report.accuracy:.4f}")
    except GazeError as e:
        logger.warning(f"Separability report skipped: {e}")
    return EXIT_OK


def cmd_annotate(config: RunConfig, input_path: Optional[str] = None, output: Optional[str] = None,
                 handler: Optional[ErrorHandler] = None) -> int:
    """Ground-truth gaze for every frame with a target; frames that cannot be annotated get an error record."""
    input_path = input_path or config.paths.dataset
    output = output or config.paths.annotations
    handler = handler or ErrorHandler()
    directory = os.path.dirname(output)
    if directory:
        os.makedirs(directory, exist_ok=True)
    written = failed = 0
    with open(output, 'w', encoding='utf-8') as f:
        for entry in scan_jsonl(input_path, config.strict):
            frame = entry.frame
            try:
                if entry.error is not None:
                    raise entry.error
                record = {'frame_id': frame.frame_id, **annotate_gaze(frame, depth=frame.depth(config.pipeline.depth)).to_dict()}
            except GazeError as e:
                handler.handle(e, f"frame {entry.frame_id}")
                record = {'frame_id': entry.frame_id, 'error': handler.failure_message(e)}
                failed += 1
            f.write(json.dumps(record) + '\n')
            written += 1
    print(f"Annotated {written - failed}/{written} frames into {output}")
    return EXIT_OK


def cmd_split(config: RunConfig, input_path: Optional[str] = None, output: Optional[str] = None) -> int:
    frames = read_jsonl(input_path or config.paths.dataset, config.strict)
    plan = split_by_subject(frames, config.split.k, config.split.ratio, config.split.seed)
    output = output or config.paths.splits
    write_json(output, plan.to_dict())
    for i, split in enumerate(plan.splits):
        print(f"split {i}: {len(split.train_subjects)} train / {len(split.test_subjects)} test subjects")
    return EXIT_OK


def train_split(config: RunConfig, frames: Sequence[KeypointFrame], index: int) -> Dict[str, str]:
    """Fit and persist the classifier (and optional baseline) and the regressor of one split."""
    paths = config.model_paths(index)
    labelled = [f for f in frames if f.label is not None]
    X = build_feature_matrix(labelled)
    y = encode_labels(f.label for f in labelled)
    counts = np.bincount(y, minlength=len(CLASS_ORDER))
    if np.any(counts == 0):
        missing = [CLASS_ORDER[i].value for i, n in enumerate(counts) if n == 0]
        raise MissingClass(f"split {index}: training set lacks classes {missing}", missing)

    X_aug, y_aug = augment_classifier_set(X, y, config.augment)
    weights = class_weights(y_aug.tolist(), classes=list(range(len(CLASS_ORDER))))
    gamma_grid = config.svc.gamma_grid or default_gamma_grid(X_aug)
    if len(config.svc.C_grid) * len(gamma_grid) > 1:
        report = grid_search_cv(X, y, config.svc.C_grid, gamma_grid, config.svc.folds,
                                config.svc.cv_seed, config.svc.tol, config.svc.max_iter_factor,
                                augment=lambda X_fold, y_fold: augment_classifier_set(X_fold, y_fold, config.augment))
    else:
        # Single grid point: selected without cross-validation.
        C, gamma = float(config.svc.C_grid[0]), float(gamma_grid[0])
        report = GridSearchReport(
            scores=[{'C': C, 'gamma': gamma, 'mean_accuracy': None, 'fold_accuracies': []}],
            selected=(C, gamma), folds=0, seed=config.svc.cv_seed,
        )
    write_json(paths['grid'], report.to_dict())
    C, gamma = report.selected
    svc = train_svc(X_aug, y_aug, C, gamma, weights, config.svc.tol, config.svc.max_iter_factor)
    save_svc(svc, paths['svc'])

    if config.pipeline.compare_baseline:
        save_mlp(train_mlp_classifier(X_aug, y_aug, config.mlp), paths['mlp'])

    workspace = [f for f in labelled if f.label is GazeClass.WORKSPACE]
    if not workspace:
        raise MissingClass(f"split {index}: no workspace frames to train the regressor", [GazeClass.WORKSPACE.value])
    Y = np.array([annotate_gaze(f, depth=f.depth(config.pipeline.depth)).gaze2d for f in workspace])
    X_reg, Y_reg = augment_regressor_set(build_feature_matrix(workspace), Y, config.augment)
    save_regressor(train_regressor(X_reg, Y_reg, config.train), paths['regressor'])
    logger.info(f"Split {index}: models saved to {config.paths.models}")
    return paths


def cmd_train(config: RunConfig, input_path: Optional[str] = None, splits_path: Optional[str] = None,
              monitor: Optional[ResourceMonitor] = None) -> int:
    monitor = monitor or ResourceMonitor()
    frames = read_jsonl(input_path or config.paths.dataset, config.strict)
    plan = load_or_create_splits(config, frames, splits_path)
    sources = config.pipeline.sources('train')
    for index, split in enumerate(plan.splits):
        with monitor.stage(f"train split {index}"):
            train_frames = select_frames(frames, split.train_subjects, sources)
            paths = train_split(config, train_frames, index)
        print(f"split {index}: {paths['svc']}, {paths['regressor']}")
    return EXIT_OK


def cmd_eval(config: RunConfig, input_path: Optional[str] = None, splits_path: Optional[str] = None,
             monitor: Optional[ResourceMonitor] = None, handler: Optional[ErrorHandler] = None) -> int:
    monitor = monitor or ResourceMonitor()
    handler = handler or ErrorHandler()
    frames = read_jsonl(input_path or config.paths.dataset, config.strict)
    plan = load_or_create_splits(config, frames, splits_path)
    settings = config.pipeline
    sources = settings.sources('test')
    os.makedirs(config.paths.reports, exist_ok=True)

    split_metrics = []
    for index, split in enumerate(plan.splits):
        with monitor.stage(f"eval split {index}"):
            paths = config.model_paths(index)
            svc = load_svc(paths['svc'])
            regressor = None if settings.gaze_passthrough else load_regressor(paths['regressor'])
            test_frames = select_frames(frames, split.test_subjects, sources)
            pipeline = GazePipeline(svc, regressor, settings.depth, settings.sphere_radius,
                                    settings.gaze_passthrough, handler)
            results = pipeline.run_batch(test_frames, settings.workers)
            with open(os.path.join(config.paths.reports, f'results_split{index}.jsonl'), 'w', encoding='utf-8') as f:
                for result in results:
                    f.write(json.dumps(result.to_dict()) + '\n')

            metrics = evaluate_split(results, test_frames, index, settings.depth,
                                     settings.workspace_denominator, handler)
            if regressor is not None:
                metrics.regressor_rmse = regressor_only_rmse(regressor, test_frames, settings.depth)
            if settings.compare_baseline:
                mlp = load_mlp(paths['mlp'])
                labelled = [f for f in test_frames if f.label is not None]
                idx, _ = mlp.predict_batch(build_feature_matrix(labelled))
                metrics.baseline = evaluate_classifier([CLASS_ORDER[i] for i in idx], [f.label for f in labelled])
            split_metrics.append(metrics)

    report = EvalReport(splits=split_metrics, denominator=settings.workspace_denominator)
    save_report(
        report,
        os.path.join(config.paths.reports, 'eval_report.json'),
        os.path.join(config.paths.reports, 'eval_table.txt'),
    )
    print(report.format_table())
    return EXIT_OK


def cmd_infer(config: RunConfig, input_path: str, output: str, svc_path: Optional[str] = None,
              regressor_path: Optional[str] = None, workers: Optional[int] = None,
              handler: Optional[ErrorHandler] = None) -> int:
    """One output record per input line, in order; unreadable lines become failure records."""
    settings = config.pipeline
    handler = handler or ErrorHandler()
    defaults = config.model_paths(0)
    svc = load_svc(svc_path or defaults['svc'])
    regressor = None if settings.gaze_passthrough else load_regressor(regressor_path or defaults['regressor'])
    pipeline = GazePipeline(svc, regressor, settings.depth, settings.sphere_radius,
                            settings.gaze_passthrough, handler)
    entries = list(scan_jsonl(input_path, config.strict))
    frames = [entry.frame for entry in entries if entry.frame is not None]
    computed = iter(pipeline.run_batch(frames, workers or settings.workers))
    results = []
    for entry in entries:
        if entry.error is None:
            results.append(next(computed))
            continue
        handler.handle(entry.error, f"{input_path} line {entry.line}")
        results.append(PipelineResult(entry.frame_id, error=handler.failure_message(entry.error)))

    directory = os.path.dirname(output)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(output, 'w', encoding='utf-8') as f:
        for result in results:
            f.write(json.dumps(result.to_dict()) + '\n')
    failed = sum(1 for r in results if r.failed)
    print(f"Wrote {len(results)} results ({failed} failed) to {output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='gaze_pipeline', description="Two-layer gaze estimation pipeline")
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    parser.add_argument('--config', help="JSON run configuration")
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='SECTION.KEY=VALUE',
                        help="override one configuration value (repeatable)")
    parser.add_argument('--strict', action='store_true', default=None, help="reject unknown keys in config and data")
    parser.add_argument('--log-level', default=GazeConfig.LOG_LEVEL)
    parser.add_argument('--log-file', default=GazeConfig.LOG_FILE)

    sub = parser.add_subparsers(dest='command', required=True)

    synth = sub.add_parser('synth', help="generate a synthetic dataset")
    synth.add_argument('--output')

    annotate = sub.add_parser('annotate', help="compute ground-truth gaze annotations")
    annotate.add_argument('--input')
    annotate.add_argument('--output')

    split = sub.add_parser('split', help="draw participant-wise train/test splits")
    split.add_argument('--input')
    split.add_argument('--output')

    train = sub.add_parser('train', help="train one classifier/regressor pair per split")
    train.add_argument('--input')
    train.add_argument('--splits')

    evaluate = sub.add_parser('eval', help="evaluate the trained models on every split")
    evaluate.add_argument('--input')
    evaluate.add_argument('--splits')
    evaluate.add_argument('--passthrough', action='store_true',
                          help="replace the regressor with ground-truth 2D gaze")

    infer = sub.add_parser('infer', help="run the pipeline on a JSONL file of frames")
    infer.add_argument('--input', required=True)
    infer.add_argument('--output', required=True)
    infer.add_argument('--svc')
    infer.add_argument('--regressor')
    infer.add_argument('--workers', type=int)
    infer.add_argument('--passthrough', action='store_true')
    return parser


def run_command(args: argparse.Namespace, config: RunConfig, handler: ErrorHandler) -> int:
    if getattr(args, 'passthrough', False):
        config = config.apply_overrides(['pipeline.gaze_passthrough=true'])
    monitor = ResourceMonitor()
    if args.command == 'synth':
        with monitor.stage('synth'):
            return cmd_synth(config, args.output)
    if args.command == 'annotate':
        with monitor.stage('annotate'):
            return cmd_annotate(config, args.input, args.output, handler)
    if args.command == 'split':
        return cmd_split(config, args.input, args.output)
    if args.command == 'train':
        return cmd_train(config, args.input, args.splits, monitor)
    if args.command == 'eval':
        return cmd_eval(config, args.input, args.splits, monitor, handler)
    with monitor.stage('infer'):
        return cmd_infer(config, args.input, args.output, args.svc, args.regressor, args.workers, handler)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging(args.log_level, args.log_file)
    handler = ErrorHandler(GazeConfig.MAX_ERROR_LOGS)
    try:
        config = load_run_config(args.config, args.overrides, args.strict)
        logger.info(f"Running '{args.command}' (gaze pipeline {__version__})")
        code = run_command(args, config, handler)
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return EXIT_USAGE
    except Exception as e:
        code = handler.handle(e, args.command)
        print(f"Error: {e}", file=sys.stderr)
    if handler.counts:
        logger.info(f"Error summary: {handler.summary()}")
    return code


if __name__ == "__main__":
    sys.exit(main())
