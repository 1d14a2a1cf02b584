"""
Configuration for the Gaze Pipeline
Environment-backed defaults plus the run configuration file that drives every command.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from gaze.augment import AugmentPlan
from gaze.baseline import MlpConfig
from gaze.errors import ConfigError
from gaze.regressor import TrainConfig
from gaze.synthgen import SceneConfig

load_dotenv()

logger = logging.getLogger(__name__)


class GazeConfig:
    """Environment-backed settings for the gaze pipeline."""

    APP_NAME = "Gaze Pipeline"

    # Logging Settings
    LOG_LEVEL = os.getenv('GAZE_LOG_LEVEL', 'INFO')
    LOG_FILE = os.getenv('GAZE_LOG_FILE', 'logs/gaze_pipeline.log')
    LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

    # Paths
    DATA_DIR = os.getenv('GAZE_DATA_DIR', 'data')
    MODELS_DIR = os.getenv('GAZE_MODELS_DIR', 'models')
    REPORTS_DIR = os.getenv('GAZE_REPORTS_DIR', 'reports')

    # Runtime Settings
    SEED = int(os.getenv('GAZE_SEED', 0))
    WORKERS = int(os.getenv('GAZE_WORKERS', 1))
    DEPTH = float(os.getenv('GAZE_DEPTH', 1.0))  # meters, iCub camera assumption
    MAX_ERROR_LOGS = int(os.getenv('GAZE_MAX_ERROR_LOGS', 100))

    @classmethod
    def get_paths(cls) -> Dict[str, str]:
        return {
            'dataset': os.path.join(cls.DATA_DIR, 'synthetic.jsonl'),
            'splits': os.path.join(cls.DATA_DIR, 'splits.json'),
            'annotations': os.path.join(cls.DATA_DIR, 'annotations.jsonl'),
            'models': cls.MODELS_DIR,
            'reports': cls.REPORTS_DIR,
        }

    @classmethod
    def get_runtime_params(cls) -> Dict[str, Any]:
        return {
            'seed': cls.SEED,
            'workers': cls.WORKERS,
            'depth': cls.DEPTH,
        }

    @classmethod
    def validate_environment(cls) -> bool:
        """Check that numeric settings are usable."""
        problems = []
        if cls.WORKERS < 1:
            problems.append(f"GAZE_WORKERS must be >= 1, got {cls.WORKERS}")
        if cls.DEPTH <= 0:
            problems.append(f"GAZE_DEPTH must be positive, got {cls.DEPTH}")
        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            problems.append(f"GAZE_LOG_LEVEL '{cls.LOG_LEVEL}' is not a logging level")
        if problems:
            print(f"Invalid environment settings: {problems}")
            return False
        return True

    @classmethod
    def print_config(cls):
        print("=== Gaze Pipeline Configuration ===")
        print(f"Data Dir: {cls.DATA_DIR}")
        print(f"Models Dir: {cls.MODELS_DIR}")
        print(f"Reports Dir: {cls.REPORTS_DIR}")
        print(f"Seed: {cls.SEED}")
        print(f"Workers: {cls.WORKERS}")
        print(f"Depth: {cls.DEPTH} m")
        print(f"Log Level: {cls.LOG_LEVEL}")
        print(f"Log File: {cls.LOG_FILE}")
        print("===================================")


@dataclass(frozen=True)
class PathSettings:
    dataset: str = 'data/synthetic.jsonl'
    splits: str = 'data/splits.json'
    annotations: str = 'data/annotations.jsonl'
    models: str = 'models'
    reports: str = 'reports'


@dataclass(frozen=True)
class SvcSettings:
    C_grid: Tuple[float, ...] = (0.1, 1.0, 10.0, 100.0)
    gamma_grid: Optional[Tuple[float, ...]] = None  # None: variance-scaled entry + fixed bracket
    folds: int = 5
    cv_seed: int = 0
    tol: float = 1e-3
    max_iter_factor: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, 'C_grid', tuple(float(c) for c in self.C_grid))
        if self.gamma_grid is not None:
            object.__setattr__(self, 'gamma_grid', tuple(float(g) for g in self.gamma_grid))
        if not self.C_grid or any(c <= 0 for c in self.C_grid):
            raise ConfigError("C_grid must hold positive values")
        if self.gamma_grid is not None and (not self.gamma_grid or any(g <= 0 for g in self.gamma_grid)):
            raise ConfigError("gamma_grid must hold positive values")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")


@dataclass(frozen=True)
class SplitSettings:
    k: int = 5
    ratio: Tuple[int, int] = (19, 5)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'ratio', tuple(int(r) for r in self.ratio))
        if self.k < 1 or len(self.ratio) != 2 or min(self.ratio) < 1:
            raise ConfigError(f"invalid split settings k={self.k} ratio={self.ratio}")


@dataclass(frozen=True)
class PipelineSettings:
    depth: float = 1.0
    sphere_radius: float = 0.1
    workspace_denominator: str = 'true_workspace'
    train_source: str = 'both'
    test_source: str = 'icub'
    workers: int = 1
    compare_baseline: bool = False
    gaze_passthrough: bool = False

    def __post_init__(self):
        if self.depth <= 0 or self.sphere_radius <= 0:
            raise ConfigError("depth and sphere_radius must be positive")
        if self.workspace_denominator not in ('true_workspace', 'all'):
            raise ConfigError(f"unknown workspace_denominator '{self.workspace_denominator}'")
        for name in ('train_source', 'test_source'):
            if getattr(self, name) not in ('icub', 'realsense', 'both'):
                raise ConfigError(f"{name} must be icub, realsense or both")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def sources(self, which: str) -> Optional[Tuple[str, ...]]:
        value = getattr(self, f"{which}_source")
        return None if value == 'both' else (value,)


SECTIONS = {
    'paths': PathSettings,
    'scene': SceneConfig,
    'augment': AugmentPlan,
    'train': TrainConfig,
    'svc': SvcSettings,
    'mlp': MlpConfig,
    'split': SplitSettings,
    'pipeline': PipelineSettings,
}


def _plain(value: Any) -> Any:
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def section_to_dict(section: Any) -> Dict[str, Any]:
    return {key: _plain(value) for key, value in asdict(section).items()}


def _build_section(name: str, data: Dict[str, Any], base: Any, strict: bool) -> Any:
    cls = SECTIONS[name]
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        if strict:
            raise ConfigError(f"unknown keys in section '{name}': {unknown}")
        logger.warning(f"Ignoring unknown keys in section '{name}': {unknown}")
    values = {key: value for key, value in data.items() if key in known}
    if name == 'mlp' and 'hidden' in values:
        values['hidden'] = tuple(int(h) for h in values['hidden'])
    try:
        return replace(base, **values)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value in section '{name}': {e}") from e


@dataclass(frozen=True)
class RunConfig:
    """Every setting a command needs, one section per concern."""
    paths: PathSettings = field(default_factory=PathSettings)
    scene: SceneConfig = field(default_factory=SceneConfig)
    augment: AugmentPlan = field(default_factory=AugmentPlan)
    train: TrainConfig = field(default_factory=TrainConfig)
    svc: SvcSettings = field(default_factory=SvcSettings)
    mlp: MlpConfig = field(default_factory=MlpConfig)
    split: SplitSettings = field(default_factory=SplitSettings)
    pipeline: PipelineSettings = field(default_factory=PipelineSettings)
    strict: bool = False

    @classmethod
    def default(cls) -> "RunConfig":
        """Built-in defaults with the environment layered on top."""
        seed = GazeConfig.SEED
        return cls(
            paths=PathSettings(**GazeConfig.get_paths()),
            scene=SceneConfig(seed=seed),
            augment=AugmentPlan(seed=seed),
            train=TrainConfig(seed=seed),
            svc=SvcSettings(cv_seed=seed),
            mlp=MlpConfig(seed=seed),
            split=SplitSettings(seed=seed),
            pipeline=PipelineSettings(depth=GazeConfig.DEPTH, workers=GazeConfig.WORKERS),
        )

    @classmethod
    def from_dict(cls, data: Dict[str, Any], strict: Optional[bool] = None) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        strict = bool(data.get('strict', False)) if strict is None else strict
        unknown = sorted(set(data) - set(SECTIONS) - {'strict'})
        if unknown:
            if strict:
                raise ConfigError(f"unknown configuration sections: {unknown}")
            logger.warning(f"Ignoring unknown configuration sections: {unknown}")
        base = cls.default()
        sections = {
            name: _build_section(name, data[name], getattr(base, name), strict) if name in data else getattr(base, name)
            for name in SECTIONS
        }
        return cls(strict=strict, **sections)

    @classmethod
    def from_file(cls, path: str, strict: Optional[bool] = None) -> "RunConfig":
        if not os.path.exists(path):
            raise ConfigError(f"configuration file not found: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}") from e
        logger.info(f"Loaded configuration from {path}")
        return cls.from_dict(data, strict)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {name: section_to_dict(getattr(self, name)) for name in SECTIONS}
        data['strict'] = self.strict
        return data

    def save(self, path: str) -> None:
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write('\n')

    def apply_overrides(self, overrides: Sequence[str]) -> "RunConfig":
        """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
        config = self
        for item in overrides:
            if '=' not in item or '.' not in item.split('=', 1)[0]:
                raise ConfigError(f"override '{item}' is not of the form section.key=value")
            path, raw = item.split('=', 1)
            section, key = path.split('.', 1)
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            if section not in SECTIONS:
                raise ConfigError(f"unknown configuration section '{section}'")
            # unknown override keys are rejected even in lenient mode
            updated = _build_section(section, {key: value}, getattr(config, section), strict=True)
            config = replace(config, **{section: updated})
        return config

    def model_paths(self, split: int) -> Dict[str, str]:
        models = self.paths.models
        return {
            'svc': os.path.join(models, f'svc_split{split}.json'),
            'regressor': os.path.join(models, f'regressor_split{split}.json'),
            'mlp': os.path.join(models, f'mlp_split{split}.json'),
            'grid': os.path.join(models, f'grid_split{split}.json'),
        }


def load_run_config(path: Optional[str], overrides: Sequence[str] = (), strict: Optional[bool] = None) -> RunConfig:
    """Defaults < environment < config file < command-line overrides."""
    config = RunConfig.from_file(path, strict) if path else RunConfig.default()
    if strict is not None and not path:
        config = replace(config, strict=strict)
    return config.apply_overrides(list(overrides))


config = GazeConfig()
