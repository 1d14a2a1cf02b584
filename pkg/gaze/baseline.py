"""
Baseline Classifier
Feed-forward network (57 -> 100 -> 100 -> 100 -> 4, ReLU, softmax) trained
with cross-entropy and Adam, used as a comparison for the SVC.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy.special import log_softmax, softmax

from gaze.dataset import CLASS_ORDER, GazeClass
from gaze.errors import EmptyBatch, ModelMissing, NonFiniteLoss
from gaze.features import FEATURE_SIZE
from gaze.optim import Adam

logger = logging.getLogger(__name__)

MLP_FORMAT = "gaze-mlp/1"


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray) -> np.ndarray:
    # subgradient 0 at exactly 0
    return np.where(x > 0, 1.0, 0.0)


@dataclass(frozen=True)
class MlpConfig:
    hidden: Tuple[int, ...] = (100, 100, 100)
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['hidden'] = list(self.hidden)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MlpConfig":
        data = dict(data)
        data['hidden'] = tuple(int(h) for h in data.get('hidden', cls.hidden))
        return cls(**data)


def layer_sizes(config: MlpConfig, n_in: int = FEATURE_SIZE, n_out: int = len(CLASS_ORDER)) -> List[int]:
    return [n_in, *config.hidden, n_out]


def init_params(config: MlpConfig, rng: np.random.Generator) -> Dict[str, np.ndarray]:
    """He-normal weights, zero biases."""
    sizes = layer_sizes(config)
    params = {}
    for layer, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), 1):
        params[f'W{layer}'] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        params[f'b{layer}'] = np.zeros(fan_out)
    return params


def _n_layers(params: Dict[str, np.ndarray]) -> int:
    return sum(1 for name in params if name.startswith('W'))


def forward(params: Dict[str, np.ndarray], X: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Logits and the per-layer memory needed by backward."""
    a = np.atleast_2d(np.asarray(X, dtype=float))
    memory = [a]
    n = _n_layers(params)
    for layer in range(1, n + 1):
        z = a @ params[f'W{layer}'] + params[f'b{layer}']
        if layer < n:
            a = relu(z)
            memory.extend([z, a])
        else:
            return z, memory
    raise ValueError("network has no layers")


def loss_and_grads(params: Dict[str, np.ndarray], X: np.ndarray,
                   y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise EmptyBatch("cross-entropy of an empty batch")
    logits, memory = forward(params, X)
    B = len(y)
    log_p = log_softmax(logits, axis=1)
    loss = float(-log_p[np.arange(B), y].mean())

    dz = softmax(logits, axis=1)
    dz[np.arange(B), y] -= 1.0
    dz /= B

    grads = {}
    n = _n_layers(params)
    for layer in range(n, 0, -1):
        a_prev = memory[2 * (layer - 1)]
        grads[f'W{layer}'] = a_prev.T @ dz
        grads[f'b{layer}'] = dz.sum(axis=0)
        if layer > 1:
            z_prev = memory[2 * (layer - 1) - 1]
            dz = (dz @ params[f'W{layer}'].T) * relu_grad(z_prev)
    return loss, grads


@dataclass
class MlpClassifier:
    params: Dict[str, np.ndarray]
    config: MlpConfig = field(default_factory=MlpConfig)
    class_order: Tuple[GazeClass, ...] = CLASS_ORDER

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits, _ = forward(self.params, X)
        return softmax(logits, axis=1)

    def predict(self, x: np.ndarray) -> Tuple[GazeClass, float]:
        proba = self.predict_proba(np.atleast_2d(x))[0]
        idx = int(np.argmax(proba))
        return self.class_order[idx], float(proba[idx])

    def predict_batch(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        proba = self.predict_proba(X)
        idx = np.argmax(proba, axis=1)
        return idx, proba[np.arange(len(proba)), idx]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format': MLP_FORMAT,
            'class_order': [c.value for c in self.class_order],
            'config': self.config.to_dict(),
            'params': {name: value.tolist() for name, value in sorted(self.params.items())},
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "MlpClassifier":
        if data.get('format') != MLP_FORMAT:
            raise ModelMissing(f"unsupported MLP model format {data.get('format')!r}")
        return cls(
            params={name: np.asarray(value, dtype=float) for name, value in data['params'].items()},
            config=MlpConfig.from_dict(data['config']),
            class_order=tuple(GazeClass(c) for c in data['class_order']),
        )


def train_mlp_classifier(X: np.ndarray, y: np.ndarray, config: MlpConfig = MlpConfig()) -> MlpClassifier:
    """Mini-batch Adam on cross-entropy; ``y`` holds class indices."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise EmptyBatch("no training samples for the baseline classifier")
    rng = np.random.default_rng(config.seed)
    params = init_params(config, rng)
    optimizer = Adam(params, config.beta1, config.beta2)

    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss("baseline classifier loss is not finite", epoch)
            optimizer.step(params, grads, config.lr)
            total += loss * len(idx)
        if epoch % 10 == 0 or epoch == config.epochs - 1:
            logger.info(f"MLP epoch {epoch + 1}/{config.epochs}: loss {total / len(y):.6f}")
    return MlpClassifier(params=params, config=config)


def predict_mlp(model: MlpClassifier, x: np.ndarray) -> Tuple[GazeClass, float]:
    return model.predict(x)


def save_mlp(model: MlpClassifier, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(model.to_dict(), f)
        f.write('\n')


def load_mlp(path: str) -> MlpClassifier:
    if not os.path.exists(path):
        raise ModelMissing(f"baseline model not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return MlpClassifier.from_dict(json.load(f))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ModelMissing(f"cannot read baseline model {path}: {e}") from e
