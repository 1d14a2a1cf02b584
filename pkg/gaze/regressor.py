"""
Gaze Regressor
Confidence-gated-unit network mapping a feature vector to the 2D gaze vector
in pixels plus a confidence output. Forward and backward passes are written
out by hand; training uses Adam with per-epoch learning-rate decay.
"""

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from gaze.dataset import NUM_KEYPOINTS
from gaze.errors import ConfigError, EmptyBatch, ModelMissing, NonFiniteLoss
from gaze.features import FEATURE_SIZE, as_triplets
from gaze.optim import Adam

logger = logging.getLogger(__name__)

CGU_FORMAT = "gaze-cgu/1"
N_UNITS = 2 * NUM_KEYPOINTS
HIDDEN = NUM_KEYPOINTS
N_OUT = 3
INIT_STD = 0.05

CGU_PARAMS = ('cgu_a', 'cgu_b', 'cgu_p', 'cgu_q')
PENALISED_FC = ('W1', 'W2')
PARAM_SHAPES: Dict[str, Tuple[int, ...]] = {
    'cgu_a': (N_UNITS,), 'cgu_b': (N_UNITS,), 'cgu_p': (N_UNITS,), 'cgu_q': (N_UNITS,),
    'W1': (N_UNITS, HIDDEN), 'b1': (HIDDEN,),
    'W2': (HIDDEN, HIDDEN), 'b2': (HIDDEN,),
    'W3': (HIDDEN, N_OUT), 'b3': (N_OUT,),
}


@dataclass(frozen=True)
class CguUnit:
    """One gated unit: ReLU(a*v + b) * sigmoid(p*c + q)."""
    a: float = 1.0
    b: float = 1.0
    p: float = 1.0
    q: float = 1.0


def cgu_forward(unit: CguUnit, v: float, c: float) -> float:
    return max(unit.a * v + unit.b, 0.0) * float(expit(unit.p * c + unit.q))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 400
    lr0: float = 0.05
    lr_decay: float = 0.9
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2_cgu: float = 1e-3
    l2_fc: float = 1e-4

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr0 <= 0:
            raise ConfigError("epochs, batch_size and lr0 must be positive")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.l2_cgu < 0 or self.l2_fc < 0:
            raise ConfigError("L2 coefficients must be non-negative")

    def learning_rate(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay ** epoch

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def split_inputs(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Feature rows -> (coordinates, confidences), each (B, 38).

    Pairs are (x_i, k_i) then (y_i, k_i) for each keypoint in canonical order.
    """
    T = np.asarray(X, dtype=float).reshape(-1, NUM_KEYPOINTS, 3)
    v = T[:, :, :2].reshape(len(T), N_UNITS)
    c = np.repeat(T[:, :, 2], 2, axis=1)
    return v, c


@dataclass
class CguRegressor:
    params: Dict[str, np.ndarray]
    l2_cgu: float = 1e-3
    l2_fc: float = 1e-4
    config: Optional[TrainConfig] = None
    history: List[Dict[str, float]] = field(default_factory=list)

    def units(self) -> List[CguUnit]:
        a, b, p, q = (self.params[name] for name in CGU_PARAMS)
        return [CguUnit(float(a[i]), float(b[i]), float(p[i]), float(q[i])) for i in range(N_UNITS)]

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        """(B, 3) rows of (g_x, g_y, sigma)."""
        out, _ = _forward(self.params, X)
        result = out.copy()
        result[:, 2] = expit(out[:, 2])
        return result

    def penalty(self) -> float:
        cgu = sum(float(np.sum(self.params[name] ** 2)) for name in CGU_PARAMS)
        fc = sum(float(np.sum(self.params[name] ** 2)) for name in PENALISED_FC)
        return self.l2_cgu * cgu + self.l2_fc * fc

    def to_dict(self) -> Dict[str, Any]:
        return {
            'format': CGU_FORMAT,
            'l2_cgu': self.l2_cgu,
            'l2_fc': self.l2_fc,
            'train_config': self.config.to_dict() if self.config is not None else None,
            'params': {name: self.params[name].tolist() for name in PARAM_SHAPES},
            'history': self.history,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CguRegressor":
        if data.get('format') != CGU_FORMAT:
            raise ModelMissing(f"unsupported regressor format {data.get('format')!r}")
        params = {}
        for name, shape in PARAM_SHAPES.items():
            params[name] = np.asarray(data['params'][name], dtype=float).reshape(shape)
        config = data.get('train_config')
        return cls(
            params=params,
            l2_cgu=float(data['l2_cgu']),
            l2_fc=float(data['l2_fc']),
            config=TrainConfig(**config) if config else None,
            history=list(data.get('history', [])),
        )


@dataclass(frozen=True)
class RegressorOutput:
    gaze2d: Tuple[float, float]
    sigma: float


def init_regressor(seed: int = 0, l2_cgu: float = 1e-3, l2_fc: float = 1e-4,
                   rng: Optional[np.random.Generator] = None) -> CguRegressor:
    """CGU scalars at 1, FC weights N(0, 0.05^2), biases 0."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    params = {name: np.ones(PARAM_SHAPES[name]) for name in CGU_PARAMS}
    for layer in (1, 2, 3):
        params[f'W{layer}'] = rng.normal(0.0, INIT_STD, size=PARAM_SHAPES[f'W{layer}'])
        params[f'b{layer}'] = np.zeros(PARAM_SHAPES[f'b{layer}'])
    return CguRegressor(params=params, l2_cgu=l2_cgu, l2_fc=l2_fc)


def _forward(params: Dict[str, np.ndarray], X: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    v, c = split_inputs(X)
    zv = params['cgu_a'] * v + params['cgu_b']
    r = np.maximum(zv, 0.0)
    s = expit(params['cgu_p'] * c + params['cgu_q'])
    u = r * s
    z1 = u @ params['W1'] + params['b1']
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params['W2'] + params['b2']
    h2 = np.maximum(z2, 0.0)
    out = h2 @ params['W3'] + params['b3']
    memory = {'v': v, 'c': c, 'zv': zv, 'r': r, 's': s, 'u': u, 'z1': z1, 'h1': h1, 'z2': z2, 'h2': h2}
    return out, memory


def forward(net: CguRegressor, fv: np.ndarray) -> Tuple[float, float, float]:
    gx, gy, sigma = net.forward_batch(np.asarray(fv, dtype=float).reshape(1, FEATURE_SIZE))[0]
    return float(gx), float(gy), float(sigma)


def _check_batch(X: np.ndarray, Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float).reshape(-1, FEATURE_SIZE)
    Y = np.asarray(Y, dtype=float).reshape(-1, 2)
    if len(X) == 0:
        raise EmptyBatch("regressor loss needs at least one sample")
    return X, Y


def data_loss(net: CguRegressor, X: np.ndarray, Y: np.ndarray) -> float:
    """sqrt(sum of squared x/y errors / (2B))."""
    X, Y = _check_batch(X, Y)
    out, _ = _forward(net.params, X)
    err = out[:, :2] - Y
    return float(np.sqrt(np.sum(err ** 2) / (2 * len(X))))


def loss(net: CguRegressor, X: np.ndarray, Y: np.ndarray) -> float:
    return data_loss(net, X, Y) + net.penalty()


def loss_and_grads(net: CguRegressor, X: np.ndarray, Y: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Total loss and its gradient for every parameter.

    sigma does not enter the data term, so the third output column gets no
    data gradient. At zero data loss the data gradient is taken as 0.
    """
    X, Y = _check_batch(X, Y)
    p = net.params
    out, m = _forward(p, X)
    B = len(X)
    err = out[:, :2] - Y
    rmse = float(np.sqrt(np.sum(err ** 2) / (2 * B)))

    dout = np.zeros_like(out)
    if rmse > 0:
        dout[:, :2] = err / (2 * B * rmse)

    grads = {}
    grads['W3'] = m['h2'].T @ dout
    grads['b3'] = dout.sum(axis=0)
    dz2 = (dout @ p['W3'].T) * (m['z2'] > 0)
    grads['W2'] = m['h1'].T @ dz2 + 2 * net.l2_fc * p['W2']
    grads['b2'] = dz2.sum(axis=0)
    dz1 = (dz2 @ p['W2'].T) * (m['z1'] > 0)
    grads['W1'] = m['u'].T @ dz1 + 2 * net.l2_fc * p['W1']
    grads['b1'] = dz1.sum(axis=0)

    du = dz1 @ p['W1'].T
    dzv = du * m['s'] * (m['zv'] > 0)
    dzc = du * m['r'] * m['s'] * (1.0 - m['s'])
    grads['cgu_a'] = (dzv * m['v']).sum(axis=0) + 2 * net.l2_cgu * p['cgu_a']
    grads['cgu_b'] = dzv.sum(axis=0) + 2 * net.l2_cgu * p['cgu_b']
    grads['cgu_p'] = (dzc * m['c']).sum(axis=0) + 2 * net.l2_cgu * p['cgu_p']
    grads['cgu_q'] = dzc.sum(axis=0) + 2 * net.l2_cgu * p['cgu_q']
    return rmse + net.penalty(), grads


def backward(net: CguRegressor, X: np.ndarray, Y: np.ndarray) -> Dict[str, np.ndarray]:
    return loss_and_grads(net, X, Y)[1]


def train(X: np.ndarray, Y: np.ndarray, config: TrainConfig = TrainConfig()) -> CguRegressor:
    """Mini-batch Adam; epoch e runs at lr0 * lr_decay**e and the last batch may be short."""
    X, Y = _check_batch(X, Y)
    rng = np.random.default_rng(config.seed)
    net = init_regressor(l2_cgu=config.l2_cgu, l2_fc=config.l2_fc, rng=rng)
    net.config = config
    optimizer = Adam(net.params, config.beta1, config.beta2, config.eps)

    for epoch in range(config.epochs):
        lr = config.learning_rate(epoch)
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_loss, grads = loss_and_grads(net, X[idx], Y[idx])
            if not np.isfinite(batch_loss):
                raise NonFiniteLoss("regressor loss is not finite", epoch)
            optimizer.step(net.params, grads, lr)
            total += batch_loss * len(idx)
        epoch_loss = total / len(X)
        net.history.append({'epoch': epoch, 'lr': lr, 'loss': epoch_loss})
        logger.info(f"Regressor epoch {epoch + 1}/{config.epochs}: loss {epoch_loss:.6f} lr {lr:.6g}")
    return net


def predict(net: CguRegressor, fv: np.ndarray) -> RegressorOutput:
    gx, gy, sigma = forward(net, fv)
    return RegressorOutput(gaze2d=(gx, gy), sigma=sigma)


def predict_batch(net: CguRegressor, X: np.ndarray) -> np.ndarray:
    return net.forward_batch(X)


def save_regressor(net: CguRegressor, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(net.to_dict(), f)
        f.write('\n')


def load_regressor(path: str) -> CguRegressor:
    if not os.path.exists(path):
        raise ModelMissing(f"regressor model not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return CguRegressor.from_dict(json.load(f))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ModelMissing(f"cannot read regressor model {path}: {e}") from e
