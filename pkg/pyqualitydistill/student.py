"""
Student regressor: a small multilayer perceptron over fixed-length feature vectors.

Parameters are plain numpy arrays; gradients are computed analytically and
updated with AdamW (weight decay decoupled from the adaptive term).
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.special import erf

from pyqualitydistill.exceptions import (
    ConfigurationError,
    FormatError,
    MissingArtifactError,
    ShapeError,
    TrainingDivergenceError,
)
from pyqualitydistill.utils import PathLike, float_list, read_json, write_json

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "pyqualitydistill.checkpoint"
CHECKPOINT_VERSION = 1
_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class StudentParams:
    """Weights (out x in) and biases of every affine layer; the last layer has one output."""
    layer_sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "StudentParams":
        return StudentParams(
            tuple(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def arrays(self) -> List[np.ndarray]:
        """Parameter arrays in optimizer order: w0, b0, w1, b1, ..."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass
class StudentGrads:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be > 0, got {self.eps}")
        if not self.weight_decay >= 0:
            raise ConfigurationError(f"weight decay must be >= 0, got {self.weight_decay}")


@dataclass
class OptimizerState:
    hyper: AdamWHyper
    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    step: int = 0

    def copy(self) -> "OptimizerState":
        return OptimizerState(
            self.hyper,
            [m.copy() for m in self.first_moment],
            [v.copy() for v in self.second_moment],
            self.step,
        )


@dataclass
class Checkpoint:
    params: StudentParams
    optimizer: Optional[OptimizerState] = None
    seed_lineage: Dict[str, Any] = field(default_factory=dict)


def default_hidden_sizes(input_dim: int) -> Tuple[int, ...]:
    if input_dim <= 64:
        return (64, 32)
    return (input_dim, max(1, input_dim // 2))


def _validate_layer_sizes(layer_sizes: Sequence[int]) -> Tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ConfigurationError(f"need at least 2 layer sizes, got {list(sizes)}")
    if any(s <= 0 for s in sizes):
        raise ConfigurationError(f"layer sizes must be positive, got {list(sizes)}")
    if sizes[-1] != 1:
        raise ConfigurationError(f"last layer must have 1 output, got {sizes[-1]}")
    return sizes


def init_params(layer_sizes: Sequence[int], seed: int) -> StudentParams:
    """
    Initialize a student with uniform weights bounded by sqrt(6 / (fan_in + fan_out)) and zero biases.

    Args:
        layer_sizes: Input dimension, hidden widths, then 1.
        seed: Generator seed; equal seeds give bitwise-equal parameters.

    Returns:
        StudentParams: Fresh parameters.

    Raises:
        ConfigurationError: If the sizes are not a valid scalar-output network.

    Example:
        >>> p = init_params([16, 64, 32, 1], seed=0)
        >>> [w.shape for w in p.weights]
        [(64, 16), (32, 64), (1, 32)]
    """
    sizes = _validate_layer_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out, dtype=np.float64))
    return StudentParams(sizes, weights, biases)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


def _as_batch(params: StudentParams, features: Any) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"expected features of shape (n, {params.input_dim}), got {x.shape}")
    return x


def _forward_trace(params: StudentParams, x: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Pre-activations and layer inputs of every layer."""
    inputs, pre = [], []
    a = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = z if i == last else gelu(z)
    return inputs, pre


def forward_batch(params: StudentParams, features: Any) -> np.ndarray:
    """Scores for a batch of feature rows, shape (n,)."""
    x = _as_batch(params, features)
    _, pre = _forward_trace(params, x)
    return pre[-1][:, 0]


def forward(params: StudentParams, feature: Any) -> float:
    """
    Score one feature vector.

    Raises:
        ShapeError: If the vector length differs from the input dimension.
    """
    vec = np.asarray(feature, dtype=np.float64)
    if vec.shape != (params.input_dim,):
        raise ShapeError(f"expected a feature vector of length {params.input_dim}, got shape {vec.shape}")
    return float(forward_batch(params, vec[None, :])[0])


def backward(params: StudentParams, features: Any, output_grads: Any) -> StudentGrads:
    """
    Gradients of sum_i output_grads[i] * s(features[i]) with respect to every parameter.

    Raises:
        ShapeError: If output_grads does not have one entry per feature row.
    """
    x = _as_batch(params, features)
    g = np.asarray(output_grads, dtype=np.float64)
    if g.shape != (x.shape[0],):
        raise ShapeError(f"expected {x.shape[0]} output gradients, got shape {g.shape}")

    inputs, pre = _forward_trace(params, x)
    grad_w: List[np.ndarray] = [np.empty(0)] * params.n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * params.n_layers
    delta = g[:, None]
    for i in range(params.n_layers - 1, -1, -1):
        grad_w[i] = delta.T @ inputs[i]
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * gelu_grad(pre[i - 1])
    return StudentGrads(grad_w, grad_b)


def init_optimizer(params: StudentParams, hyper: Optional[AdamWHyper] = None) -> OptimizerState:
    hyper = hyper or AdamWHyper()
    arrays = params.arrays()
    return OptimizerState(
        hyper=hyper,
        first_moment=[np.zeros_like(a) for a in arrays],
        second_moment=[np.zeros_like(a) for a in arrays],
        step=0,
    )


def optimizer_step(
    params: StudentParams,
    grads: StudentGrads,
    state: OptimizerState,
    trainable_layers: Optional[Set[int]] = None,
) -> Tuple[StudentParams, OptimizerState]:
    """
    One AdamW update, in place.

    Weight decay shrinks each parameter by (1 - lr * weight_decay) independently of
    the bias-corrected moment term. Layers outside trainable_layers are left untouched.

    Raises:
        ShapeError: If gradients or moments do not match the parameters.
        TrainingDivergenceError: If a gradient is non-finite or the update produces one.
    """
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(g_arrays) != len(p_arrays) or len(state.first_moment) != len(p_arrays):
        raise ShapeError("gradient/moment count does not match parameter count")
    for p, g, m in zip(p_arrays, g_arrays, state.first_moment):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")

    step = state.step + 1
    if not all(np.all(np.isfinite(g)) for g in g_arrays):
        raise TrainingDivergenceError("non-finite gradient", step=step)

    h = state.hyper
    bias1 = 1.0 - h.beta1 ** step
    bias2 = 1.0 - h.beta2 ** step
    updates = []
    for k, (p, g) in enumerate(zip(p_arrays, g_arrays)):
        if trainable_layers is not None and (k // 2) not in trainable_layers:
            continue
        m = h.beta1 * state.first_moment[k] + (1.0 - h.beta1) * g
        v = h.beta2 * state.second_moment[k] + (1.0 - h.beta2) * g * g
        new_p = p * (1.0 - h.lr * h.weight_decay) - h.lr * (m / bias1) / (np.sqrt(v / bias2) + h.eps)
        if not (np.all(np.isfinite(new_p)) and np.all(np.isfinite(v))):
            # nothing has been written yet; params and state stay as they were
            raise TrainingDivergenceError("non-finite parameter after update", step=step)
        updates.append((k, new_p, m, v))

    for k, new_p, m, v in updates:
        p_arrays[k][...] = new_p
        state.first_moment[k][...] = m
        state.second_moment[k][...] = v
    state.step = step
    return params, state


def _flatten(arrays: Iterable[np.ndarray]) -> List[List[float]]:
    return [float_list(a.ravel()) for a in arrays]


def _reshape(values: Sequence[Sequence[float]], shapes: Sequence[Tuple[int, ...]], path: Path) -> List[np.ndarray]:
    if len(values) != len(shapes):
        raise FormatError(path, 1, 1, f"expected {len(shapes)} arrays, got {len(values)}")
    out = []
    for flat, shape in zip(values, shapes):
        arr = np.asarray(flat, dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise FormatError(path, 1, 1, f"array of {arr.size} values does not fit shape {shape}")
        out.append(arr.reshape(shape))
    return out


def save_checkpoint(
    path: PathLike,
    params: StudentParams,
    optimizer: Optional[OptimizerState] = None,
    seed_lineage: Optional[Dict[str, Any]] = None,
) -> None:
    """Write parameters, optional optimizer state and seed lineage as a versioned JSON document."""
    document: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": list(params.layer_sizes),
        "weights": _flatten(params.weights),
        "biases": _flatten(params.biases),
        "optimizer": None,
        "seed_lineage": dict(seed_lineage or {}),
    }
    if optimizer is not None:
        h = optimizer.hyper
        document["optimizer"] = {
            "step": optimizer.step,
            "hyper": {
                "lr": h.lr,
                "beta1": h.beta1,
                "beta2": h.beta2,
                "eps": h.eps,
                "weight_decay": h.weight_decay,
            },
            "first_moment": _flatten(optimizer.first_moment),
            "second_moment": _flatten(optimizer.second_moment),
        }
    write_json(document, path)
    logger.debug("Checkpoint written to %s", path)


def load_checkpoint(path: PathLike) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint; values round-trip exactly.

    Raises:
        MissingArtifactError: If the file does not exist.
        FormatError: If the document is not a checkpoint of a supported version.
    """
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, "no checkpoint at this location")
    doc = read_json(path)
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(path, 1, 1, "not a student checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(path, 1, 1, f"unsupported checkpoint version {doc.get('version')}")

    try:
        sizes = _validate_layer_sizes(doc["layer_sizes"])
    except ConfigurationError as e:
        raise FormatError(path, 1, 1, str(e)) from e
    w_shapes = [(o, i) for i, o in zip(sizes[:-1], sizes[1:])]
    b_shapes = [(o,) for o in sizes[1:]]
    params = StudentParams(sizes, _reshape(doc["weights"], w_shapes, path), _reshape(doc["biases"], b_shapes, path))

    optimizer = None
    opt = doc.get("optimizer")
    if opt is not None:
        shapes = [a.shape for a in params.arrays()]
        optimizer = OptimizerState(
            hyper=AdamWHyper(**opt["hyper"]),
            first_moment=_reshape(opt["first_moment"], shapes, path),
            second_moment=_reshape(opt["second_moment"], shapes, path),
            step=int(opt["step"]),
        )
    return Checkpoint(params, optimizer, dict(doc.get("seed_lineage") or {}))
