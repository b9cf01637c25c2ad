"""Dense feed-forward networks with hand-written backpropagation.

Everything is float64 and batch-major: a batch is a ``(rows, features)``
array and a layer computes ``act(X @ W + b)`` with ``W`` of shape
``(input_dim, output_dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, TrainingError, ValidationError

ACTIVATIONS = ("relu", "linear")


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValidationError(f"layer dims must be >= 1, got {self.input_dim}->{self.output_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")


@dataclass
class ParameterSet:
    """Weights and biases of a stack of layers.

    Gradients and optimizer velocities reuse this container so that their
    shapes mirror the parameters exactly.
    """

    specs: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if not (len(self.specs) == len(self.weights) == len(self.biases)):
            raise DimensionError("specs, weights and biases must have equal length")
        for i, (spec, w, b) in enumerate(zip(self.specs, self.weights, self.biases)):
            if w.shape != (spec.input_dim, spec.output_dim):
                raise DimensionError(f"layer {i}: weight shape {w.shape} != {(spec.input_dim, spec.output_dim)}")
            if b.shape != (spec.output_dim,):
                raise DimensionError(f"layer {i}: bias shape {b.shape} != {(spec.output_dim,)}")
        for i in range(1, len(self.specs)):
            if self.specs[i].input_dim != self.specs[i - 1].output_dim:
                raise DimensionError(f"layer {i}: input_dim does not match previous output_dim")

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].output_dim

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def zeros_like(self) -> ParameterSet:
        return ParameterSet(list(self.specs), [np.zeros_like(w) for w in self.weights],
                            [np.zeros_like(b) for b in self.biases])

    def copy(self) -> ParameterSet:
        return ParameterSet(list(self.specs), [w.copy() for w in self.weights],
                            [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        """Weights and biases interleaved, layer by layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def scaled(self, factor: float) -> ParameterSet:
        return ParameterSet(list(self.specs), [factor * w for w in self.weights],
                            [factor * b for b in self.biases])

    def __add__(self, other: ParameterSet) -> ParameterSet:
        return ParameterSet(list(self.specs), [a + b for a, b in zip(self.weights, other.weights)],
                            [a + b for a, b in zip(self.biases, other.biases)])


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre_activations: list[np.ndarray] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.pre_activations)


def layer_specs(dims: Sequence[int], final_activation: str = "linear") -> list[LayerSpec]:
    """Relu hidden layers between consecutive ``dims``; last layer uses ``final_activation``."""
    if len(dims) < 2:
        raise ValidationError("need at least input and output dims")
    specs = []
    for i in range(len(dims) - 1):
        act = final_activation if i == len(dims) - 2 else "relu"
        specs.append(LayerSpec(int(dims[i]), int(dims[i + 1]), act))
    return specs


def init_params(specs: Sequence[LayerSpec], rng: np.random.Generator) -> ParameterSet:
    """He-uniform for relu layers, Xavier-uniform for linear ones, zero biases."""
    weights, biases = [], []
    for spec in specs:
        if spec.activation == "relu":
            limit = np.sqrt(6.0 / spec.input_dim)
        else:
            limit = np.sqrt(6.0 / (spec.input_dim + spec.output_dim))
        weights.append(rng.uniform(-limit, limit, size=(spec.input_dim, spec.output_dim)))
        biases.append(np.zeros(spec.output_dim))
    return ParameterSet(list(specs), weights, biases)


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D batch, got shape {x.shape}")
    return x


def forward(params: ParameterSet, x) -> tuple[np.ndarray, ForwardTrace]:
    x = _as_batch(x)
    trace = ForwardTrace()
    h = x
    for i, (spec, w, b) in enumerate(zip(params.specs, params.weights, params.biases)):
        if h.shape[1] != spec.input_dim:
            raise DimensionError(f"layer {i}: input has {h.shape[1]} columns, expected {spec.input_dim}")
        trace.inputs.append(h)
        z = h @ w + b
        h = np.maximum(z, 0.0) if spec.activation == "relu" else z
        trace.pre_activations.append(z)
        trace.activations.append(h)
    return h, trace


def backward(params: ParameterSet, trace: ForwardTrace, output_grad) -> tuple[ParameterSet, np.ndarray]:
    """Gradients of a scalar loss given ``d loss / d output``.

    Returns parameter gradients (same shapes as ``params``) and the gradient
    with respect to the network input.
    """
    g = np.asarray(output_grad, dtype=np.float64)
    if trace.depth != len(params.specs):
        raise DimensionError(f"trace depth {trace.depth} != layer count {len(params.specs)}")
    if g.shape != trace.activations[-1].shape:
        raise DimensionError(f"output_grad shape {g.shape} != output shape {trace.activations[-1].shape}")
    n = len(params.specs)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    for i in reversed(range(n)):
        if params.specs[i].activation == "relu":
            g = g * (trace.pre_activations[i] > 0.0)
        dws[i] = trace.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return ParameterSet(list(params.specs), dws, dbs), g


def softmax(logits) -> np.ndarray:
    z = _as_batch(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits."""
    z = _as_batch(logits)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != z.shape[0]:
        raise DimensionError(f"need one label per row: {labels.shape} vs {z.shape[0]} rows")
    if labels.size and (not np.issubdtype(labels.dtype, np.integer)
                        or labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ValidationError(f"labels must be integers in [0, {z.shape[1]})")
    n = z.shape[0]
    if n == 0:
        return 0.0, np.zeros_like(z)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_norm - shifted[rows, labels]))
    grad = np.exp(shifted - log_norm[:, None])
    grad[rows, labels] -= 1.0
    return max(loss, 0.0), grad / n


def sgd_step(params: ParameterSet, grads: ParameterSet, lr: float, momentum: float,
             velocity: ParameterSet | None = None) -> tuple[ParameterSet, ParameterSet]:
    """Heavy-ball SGD: ``v <- momentum*v - lr*g``; ``theta <- theta + v``."""
    if not lr > 0:
        raise ValidationError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValidationError(f"momentum must be in [0, 1), got {momentum}")
    if velocity is None:
        velocity = params.zeros_like()
    for i, (dw, db) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise TrainingError(f"non-finite gradient in layer {i}")
    new_w, new_b, vel_w, vel_b = [], [], [], []
    for w, b, dw, db, vw, vb in zip(params.weights, params.biases, grads.weights, grads.biases,
                                    velocity.weights, velocity.biases):
        vw = momentum * vw - lr * dw
        vb = momentum * vb - lr * db
        vel_w.append(vw)
        vel_b.append(vb)
        new_w.append(w + vw)
        new_b.append(b + vb)
    specs = list(params.specs)
    return ParameterSet(specs, new_w, new_b), ParameterSet(list(specs), vel_w, vel_b)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(loss_fn: Callable[[], float], arrays: Sequence[np.ndarray],
                     step: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``loss_fn`` w.r.t. every entry of ``arrays`` (perturbed in place)."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = hi = orig + step
            up = loss_fn()
            flat[j] = lo = orig - step
            down = loss_fn()
            flat[j] = orig
            # divide by the step actually taken, not the nominal one
            gflat[j] = (up - down) / (hi - lo)
        grads.append(g)
    return grads


def grad_check(params: ParameterSet, x, labels, step: float = 1e-5,
               backward_fn: Callable = backward) -> float:
    """Largest relative disagreement between backprop and central differences.

    The loss is ``softmax_xent(forward(params, x), labels)``. ``backward_fn``
    can be swapped for a deliberately broken version to check that the
    checker notices.
    """
    if params.num_parameters >= 10_000:
        raise ValidationError("grad_check is meant for nets with fewer than 10^4 parameters")
    x = _as_batch(x)
    labels = np.asarray(labels, dtype=np.int64)
    work = params.copy()
    out, trace = forward(work, x)
    _, dlogits = softmax_xent(out, labels)
    analytic, _ = backward_fn(work, trace, dlogits)

    def loss():
        return softmax_xent(forward(work, x)[0], labels)[0]

    numeric = numeric_gradient(loss, work.arrays(), step)
    worst = 0.0
    for a, n in zip(analytic.arrays(), numeric):
        err = relative_error(a, n)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
