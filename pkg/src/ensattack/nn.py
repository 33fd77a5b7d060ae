"""Minimal dense-tensor forward evaluation and input-gradient engine.

Supports the layer family {dense, conv2d (valid padding), relu, flatten} on
single samples, float32 throughout. Reverse mode is exposed publicly only
for gradients w.r.t. the input; parameter gradients exist for the trainer
in the zoo module and are deliberately not part of the public surface.
"""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import LayerSpecError, ShapeError


# ---------------------------------------------------------------------------
# layer specs


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int
    kind: str = "dense"


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel_size: int
    stride: int = 1
    kind: str = "conv2d"


@dataclass(frozen=True)
class Relu:
    kind: str = "relu"


@dataclass(frozen=True)
class Flatten:
    kind: str = "flatten"


LayerSpec = Dense | Conv2d | Relu | Flatten


def layer_to_dict(layer: LayerSpec) -> dict:
    if isinstance(layer, Dense):
        return {"kind": "dense", "in_features": layer.in_features, "out_features": layer.out_features}
    if isinstance(layer, Conv2d):
        return {
            "kind": "conv2d",
            "in_channels": layer.in_channels,
            "out_channels": layer.out_channels,
            "kernel_size": layer.kernel_size,
            "stride": layer.stride,
        }
    return {"kind": layer.kind}


def layer_from_dict(d: dict) -> LayerSpec:
    kind = d.get("kind")
    if kind == "dense":
        return Dense(int(d["in_features"]), int(d["out_features"]))
    if kind == "conv2d":
        return Conv2d(int(d["in_channels"]), int(d["out_channels"]), int(d["kernel_size"]), int(d.get("stride", 1)))
    if kind == "relu":
        return Relu()
    if kind == "flatten":
        return Flatten()
    raise LayerSpecError(f"unknown layer kind: {kind!r}")


def output_shape(layer: LayerSpec, in_shape: tuple) -> tuple:
    """Shape produced by one layer, or raise LayerSpecError if it cannot apply."""
    if isinstance(layer, Conv2d):
        if len(in_shape) != 3 or in_shape[0] != layer.in_channels:
            raise LayerSpecError(f"conv2d expects ({layer.in_channels},h,w), got {in_shape}")
        _, h, w = in_shape
        k, s = layer.kernel_size, layer.stride
        if h < k or w < k:
            raise LayerSpecError(f"conv2d kernel {k} larger than input {in_shape}")
        return (layer.out_channels, (h - k) // s + 1, (w - k) // s + 1)
    if isinstance(layer, Dense):
        if len(in_shape) != 1 or in_shape[0] != layer.in_features:
            raise LayerSpecError(f"dense expects ({layer.in_features},), got {in_shape}")
        return (layer.out_features,)
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    return in_shape  # relu


def compose_shapes(layers: Sequence[LayerSpec], input_shape: tuple) -> list:
    """Shapes flowing through the stack, input included. Raises if the stack
    does not compose or does not end in a logit vector."""
    shapes = [tuple(input_shape)]
    for layer in layers:
        shapes.append(output_shape(layer, shapes[-1]))
    if len(shapes[-1]) != 1:
        raise LayerSpecError(f"final layer must emit a logit vector, got shape {shapes[-1]}")
    return shapes


# ---------------------------------------------------------------------------
# model


class Model:
    """An immutable classifier: layer specs plus per-layer parameters.

    Parameters are stored in declaration order; dense and conv layers own a
    (weight, bias) pair, relu/flatten own nothing. Arrays are frozen after
    construction so models are safe to share across threads.
    """

    def __init__(self, layers: Sequence[LayerSpec], params: Sequence[tuple], input_shape: tuple,
                 num_classes: int, model_id: str = ""):
        if num_classes < 2:
            raise LayerSpecError(f"num_classes must be >= 2, got {num_classes}")
        self.layers = tuple(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.shapes = compose_shapes(self.layers, self.input_shape)
        if self.shapes[-1][0] != num_classes:
            raise LayerSpecError(
                f"stack emits {self.shapes[-1][0]} logits but num_classes={num_classes}")
        self.num_classes = int(num_classes)
        self.model_id = model_id
        frozen = []
        for layer, p in zip(self.layers, params, strict=True):
            # copy so freezing never aliases caller-owned arrays
            group = tuple(np.array(a, dtype=np.float32, order="C") for a in p)
            for a in group:
                a.flags.writeable = False
            frozen.append(group)
        self.params = tuple(frozen)

    def param_count(self) -> int:
        return sum(a.size for group in self.params for a in group)

    def param_arrays(self):
        for group in self.params:
            yield from group

    def with_params(self, new_params) -> "Model":
        return Model(self.layers, new_params, self.input_shape, self.num_classes, self.model_id)


def _check_input(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32)
    if x.shape != model.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match model input {model.input_shape}")
    return np.ascontiguousarray(x)


def _forward_saved(model: Model, x: np.ndarray) -> list:
    """Run the stack, keeping every intermediate activation for reverse mode."""
    acts = [x]
    a = x
    for layer, p in zip(model.layers, model.params):
        if isinstance(layer, Dense):
            w, b = p
            a = w @ a + b
        elif isinstance(layer, Conv2d):
            w, b = p
            a = kernels.conv2d_forward(a, w, b, layer.stride)
        elif isinstance(layer, Relu):
            a = np.maximum(a, np.float32(0.0))
        else:  # flatten
            a = a.reshape(-1)
        acts.append(a)
    return acts


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Logit vector for one sample."""
    x = _check_input(model, x)
    return _forward_saved(model, x)[-1]


def softmax(z: np.ndarray) -> np.ndarray:
    """Stable softmax (max-subtraction); output sums to 1 within 1e-6."""
    z = np.asarray(z, dtype=np.float32)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def backward(model: Model, acts: list, upstream: np.ndarray, want_param_grads: bool = False):
    """Reverse-mode pass over saved activations.

    Returns (dx, param_grads); param_grads is None unless requested, since
    the trainer is the only caller that needs it.
    """
    g = np.asarray(upstream, dtype=np.float32)
    if g.shape != acts[-1].shape:
        raise ShapeError(f"upstream shape {g.shape} does not match logits {acts[-1].shape}")
    param_grads = [None] * len(model.layers) if want_param_grads else None
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a_in = acts[i]
        if isinstance(layer, Dense):
            w, _ = model.params[i]
            if want_param_grads:
                param_grads[i] = (np.outer(g, a_in), g.copy())
            g = w.T @ g
        elif isinstance(layer, Conv2d):
            w, _ = model.params[i]
            g = np.ascontiguousarray(g, dtype=np.float32)
            if want_param_grads:
                param_grads[i] = kernels.conv2d_grad_params(g, a_in, layer.kernel_size,
                                                            layer.kernel_size, layer.stride)
            g = kernels.conv2d_grad_input(g, w, layer.stride, a_in.shape[1], a_in.shape[2])
        elif isinstance(layer, Relu):
            # subgradient at exactly 0 is defined as 0
            g = g * (a_in > 0)
        else:  # flatten
            g = g.reshape(a_in.shape)
        if want_param_grads and param_grads[i] is None:
            param_grads[i] = ()
    return g, param_grads


def input_gradient(model: Model, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of upstream . logits w.r.t. the input x."""
    x = _check_input(model, x)
    acts = _forward_saved(model, x)
    dx, _ = backward(model, acts, upstream)
    return dx


def fd_gradient(scalar_fn: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float32)
    flat = x.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + np.float32(h)
        f_plus = float(scalar_fn(bumped.reshape(x.shape)))
        bumped[i] = flat[i] - np.float32(h)
        f_minus = float(scalar_fn(bumped.reshape(x.shape)))
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape).astype(np.float32)
