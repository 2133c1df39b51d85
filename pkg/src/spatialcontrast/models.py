"""Declarative convolutional models with a spatial-contrasting tap.

A :class:`ModelSpec` is an ordered list of :class:`LayerSpec` rows. The
``sc_tap`` row splits it into a trunk (everything before, trained by the
unsupervised criterion) and a head (everything after, added for supervised
training). Shapes are checked at build time, so a bad table fails before any
data flows.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import ops
from .errors import DimensionError
from .rng import make_rng
from .tensor import Tensor

KINDS = {"conv", "pool", "bn", "relu", "leaky_relu", "dropout", "gap", "affine", "softmax_head", "sc_tap"}


@dataclass
class LayerSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DimensionError(f"unknown layer kind {self.kind!r}")
        for key in ("kernel", "channels", "window", "stride", "units"):
            if key in self.params and self.params[key] < 1:
                raise DimensionError(f"{self.kind} layer needs positive {key}, got {self.params[key]}")

    def describe(self) -> str:
        p = self.params
        if self.kind == "conv":
            return f"conv {p['kernel']}x{p['kernel']} -> {p['channels']}"
        if self.kind == "pool":
            return f"maxpool {p['window']}x{p['window']} /{p['stride']}"
        if self.kind == "dropout":
            return f"dropout p={p['p']}"
        if self.kind == "affine":
            return f"affine -> {p['units']}"
        if self.kind == "leaky_relu":
            return f"leaky_relu {p.get('slope', ops.DEFAULT_LEAKY_SLOPE)}"
        return self.kind


def conv(kernel: int, channels: int, bn: bool = True, act: str | None = "relu", slope: float | None = None) -> list[LayerSpec]:
    """One table row: convolution, optional BN, optional activation.

    3x3 and 5x5 kernels get "same" padding; 1x1 needs none.
    """
    rows = [LayerSpec("conv", {"kernel": kernel, "channels": channels, "stride": 1, "padding": kernel // 2})]
    if bn:
        rows.append(LayerSpec("bn"))
    if act == "relu":
        rows.append(LayerSpec("relu"))
    elif act == "leaky_relu":
        rows.append(LayerSpec("leaky_relu", {} if slope is None else {"slope": slope}))
    return rows


def pool(window: int, stride: int, bn: bool = False) -> list[LayerSpec]:
    rows = [LayerSpec("pool", {"window": window, "stride": stride})]
    if bn:
        rows.append(LayerSpec("bn"))
    return rows


TAP = [LayerSpec("sc_tap")]


class ModelSpec:
    """Layers, declared input shape (H, W, C), parameters and BN state."""

    def __init__(self, name: str, input_shape: tuple[int, int, int], layers: Iterable[LayerSpec], seed: int = 0, multi_tap: bool = False):
        self.name = name
        self.input_shape = tuple(input_shape)
        self.layers = list(layers)
        self.params: dict[str, Tensor] = {}
        self.bn_states: dict[str, ops.BatchNormState] = {}
        self.training = True
        self.dropout_rng = make_rng(seed, "dropout")
        taps = [i for i, layer in enumerate(self.layers) if layer.kind == "sc_tap"]
        if not taps:
            raise DimensionError(f"model {name!r} has no sc_tap row")
        if len(taps) > 1 and not multi_tap:
            raise DimensionError(f"model {name!r} has {len(taps)} sc_tap rows; pass multi_tap=True to allow it")
        self.taps = taps
        self.shapes = self._infer_shapes()
        self.init_parameters(make_rng(seed, "init"))

    # -- structure ----------------------------------------------------------
    @property
    def tap(self) -> int:
        """Index of the last tap row; the trunk ends here."""
        return self.taps[-1]

    def _infer_shapes(self) -> list[tuple[int, ...]]:
        shape = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            shape = self._next_shape(i, layer, shape)
            shapes.append(shape)
        return shapes

    def _next_shape(self, i: int, layer: LayerSpec, shape: tuple[int, ...]) -> tuple[int, ...]:
        p = layer.params
        if layer.kind == "conv":
            h, w, _ = self._spatial(i, layer, shape)
            k, pad = p["kernel"], p.get("padding", 0)
            if k > h + 2 * pad or k > w + 2 * pad:
                raise DimensionError(f"layer {i} ({layer.describe()}): kernel exceeds input {h}x{w}")
            s = p.get("stride", 1)
            return ((h + 2 * pad - k) // s + 1, (w + 2 * pad - k) // s + 1, p["channels"])
        if layer.kind == "pool":
            h, w, c = self._spatial(i, layer, shape)
            k, s = p["window"], p["stride"]
            if k > h or k > w:
                raise DimensionError(f"layer {i} ({layer.describe()}): window exceeds input {h}x{w}")
            return ((h - k) // s + 1, (w - k) // s + 1, c)
        if layer.kind == "gap":
            return (self._spatial(i, layer, shape)[2],)
        if layer.kind == "affine":
            return (p["units"],)
        return shape

    @staticmethod
    def _spatial(i: int, layer: LayerSpec, shape) -> tuple[int, int, int]:
        if len(shape) != 3:
            raise DimensionError(f"layer {i} ({layer.describe()}) needs a spatial H x W x C input, got {shape}")
        return shape

    def init_parameters(self, rng: np.random.Generator, layers: Iterable[int] | None = None) -> None:
        """He-uniform (fan-in) weights, zero biases, gamma = 1, beta = 0."""
        chosen = range(len(self.layers)) if layers is None else layers
        for i in chosen:
            layer = self.layers[i]
            in_shape = self.input_shape if i == 0 else self.shapes[i - 1]
            key = f"{i:02d}.{layer.kind}"
            if layer.kind == "conv":
                k, cin, cout = layer.params["kernel"], in_shape[2], layer.params["channels"]
                self._set(f"{key}.weight", _he_uniform(rng, (k, k, cin, cout), k * k * cin))
                self._set(f"{key}.bias", np.zeros(cout))
            elif layer.kind == "affine":
                d = int(np.prod(in_shape))
                self._set(f"{key}.weight", _he_uniform(rng, (d, layer.params["units"]), d))
                self._set(f"{key}.bias", np.zeros(layer.params["units"]))
            elif layer.kind == "bn":
                c = in_shape[-1]
                self._set(f"{key}.gamma", np.ones(c))
                self._set(f"{key}.beta", np.zeros(c))
                self.bn_states[key] = ops.BatchNormState(c)

    def _set(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(np.asarray(value, dtype=np.float32), requires_grad=True, name=name)

    def layer_of(self, name: str) -> int:
        return int(name.split(".", 1)[0])

    def parameters(self, part: str = "all") -> dict[str, Tensor]:
        """Named parameters of the ``trunk``, the ``head`` or ``all`` layers."""
        if part == "all":
            return dict(self.params)
        if part == "trunk":
            return {k: v for k, v in self.params.items() if self.layer_of(k) < self.tap}
        if part == "head":
            return {k: v for k, v in self.params.items() if self.layer_of(k) > self.tap}
        raise ValueError(f"part must be all, trunk or head, got {part!r}")

    def head_layers(self) -> list[int]:
        return list(range(self.tap + 1, len(self.layers)))

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def fingerprint(self) -> str:
        """Hash of the architecture name and every parameter/state shape."""
        schema = [self.name, [(k, list(v.shape)) for k, v in sorted(self.params.items())], sorted(self.bn_states)]
        return hashlib.sha256(json.dumps(schema).encode()).hexdigest()

    def train(self) -> "ModelSpec":
        self.training = True
        return self

    def eval(self) -> "ModelSpec":
        self.training = False
        return self

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def summary(self) -> str:
        lines = [f"{self.name}: input {self.input_shape}, {self.parameter_count()} parameters"]
        for i, (layer, shape) in enumerate(zip(self.layers, self.shapes)):
            mark = "  <-- spatial contrasting" if layer.kind == "sc_tap" else ""
            lines.append(f"  {i:2d} {layer.describe():<24} {shape}{mark}")
        return "\n".join(lines)

    # -- forward ------------------------------------------------------------
    def run(self, x: Tensor, start: int = 0, stop: int | None = None, taps: list | None = None) -> Tensor:
        """Apply layers ``start <= i < stop``; tap rows append their input to ``taps``."""
        stop = len(self.layers) if stop is None else stop
        expected = self.input_shape if start == 0 else self.shapes[start - 1]
        if tuple(x.shape[1:]) != tuple(expected):
            raise DimensionError(f"layer {start}: expected per-example shape {expected}, got {tuple(x.shape[1:])}")
        for i in range(start, stop):
            try:
                x = self._apply(i, self.layers[i], x, taps)
            except DimensionError as exc:
                raise DimensionError(f"layer {i} ({self.layers[i].describe()}): {exc}") from exc
        return x

    def _apply(self, i: int, layer: LayerSpec, x: Tensor, taps) -> Tensor:
        key = f"{i:02d}.{layer.kind}"
        p = layer.params
        kind = layer.kind
        if kind == "conv":
            return ops.conv2d(x, self.params[f"{key}.weight"], self.params[f"{key}.bias"], p.get("stride", 1), p.get("padding", 0))
        if kind == "pool":
            return ops.maxpool2d(x, p["window"], p["stride"])
        if kind == "bn":
            return ops.batchnorm(x, self.params[f"{key}.gamma"], self.params[f"{key}.beta"], self.bn_states[key], self.training)
        if kind == "relu":
            return ops.relu(x)
        if kind == "leaky_relu":
            return ops.leaky_relu(x, p.get("slope", ops.DEFAULT_LEAKY_SLOPE))
        if kind == "dropout":
            return ops.dropout(x, p["p"], self.training, self.dropout_rng)
        if kind == "gap":
            return ops.global_avg_pool(x)
        if kind == "affine":
            if x.ndim > 2:
                x = ops.flatten(x)
            return ops.affine(x, self.params[f"{key}.weight"], self.params[f"{key}.bias"])
        if kind == "sc_tap":
            if taps is not None:
                taps.append(x)
            return x
        return x  # softmax_head: logits pass through; the loss applies the softmax


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def forward_trunk(spec: ModelSpec, x: Tensor) -> Tensor:
    """Feature map at the (last) spatial-contrasting tap."""
    return spec.run(x, 0, spec.tap)


def forward_taps(spec: ModelSpec, x: Tensor) -> list[Tensor]:
    """Feature maps at every tap, for multi-layer contrasting."""
    taps: list[Tensor] = []
    spec.run(x, 0, spec.tap + 1, taps)
    return taps


def forward_head(spec: ModelSpec, features: Tensor) -> Tensor:
    return spec.run(features, spec.tap + 1)


def forward_full(spec: ModelSpec, x: Tensor) -> Tensor:
    return spec.run(x)


# -- the three architectures -----------------------------------------------


def build_mnist_model(seed: int = 0) -> ModelSpec:
    layers = [
        *conv(5, 32, bn=False),
        *pool(2, 2, bn=True),
        *conv(3, 64),
        *conv(3, 64),
        *pool(2, 2, bn=True),
        *TAP,
        *conv(3, 128),
        *conv(1, 10),
        LayerSpec("gap"),
        LayerSpec("softmax_head"),
    ]
    return ModelSpec("mnist", (28, 28, 1), layers, seed)


def build_cifar10_model(seed: int = 0, slope: float | None = None) -> ModelSpec:
    block = functools.partial(conv, act="leaky_relu", slope=slope)
    layers = [
        *block(3, 96), *block(3, 96), *block(3, 96),
        *pool(2, 2, bn=True),
        *block(3, 192), *block(3, 192), *block(3, 192),
        *pool(2, 2, bn=True),
        *TAP,
        *block(3, 192),
        *block(1, 192),
        *block(1, 10),
        LayerSpec("gap"),
        LayerSpec("softmax_head"),
    ]
    return ModelSpec("cifar10", (32, 32, 3), layers, seed)


def build_stl10_model(seed: int = 0) -> ModelSpec:
    layers = [
        *conv(5, 64), *conv(1, 160), *conv(1, 96),
        *pool(3, 2),
        *conv(5, 192), *conv(1, 192), *conv(1, 192),
        *pool(3, 2),
        *conv(3, 192), *conv(1, 192), *conv(1, 192),
        *TAP,
        *conv(3, 256, bn=False),
        *pool(3, 2),
        LayerSpec("dropout", {"p": 0.5}),
        *conv(3, 128, bn=False),
        LayerSpec("dropout", {"p": 0.5}),
        LayerSpec("affine", {"units": 10}),
        LayerSpec("softmax_head"),
    ]
    return ModelSpec("stl10", (96, 96, 3), layers, seed)


BUILDERS = {"mnist": build_mnist_model, "cifar10": build_cifar10_model, "stl10": build_stl10_model}


def build_model(name: str, seed: int = 0) -> ModelSpec:
    try:
        return BUILDERS[name](seed=seed)
    except KeyError:
        raise DimensionError(f"unknown model {name!r}; choose from {sorted(BUILDERS)}") from None
