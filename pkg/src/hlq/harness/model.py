"""Model descriptions and the sequential micro-network they build."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..backprop import BackwardStrategy
from ..errors import DimensionError, ParameterError
from ..quantize import RngState
from .layers import Conv2d, Flatten, Linear, MaxPool2d, ReLU, Tanh, softmax_cross_entropy

ACTIVATIONS = {"relu": ReLU, "tanh": Tanh}


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | linear | relu | tanh | maxpool | flatten
    params: dict = field(default_factory=dict)
    strategy: str | None = None  # per-layer override of the global strategy


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    input_shape: tuple  # per-sample shape, e.g. (1, 16, 16) or (64,)
    loss: str = "softmax_ce"
    init: str = "he"
    init_seed: int | None = None


def desk_cnn_spec(channels=(16, 32), fc_width: int = 64, classes: int = 10,
                  image: int = 16, activation: str = "relu",
                  overrides: dict | None = None) -> ModelSpec:
    """Reference 4-layer CNN: two conv blocks plus two linear layers, with
    the channel counts kept at multiples of 16."""
    overrides = overrides or {}
    c1, c2 = channels
    flat = c2 * (image // 4) * (image // 4)
    layers = (
        LayerSpec("conv", {"in_channels": 1, "out_channels": c1}, overrides.get("conv1")),
        LayerSpec(activation),
        LayerSpec("maxpool"),
        LayerSpec("conv", {"in_channels": c1, "out_channels": c2}, overrides.get("conv2")),
        LayerSpec(activation),
        LayerSpec("maxpool"),
        LayerSpec("flatten"),
        LayerSpec("linear", {"in_features": flat, "out_features": fc_width}, overrides.get("fc1")),
        LayerSpec(activation),
        LayerSpec("linear", {"in_features": fc_width, "out_features": classes}, overrides.get("fc2")),
    )
    return ModelSpec(layers=layers, input_shape=(1, image, image))


def mlp_spec(in_dim: int = 64, hidden: int = 32, classes: int = 10,
             activation: str = "tanh") -> ModelSpec:
    """Small smooth model for finite-difference gradient checks."""
    layers = (
        LayerSpec("linear", {"in_features": in_dim, "out_features": hidden}),
        LayerSpec(activation),
        LayerSpec("linear", {"in_features": hidden, "out_features": classes}),
    )
    return ModelSpec(layers=layers, input_shape=(in_dim,))


class Model:
    """Sequential network with per-layer backward-strategy dispatch."""

    def __init__(self, spec: ModelSpec, init_seed: int | None = None):
        self.spec = spec
        seed = spec.init_seed if spec.init_seed is not None else (init_seed or 0)
        rng = np.random.default_rng(np.random.Philox(key=np.array([seed, 0x1417], dtype=np.uint64)))
        self.layers = []
        for ls in spec.layers:
            if ls.kind == "conv":
                self.layers.append(Conv2d(rng=rng, **ls.params))
            elif ls.kind == "linear":
                self.layers.append(Linear(rng=rng, **ls.params))
            elif ls.kind in ACTIVATIONS:
                self.layers.append(ACTIVATIONS[ls.kind]())
            elif ls.kind == "maxpool":
                self.layers.append(MaxPool2d())
            elif ls.kind == "flatten":
                self.layers.append(Flatten())
            else:
                raise ParameterError(f"unknown layer kind {ls.kind!r}")
        if spec.loss != "softmax_ce":
            raise ParameterError(f"unknown loss {spec.loss!r}")
        self._trace_shapes()

    def _trace_shapes(self):
        shape = self.spec.input_shape
        for ls, layer in zip(self.spec.layers, self.layers):
            if ls.kind == "conv":
                c, h, w = shape
                if c != layer.in_channels:
                    raise DimensionError(
                        f"conv expects {layer.in_channels} channels, previous layer gives {c}")
                ho = (h + 2 * layer.pad - layer.kernel) // layer.stride + 1
                wo = (w + 2 * layer.pad - layer.kernel) // layer.stride + 1
                shape = (layer.out_channels, ho, wo)
            elif ls.kind == "linear":
                flat = int(np.prod(shape))
                if flat != layer.in_features:
                    raise DimensionError(
                        f"linear expects {layer.in_features} features, previous layer gives {flat}")
                shape = (layer.out_features,)
            elif ls.kind == "maxpool":
                c, h, w = shape
                if h % 2 or w % 2:
                    raise DimensionError(f"maxpool needs even spatial extents, got {shape}")
                shape = (c, h // 2, w // 2)
            elif ls.kind == "flatten":
                shape = (int(np.prod(shape)),)
        self.output_shape = shape

    # -- parameters ------------------------------------------------------

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(p for _, p in layer.parameters())
        return out

    def gradients(self):
        out = []
        for layer in self.layers:
            if isinstance(layer, (Conv2d, Linear)):
                out.extend(layer.gradients())
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def gemm_indices(self):
        return [i for i, l in enumerate(self.layers) if isinstance(l, (Conv2d, Linear))]

    # -- execution -------------------------------------------------------

    def forward(self, x: np.ndarray, strategies: dict | None = None,
                rng: RngState | None = None, train: bool = True) -> np.ndarray:
        strategies = strategies or {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (Conv2d, Linear)):
                s = strategies.get(i)
                layer_rng = None if rng is None else rng.split(i)
                x = layer.forward(x, strategy=s, rng=layer_rng, train=train)
            else:
                x = layer.forward(x, train=train)
        return x

    def backward(self, grad_logits: np.ndarray, strategies: dict,
                 rng: RngState | None = None) -> np.ndarray:
        g = grad_logits
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if isinstance(layer, (Conv2d, Linear)):
                s = strategies.get(i) or BackwardStrategy.vanilla()
                layer_rng = None if rng is None else rng.split(i)
                g = layer.backward(g, s, rng=layer_rng)
            else:
                g = layer.backward(g)
        return g

    def loss_and_grad(self, logits: np.ndarray, labels: np.ndarray):
        return softmax_cross_entropy(logits, labels)

    def accuracy(self, x: np.ndarray, labels: np.ndarray, batch: int = 512) -> float:
        hits = 0
        for start in range(0, len(x), batch):
            logits = self.forward(x[start:start + batch], train=False)
            hits += int((logits.argmax(axis=1) == labels[start:start + batch]).sum())
        return 100.0 * hits / max(len(x), 1)
