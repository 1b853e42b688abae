"""Small sequential models built from dense and compressed layers.

Parameters live in flat name -> array dicts (``layer.factor``), which
keeps the training step functional: a forward pass wraps the current
arrays in tape nodes, and the backward pass returns a gradient dict with
the same keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatchError
from .layers import (
    ConvKernelSpec,
    TensorizedFCSpec,
    conv_forward_var,
    factor_arrays,
    fc_forward_var,
    format_from_arrays,
    init_conv_params,
    init_fc_params,
)

__all__ = [
    "DenseFC",
    "CompressedFC",
    "CompressedConv",
    "ReLU",
    "MaxPool2",
    "Flatten",
    "Model",
]


class ReLU:
    has_params = False

    def forward(self, variables, x):
        return ad.relu(x)


class MaxPool2:
    has_params = False

    def forward(self, variables, x):
        return ad.maxpool2x2(x)


class Flatten:
    has_params = False

    def forward(self, variables, x):
        batch = x.shape[0]
        return ad.reshape(x, (batch, prod(x.shape[1:])))


@dataclass
class DenseFC:
    name: str
    in_features: int
    out_features: int
    has_params = True

    def init(self, rng):
        std = 1.0 / np.sqrt(self.in_features)
        return {
            "W": std * rng.standard_normal((self.out_features, self.in_features)),
            "b": np.zeros(self.out_features),
        }

    def forward(self, variables, x):
        y = ad.tensordot(x, variables["W"], ([1], [1]))
        return ad.add(y, variables["b"])

    def weight_params(self, arrays):
        return arrays["W"].size

    def dense_weight_size(self):
        return self.in_features * self.out_features


@dataclass
class CompressedFC:
    name: str
    spec: TensorizedFCSpec
    mode: str = "chain"
    has_params = True

    def init(self, rng):
        fmt = init_fc_params(self.spec, rng)
        arrays = dict(factor_arrays(fmt))
        arrays["b"] = np.zeros(self.spec.M)
        return arrays

    def forward(self, variables, x):
        factors = {k: v for k, v in variables.items() if k != "b"}
        y = fc_forward_var(self.spec, factors, x, mode=self.mode)
        return ad.add(y, variables["b"])

    def format_from(self, arrays):
        return format_from_arrays(self.spec, arrays)

    def weight_params(self, arrays):
        return sum(v.size for k, v in arrays.items() if k != "b")

    def dense_weight_size(self):
        return self.spec.M * self.spec.N


@dataclass
class CompressedConv:
    name: str
    spec: ConvKernelSpec
    stride: int = 1
    padding: str | int = "same"
    has_params = True

    def init(self, rng):
        fmt = init_conv_params(self.spec, rng)
        arrays = dict(factor_arrays(fmt))
        arrays["b"] = np.zeros(self.spec.S)
        return arrays

    def forward(self, variables, x):
        factors = {k: v for k, v in variables.items() if k != "b"}
        y = conv_forward_var(self.spec, factors, x, self.stride, self.padding)
        return ad.add(y, variables["b"])

    def format_from(self, arrays):
        return format_from_arrays(self.spec, arrays)

    def weight_params(self, arrays):
        return sum(v.size for k, v in arrays.items() if k != "b")

    def dense_weight_size(self):
        return self.spec.filter_volume * self.spec.C * self.spec.S


class Model:
    """A named sequence of layers acting on flat parameter dicts."""

    def __init__(self, layers, input_shape):
        self.layers = []
        names = set()
        for layer in layers:
            if layer.has_params:
                if layer.name in names:
                    raise ShapeMismatchError(f"duplicate layer name {layer.name!r}")
                names.add(layer.name)
            self.layers.append(layer)
        self.input_shape = tuple(input_shape)
        self.params: dict[str, np.ndarray] | None = None

    def init_params(self, rng) -> dict[str, np.ndarray]:
        params = {}
        for layer in self.layers:
            if not layer.has_params:
                continue
            for key, arr in layer.init(rng).items():
                params[f"{layer.name}.{key}"] = arr
        return params

    def _layer_vars(self, layer, variables):
        prefix = f"{layer.name}."
        return {
            k[len(prefix):]: v for k, v in variables.items() if k.startswith(prefix)
        }

    def forward_var(self, params: dict[str, np.ndarray], x: np.ndarray):
        variables = {k: ad.constant(v) for k, v in params.items()}
        out = ad.constant(np.asarray(x, dtype=np.float64))
        for layer in self.layers:
            local = self._layer_vars(layer, variables) if layer.has_params else None
            try:
                out = layer.forward(local, out)
            except (ShapeMismatchError, ValueError) as err:
                name = getattr(layer, "name", type(layer).__name__)
                raise ShapeMismatchError(f"layer {name!r}: {err}") from err
        return out, variables

    def forward(self, params, x) -> np.ndarray:
        out, _ = self.forward_var(params, x)
        return out.value

    def predict(self, params, x) -> np.ndarray:
        return self.forward(params, x).argmax(axis=1)

    def loss_and_grads(self, params, x, y):
        logits, variables = self.forward_var(params, x)
        loss = ad.softmax_cross_entropy(logits, y)
        acc = float(np.mean(logits.value.argmax(axis=1) == y))
        grads_by_id = ad.backward(loss)
        grads = {}
        for name, var in variables.items():
            g = grads_by_id.get(id(var))
            grads[name] = g if g is not None else np.zeros(var.shape)
        return float(loss.value), acc, grads

    def param_count(self, params=None) -> int:
        params = params if params is not None else self.params
        return sum(v.size for v in params.values())

    def compression_report(self, params=None) -> list[dict]:
        """Weight-only compressed vs dense parameter counts per layer."""
        params = params if params is not None else self.params
        rows = []
        for layer in self.layers:
            if not layer.has_params:
                continue
            local = {
                k.split(".", 1)[1]: v
                for k, v in params.items()
                if k.startswith(f"{layer.name}.")
            }
            stored = layer.weight_params(local)
            dense = layer.dense_weight_size()
            rows.append(
                {
                    "layer": layer.name,
                    "stored_params": stored,
                    "dense_params": dense,
                    "compression_factor": dense / stored,
                }
            )
        return rows
