"""Sequential model container."""
from __future__ import annotations

import numpy as np

from . import functional as F
from .layers import Layer


def _walk(layers):
    for layer in layers:
        yield layer
        yield from _walk(layer.children())


class Model:
    """An ordered stack of layers mapping NHWC images to class logits."""

    def __init__(self, layers: list[Layer], input_shape: tuple, class_names: list[str], name: str = "model"):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.class_names = list(class_names)
        self.name = name
        self.training = False
        self.validate_shapes()

    # ------------------------------------------------------------------ shapes
    def shape_chain(self) -> list[tuple]:
        shapes = [self.input_shape]
        for layer in self.layers:
            shapes.append(layer.output_shape(shapes[-1]))
        return shapes

    def validate_shapes(self) -> None:
        out = self.shape_chain()[-1]
        if out != (len(self.class_names),):
            raise ValueError(f"model output shape {out} does not match {len(self.class_names)} classes")

    # ---------------------------------------------------------------- params
    def all_layers(self) -> list[Layer]:
        return list(_walk(self.layers))

    def parameters(self) -> list[tuple[Layer, str]]:
        """``(layer, key)`` pairs for every trainable array in declaration order."""
        return [(layer, key) for layer in self.all_layers() for key in layer.params]

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Named trainable and buffer arrays in declaration order."""
        out = []
        for i, layer in enumerate(self.all_layers()):
            for store in (layer.params, layer.buffers):
                for key, arr in store.items():
                    out.append((f"{i}.{layer.kind}.{key}", arr))
        return out

    def get_state(self) -> list[np.ndarray]:
        return [arr.copy() for _, arr in self.state_arrays()]

    def set_state(self, arrays: list[np.ndarray]) -> None:
        slots = [(layer, store, key) for layer in self.all_layers()
                 for store in (layer.params, layer.buffers) for key in store]
        if len(slots) != len(arrays):
            raise ValueError(f"expected {len(slots)} arrays, got {len(arrays)}")
        for (layer, store, key), arr in zip(slots, arrays):
            if store[key].shape != arr.shape:
                raise ValueError(f"shape mismatch for {layer.kind}.{key}: {store[key].shape} vs {arr.shape}")
            store[key] = arr.astype(store[key].dtype, copy=True)

    def param_count(self) -> int:
        return int(sum(layer.params[key].size for layer, key in self.parameters()))

    def weight_layer_count(self) -> int:
        """Convolution and dense layers, excluding 1x1 shortcut projections."""
        count = 0
        for layer in self.all_layers():
            if layer.is_weight_layer and not (layer.kind == "conv2d" and layer.kernel == 1):
                count += 1
        return count

    def astype(self, dtype) -> "Model":
        for layer in self.layers:
            layer.astype(dtype)
        return self

    # ------------------------------------------------------------- compute
    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def predict_proba(self, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == len(self.input_shape):
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"expected input shape {self.input_shape}, got {x.shape[1:]}")
        dtype = self.layers[0].params.get("w", np.zeros(0, np.float32)).dtype
        out = []
        for start in range(0, len(x), batch_size):
            logits = self.forward(x[start:start + batch_size].astype(dtype, copy=False), training=False)
            out.append(F.softmax(logits.astype(np.float64)))
        return np.concatenate(out) if out else np.zeros((0, len(self.class_names)))

    def __repr__(self):
        return f"Model(name={self.name!r}, layers={len(self.layers)}, params={self.param_count()})"
