"""Model persistence in the ``GNN1`` container."""
from __future__ import annotations

from ..formats import FormatError, read_container, write_container
from .layers import layer_from_spec
from .model import Model


def save_model(model: Model, path, extra: dict | None = None) -> None:
    header = {
        "kind": "model",
        "architecture": model.name,
        "input_shape": list(model.input_shape),
        "class_names": model.class_names,
        "layers": [layer.spec() for layer in model.layers],
    }
    if extra:
        header["extra"] = extra
    write_container(path, header, model.state_arrays())


def model_from_header(header: dict, arrays, path="<memory>") -> Model:
    try:
        layers = [layer_from_spec(spec) for spec in header["layers"]]
        model = Model(layers, tuple(header["input_shape"]), header["class_names"], header["architecture"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(path, 8, f"invalid model header: {exc}") from None
    try:
        model.set_state([arr for _, arr in arrays])
    except ValueError as exc:
        raise FormatError(path, 8, str(exc)) from None
    return model


def load_model(path) -> Model:
    header, arrays = read_container(path)
    if header.get("kind") != "model":
        raise FormatError(path, 8, f"expected a model checkpoint, found kind {header.get('kind')!r}")
    return model_from_header(header, arrays, path)
