"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (mutated in place and restored)."""
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation scaled by the largest gradient magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_layer(layer, x: np.ndarray, training: bool = True, seed: int = 0, h: float = 1e-6) -> dict[str, float]:
    """Check a layer's input and parameter gradients under a random linear loss.

    ``layer`` and ``x`` should be float64. Returns the relative error per
    gradient (``"x"`` plus one entry per parameter).
    """
    rng = np.random.default_rng(seed)
    probe = rng.standard_normal(layer.forward(x, training).shape)

    def loss() -> float:
        return float(np.sum(layer.forward(x, training) * probe))

    loss()
    dx = layer.backward(probe)
    analytic = {"x": dx.copy(), **{k: g.copy() for k, g in layer.grads.items()}}
    errors = {"x": relative_error(analytic["x"], numerical_grad(loss, x, h))}
    for key, arr in layer.params.items():
        errors[key] = relative_error(analytic[key], numerical_grad(loss, arr, h))
    return errors


def check_model(model, x: np.ndarray, labels: np.ndarray, training: bool = True, h: float = 1e-6) -> float:
    """Worst relative error over the input and all parameters of ``model`` under cross-entropy."""
    from .functional import softmax_crossentropy

    def loss() -> float:
        return softmax_crossentropy(model.forward(x, training), labels)[0]

    _, grad = softmax_crossentropy(model.forward(x, training), labels)
    dx = model.backward(grad)
    worst = relative_error(dx, numerical_grad(loss, x, h))
    for layer, key in model.parameters():
        analytic = layer.grads[key].copy()
        worst = max(worst, relative_error(analytic, numerical_grad(loss, layer.params[key], h)))
    return worst
