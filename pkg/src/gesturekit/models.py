"""Network builders and the dynamic-time-warping template baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .formats import FormatError, read_container, write_container
from .nn.layers import BatchNorm, Conv2D, Dense, Flatten, GlobalAvgPool, MaxPool2D, ReLU, ResidualBlock
from .nn.model import Model
from .radar_sim import CLASS_NAMES

INPUT_SHAPE = (128, 128, 3)

VGG10_WIDTHS = (8, 16, 32, 64)
VGG10_HIDDEN = 256
RESNET20_WIDTHS = (16, 32, 64)

#: trainable parameter counts of the default builds (see tests/test_models.py for the derivation)
VGG10_PARAMS = 1_123_468
RESNET20_PARAMS = 272_084


def build_vgg10(widths=VGG10_WIDTHS, hidden: int = VGG10_HIDDEN, seed: int = 0,
                input_shape=INPUT_SHAPE, n_classes: int = 4) -> Model:
    """Four {conv3x3, conv3x3, maxpool} blocks then two dense layers: 10 weight layers."""
    rng = np.random.default_rng(seed)
    layers, c = [], input_shape[-1]
    for w in widths:
        layers += [Conv2D(c, w, 3, rng=rng), ReLU(), Conv2D(w, w, 3, rng=rng), ReLU(), MaxPool2D()]
        c = w
    h, wd = input_shape[0], input_shape[1]
    for _ in widths:
        h, wd = (h + 1) // 2, (wd + 1) // 2
    layers += [Flatten(), Dense(h * wd * c, hidden, rng), ReLU(), Dense(hidden, n_classes, rng)]
    return Model(layers, input_shape, CLASS_NAMES[:n_classes], "vgg10")


def build_resnet20(widths=RESNET20_WIDTHS, blocks_per_stage: int = 3, stem_stride: int = 2, seed: int = 0,
                   input_shape=INPUT_SHAPE, n_classes: int = 4) -> Model:
    """Conv stem, three stages of residual blocks, global average pooling, dense head.

    With three blocks per stage that is 1 + 3*3*2 + 1 = 20 weight layers.
    Stages after the first open with a stride-2 block, so the stages shrink
    the stem output 4x per side. The stem itself is strided to keep CPU
    training tractable at 128x128 input.
    """
    rng = np.random.default_rng(seed)
    layers = [Conv2D(input_shape[-1], widths[0], 3, stem_stride, bias=False, rng=rng), BatchNorm(widths[0]), ReLU()]
    c = widths[0]
    for stage, w in enumerate(widths):
        for b in range(blocks_per_stage):
            stride = 2 if stage > 0 and b == 0 else 1
            layers.append(ResidualBlock(c, w, stride, rng))
            c = w
    layers += [GlobalAvgPool(), Dense(c, n_classes, rng)]
    return Model(layers, input_shape, CLASS_NAMES[:n_classes], "resnet20")


BUILDERS = {"vgg10": build_vgg10, "resnet20": build_resnet20}


# ------------------------------------------------------------ templates

@numba.njit(cache=True)
def _dtw(a, b):
    n, m = a.shape[0], b.shape[0]
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = abs(a[i - 1] - b[j - 1])
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost + best
    return acc[n, m]


def dtw_distance(a, b) -> float:
    """Dynamic time warping distance with absolute-difference cost."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or not len(a) or not len(b):
        raise ValueError("dtw_distance expects two non-empty 1-D sequences")
    return float(_dtw(a, b))


def reduce_profiles(image: np.ndarray) -> np.ndarray:
    """Collapse an RSA image (T, 128, 3) to three length-T profiles in [0, 1].

    Range: centroid of the above-average intensity per row, as a fraction of
    the range axis. Speed and azimuth: mean of the channel over columns
    carrying a detection (any non-neutral value), 0.5 when there are none.
    """
    img = np.asarray(image, dtype=np.float64)
    t, r, _ = img.shape
    inten = img[..., 0]
    excess = np.clip(inten - inten.mean(axis=1, keepdims=True), 0, None)
    weight = excess.sum(axis=1)
    centroid = np.where(weight > 0, (excess * np.arange(r)).sum(axis=1) / np.maximum(weight, 1e-12), (r - 1) / 2)
    active = (img[..., 1] != 0.5) | (img[..., 2] != 0.5)
    count = active.sum(axis=1)
    out = [centroid / (r - 1)]
    for ch in (1, 2):
        s = np.where(active, img[..., ch], 0.0).sum(axis=1)
        out.append(np.where(count > 0, s / np.maximum(count, 1), 0.5))
    return np.stack(out)


@dataclass
class GestureTemplates:
    """Per-class mean profiles, shape (n_classes, 3, T)."""

    profiles: np.ndarray
    class_names: list

    def profile_distances(self, prof: np.ndarray) -> np.ndarray:
        """Summed per-channel DTW distance from ``prof`` (3, T) to every template."""
        return np.array([sum(dtw_distance(prof[c], tpl[c]) for c in range(3)) for tpl in self.profiles])

    def distances(self, image: np.ndarray) -> np.ndarray:
        return self.profile_distances(reduce_profiles(image))

    def classify(self, image: np.ndarray) -> int:
        return template_classify(image, self)

    def save(self, path) -> None:
        write_container(path, {"kind": "template", "class_names": self.class_names},
                        [("profiles", self.profiles)])

    @classmethod
    def load(cls, path) -> "GestureTemplates":
        header, arrays = read_container(path)
        if header.get("kind") != "template":
            raise FormatError(path, 8, f"expected a template checkpoint, found kind {header.get('kind')!r}")
        return cls(arrays[0][1], list(header["class_names"]))


def fit_templates(images, labels, n_classes: int = 4) -> GestureTemplates:
    labels = np.asarray(labels)
    missing = [CLASS_NAMES[k] for k in range(n_classes) if not np.any(labels == k)]
    if missing:
        raise ValueError(f"no training samples for classes {missing}")
    profiles = np.stack([reduce_profiles(img) for img in images])
    means = np.stack([profiles[labels == k].mean(axis=0) for k in range(n_classes)])
    # stored as f32 in checkpoints; round now so fitted and reloaded templates agree
    return GestureTemplates(means.astype(np.float32), CLASS_NAMES[:n_classes])


def template_classify(image: np.ndarray, templates: GestureTemplates) -> int:
    """Nearest template by summed per-channel DTW distance; ties go to the lower class index."""
    return int(np.argmin(templates.distances(image)))
