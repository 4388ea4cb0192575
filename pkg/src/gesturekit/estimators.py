"""scikit-learn compatible wrappers around the processing chain and classifiers.

``RSATransformer`` turns raw recordings into RSA images; the classifiers
accept RSA images shaped (n, 128, 128, 3). All of them follow the usual
``get_params``/``set_params``/``fit``/``predict`` contract so they compose
with ``sklearn.pipeline.Pipeline`` and ``sklearn.base.clone``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import GroupShuffleSplit, StratifiedShuffleSplit
from sklearn.utils.validation import check_is_fitted

from .dsp import ProcessingConfig, process_recording
from .formats import RSA_SHAPE
from .models import BUILDERS, fit_templates, template_classify
from .nn.model import Model
from .nn.train import TrainSchedule, train
from .radar_sim import CLASS_NAMES, ChirpConfig


def check_rsa_array(X, name: str = "X") -> np.ndarray:
    """Validate a batch of RSA images and return it as contiguous float32."""
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1:] != RSA_SHAPE:
        raise ValueError(f"{name} must have shape (n, 128, 128, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.issubdtype(X.dtype, np.number):
        raise ValueError(f"{name} must be numeric, got dtype {X.dtype}")
    X = np.ascontiguousarray(X, dtype=np.float32)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return X


def check_labels(y, n: int, n_classes: int = len(CLASS_NAMES)) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"y must be 1-D with {n} entries, got shape {y.shape}")
    if y.dtype.kind in "US":
        y = np.array([CLASS_NAMES.index(v.upper()) for v in y])
    y = y.astype(np.int64)
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    return y


class RSATransformer(TransformerMixin, BaseEstimator):
    """Recordings (n, 128, L, P, N) complex -> RSA images (n, 128, 128, 3)."""

    def __init__(self, chirp_config: ChirpConfig | None = None, pfa: float = 1e-3,
                 guard=(1, 2), train=(4, 8), window: bool = True):
        self.chirp_config = chirp_config
        self.pfa = pfa
        self.guard = guard
        self.train = train
        self.window = window

    def fit(self, X, y=None):
        cfg = self.chirp_config or ChirpConfig()
        X = np.asarray(X)
        if X.ndim == 4:
            X = X[None]
        if X.ndim != 5 or X.shape[2:] != cfg.shape:
            raise ValueError(f"recordings must have shape (n, frames, {', '.join(map(str, cfg.shape))}), got {X.shape}")
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        cfg = self.chirp_config or ChirpConfig()
        proc = ProcessingConfig(self.pfa, tuple(self.guard), tuple(self.train), self.window)
        X = np.asarray(X)
        if X.ndim == 4:
            X = X[None]
        return np.stack([process_recording(rec, cfg, proc) for rec in X])


class CNNGestureClassifier(ClassifierMixin, BaseEstimator):
    """VGG-10 or ResNet-20 trained with Adam, LR reduction and early stopping.

    Without explicit validation data, ``validation_fraction`` of ``X`` is held
    out (stratified, and grouped when ``groups`` is passed to ``fit``).
    ``target_val_acc`` ends training early once validation accuracy reaches it.
    """

    def __init__(self, arch: str = "resnet20", lr: float = 1e-3, batch_size: int = 32, max_epochs: int = 60,
                 stop_patience: int = 7, lr_factor: float = 0.5, lr_patience: int = 3,
                 validation_fraction: float = 0.3, target_val_acc: float | None = None, random_state: int = 0):
        self.arch = arch
        self.lr = lr
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.stop_patience = stop_patience
        self.lr_factor = lr_factor
        self.lr_patience = lr_patience
        self.validation_fraction = validation_fraction
        self.target_val_acc = target_val_acc
        self.random_state = random_state

    def _schedule(self) -> TrainSchedule:
        return TrainSchedule(lr=self.lr, batch_size=self.batch_size, max_epochs=self.max_epochs,
                             stop_patience=self.stop_patience, lr_factor=self.lr_factor,
                             lr_patience=self.lr_patience, seed=self.random_state,
                             target_val_acc=self.target_val_acc)

    def fit(self, X, y, X_val=None, y_val=None, groups=None):
        if self.arch not in BUILDERS:
            raise ValueError(f"arch must be one of {sorted(BUILDERS)}, got {self.arch!r}")
        X = check_rsa_array(X)
        y = check_labels(y, len(X))
        if X_val is None:
            if groups is not None:
                splitter = GroupShuffleSplit(1, test_size=self.validation_fraction, random_state=self.random_state)
            else:
                splitter = StratifiedShuffleSplit(1, test_size=self.validation_fraction,
                                                  random_state=self.random_state)
            tr, va = next(splitter.split(X, y, groups))
            X, X_val, y, y_val = X[tr], X[va], y[tr], y[va]
        else:
            X_val = check_rsa_array(X_val, "X_val")
            y_val = check_labels(y_val, len(X_val))
        model = BUILDERS[self.arch](seed=self.random_state)
        self.model_, self.history_ = train(model, X, y, X_val, y_val, self._schedule())
        self.classes_ = np.arange(len(CLASS_NAMES))
        return self

    @classmethod
    def from_model(cls, model: Model) -> "CNNGestureClassifier":
        est = cls(arch=model.name)
        est.model_ = model
        est.classes_ = np.arange(len(model.class_names))
        return est

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.predict_proba(check_rsa_array(X))

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)


class TemplateGestureClassifier(ClassifierMixin, BaseEstimator):
    """Nearest mean profile under dynamic time warping."""

    def __init__(self, n_classes: int = len(CLASS_NAMES)):
        self.n_classes = n_classes

    def fit(self, X, y):
        X = check_rsa_array(X)
        y = check_labels(y, len(X), self.n_classes)
        self.templates_ = fit_templates(X, y, self.n_classes)
        self.classes_ = np.arange(self.n_classes)
        return self

    @classmethod
    def from_templates(cls, templates) -> "TemplateGestureClassifier":
        est = cls(len(templates.class_names))
        est.templates_ = templates
        est.classes_ = np.arange(est.n_classes)
        return est

    def decision_function(self, X) -> np.ndarray:
        """Negated summed DTW distances, one column per class."""
        check_is_fitted(self, "templates_")
        return -np.stack([self.templates_.distances(img) for img in check_rsa_array(X)])

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "templates_")
        return np.array([template_classify(img, self.templates_) for img in check_rsa_array(X)])
