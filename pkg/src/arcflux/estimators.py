"""Scikit-learn estimator wrappers around the transform and the classifier.

FeatureAmplifier is the amplitude-extrema front-end as a Transformer;
DCAMambaClassifier bundles the front-end, model, and trainer behind the
standard fit/predict/predict_proba surface so the pipeline composes with
sklearn tooling (grid search, pipelines, cross-validation).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from .errors import ConfigError
from .fas import amplify_batch
from .model import ModelConfig, forward_batch, init_params
from .training import TrainConfig, evaluate, fit

__all__ = ["FeatureAmplifier", "DCAMambaClassifier"]


class FeatureAmplifier(TransformerMixin, BaseEstimator):
    """Replace each window with its K largest and K smallest values.

    Stateless apart from the fitted feature count; exists so the front
    end can sit in sklearn pipelines.
    """

    def __init__(self, k: int = 512):
        self.k = k

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if 2 * self.k > X.shape[1]:
            raise ValueError(f"2K = {2 * self.k} exceeds window length {X.shape[1]}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}"
            )
        return amplify_batch(X, self.k)


class DCAMambaClassifier(ClassifierMixin, BaseEstimator):
    """Selective state-space window classifier with the extrema front-end.

    apply_fas=False feeds raw windows to the sequence model instead (the
    ablation arm); the window length must then be even.
    """

    def __init__(
        self,
        *,
        d_model: int = 64,
        n_blocks: int = 4,
        n_state: int = 16,
        expand: int = 2,
        conv_width: int = 4,
        k_fas: int = 512,
        head_kind: str = "linear-last",
        dropout_p: float = 0.1,
        apply_fas: bool = True,
        epochs: int = 100,
        batch_size: int = 128,
        lr: float = 1e-4,
        lr_min: float = 1e-6,
        lr_schedule: str = "cosine-decay",
        grad_clip: float = 1.0,
        dtype: str = "float64",
        val_fraction: float = 0.1,
        seed: int = 0,
    ):
        self.d_model = d_model
        self.n_blocks = n_blocks
        self.n_state = n_state
        self.expand = expand
        self.conv_width = conv_width
        self.k_fas = k_fas
        self.head_kind = head_kind
        self.dropout_p = dropout_p
        self.apply_fas = apply_fas
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_min = lr_min
        self.lr_schedule = lr_schedule
        self.grad_clip = grad_clip
        self.dtype = dtype
        self.val_fraction = val_fraction
        self.seed = seed

    def _sequence_k(self, window_len: int) -> int:
        if self.apply_fas:
            return self.k_fas
        if window_len % 2:
            raise ConfigError("raw-window mode needs an even window length")
        return window_len // 2

    def _features(self, X: np.ndarray) -> np.ndarray:
        return amplify_batch(X, self.k_fas) if self.apply_fas else X

    def _carve_validation(self, X, y, rng):
        """Stratified tail carve-out, val_fraction per class."""
        train_idx, val_idx = [], []
        for label in (0, 1):
            idx = np.flatnonzero(y == label)
            idx = idx[rng.permutation(idx.size)]
            n_val = max(1, int(round(self.val_fraction * idx.size)))
            if n_val >= idx.size:
                raise ConfigError(f"class {label} too small to carve validation data")
            val_idx.extend(idx[idx.size - n_val:])
            train_idx.extend(idx[: idx.size - n_val])
        return np.array(train_idx), np.array(val_idx)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        classes = np.unique(y)
        if not np.array_equal(classes, [0, 1]):
            raise ValueError(
                f"this is a binary 0/1 classifier; got classes {classes.tolist()}"
            )
        model_cfg = ModelConfig(
            d_model=self.d_model,
            n_blocks=self.n_blocks,
            n_state=self.n_state,
            expand=self.expand,
            conv_width=self.conv_width,
            k_fas=self._sequence_k(X.shape[1]),
            head_kind=self.head_kind,
            dropout_p=self.dropout_p,
        )
        train_cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            lr_min=self.lr_min,
            lr_schedule=self.lr_schedule,
            grad_clip=self.grad_clip,
            seed=self.seed,
            dtype=self.dtype,
        )
        feats = self._features(X)
        rng = np.random.default_rng(self.seed)
        train_idx, val_idx = self._carve_validation(feats, y, rng)
        params = init_params(model_cfg, self.seed)
        state = fit(
            params,
            feats[train_idx],
            y[train_idx],
            feats[val_idx],
            y[val_idx],
            train_cfg,
        )
        self.params_ = state.best_params
        self.state_ = state
        self.model_config_ = model_cfg
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        return self

    def _logits(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, model was fitted with {self.n_features_in_}"
            )
        feats = self._features(X)
        out = np.empty((X.shape[0], 2))
        with ad.no_grad():
            for lo in range(0, X.shape[0], 256):
                out[lo:lo + 256] = forward_batch(self.params_, feats[lo:lo + 256]).data
        return out

    def predict(self, X) -> np.ndarray:
        return np.argmax(self._logits(X), axis=1)

    def predict_proba(self, X) -> np.ndarray:
        z = self._logits(X)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def validation_score(self) -> float:
        """Best validation accuracy observed while fitting."""
        check_is_fitted(self, "state_")
        return self.state_.best_val_acc
