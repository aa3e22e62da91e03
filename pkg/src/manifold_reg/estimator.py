"""scikit-learn compatible wrappers.

``ManifoldRegularizedClassifier`` trains a bottleneck network with the
layer-wise distance-preserving objective and behaves like any other sklearn
classifier (``get_params``/``set_params``, ``clone``, pipelines, ``score``).
``PCA2D`` and ``LinearDiscriminant2D`` expose the probe building blocks.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import analysis
from .data import Dataset
from .losses import LossWeights, default_alpha, regularized_pairs
from .model import NetworkConfig, build
from .train import TrainConfig, predict_logits, train


class ManifoldRegularizedClassifier(ClassifierMixin, BaseEstimator):
    """Bottleneck network trained with cross-entropy plus scoped distance-preserving terms.

    Parameters
    ----------
    start_width, min_width : int
        Widest (K) and narrowest (W) hidden widths; K / W must be a power of two.
    alpha : sequence of float, "default" or None
        Weight of each regularized layer pair.  ``None`` or all zeros disables
        the regularizer; ``"default"`` uses small weights on the first half of
        the pairs and larger ones on the second half.
    extractor : tuple of str
        Conv extractor descriptors (see :mod:`manifold_reg.model`); empty for
        vector input.  With an extractor, ``input_shape`` must be given and X
        rows are reshaped to it.
    """

    def __init__(self, start_width=32, min_width=8, halving_period=2, alpha="default", lam=1e-4,
                 scope="scoped", epochs=30, lr=0.01, batch_size=5, seed=0, extractor=(),
                 input_shape=None, tap_mode="post"):
        self.start_width = start_width
        self.min_width = min_width
        self.halving_period = halving_period
        self.alpha = alpha
        self.lam = lam
        self.scope = scope
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.extractor = extractor
        self.input_shape = input_shape
        self.tap_mode = tap_mode

    def _reshape(self, X):
        if self.extractor:
            return X.reshape(len(X), *self.input_shape)
        return X

    def _net_config(self, n_features, n_classes) -> NetworkConfig:
        shape = tuple(self.input_shape) if self.extractor else (n_features,)
        return NetworkConfig(
            input_shape=shape, extractor=tuple(self.extractor), start_width=self.start_width,
            min_width=self.min_width, halving_period=self.halving_period,
            num_classes=n_classes, tap_mode=self.tap_mode,
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        cfg = self._net_config(X.shape[1], len(self.classes_))
        n_pairs = len(regularized_pairs(len(cfg.hidden_widths())))
        if self.alpha is None:
            alpha = (0.0,) * n_pairs
        elif isinstance(self.alpha, str) and self.alpha == "default":
            alpha = default_alpha(n_pairs)
        else:
            alpha = tuple(self.alpha)
        weights = LossWeights(alpha, self.lam, self.scope)
        tc = TrainConfig(cfg, weights, epochs=self.epochs, lr=self.lr,
                         batch_size=min(self.batch_size, len(X)), seed=self.seed)
        train_ds = Dataset(self._reshape(X), y_enc, len(self.classes_))
        val_ds = None
        if X_val is not None:
            X_val = check_array(X_val, dtype=np.float64)
            val_ds = Dataset(self._reshape(X_val), np.searchsorted(self.classes_, y_val), len(self.classes_), "test")
        self.network_, self.report_ = train(tc, train_ds, val_ds, net=build(cfg, self.seed))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        return predict_logits(self.network_, self._reshape(X))

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def transform(self, X):
        """Activations of the deepest bottleneck layer."""
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        acts = analysis.activations(self.network_, self._reshape(X))
        return acts[f"fc{len(self.network_.dense) - 2}"]


class PCA2D(TransformerMixin, BaseEstimator):
    """Deterministic two-component PCA (largest-magnitude loading made positive)."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.mean_, self.components_, self.explained_variance_ = analysis.pca_components(X, 2)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        return (X - self.mean_) @ self.components_.T


class LinearDiscriminant2D(ClassifierMixin, BaseEstimator):
    """Pooled-covariance LDA with a ridge term, as used by the layer probe."""

    def __init__(self, ridge=1e-6):
        self.ridge = ridge

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.model_ = analysis.lda_fit(X, y, self.ridge)
        self.classes_ = self.model_.classes
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.decision_function(check_array(X, dtype=np.float64))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(check_array(X, dtype=np.float64))
