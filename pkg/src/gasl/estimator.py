"""scikit-learn compatible classifier around the training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import nn
from .data import Dataset
from .optim import TrainConfig, train
from .pruning import PruneConfig, prune_groups
from .regularizers import ObjectiveConfig
from .supervisor import GaslConfig


class GaslClassifier(ClassifierMixin, BaseEstimator):
    """Group-sparse neural network classifier.

    ``arch`` is ``"mlp"``, ``"lenet"`` (both expect 784 features, 10
    classes at most) or ``"softmax"`` (a single dense layer sized from the
    data). After :meth:`fit`, ``network_`` holds the trained
    :class:`~gasl.nn.Network` and ``history_`` the per-epoch records.
    """

    def __init__(self, arch="mlp", lambda_s=0.0, alpha=1.0, lambda_l2=1e-4, attention="structured",
                 grouping_mode="structured", gasl=False, gasl_mu=0.1, gasl_sigma=1.0,
                 gasl_scale=0.01, gasl_persist=False, lr0=0.1, zeta=0.1, batch_size=100, max_epochs=10,
                 tau=0.01, random_state=0):
        self.arch = arch
        self.lambda_s = lambda_s
        self.alpha = alpha
        self.lambda_l2 = lambda_l2
        self.attention = attention
        self.grouping_mode = grouping_mode
        self.gasl = gasl
        self.gasl_mu = gasl_mu
        self.gasl_sigma = gasl_sigma
        self.gasl_scale = gasl_scale
        self.gasl_persist = gasl_persist
        self.lr0 = lr0
        self.zeta = zeta
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.tau = tau
        self.random_state = random_state

    def _configs(self):
        obj = ObjectiveConfig(lambda_s=self.lambda_s, alpha=self.alpha, lambda_l2=self.lambda_l2,
                              grouping_mode=self.grouping_mode, attention=self.attention)
        gasl = GaslConfig(enabled=bool(self.gasl), mu=self.gasl_mu, sigma=self.gasl_sigma,
                          mixing_matrix="scaled_identity", mixing_scale=self.gasl_scale,
                          persist=bool(self.gasl_persist))
        tc = TrainConfig(lr0=self.lr0, zeta=self.zeta, batch_size=self.batch_size,
                         max_epochs=self.max_epochs, seed=int(self.random_state))
        return obj, gasl, tc

    def _build(self, n_features, n_classes):
        if self.arch == "softmax":
            return nn.build_softmax_regression(n_features, n_classes, rng=int(self.random_state))
        net = nn.build(self.arch, rng=int(self.random_state))
        if n_features != 784:
            raise ValueError(f"arch {self.arch!r} expects 784 features, got {n_features}")
        if n_classes > net.n_classes:
            raise ValueError(f"arch {self.arch!r} supports at most {net.n_classes} classes")
        return net

    def fit(self, X, y, eval_set=None):
        """Train on ``(X, y)``; ``eval_set=(X_val, y_val)`` drives the LR plateau schedule."""
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need samples of at least 2 classes")
        self.n_features_in_ = X.shape[1]
        obj, gasl, tc = self._configs()
        net = self._build(X.shape[1], len(self.classes_))
        evaluation = None
        if eval_set is not None:
            Xv, yv = check_X_y(*eval_set, dtype=np.float64)
            evaluation = Dataset(Xv, self._encode(yv), "val")
        self.network_, self.history_ = train(net, Dataset(X, codes, "train"), obj, gasl, tc,
                                             eval_data=evaluation)
        return self

    def _encode(self, y):
        idx = np.searchsorted(self.classes_, y)
        idx = np.clip(idx, 0, len(self.classes_) - 1)
        if not np.all(self.classes_[idx] == y):
            raise ValueError("y contains labels not seen during fit")
        return idx

    def _check_X(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def predict_proba(self, X):
        X = self._check_X(X)
        proba = self.network_.predict_proba(X)
        return proba[:, :len(self.classes_)] / proba[:, :len(self.classes_)].sum(axis=1, keepdims=True)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def prune(self, X=None, y=None):
        """Zero sub-threshold groups in place; returns the :class:`SparsityReport`.

        When ``X, y`` are given the report's error is measured on them with
        the pruned network.
        """
        check_is_fitted(self, "network_")
        self.network_, report = prune_groups(self.network_, PruneConfig(tau=self.tau))
        if X is not None:
            report.eval_error_pct = 100.0 * (1.0 - self.score(X, y))
        self.report_ = report
        return report
