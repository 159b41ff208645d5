"""Scikit-learn style wrappers around the feature maps.

These cover the fit/transform-shaped surface of the library; the solver and
training internals keep their natural functional form.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin

from .cde import solve_dense
from .features import SeededInit, fit_readout, sample_lecun
from .paths import DomainError, from_values, time_augment
from .signature import batch_signature


def _as_batch(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise DomainError("expected path values with shape (n, L+1, d)")
    return X


class SignatureFeatures(TransformerMixin, BaseEstimator):
    """Truncated signature coefficients of each path as a feature row."""

    def __init__(self, depth=4, time_augmented=False):
        self.depth = depth
        self.time_augmented = time_augmented

    def fit(self, X, y=None):
        X = _as_batch(X)
        self.n_features_in_ = X.shape[2]
        return self

    def transform(self, X):
        X = _as_batch(X)
        if self.time_augmented:
            L = X.shape[1] - 1
            ts = np.linspace(0.0, 1.0, L + 1)
            t_col = np.broadcast_to(ts[None, :, None], (X.shape[0], L + 1, 1))
            X = np.concatenate([t_col, X], axis=2)
        return batch_signature(X, self.depth)


class RandomCdeRegressor(RegressorMixin, BaseEstimator):
    """Random dense CDE features with a ridge readout.

    Each path is lifted to the drivers omega = xi = (t, X_t), pushed through
    a fixed Gaussian-parameter CDE of the given width, and the final state
    is fit to the targets by ridge regression.
    """

    def __init__(self, width=64, seed=0, lam=None):
        self.width = width
        self.seed = seed
        self.lam = lam

    def _states(self, X):
        states = np.empty((X.shape[0], self.width))
        for n, values in enumerate(X):
            driver = time_augment(from_values(values))
            states[n] = solve_dense(self.params_, driver, driver, np.ones(1))[-1]
        return states

    def fit(self, X, y):
        X = _as_batch(X)
        y = np.asarray(y, dtype=np.float64)
        d = X.shape[2]
        self.n_features_in_ = d
        init = SeededInit(
            seed=self.seed, N=self.width, d_0=1, d_omega=d + 1, d_xi=d + 1
        )
        self.params_ = sample_lecun(init)
        states = self._states(X)
        design = np.hstack([states, np.ones((states.shape[0], 1))])
        self.readout_ = fit_readout(design, y, self.lam)
        return self

    def predict(self, X):
        X = _as_batch(X)
        states = self._states(X)
        design = np.hstack([states, np.ones((states.shape[0], 1))])
        return design @ self.readout_
