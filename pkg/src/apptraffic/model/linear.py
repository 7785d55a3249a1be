"""Ridge and ordinary least squares with internal standardization."""

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..errors import ModelError


class RidgeRegressor(RegressorMixin, BaseEstimator):
    """L2-penalized least squares on standardized features.

    Columns are centred and scaled to unit population std before solving;
    constant columns keep scale 1 and get a zero coefficient. The penalty
    acts on the standardized coefficients, the intercept is unpenalized.
    ``alpha=0`` is ordinary least squares; rank-deficient designs take the
    minimum-norm solution.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Coefficients on the original feature scale.
    intercept_ : float
    standardized_coef_ : ndarray
        Coefficients on the standardized scale (the penalized quantity).
    """

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y):
        if self.alpha < 0:
            raise ModelError("alpha must be >= 0")
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        n, p = X.shape
        self.n_features_in_ = p
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        constant = scale == 0
        scale[constant] = 1.0
        Z = (X - mean) / scale
        Z[:, constant] = 0.0
        y_mean = float(y.mean())
        yc = y - y_mean

        if self.alpha == 0:
            beta, *_ = linalg.lstsq(Z, yc, lapack_driver="gelsd")
        elif p <= n:
            A = Z.T @ Z
            A[np.diag_indices_from(A)] += self.alpha
            beta = linalg.solve(A, Z.T @ yc, assume_a="pos")
        else:
            # dual form: fewer rows than columns
            K = Z @ Z.T
            K[np.diag_indices_from(K)] += self.alpha
            beta = Z.T @ linalg.solve(K, yc, assume_a="pos")
        beta[constant] = 0.0
        self.standardized_coef_ = beta
        self.coef_ = beta / scale
        self.intercept_ = y_mean - float(mean @ self.coef_)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ModelError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.coef_ + self.intercept_

    def to_dict(self, feature_names=None):
        check_is_fitted(self, "coef_")
        return {
            "kind": "ridge",
            "params": self.get_params(),
            "intercept": self.intercept_,
            "coef": self.coef_.tolist(),
            "feature_names": list(feature_names) if feature_names is not None else None,
        }


class LinearRegressor(RidgeRegressor):
    """Ordinary least squares (ridge with no penalty)."""

    def __init__(self):
        super().__init__(alpha=0.0)

    def get_params(self, deep=True):
        return {}

    def to_dict(self, feature_names=None):
        doc = super().to_dict(feature_names)
        doc["kind"] = "linear"
        return doc
