"""scikit-learn estimators wrapping circuit training and inference."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .compiler import CircuitConfig, build_circuit
from .crn import SolverConfig
from .learning import predict_many, train


class _NeuralCRNBase(BaseEstimator):
    def _config(self, d: int) -> CircuitConfig:
        return CircuitConfig(f_theta=self.f_theta, d=d, p=self.p, T=self.T, eta=self.eta, beta=self.beta,
                             alpha=self.alpha, pad_value=self.pad_value, mode=self.mode,
                             approx_gradients=self.approx_gradients, signed_inputs=self.signed_inputs,
                             signed_params=self.signed_params)

    def _init_theta(self, cfg: CircuitConfig) -> np.ndarray:
        if self.init_scale and self.init_scale > 0:
            rng = np.random.default_rng(self.random_state)
            th = rng.normal(0.0, self.init_scale, cfg.theta_shape)
            return th if cfg.resolved_signed_params else np.abs(th)
        return cfg.initial_theta()

    def _fit(self, X, y):
        cfg = self._config(X.shape[1])
        if not cfg.resolved_signed_inputs and np.any(X < 0):
            raise ValueError("negative inputs need signed_inputs=True")
        self.circuit_ = build_circuit(cfg)
        report = train(self.circuit_, (X, y), self.passes, seed=self.random_state,
                       theta=self._init_theta(cfg), solver=SolverConfig())
        self.report_ = report
        self.theta_ = report.theta
        self.n_features_in_ = X.shape[1]
        return self

    def _decision(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, estimator was fitted with {self.n_features_in_}")
        return predict_many(self.circuit_, X, self.theta_)


class NeuralCRNRegressor(RegressorMixin, _NeuralCRNBase):
    """Regression with a clocked Neural CRN trained by per-sample gradient descent.

    Targets must be nonnegative (they are loaded as a chemical concentration).
    """

    def __init__(self, f_theta="linreg", T=0.1, eta=1.0, beta=0.0, alpha=0.3, p=0, pad_value=1.0,
                 passes=1, mode="idealized", approx_gradients=False, signed_inputs=None,
                 signed_params=None, init_scale=0.0, random_state=None):
        self.f_theta = f_theta
        self.T = T
        self.eta = eta
        self.beta = beta
        self.alpha = alpha
        self.p = p
        self.pad_value = pad_value
        self.passes = passes
        self.mode = mode
        self.approx_gradients = approx_gradients
        self.signed_inputs = signed_inputs
        self.signed_params = signed_params
        self.init_scale = init_scale
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        if np.any(y < 0):
            raise ValueError("targets must be nonnegative")
        return self._fit(X, y.astype(float))

    def predict(self, X):
        return self._decision(X)


class NeuralCRNClassifier(ClassifierMixin, _NeuralCRNBase):
    """Binary classifier: trains towards y_on / y_off and thresholds the output at phi."""

    def __init__(self, f_theta="nlcls", T=1.0, eta=0.3, beta=0.1, alpha=0.3, p=2, pad_value=1.0,
                 passes=3, mode="idealized", approx_gradients=False, signed_inputs=None,
                 signed_params=None, init_scale=0.5, y_on=1.0, y_off=0.0, phi=0.5, random_state=None):
        self.f_theta = f_theta
        self.T = T
        self.eta = eta
        self.beta = beta
        self.alpha = alpha
        self.p = p
        self.pad_value = pad_value
        self.passes = passes
        self.mode = mode
        self.approx_gradients = approx_gradients
        self.signed_inputs = signed_inputs
        self.signed_params = signed_params
        self.init_scale = init_scale
        self.y_on = y_on
        self.y_off = y_off
        self.phi = phi
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification only, got {len(self.classes_)} classes")
        if self.y_on == self.y_off:
            raise ValueError("y_on and y_off must differ")
        target = np.where(y == self.classes_[1], self.y_on, self.y_off).astype(float)
        return self._fit(X, target)

    def decision_function(self, X):
        return self._decision(X) - self.phi

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]
