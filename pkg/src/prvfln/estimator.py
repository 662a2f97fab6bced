"""scikit-learn style wrappers around :class:`~prvfln.learner.Learner`.

``fit`` starts a fresh learner and makes one pass over the rows in order;
``partial_fit`` continues the same stream.  Rows are consumed in the given
order because the model carries recurrent firing state between samples.
"""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_is_fitted, validate_data

from .learner import Learner, LearnerConfig

_CONFIG_FIELDS = tuple(f.name for f in fields(LearnerConfig) if f.name != "mode")


class _StreamEstimator(BaseEstimator):
    _mode = "regression"

    def __init__(self, alpha1=0.005, alpha2=0.05, delta_entropy=0.5, scope_low=-1.0, scope_high=1.0,
                 delta_fraction=0.1, feature_budget=None, partial_mode=False, epsilon=0.2,
                 decay_rate=1e-5, warmup=10, min_lifespan=10, learning_rate=0.2,
                 regularization=0.01, psi_init=1e5, standardize=True, max_archive=50, max_clouds=None,
                 relevance_forgetting=0.98, selection_warmup=100, selection_decay=True,
                 random_state=0):
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.delta_entropy = delta_entropy
        self.scope_low = scope_low
        self.scope_high = scope_high
        self.delta_fraction = delta_fraction
        self.feature_budget = feature_budget
        self.partial_mode = partial_mode
        self.epsilon = epsilon
        self.decay_rate = decay_rate
        self.warmup = warmup
        self.min_lifespan = min_lifespan
        self.learning_rate = learning_rate
        self.regularization = regularization
        self.psi_init = psi_init
        self.standardize = standardize
        self.max_archive = max_archive
        self.max_clouds = max_clouds
        self.relevance_forgetting = relevance_forgetting
        self.selection_warmup = selection_warmup
        self.selection_decay = selection_decay
        self.random_state = random_state

    def _config(self):
        params = {k: getattr(self, k) for k in _CONFIG_FIELDS}
        return LearnerConfig(mode=self._mode, **params)

    def _new_learner(self):
        seed = self.random_state
        if seed is None or isinstance(seed, np.random.RandomState):
            seed = np.random.default_rng().integers(2**31) if seed is None else seed.randint(2**31)
        return Learner(self._config(), seed=int(seed))

    def _stream(self, X, T, reset):
        if reset:
            self.learner_ = self._new_learner()
            self.n_samples_seen_ = 0
        for x, t in zip(X, T):
            self.learner_.train_step(x, t)
        self.n_samples_seen_ += X.shape[0]
        return self

    def _outputs(self, X):
        # rows are scored independently against the committed firing memory,
        # so predictions do not depend on row order or batch composition
        check_is_fitted(self, "learner_")
        X = validate_data(self, X, dtype=float, reset=False)
        return self.learner_.predict(X, rolling=False)

    @property
    def n_clouds_(self):
        check_is_fitted(self, "learner_")
        return self.learner_.n_clouds


class PRVFLNRegressor(RegressorMixin, _StreamEstimator):
    """Evolving interval-cloud regressor trained in a single pass.

    Examples
    --------
    >>> import numpy as np
    >>> X = np.random.default_rng(0).normal(size=(200, 3))
    >>> reg = PRVFLNRegressor(random_state=0).fit(X, X.sum(axis=1))
    >>> reg.predict(X[:2]).shape
    (2,)
    """

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.target_tags.multi_output = True
        return tags

    def fit(self, X, y):
        return self._fit(X, y, reset=True)

    def partial_fit(self, X, y):
        return self._fit(X, y, reset=not hasattr(self, "learner_"))

    def _fit(self, X, y, reset):
        X, y = validate_data(self, X, y, dtype=float, multi_output=True, y_numeric=True, reset=reset)
        if reset:
            self._single_output = y.ndim == 1
        return self._stream(X, y.reshape(len(y), -1), reset)

    def predict(self, X):
        out = self._outputs(X)
        return out[:, 0] if self._single_output else out


class PRVFLNClassifier(ClassifierMixin, _StreamEstimator):
    """Evolving classifier: one output per class on one-hot targets, label by argmax.

    ``partial_fit`` needs ``classes`` on its first call so the output layer
    can be sized before every label has been seen.
    """

    _mode = "classification"

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=float, reset=True)
        self.classes_ = unique_labels(y)
        return self._stream(X, self._one_hot(y), reset=True)

    def partial_fit(self, X, y, classes=None):
        first = not hasattr(self, "learner_")
        X, y = validate_data(self, X, y, dtype=float, reset=first)
        if first:
            if classes is None:
                raise ValueError("classes must be passed on the first call to partial_fit")
            self.classes_ = unique_labels(classes)
        elif classes is not None and not np.array_equal(unique_labels(classes), self.classes_):
            raise ValueError("classes differ from the first call to partial_fit")
        return self._stream(X, self._one_hot(y), reset=first)

    def _one_hot(self, y):
        index = np.searchsorted(self.classes_, y)
        index = np.clip(index, 0, len(self.classes_) - 1)
        if not np.all(self.classes_[index] == y):
            raise ValueError("y contains labels not in classes_")
        out = np.zeros((len(y), len(self.classes_)))
        out[np.arange(len(y)), index] = 1.0
        return out

    def decision_function(self, X):
        """Raw per-class outputs; for two classes the margin of the second over the first."""
        out = self._outputs(X)
        return out[:, 1] - out[:, 0] if out.shape[1] == 2 else out

    def predict(self, X):
        scores = self.decision_function(X)
        index = (scores > 0).astype(int) if scores.ndim == 1 else np.argmax(scores, axis=1)
        return self.classes_[index]

