"""Parsimonious random vector functional link network for data streams."""

from .learner import Learner, LearnerConfig, StepReport

__all__ = ["Learner", "LearnerConfig", "StepReport", "PRVFLNRegressor", "PRVFLNClassifier"]
__version__ = "0.1.0"


def __getattr__(name):
    # keeps scikit-learn off the import path of the core learner
    if name in ("PRVFLNRegressor", "PRVFLNClassifier"):
        from . import estimator
        return getattr(estimator, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
