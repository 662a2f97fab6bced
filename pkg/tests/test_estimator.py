import numpy as np
import pytest
from sklearn.base import clone
from sklearn.utils.estimator_checks import check_estimator

from prvfln import PRVFLNClassifier, PRVFLNRegressor


@pytest.mark.parametrize("estimator", [PRVFLNRegressor(), PRVFLNClassifier()], ids=lambda e: type(e).__name__)
def test_sklearn_compatibility(estimator):
    check_estimator(estimator)


def test_regressor_learns_a_linear_map(rng):
    X = rng.normal(size=(600, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    reg = PRVFLNRegressor(random_state=0).fit(X[:500], y[:500])
    assert np.sqrt(np.mean((reg.predict(X[500:]) - y[500:]) ** 2)) < 0.3 * y.std()
    assert reg.n_clouds_ >= 1 and reg.n_samples_seen_ == 500


def test_multi_output_shape(rng):
    X = rng.normal(size=(100, 2))
    Y = np.column_stack([X.sum(axis=1), X[:, 0]])
    assert PRVFLNRegressor(random_state=0).fit(X, Y).predict(X[:7]).shape == (7, 2)


def test_partial_fit_continues_the_stream(rng):
    X = rng.normal(size=(300, 2))
    y = X[:, 0] - X[:, 1]
    whole = PRVFLNRegressor(random_state=3).fit(X, y)
    parts = PRVFLNRegressor(random_state=3)
    for chunk in np.array_split(np.arange(300), 5):
        parts.partial_fit(X[chunk], y[chunk])
    np.testing.assert_array_equal(whole.predict(X), parts.predict(X))


def test_classifier_labels_and_partial_fit(rng):
    X = np.vstack([rng.normal(0, 0.3, (150, 2)), rng.normal(4, 0.3, (150, 2))])
    y = np.array(["a"] * 150 + ["b"] * 150)
    order = rng.permutation(300)
    X, y = X[order], y[order]
    clf = PRVFLNClassifier(random_state=0).fit(X, y)
    assert list(clf.classes_) == ["a", "b"] and clf.score(X, y) > 0.9
    fresh = PRVFLNClassifier(random_state=0)
    with pytest.raises(ValueError, match="classes"):
        fresh.partial_fit(X[:10], y[:10])
    fresh.partial_fit(X[:10], y[:10], classes=["a", "b"])
    with pytest.raises(ValueError):
        fresh.partial_fit(X[:10], y[:10], classes=["a", "c"])


def test_clone_keeps_parameters():
    reg = PRVFLNRegressor(alpha1=0.002, random_state=7)
    params = clone(reg).get_params()
    assert params["alpha1"] == 0.002 and params["random_state"] == 7
