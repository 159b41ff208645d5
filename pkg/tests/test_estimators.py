import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline
from sklearn.linear_model import Ridge

from lincde.estimators import RandomCdeRegressor, SignatureFeatures
from lincde.paths import DomainError
from lincde.signature import batch_signature, num_words


def random_batch(rng, n=20, L=15, d=2, scale=0.5):
    inc = rng.normal(0.0, scale / np.sqrt(L), size=(n, L, d))
    return np.concatenate([np.zeros((n, 1, d)), np.cumsum(inc, axis=1)], axis=1)


def test_signature_features_transform(rng):
    X = random_batch(rng)
    feats = SignatureFeatures(depth=3).fit_transform(X)
    assert feats.shape == (20, num_words(2, 3))
    np.testing.assert_array_equal(feats, batch_signature(X, 3))


def test_signature_features_time_augmented(rng):
    X = random_batch(rng, d=1)
    feats = SignatureFeatures(depth=2, time_augmented=True).fit_transform(X)
    assert feats.shape == (20, num_words(2, 2))
    # the pure-time word is (t_1 - t_0)^2 / 2 = 1/2
    from lincde.signature import word_index

    np.testing.assert_allclose(feats[:, word_index((1, 1), 2)], 0.5, atol=1e-12)


def test_estimator_api_conventions(rng):
    est = RandomCdeRegressor(width=8, seed=1)
    assert clone(est).get_params() == est.get_params()
    X = random_batch(rng, n=10, L=8)
    y = rng.normal(size=10)
    assert est.fit(X, y) is est
    assert est.n_features_in_ == 2
    with pytest.raises(DomainError):
        est.fit(np.zeros((3, 4)), np.zeros(3))


def test_signature_pipeline_learns_area(rng):
    X = random_batch(rng, n=200, L=20)
    from lincde.signature import word_index

    y = batch_signature(X, 2)[:, word_index((1, 2), 2)]
    pipe = make_pipeline(SignatureFeatures(depth=2), Ridge(alpha=1e-8))
    pipe.fit(X[:150], y[:150])
    pred = pipe.predict(X[150:])
    assert np.mean((pred - y[150:]) ** 2) < 1e-10 * max(1e-12, np.var(y[150:])) + 1e-12


def test_random_cde_regressor_fits_endpoint(rng):
    X = random_batch(rng, n=120, L=10)
    y = X[:, -1, 0]  # final value of the first channel
    est = RandomCdeRegressor(width=32, seed=0).fit(X[:100], y[:100])
    pred = est.predict(X[100:])
    fvu = np.mean((pred - y[100:]) ** 2) / np.var(y[100:])
    assert fvu < 0.05


def test_random_cde_regressor_deterministic(rng):
    X = random_batch(rng, n=15, L=8)
    y = rng.normal(size=15)
    a = RandomCdeRegressor(width=16, seed=4).fit(X, y).predict(X)
    b = RandomCdeRegressor(width=16, seed=4).fit(X, y).predict(X)
    np.testing.assert_array_equal(a, b)
