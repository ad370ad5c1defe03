"""Sklearn-style wrapper surface."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from arcflux.data import GenConfig, generate, windows_to_arrays
from arcflux.errors import ConfigError
from arcflux.estimators import DCAMambaClassifier, FeatureAmplifier
from arcflux.fas import amplify_batch


def tiny_dataset(n_per_class=20, window_len=64, seed=0):
    windows = generate(GenConfig(n_per_class=n_per_class, window_len=window_len, seed=seed))
    return windows_to_arrays(windows)


def tiny_clf(**kw):
    base = dict(
        d_model=8, n_blocks=1, n_state=2, expand=2, k_fas=8,
        epochs=2, batch_size=16, lr=1e-3, seed=0,
    )
    base.update(kw)
    return DCAMambaClassifier(**base)


class TestFeatureAmplifier:
    def test_transform_matches_batch_helper(self):
        x, _ = tiny_dataset()
        amp = FeatureAmplifier(k=8).fit(x)
        np.testing.assert_array_equal(amp.transform(x), amplify_batch(x, 8))

    def test_fit_returns_self_and_records_width(self):
        x, _ = tiny_dataset()
        amp = FeatureAmplifier(k=4)
        assert amp.fit(x) is amp
        assert amp.n_features_in_ == 64

    def test_requires_fit(self):
        x, _ = tiny_dataset()
        with pytest.raises(NotFittedError):
            FeatureAmplifier(k=4).transform(x)

    def test_k_too_large(self):
        x, _ = tiny_dataset()
        with pytest.raises(ValueError):
            FeatureAmplifier(k=40).fit(x)

    def test_width_mismatch_at_transform(self):
        x, _ = tiny_dataset()
        amp = FeatureAmplifier(k=4).fit(x)
        with pytest.raises(ValueError):
            amp.transform(x[:, :32])

    def test_get_set_params_roundtrip(self):
        amp = FeatureAmplifier(k=16)
        assert amp.get_params() == {"k": 16}
        amp.set_params(k=8)
        assert amp.k == 8
        assert clone(amp).k == 8


class TestDCAMambaClassifier:
    def test_fit_predict_shapes(self):
        x, y = tiny_dataset()
        clf = tiny_clf().fit(x, y)
        preds = clf.predict(x)
        assert preds.shape == (40,)
        assert set(np.unique(preds)) <= {0, 1}
        assert np.array_equal(clf.classes_, [0, 1])

    def test_predict_proba_rows_sum_to_one(self):
        x, y = tiny_dataset()
        clf = tiny_clf().fit(x, y)
        proba = clf.predict_proba(x[:7])
        assert proba.shape == (7, 2)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-12)
        np.testing.assert_array_equal(np.argmax(proba, axis=1), clf.predict(x[:7]))

    def test_not_fitted_errors(self):
        x, _ = tiny_dataset()
        with pytest.raises(NotFittedError):
            tiny_clf().predict(x)
        with pytest.raises(NotFittedError):
            tiny_clf().predict_proba(x)

    def test_raw_window_mode(self):
        x, y = tiny_dataset(window_len=32)
        clf = tiny_clf(apply_fas=False).fit(x, y)
        assert clf.model_config_.seq_len == 32
        assert clf.predict(x).shape == (40,)

    def test_raw_mode_rejects_odd_width(self):
        x, y = tiny_dataset(window_len=32)
        with pytest.raises(ConfigError):
            tiny_clf(apply_fas=False).fit(x[:, :31], y)

    def test_feature_count_checked_at_predict(self):
        x, y = tiny_dataset()
        clf = tiny_clf().fit(x, y)
        with pytest.raises(ValueError):
            clf.predict(x[:, :32])

    def test_non_binary_labels_rejected(self):
        x, y = tiny_dataset()
        with pytest.raises(ValueError):
            tiny_clf().fit(x, y + 1)

    def test_clone_and_params_roundtrip(self):
        clf = tiny_clf(lr=2e-3, n_blocks=2)
        params = clf.get_params()
        assert params["lr"] == 2e-3
        assert params["n_blocks"] == 2
        twin = clone(clf)
        assert twin.get_params() == params

    def test_deterministic_for_seed(self):
        x, y = tiny_dataset()
        a = tiny_clf().fit(x, y).predict(x)
        b = tiny_clf().fit(x, y).predict(x)
        np.testing.assert_array_equal(a, b)

    def test_score_and_validation_score(self):
        x, y = tiny_dataset()
        clf = tiny_clf().fit(x, y)
        assert 0.0 <= clf.score(x, y) <= 1.0
        assert 0.0 <= clf.validation_score() <= 1.0
