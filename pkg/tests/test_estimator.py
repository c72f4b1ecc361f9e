"""Estimator-facing API: sklearn conventions and array validation."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from waveseg import HaarWaveletTransform, WaveletSegmenter, synth_generate
from waveseg.errors import DataError, ShapeError
from waveseg.validation import check_image_array, check_label_array


def small_arrays(n=8, seed=21):
    ds = synth_generate(seed, n, (64, 64), 4)
    X = np.stack([s.image for s in ds])
    y = np.stack([s.labels for s in ds])
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = small_arrays(n=16)
    est = WaveletSegmenter(epochs=50, lr0=0.02, decay_every_epochs=100, loss="ce", seed=1)
    return est.fit(X, y), X, y


class TestSklearnConventions:
    def test_get_params_round_trip(self):
        est = WaveletSegmenter(width_mult=0.25, epochs=3)
        params = est.get_params()
        assert params["width_mult"] == 0.25
        est2 = WaveletSegmenter(**params)
        assert est2.get_params() == params

    def test_set_params_and_clone(self):
        est = WaveletSegmenter()
        est.set_params(epochs=2, variant="baseline")
        assert est.epochs == 2
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()

    def test_unfitted_predict_raises(self):
        X, _ = small_arrays(n=1)
        with pytest.raises(NotFittedError):
            WaveletSegmenter().predict(X)

    def test_fit_returns_self_and_sets_suffixed_attrs(self, fitted):
        est, X, y = fitted
        assert est.num_classes_ == 4
        assert list(est.classes_) == [0, 1, 2, 3]
        assert est.n_iterations_ > 0


class TestPredictAndScore:
    def test_predict_shapes(self, fitted):
        est, X, y = fitted
        preds = est.predict(X[:3])
        assert preds.shape == (3, 64, 64)
        assert preds.dtype.kind in "iu"
        assert set(np.unique(preds)) <= {0, 1, 2, 3}

    def test_predict_proba_simplex(self, fitted):
        est, X, _ = fitted
        probs = est.predict_proba(X[:2])
        assert probs.shape == (2, 4, 64, 64)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-5)

    def test_score_is_mean_iou(self, fitted):
        est, X, y = fitted
        score = est.score(X, y)
        assert 0.0 <= score <= 1.0
        report = est.evaluate(X, y)
        assert score == pytest.approx(report.mean_iou)

    def test_training_actually_learns(self, fitted):
        est, X, y = fitted
        # far above the ~0.14 score of an untrained/background-only predictor
        assert est.score(X, y) > 0.5


class TestValidationHelpers:
    def test_image_array_shape_enforced(self):
        with pytest.raises(ShapeError):
            check_image_array(np.zeros((2, 1, 64, 64)))

    def test_image_range_enforced(self):
        bad = np.full((1, 3, 32, 32), 3.0)
        with pytest.raises(DataError, match=r"\[0, 1\]"):
            check_image_array(bad)

    def test_label_shape_must_match_images(self):
        X = np.zeros((2, 3, 32, 32))
        with pytest.raises(ShapeError):
            check_label_array(np.zeros((2, 16, 16), dtype=np.int32), X)

    def test_label_range_enforced(self):
        X = np.zeros((1, 3, 32, 32))
        y = np.full((1, 32, 32), 9, dtype=np.int32)
        with pytest.raises(DataError):
            check_label_array(y, X, num_classes=4)

    def test_float_integral_labels_accepted(self):
        X = np.zeros((1, 3, 8, 8))
        y = check_label_array(np.zeros((1, 8, 8)), X, num_classes=2)
        assert y.dtype.kind == "i"


class TestHaarWaveletTransform:
    def test_transform_shape_and_inverse(self, rng):
        X = rng.standard_normal((2, 3, 16, 16))
        t = HaarWaveletTransform().fit(X)
        bands = t.transform(X)
        assert bands.shape == (2, 12, 8, 8)
        back = t.inverse_transform(bands)
        np.testing.assert_allclose(back, X, atol=1e-12)

    def test_low_band_is_average_pool(self, rng):
        X = rng.standard_normal((1, 2, 8, 8))
        bands = HaarWaveletTransform().transform(X)
        pooled = X.reshape(1, 2, 4, 2, 4, 2).mean(axis=(3, 5))
        np.testing.assert_allclose(bands[:, :2], pooled, atol=1e-12)

    def test_pipeline_cascade(self, rng):
        from sklearn.pipeline import make_pipeline

        X = rng.standard_normal((1, 1, 16, 16))
        pipe = make_pipeline(HaarWaveletTransform(), HaarWaveletTransform())
        two_level = pipe.fit_transform(X)
        assert two_level.shape == (1, 16, 4, 4)
