import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from segres.estimator import SegmentationNet
from segres.synth import SynthConfig, generate_synthetic
from segres.validation import ShapeError


def arrays(count=6, size=8, classes=2, seed=9):
    ds = generate_synthetic(
        SynthConfig(count=count, size=size, class_count=classes, foreground_rate=0.3, seed=seed)
    )
    X = np.stack([s.image for s in ds])
    y = np.stack([s.labels for s in ds])
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = arrays()
    est = SegmentationNet(epochs=15, seed=1)
    est.fit(X, y)
    return est, X, y


class TestSklearnSurface:
    def test_get_set_params_roundtrip(self):
        est = SegmentationNet(epochs=3, beta=0.9)
        params = est.get_params()
        assert params["beta"] == 0.9
        est.set_params(beta=0.25)
        assert est.beta == 0.25

    def test_clone(self):
        est = SegmentationNet(epochs=3, arch="baseline")
        other = clone(est)
        assert other.arch == "baseline"
        assert not hasattr(other, "network_")

    def test_predict_before_fit_raises(self):
        X, _ = arrays(count=1)
        with pytest.raises(NotFittedError):
            SegmentationNet().predict(X)

    def test_repr_mentions_changed_params(self):
        assert "baseline" in repr(SegmentationNet(arch="baseline"))


class TestFitPredict:
    def test_fit_sets_state(self, fitted):
        est, _, _ = fitted
        assert est.network_.kind == "improved"
        assert len(est.history_.records) == 15
        assert np.array_equal(est.classes_, [0, 1])

    def test_predict_shapes_and_range(self, fitted):
        est, X, _ = fitted
        labels = est.predict(X)
        assert labels.shape == (X.shape[0],) + X.shape[2:]
        assert labels.min() >= 0 and labels.max() < 2

    def test_predict_proba_sums(self, fitted):
        est, X, _ = fitted
        prob = est.predict_proba(X)
        assert prob.shape == (X.shape[0], 2) + X.shape[2:]
        assert np.abs(prob.sum(axis=1) - 1.0).max() < 1e-6

    def test_score_in_unit_interval(self, fitted):
        est, X, y = fitted
        score = est.score(X, y)
        assert 0.0 <= score <= 1.0

    def test_training_improves_over_fresh_net(self, fitted):
        est, X, y = fitted
        fresh = SegmentationNet(epochs=1, seed=1).fit(X, y)
        assert est.score(X, y) >= fresh.score(X, y) - 0.05

    def test_class_count_inferred_from_labels(self):
        X, y = arrays(classes=3, count=4)
        est = SegmentationNet(epochs=2).fit(X, y)
        assert len(est.classes_) == 3

    def test_val_fraction_split(self):
        X, y = arrays(count=10)
        est = SegmentationNet(epochs=2, val_fraction=0.3).fit(X, y)
        assert len(est.history_.records) == 2

    def test_seeded_fit_deterministic(self):
        X, y = arrays(count=4)
        a = SegmentationNet(epochs=3, seed=7).fit(X, y).predict(X)
        b = SegmentationNet(epochs=3, seed=7).fit(X, y).predict(X)
        assert np.array_equal(a, b)


class TestValidation:
    def test_bad_image_shape(self):
        with pytest.raises(ShapeError):
            SegmentationNet(epochs=1).fit(np.zeros((2, 8, 8)), np.zeros((2, 8, 8), dtype=int))

    def test_non_divisible_spatial(self):
        with pytest.raises(ShapeError):
            SegmentationNet(epochs=1).fit(
                np.zeros((2, 3, 12, 12)), np.zeros((2, 12, 12), dtype=int)
            )

    def test_label_image_mismatch(self):
        with pytest.raises(ShapeError):
            SegmentationNet(epochs=1).fit(np.zeros((2, 3, 8, 8)), np.zeros((3, 8, 8), dtype=int))

    def test_bad_arch_value(self):
        X, y = arrays(count=1)
        with pytest.raises(ValueError):
            SegmentationNet(arch="unet", epochs=1).fit(X, y)
