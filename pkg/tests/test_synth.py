import numpy as np
import pytest

from segres.synth import SynthConfig, generate_synthetic
from segres.validation import GenerationError


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            {"count": 0},
            {"size": 20},
            {"class_count": 1},
            {"foreground_rate": 0.0},
            {"foreground_rate": 1.0},
            {"shape_kinds": ("hexagon",)},
            {"noise": -0.1},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)


class TestGeneration:
    def test_foreground_fraction_band(self):
        cfg = SynthConfig(count=40, size=64, class_count=2, foreground_rate=0.05, seed=7)
        ds = generate_synthetic(cfg)
        mean_fg = np.mean([(s.labels != 0).mean() for s in ds])
        assert 0.035 <= mean_fg <= 0.065

    def test_deterministic_per_seed(self):
        cfg = SynthConfig(count=3, size=16, seed=12)
        a = generate_synthetic(cfg)
        b = generate_synthetic(cfg)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert np.array_equal(sa.labels, sb.labels)

    def test_different_seed_differs(self):
        a = generate_synthetic(SynthConfig(count=1, size=16, seed=1))
        b = generate_synthetic(SynthConfig(count=1, size=16, seed=2))
        assert not np.array_equal(a[0].labels, b[0].labels)

    def test_labels_in_range_no_ignore(self):
        ds = generate_synthetic(SynthConfig(count=6, size=16, class_count=4, seed=3))
        for s in ds:
            assert s.labels.min() >= 0
            assert s.labels.max() < 4

    def test_all_classes_eventually_present(self):
        ds = generate_synthetic(
            SynthConfig(count=20, size=32, class_count=4, foreground_rate=0.3, seed=5)
        )
        seen = set()
        for s in ds:
            seen.update(np.unique(s.labels).tolist())
        assert seen == {0, 1, 2, 3}

    def test_class_colors_separate(self):
        ds = generate_synthetic(
            SynthConfig(count=10, size=32, class_count=3, foreground_rate=0.35, seed=8)
        )
        sums = {c: np.zeros(3) for c in range(3)}
        counts = {c: 0 for c in range(3)}
        for s in ds:
            for c in range(3):
                mask = s.labels == c
                if mask.any():
                    sums[c] += s.image[:, mask].mean(axis=1)
                    counts[c] += 1
        means = {c: sums[c] / counts[c] for c in range(3) if counts[c]}
        for a in means:
            for b in means:
                if a < b:
                    assert np.linalg.norm(means[a] - means[b]) > 0.15

    def test_images_in_unit_range(self):
        ds = generate_synthetic(SynthConfig(count=3, size=16, noise=0.4, seed=4))
        for s in ds:
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0

    def test_unreachable_rate_raises(self):
        # min shape area (4px) of a 8x8 image is already 6%, far above the band
        with pytest.raises(GenerationError):
            generate_synthetic(SynthConfig(count=1, size=8, foreground_rate=0.004, seed=0))
