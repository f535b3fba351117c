"""Synthetic segmentation data: random shapes over a textured background.

Each sample is built from exact shape rasterizations (the label map) and a
rendering where every class has its own mean color plus uniform texture
noise. Generation is a pure function of the seed; images whose realized
foreground fraction misses the target band are regenerated a bounded
number of times.
"""

import math
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset, Sample, default_palette
from .tensor import Rng
from .validation import GenerationError

SHAPE_KINDS = ("rectangle", "disk", "triangle")

# Accept an image when its foreground fraction is within this relative band
# of the target; every accepted image then keeps the dataset mean inside
# the +-30% contract with margin.
_BAND = 0.3
_MAX_TRIES = 64
_MAX_SHAPES = 8


@dataclass(frozen=True)
class SynthConfig:
    count: int = 10
    size: int = 32
    class_count: int = 2
    foreground_rate: float = 0.2
    shape_kinds: tuple = SHAPE_KINDS
    noise: float = 0.05
    contrast: float = 1.0  # 1 = full palette separation, smaller pulls shapes toward background
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.size < 8 or self.size % 8 != 0:
            raise ValueError(f"size must be a positive multiple of 8, got {self.size}")
        if self.class_count < 2:
            raise ValueError(f"class_count must be >= 2, got {self.class_count}")
        if not 0.0 < self.foreground_rate < 1.0:
            raise ValueError(f"foreground_rate must lie in (0, 1), got {self.foreground_rate}")
        bad = [k for k in self.shape_kinds if k not in SHAPE_KINDS]
        if bad or not self.shape_kinds:
            raise ValueError(f"shape_kinds must be a nonempty subset of {SHAPE_KINDS}")
        if self.noise < 0:
            raise ValueError("noise amplitude must be >= 0")
        if not 0.0 < self.contrast <= 1.0:
            raise ValueError(f"contrast must lie in (0, 1], got {self.contrast}")


def _uniform_in(rng: Rng, lo: float, hi: float) -> float:
    return lo + (hi - lo) * float(rng.uniform(1)[0])


def _rasterize(kind: str, rng: Rng, size: int, area: float) -> np.ndarray | None:
    """Boolean mask of one shape with roughly the requested pixel area."""
    rr, cc = np.mgrid[0:size, 0:size]
    if kind == "rectangle":
        aspect = _uniform_in(rng, 0.5, 2.0)
        h = max(2, min(size, round(math.sqrt(area * aspect))))
        w = max(2, min(size, round(area / h)))
        r0 = rng.below(size - h + 1)
        c0 = rng.below(size - w + 1)
        return (rr >= r0) & (rr < r0 + h) & (cc >= c0) & (cc < c0 + w)
    if kind == "disk":
        radius = max(1.5, min(size / 2 - 1, math.sqrt(area / math.pi)))
        lo, hi = int(math.ceil(radius)), size - 1 - int(math.ceil(radius))
        if hi < lo:
            return None
        cy = lo + rng.below(hi - lo + 1)
        cx = lo + rng.below(hi - lo + 1)
        return (rr - cy) ** 2 + (cc - cx) ** 2 <= radius**2
    # right triangle on a h x w bounding box, one of four orientations
    aspect = _uniform_in(rng, 0.6, 1.6)
    h = max(3, min(size, round(math.sqrt(2.0 * area * aspect))))
    w = max(3, min(size, round(2.0 * area / h)))
    r0 = rng.below(size - h + 1)
    c0 = rng.below(size - w + 1)
    u = (rr - r0) / h
    v = (cc - c0) / w
    inside = (u >= 0) & (v >= 0) & (u <= 1) & (v <= 1)
    orientation = rng.below(4)
    if orientation == 1:
        u = 1.0 - u
    elif orientation == 2:
        v = 1.0 - v
    elif orientation == 3:
        u, v = 1.0 - u, 1.0 - v
    return inside & (u + v <= 1.0)


def _labels_attempt(cfg: SynthConfig, rng: Rng) -> np.ndarray | None:
    size = cfg.size
    target = cfg.foreground_rate * size * size
    labels = np.zeros((size, size), dtype=np.int64)
    for _ in range(_MAX_SHAPES):
        fg = int((labels != 0).sum())
        if fg >= (1.0 - _BAND) * target:
            break
        want = (target - fg) * _uniform_in(rng, 0.7, 1.1)
        kind = cfg.shape_kinds[rng.below(len(cfg.shape_kinds))]
        mask = _rasterize(kind, rng, size, max(want, 4.0))
        if mask is None:
            continue
        labels[mask] = 1 + rng.below(cfg.class_count - 1)
    frac = (labels != 0).mean()
    lo, hi = (1.0 - _BAND) * cfg.foreground_rate, (1.0 + _BAND) * cfg.foreground_rate
    return labels if lo <= frac <= hi else None


def _render(labels: np.ndarray, cfg: SynthConfig, rng: Rng) -> np.ndarray:
    palette = default_palette(cfg.class_count)
    colors = np.array([palette[k] for k in range(cfg.class_count)])
    colors[1:] = colors[0] + cfg.contrast * (colors[1:] - colors[0])
    img = colors[labels].transpose(2, 0, 1).copy()
    if cfg.noise > 0:
        noise = (rng.uniform(img.size).reshape(img.shape) * 2.0 - 1.0) * cfg.noise
        img += noise
    return np.clip(img, 0.0, 1.0)


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Deterministic dataset of `count` shape images with exact label maps."""
    rng = Rng(cfg.seed)
    samples = []
    for i in range(cfg.count):
        labels = None
        for _ in range(_MAX_TRIES):
            labels = _labels_attempt(cfg, rng)
            if labels is not None:
                break
        if labels is None:
            raise GenerationError(
                f"could not hit foreground rate {cfg.foreground_rate} at size {cfg.size} "
                f"within {_MAX_TRIES} attempts (sample {i})"
            )
        samples.append(Sample(_render(labels, cfg, rng), labels))
    return Dataset(samples, cfg.class_count)
