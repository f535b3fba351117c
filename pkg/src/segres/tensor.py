"""Float64 tensor helpers, deterministic RNG, and the finite-difference oracle.

All numeric state in this package is a row-major float64 ``numpy.ndarray``
in the canonical ``batch x channels x height x width`` layout. Randomness
comes exclusively from :class:`Rng`, a counter-based SplitMix64 stream, so
any value derived from a seed is reproducible bit for bit.
"""

import math
from typing import Callable, Sequence

import numpy as np

from .validation import NumericError, ShapeError

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _checked_shape(shape: Sequence[int]) -> tuple:
    dims = tuple(int(d) for d in shape)
    if len(dims) == 0:
        raise ShapeError("shape must have at least one dimension")
    if any(d < 1 for d in dims):
        raise ShapeError(f"all dimensions must be >= 1, got {dims}")
    return dims


def new_tensor(shape: Sequence[int], fill: float = 0.0) -> np.ndarray:
    """Allocate a float64 tensor of the given shape with every element = fill."""
    return np.full(_checked_shape(shape), fill, dtype=np.float64)


class Rng:
    """Deterministic random stream: SplitMix64 with Box-Muller normals.

    The generator is counter-based: draw k mixes ``seed + k * golden``, so a
    block of any size can be produced vectorized while staying identical to
    one-at-a-time draws.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def _block(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = (np.uint64(self.seed) + idx * _GOLDEN) & _MASK64
        z = (z ^ (z >> np.uint64(30))) * _MIX1 & _MASK64
        z = (z ^ (z >> np.uint64(27))) * _MIX2 & _MASK64
        return z ^ (z >> np.uint64(31))

    def next_u64(self) -> int:
        return int(self._block(1)[0])

    def below(self, bound: int) -> int:
        """Integer in [0, bound)."""
        if bound < 1:
            raise ValueError(f"bound must be >= 1, got {bound}")
        return self.next_u64() % bound

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in (0, 1], each consuming one 64-bit draw."""
        bits = self._block(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * 2.0 ** -53

    def normal(self, shape: Sequence[int]) -> np.ndarray:
        """Standard normal tensor via Box-Muller on uniform pairs."""
        dims = _checked_shape(shape)
        n = int(np.prod(dims))
        m = (n + 1) // 2
        u1 = self.uniform(m)
        u2 = self.uniform(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * math.pi) * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return out.reshape(dims)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]


def he_init(shape: Sequence[int], fan_in: int, rng: Rng) -> np.ndarray:
    """Normal init with std sqrt(2 / fan_in), suited to ReLU stacks."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be >= 1, got {fan_in}")
    return rng.normal(shape) * math.sqrt(2.0 / fan_in)


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    ``f`` must be a pure function of the array contents; the same buffer is
    perturbed in place and restored between evaluations.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    x = np.asarray(x, dtype=np.float64)
    work = x.copy()
    grad = np.empty_like(work)
    flat = work.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(work))
        flat[i] = orig - eps
        fm = float(f(work))
        flat[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad
