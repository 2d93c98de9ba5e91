"""Dense array substrate used by the layers.

Tensors are plain row-major ``numpy.ndarray`` objects. Parameters and
activations default to float32; every function here preserves the dtype it is
given so the gradient checker can re-run the same code in float64.

Randomness comes from :class:`Rng`, a thin wrapper over numpy's PCG64
generator (a 128-bit permuted congruential generator seeded from a 64-bit
integer through ``SeedSequence``). PCG64 is part of the reproducibility
contract: changing it changes every checkpoint.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError

FLOAT = np.float32

Tensor = np.ndarray


def as_tensor(values, dtype=FLOAT) -> Tensor:
    return np.ascontiguousarray(np.asarray(values, dtype=dtype))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product with an explicit shape check."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def softmax(x: Tensor) -> Tensor:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_UNARY = {"sigmoid": sigmoid, "tanh": np.tanh, "relu": relu}
_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise(op: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply one of add/sub/mul (binary) or sigmoid/tanh/relu (unary)."""
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} takes a single operand")
        return _UNARY[op](a)
    if op in _BINARY:
        if b is None:
            raise TypeError(f"{op} takes two operands")
        if a.shape != b.shape:
            raise DimensionError(f"{op}: shapes differ {a.shape} vs {b.shape}")
        return _BINARY[op](a, b)
    raise ValueError(f"unknown elementwise op {op!r}")


class Rng:
    """Seeded random stream. Identical seeds give identical sequences."""

    def __init__(self, seed: int | np.random.SeedSequence):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self) -> "Rng":
        """Independent child stream; deterministic given the parent's seed and spawn order."""
        return Rng(self._seq.spawn(1)[0])

    def uniform(self, shape: Sequence[int], lo: float = 0.0, hi: float = 1.0, dtype=FLOAT) -> Tensor:
        if not lo < hi:
            raise ValueError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
        # draw in [0,1) then map; clamp guards the float32 round-up onto hi
        u = self._gen.random(tuple(shape))
        out = (lo + (hi - lo) * u).astype(dtype)
        top = np.nextafter(dtype(hi), dtype(lo))
        return np.minimum(out, top)

    def normal(self, shape: Sequence[int], dtype=FLOAT) -> Tensor:
        return self._gen.standard_normal(tuple(shape)).astype(dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def random(self, size=None):
        return self._gen.random(size)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen
