"""Dense tensor helpers, seeded random streams and weight initialization.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Random streams are ``numpy.random.Generator`` instances backed by the
PCG64 bit generator, whose output sequence is fixed by its published
algorithm and therefore identical across platforms for a given seed.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, DimensionError

DTYPE = np.float64


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed``.

    Extra integer ``keys`` select an independent sub-stream, so that e.g.
    ``make_rng(seed, 2, epoch)`` gives a per-epoch stream without consuming
    draws from any other stream.
    """
    if seed < 0 or any(k < 0 for k in keys):
        raise ArgumentError(f"seeds must be non-negative, got {(seed, *keys)}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, *keys])))


def as_tensor(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=DTYPE)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains non-finite values")
    return x


def matmul(a, b) -> np.ndarray:
    """Matrix product of ``a`` (m x k) and ``b`` (k x n)."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return check_finite(a @ b, "matmul result")


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator,
                   shape: tuple[int, ...] | None = None) -> np.ndarray:
    """Draw a Glorot/Xavier uniform tensor.

    Entries are uniform on ``[-L, L)`` with ``L = sqrt(6 / (fan_in + fan_out))``.
    ``shape`` defaults to ``(fan_in, fan_out)``.
    """
    if fan_in < 1 or fan_out < 1:
        raise ArgumentError(f"fan_in and fan_out must be >= 1, got {fan_in}, {fan_out}")
    limit = glorot_limit(fan_in, fan_out)
    if shape is None:
        shape = (fan_in, fan_out)
    return rng.uniform(-limit, limit, size=shape).astype(DTYPE, copy=False)
