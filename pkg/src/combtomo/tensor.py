"""Dense complex linear algebra on tensor-product spaces.

Subsystem order is big-endian: the leftmost factor of a shape is the most
significant index of the computational basis, so ``kron(a, b)`` acts with
``a`` on factor 0 and ``b`` on factor 1.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when matrix shapes do not match the declared subsystem layout."""


def as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.complex128)
    if m.ndim != 2:
        raise DimensionError(f"expected a matrix, got array of shape {m.shape}")
    return m


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a), as_matrix(b))


def dagger(m) -> np.ndarray:
    return as_matrix(m).conj().T


def frobenius_norm(m) -> float:
    m = np.asarray(m)
    return float(np.sqrt(np.sum(m.real**2 + m.imag**2)))


def _check_shape(dim: int, shape: Sequence[int], what: str) -> None:
    if any(f < 1 for f in shape):
        raise DimensionError(f"{what}: factors must be positive, got {list(shape)}")
    if int(np.prod(shape)) != dim:
        raise DimensionError(f"{what}: factors {list(shape)} do not multiply to {dim}")


def partial_trace(m, shape: Sequence[int], traced_factor: int) -> np.ndarray:
    """Trace out one tensor factor of a square operator."""
    m = as_matrix(m)
    shape = list(shape)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"partial_trace needs a square matrix, got {m.shape}")
    _check_shape(m.shape[0], shape, "partial_trace")
    if not 0 <= traced_factor < len(shape):
        raise DimensionError(f"traced factor {traced_factor} out of range for {shape}")
    n = len(shape)
    t = m.reshape(shape + shape)
    t = np.trace(t, axis1=traced_factor, axis2=n + traced_factor)
    rest = int(np.prod([d for i, d in enumerate(shape) if i != traced_factor]))
    return t.reshape(rest, rest)


def lift(op, shape_in: Sequence[int], shape_out: Sequence[int], acting_factor: int) -> np.ndarray:
    """Embed ``op`` on one factor as I x ... x op x ... x I."""
    op = as_matrix(op)
    shape_in, shape_out = list(shape_in), list(shape_out)
    if len(shape_in) != len(shape_out) or not 0 <= acting_factor < len(shape_in):
        raise DimensionError("lift: incompatible factor lists or acting factor")
    for i, (a, b) in enumerate(zip(shape_in, shape_out)):
        if i != acting_factor and a != b:
            raise DimensionError(f"lift: factor {i} differs between shapes ({a} vs {b})")
    if op.shape != (shape_out[acting_factor], shape_in[acting_factor]):
        raise DimensionError(
            f"lift: operator shape {op.shape} does not map factor "
            f"{shape_in[acting_factor]} -> {shape_out[acting_factor]}"
        )
    left = int(np.prod(shape_in[:acting_factor]))
    right = int(np.prod(shape_in[acting_factor + 1:]))
    return np.kron(np.kron(np.eye(left), op), np.eye(right))
