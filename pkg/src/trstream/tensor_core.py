"""Dense tensor substrate: index linearization, unfoldings, TTM and norms.

Tensors are plain :class:`numpy.ndarray` objects. The package-wide
linearization is first-index-fastest, so element ``(i_1, ..., i_N)`` (1-based)
sits at flat position ``1 + sum_n (i_n - 1) * prod_{j<n} I_j``. This is numpy's
Fortran order; :func:`as_tensor` and :func:`flatten` convert between a tensor
and its flat value sequence.

Modes are 1-based at the public API (``n`` in ``1..N``), matching the usual
tensor-algebra notation. Internally everything is 0-based.
"""

from __future__ import annotations

import enum
from collections.abc import Sequence

import numpy as np

from .errors import DomainError


class UnfoldKind(enum.Enum):
    """The three matricizations of an N-way tensor.

    ``CLASSICAL`` is ``X_(n)``: row ``i_n``, columns run over the remaining
    indices in natural order. ``MODE`` is ``X_[n]``: columns run over
    ``i_{n+1}, ..., i_N, i_1, ..., i_{n-1}`` (cyclic order). ``PREFIX`` is
    ``X_<n>``: rows run over ``i_1..i_n`` and columns over ``i_{n+1}..i_N``.
    """

    CLASSICAL = "classical"
    MODE = "mode"
    PREFIX = "prefix"


def as_tensor(values, shape) -> np.ndarray:
    """Build a tensor from a flat value sequence in linearization order."""
    values = np.asarray(values)
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise DomainError(f"dimensions must be positive, got {shape}")
    if values.size != int(np.prod(shape, dtype=np.int64)):
        raise DomainError(
            f"{values.size} values cannot fill a tensor of shape {shape}"
        )
    return values.reshape(shape, order="F")


def flatten(x: np.ndarray) -> np.ndarray:
    """Return the values of ``x`` in linearization order (first index fastest)."""
    return np.asarray(x).ravel(order="F")


def linear_index(multi_index: Sequence[int], shape: Sequence[int]) -> int:
    """1-based flat position of a 1-based multi-index.

    >>> linear_index((2, 1, 1), (2, 3, 4))
    2
    """
    if len(multi_index) != len(shape):
        raise DomainError(
            f"index has {len(multi_index)} entries but the shape has {len(shape)} modes"
        )
    pos = 1
    stride = 1
    for mode, (i, dim) in enumerate(zip(multi_index, shape), start=1):
        if not 1 <= i <= dim:
            raise DomainError(f"index {i} out of range [1, {dim}] in mode {mode}")
        pos += (i - 1) * stride
        stride *= dim
    return pos


def _check_mode(n: int, order: int) -> int:
    if not isinstance(n, (int, np.integer)) or not 1 <= n <= order:
        raise DomainError(f"mode {n} is not in [1, {order}]")
    return int(n) - 1


def _unfold_perm(kind: UnfoldKind, k: int, order: int) -> list[int]:
    if kind is UnfoldKind.CLASSICAL:
        return [k] + [j for j in range(order) if j != k]
    if kind is UnfoldKind.MODE:
        return [k] + list(range(k + 1, order)) + list(range(k))
    return list(range(order))


def unfold(x: np.ndarray, kind: UnfoldKind, n: int) -> np.ndarray:
    """Matricize ``x`` according to ``kind`` along mode ``n`` (1-based)."""
    x = np.asarray(x)
    kind = UnfoldKind(kind)
    k = _check_mode(n, x.ndim)
    if kind is UnfoldKind.PREFIX:
        rows = int(np.prod(x.shape[: k + 1], dtype=np.int64))
        return x.reshape(rows, -1, order="F")
    perm = _unfold_perm(kind, k, x.ndim)
    return np.transpose(x, perm).reshape(x.shape[k], -1, order="F")


def fold(matrix: np.ndarray, kind: UnfoldKind, n: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`unfold`: ``fold(unfold(x, kind, n), kind, n, x.shape) == x``."""
    matrix = np.asarray(matrix)
    kind = UnfoldKind(kind)
    shape = tuple(int(s) for s in shape)
    k = _check_mode(n, len(shape))
    if matrix.ndim != 2:
        raise DomainError(f"expected a matrix, got an array of order {matrix.ndim}")
    if kind is UnfoldKind.PREFIX:
        rows = int(np.prod(shape[: k + 1], dtype=np.int64))
        cols = int(np.prod(shape[k + 1 :], dtype=np.int64))
    else:
        rows = shape[k]
        cols = int(np.prod(shape, dtype=np.int64)) // rows
    if matrix.shape != (rows, cols):
        raise DomainError(
            f"matrix of shape {matrix.shape} does not fold to {shape} "
            f"under {kind.value}({n}); expected {(rows, cols)}"
        )
    if kind is UnfoldKind.PREFIX:
        return matrix.reshape(shape, order="F")
    perm = _unfold_perm(kind, k, len(shape))
    permuted = matrix.reshape([shape[p] for p in perm], order="F")
    return np.transpose(permuted, np.argsort(perm))


def ttm(x: np.ndarray, matrix: np.ndarray, n: int) -> np.ndarray:
    """Tensor-times-matrix along mode ``n``: contracts the columns of ``matrix`` with mode ``n``."""
    x = np.asarray(x)
    matrix = np.asarray(matrix)
    k = _check_mode(n, x.ndim)
    if matrix.ndim != 2 or matrix.shape[1] != x.shape[k]:
        raise DomainError(
            f"matrix of shape {matrix.shape} cannot multiply mode {n} of size {x.shape[k]}"
        )
    y = np.tensordot(matrix, x, axes=(1, k))
    return np.moveaxis(y, 0, k)


def multi_ttm(x: np.ndarray, factors) -> np.ndarray:
    """Apply several TTMs on distinct modes.

    ``factors`` is an iterable of ``(mode, matrix)`` pairs. The result does not
    depend on the order of application.
    """
    factors = list(factors)
    modes = [n for n, _ in factors]
    if len(set(modes)) != len(modes):
        raise DomainError(f"at most one factor per mode, got modes {modes}")
    y = np.asarray(x)
    for n, matrix in factors:
        y = ttm(y, matrix, n)
    return y


def frobenius_norm(x: np.ndarray) -> float:
    """Square root of the sum of squared moduli of all entries."""
    return float(np.linalg.norm(np.asarray(x).ravel()))
