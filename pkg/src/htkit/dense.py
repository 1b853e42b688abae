"""Dense tensor primitives.

All tensors are ``numpy`` float64 arrays in row-major (C) order. Mode
indices are 0-based throughout. Every operation is pure: inputs are never
mutated and results are independent arrays (or read-only views where numpy
returns one).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from .errors import ShapeMismatchError

__all__ = [
    "ModeSplit",
    "as_tensor",
    "reshape",
    "permute",
    "matricize",
    "dematricize",
    "kron",
    "contract",
    "mode1_contract",
]


def as_tensor(values, shape=None) -> np.ndarray:
    """Coerce ``values`` to a float64 array, optionally reshaping it.

    Raises ShapeMismatchError when the element count does not match the
    requested shape.
    """
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s < 1 for s in shape):
            raise ShapeMismatchError(f"dimension lengths must be >= 1, got {shape}")
        if arr.size != prod(shape):
            raise ShapeMismatchError(
                f"cannot view {arr.size} elements as shape {shape} "
                f"({prod(shape)} elements)"
            )
        arr = arr.reshape(shape)
    return arr


@dataclass(frozen=True)
class ModeSplit:
    """A partition of the modes 0..d-1 into row modes and column modes.

    ``row_modes`` and ``col_modes`` keep the order they are given in;
    matricization enumerates row (column) multi-indices row-major in that
    order.
    """

    row_modes: tuple[int, ...]
    col_modes: tuple[int, ...]

    def __post_init__(self):
        rows = tuple(int(i) for i in self.row_modes)
        cols = tuple(int(i) for i in self.col_modes)
        object.__setattr__(self, "row_modes", rows)
        object.__setattr__(self, "col_modes", cols)
        d = len(rows) + len(cols)
        if sorted(rows + cols) != list(range(d)):
            raise ShapeMismatchError(
                f"row modes {rows} and column modes {cols} must partition 0..{d - 1}"
            )
        if d > 1 and (not rows or not cols):
            raise ShapeMismatchError("both sides of a mode split must be nonempty")

    @property
    def order(self) -> int:
        return len(self.row_modes) + len(self.col_modes)

    @classmethod
    def rows(cls, d: int, row_modes) -> "ModeSplit":
        """Split with the given row modes; columns are the ascending complement."""
        rows = tuple(int(i) for i in row_modes)
        cols = tuple(i for i in range(d) if i not in rows)
        return cls(rows, cols)


def reshape(tensor: np.ndarray, new_shape) -> np.ndarray:
    """Reinterpret the row-major linearization under a new shape.

    No data is reordered; the element count must be preserved.
    """
    new_shape = tuple(int(s) for s in new_shape)
    if any(s < 1 for s in new_shape):
        raise ShapeMismatchError(f"dimension lengths must be >= 1, got {new_shape}")
    if tensor.size != prod(new_shape):
        raise ShapeMismatchError(
            f"cannot reshape {tensor.shape} ({tensor.size} elements) "
            f"to {new_shape} ({prod(new_shape)} elements)"
        )
    return tensor.reshape(new_shape)


def permute(tensor: np.ndarray, order) -> np.ndarray:
    """Reorder modes so that mode ``order[i]`` of the input becomes mode i."""
    order = tuple(int(i) for i in order)
    if sorted(order) != list(range(tensor.ndim)):
        raise ShapeMismatchError(
            f"{order} is not a permutation of the {tensor.ndim} modes"
        )
    return np.transpose(tensor, order)


def matricize(tensor: np.ndarray, split: ModeSplit) -> np.ndarray:
    """Flatten a tensor to a matrix with rows over ``split.row_modes``.

    Rows (columns) are indexed by the row-major multi-index over the row
    (column) modes in the order listed in the split.
    """
    if split.order != tensor.ndim:
        raise ShapeMismatchError(
            f"split over {split.order} modes does not match order-{tensor.ndim} tensor"
        )
    perm = split.row_modes + split.col_modes
    moved = np.transpose(tensor, perm)
    n_rows = prod(tensor.shape[i] for i in split.row_modes)
    return moved.reshape(n_rows, -1)


def dematricize(matrix: np.ndarray, split: ModeSplit, shape) -> np.ndarray:
    """Inverse of :func:`matricize` for a tensor of the given shape."""
    shape = tuple(int(s) for s in shape)
    if matrix.ndim != 2:
        raise ShapeMismatchError(f"expected a matrix, got shape {matrix.shape}")
    if split.order != len(shape):
        raise ShapeMismatchError(
            f"split over {split.order} modes does not match shape {shape}"
        )
    perm = split.row_modes + split.col_modes
    permuted_shape = tuple(shape[i] for i in perm)
    if matrix.size != prod(shape):
        raise ShapeMismatchError(
            f"matrix with {matrix.size} elements cannot fill shape {shape}"
        )
    tensor = matrix.reshape(permuted_shape)
    inverse = np.argsort(perm)
    return np.transpose(tensor, inverse)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product of two matrices.

    Block (i, j) of the result equals ``a[i, j] * b``.
    """
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(
            f"kron expects matrices, got shapes {a.shape} and {b.shape}"
        )
    if a.size == 0 or b.size == 0:
        raise ShapeMismatchError("kron factors must be nonempty")
    return np.kron(a, b)


def contract(a: np.ndarray, a_mode: int, b: np.ndarray, b_mode: int) -> np.ndarray:
    """Sum products over one paired mode of each tensor.

    The result carries a's modes (minus ``a_mode``) followed by b's modes
    (minus ``b_mode``).
    """
    a_mode = int(a_mode)
    b_mode = int(b_mode)
    if not (0 <= a_mode < a.ndim) or not (0 <= b_mode < b.ndim):
        raise ShapeMismatchError(
            f"mode indices ({a_mode}, {b_mode}) out of range for shapes "
            f"{a.shape} and {b.shape}"
        )
    if a.shape[a_mode] != b.shape[b_mode]:
        raise ShapeMismatchError(
            f"cannot contract mode {a_mode} of shape {a.shape} with "
            f"mode {b_mode} of shape {b.shape}: lengths differ"
        )
    return np.tensordot(a, b, axes=(a_mode, b_mode))


def mode1_contract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Chain contraction joining a's last mode with b's first mode."""
    return contract(a, a.ndim - 1, b, 0)
