"""Tensor-train storage format.

A tensor is stored as a chain of order-3 cores with boundary ranks 1.
The chain is the degenerate-tree special case of the hierarchical Tucker
format, and :func:`tt_from_degenerate_ht` converts one representation to
the other without changing the represented tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from .dense import mode1_contract
from .errors import ShapeMismatchError
from .ht import HTFormat
from .tree import DEGENERATE

__all__ = [
    "TTFormat",
    "tt_decompose",
    "tt_reconstruct",
    "tt_from_degenerate_ht",
    "random_tt_format",
    "clipped_tt_ranks",
]


@dataclass
class TTFormat:
    """Ordered core tensors; core k has shape (r_{k-1}, n_k, r_k)."""

    cores: list[np.ndarray]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (self.cores[0].shape[0],) + tuple(c.shape[2] for c in self.cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    def param_count(self) -> int:
        return sum(c.size for c in self.cores)

    def validate(self) -> None:
        if not self.cores:
            raise ShapeMismatchError("a tensor train needs at least one core")
        r = self.ranks
        if r[0] != 1 or r[-1] != 1:
            raise ShapeMismatchError(f"boundary ranks must be 1, got {r}")
        for k, core in enumerate(self.cores):
            if core.ndim != 3:
                raise ShapeMismatchError(
                    f"core {k} has shape {core.shape}, expected 3 modes"
                )
            if core.shape[0] != r[k]:
                raise ShapeMismatchError(
                    f"core {k} left rank {core.shape[0]} does not match "
                    f"previous right rank {r[k]}"
                )


def clipped_tt_ranks(dims, rank: int) -> tuple[int, ...]:
    """Uniform rank cap clipped per bond to its feasible maximum."""
    dims = tuple(int(n) for n in dims)
    d = len(dims)
    ranks = [1]
    for k in range(1, d):
        ranks.append(min(rank, prod(dims[:k]), prod(dims[k:])))
    ranks.append(1)
    return tuple(ranks)


def tt_decompose(
    tensor: np.ndarray, rank: int | None = None, tol: float | None = None
) -> TTFormat:
    """Sequential SVD sweep producing a tensor train.

    ``rank`` caps every bond rank; ``tol`` splits the squared tolerance
    evenly over the d-1 truncations. Exact-rank inputs are recovered to
    floating-point accuracy at the same cap.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if rank is None and tol is None:
        raise ValueError("provide a rank cap, a tolerance, or both")
    if rank is not None and rank < 1:
        raise ValueError(f"rank cap must be >= 1, got {rank}")
    if tol is not None and tol <= 0:
        raise ValueError(f"tolerance must be > 0, got {tol}")
    dims = tensor.shape
    d = tensor.ndim

    if d == 1:
        return TTFormat([tensor.reshape(1, -1, 1)])

    if not np.any(tensor):
        cores = [np.zeros((1, n, 1)) for n in dims]
        return TTFormat(cores)

    tail_budget = None
    if tol is not None:
        tail_budget = (tol**2) * float(np.sum(tensor**2)) / (d - 1)

    cores: list[np.ndarray] = []
    unfolding = tensor.reshape(dims[0], -1)
    r_prev = 1
    for k in range(d - 1):
        u, s, vt = np.linalg.svd(unfolding, full_matrices=False)
        r = len(s)
        if tail_budget is not None:
            energy = np.cumsum(s[::-1] ** 2)[::-1]
            keep = int(np.searchsorted(-energy, -tail_budget, side="right"))
            r = min(r, max(keep, 1))
        if rank is not None:
            r = min(r, rank)
        cores.append(u[:, :r].reshape(r_prev, dims[k], r))
        unfolding = (s[:r, None] * vt[:r]).reshape(r * dims[k + 1], -1)
        r_prev = r
    cores.append(unfolding.reshape(r_prev, dims[-1], 1))
    return TTFormat(cores)


def tt_reconstruct(fmt: TTFormat) -> np.ndarray:
    """Evaluate the stored tensor by sequential chain contractions."""
    out = fmt.cores[0]
    for core in fmt.cores[1:]:
        out = mode1_contract(out, core)
    return out.reshape(fmt.dims)


def tt_from_degenerate_ht(fmt: HTFormat) -> TTFormat:
    """Convert a degenerate-tree HT format to the equivalent tensor train.

    Each core absorbs one leaf factor and the transfer tensor of the node
    that peels it off the chain; the represented tensor is unchanged.
    """
    if fmt.tree.kind != DEGENERATE:
        raise ShapeMismatchError(
            f"expected a degenerate tree, got kind {fmt.tree.kind!r}"
        )
    cores: list[np.ndarray] = []
    node = fmt.tree.root
    while not node.is_leaf:
        k = node.left.indices[0]
        u = fmt.leaf_factors[k]
        b = fmt.transfer_tensors[node.indices]
        # core[q, i, beta] = sum_alpha U[i, alpha] B[alpha, beta, q]
        cores.append(np.einsum("ia,abq->qib", u, b))
        node = node.right
    u_last = fmt.leaf_factors[node.indices[0]]
    cores.append(u_last.T[:, :, None])
    return TTFormat(cores)


def random_tt_format(
    dims,
    rank: int,
    rng: np.random.Generator | None = None,
    std: float = 1.0,
    ranks=None,
) -> TTFormat:
    """Sample a tensor train with i.i.d. Gaussian core entries."""
    dims = tuple(int(n) for n in dims)
    rng = rng if rng is not None else np.random.default_rng()
    if ranks is None:
        ranks = clipped_tt_ranks(dims, rank)
    ranks = tuple(int(r) for r in ranks)
    cores = [
        std * rng.standard_normal((ranks[k], dims[k], ranks[k + 1]))
        for k in range(len(dims))
    ]
    return TTFormat(cores)
