"""Hierarchical Tucker storage format.

A tensor is stored as one truncated basis matrix per leaf of a dimension
tree plus one transfer tensor per internal node. Reconstruction merges
children bottom-up, which keeps every intermediate at (subtree size x
rank) and avoids materializing level-wide Kronecker products.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np

from .dense import ModeSplit, matricize
from .errors import ShapeMismatchError
from .tree import BALANCED, DimensionTree, TreeNode, build_tree

__all__ = [
    "HTFormat",
    "ht_node_merge",
    "ht_decompose",
    "ht_reconstruct",
    "random_ht_format",
]


@dataclass
class HTFormat:
    """Leaf factors and transfer tensors attached to a dimension tree.

    ``leaf_factors[k]`` has shape (n_k, r_k) for mode k. Transfer tensors
    are keyed by the covered mode tuple and have shape
    (left rank, right rank, node rank); the root's node rank is 1.
    """

    tree: DimensionTree
    leaf_factors: dict[int, np.ndarray]
    transfer_tensors: dict[tuple[int, ...], np.ndarray]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(
            self.leaf_factors[k].shape[0] for k in range(self.tree.order)
        )

    @property
    def order(self) -> int:
        return self.tree.order

    def rank_of(self, node: TreeNode) -> int:
        if node.is_leaf:
            return self.leaf_factors[node.indices[0]].shape[1]
        return self.transfer_tensors[node.indices].shape[2]

    def param_count(self) -> int:
        leaves = sum(u.size for u in self.leaf_factors.values())
        transfers = sum(b.size for b in self.transfer_tensors.values())
        return leaves + transfers

    def validate(self) -> None:
        self.tree.validate()
        for node in self.tree.internal_nodes():
            b = self.transfer_tensors.get(node.indices)
            if b is None or b.ndim != 3:
                raise ShapeMismatchError(
                    f"missing or malformed transfer tensor at node {node.indices}"
                )
            expected = (self.rank_of(node.left), self.rank_of(node.right))
            if b.shape[:2] != expected:
                raise ShapeMismatchError(
                    f"transfer tensor at {node.indices} has shape {b.shape}, "
                    f"children ranks are {expected}"
                )
        root = self.transfer_tensors[self.tree.root.indices]
        if root.shape[2] != 1:
            raise ShapeMismatchError(
                f"root transfer tensor must have node rank 1, got {root.shape}"
            )


def ht_node_merge(
    u_left: np.ndarray, transfer: np.ndarray, u_right: np.ndarray
) -> np.ndarray:
    """Merge two child bases through a transfer tensor.

    Returns the parent basis of shape (rows(u_left) * rows(u_right),
    node rank) with the row multi-index ordered left-major, equal to
    kron(u_left, u_right) @ transfer matricized over its first two modes.
    """
    if u_left.ndim != 2 or u_right.ndim != 2 or transfer.ndim != 3:
        raise ShapeMismatchError(
            "expected two matrices and an order-3 transfer tensor, got shapes "
            f"{u_left.shape}, {transfer.shape}, {u_right.shape}"
        )
    if transfer.shape[0] != u_left.shape[1] or transfer.shape[1] != u_right.shape[1]:
        raise ShapeMismatchError(
            f"transfer tensor {transfer.shape} does not match child ranks "
            f"({u_left.shape[1]}, {u_right.shape[1]})"
        )
    merged = np.einsum("ai,ijk,bj->abk", u_left, transfer, u_right)
    return merged.reshape(-1, transfer.shape[2])


def _node_matrix(fmt: HTFormat, node: TreeNode) -> np.ndarray:
    if node.is_leaf:
        return fmt.leaf_factors[node.indices[0]]
    return ht_node_merge(
        _node_matrix(fmt, node.left),
        fmt.transfer_tensors[node.indices],
        _node_matrix(fmt, node.right),
    )


def ht_reconstruct(fmt: HTFormat) -> np.ndarray:
    """Evaluate the stored tensor densely by bottom-up node merges."""
    root = _node_matrix(fmt, fmt.tree.root)
    return root.reshape(fmt.dims)


def _truncation_rank(s: np.ndarray, rank: int | None, tail_budget: float | None) -> int:
    r = len(s)
    if tail_budget is not None:
        energy = np.cumsum(s[::-1] ** 2)[::-1]  # energy[i] = sum of s[i:]**2
        keep = int(np.searchsorted(-energy, -tail_budget, side="right"))
        r = min(r, max(keep, 1))
    if rank is not None:
        r = min(r, rank)
    return max(r, 1)


def ht_decompose(
    tensor: np.ndarray,
    tree: DimensionTree,
    rank: int | None = None,
    tol: float | None = None,
) -> HTFormat:
    """Decompose a dense tensor on the given tree by hierarchical SVD.

    Each non-root node keeps the leading left singular vectors of its
    matricization; transfer tensors are orthogonal projections onto the
    children's bases. ``rank`` caps every node rank (clipped per node to
    its feasible maximum); ``tol`` bounds the relative reconstruction
    error by splitting the squared tolerance evenly over the truncated
    nodes. At least one of the two must be given.

    Tensors synthesized exactly at ranks within the cap are recovered to
    floating-point accuracy.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != tree.order:
        raise ShapeMismatchError(
            f"order-{tensor.ndim} tensor does not fit a tree over "
            f"{tree.order} modes"
        )
    if rank is None and tol is None:
        raise ValueError("provide a rank cap, a tolerance, or both")
    if rank is not None and rank < 1:
        raise ValueError(f"rank cap must be >= 1, got {rank}")
    if tol is not None and tol <= 0:
        raise ValueError(f"tolerance must be > 0, got {tol}")

    tree = tree.clone()
    d = tree.order
    non_root = [n for n in tree.nodes() if n is not tree.root]
    tail_budget = None
    if tol is not None:
        tail_budget = (tol**2) * float(np.sum(tensor**2)) / max(len(non_root), 1)

    leaf_factors: dict[int, np.ndarray] = {}
    bases: dict[tuple[int, ...], np.ndarray] = {}

    if not np.any(tensor):
        # Zero tensor: rank-1 zero factors by convention.
        tree.assign_uniform_ranks(tensor.shape, 1)
        for node in tree.leaves():
            k = node.indices[0]
            leaf_factors[k] = np.zeros((tensor.shape[k], 1))
        transfers = {
            n.indices: np.zeros((1, 1, 1)) for n in tree.internal_nodes()
        }
        return HTFormat(tree, leaf_factors, transfers)

    for node in non_root:
        split = ModeSplit.rows(d, node.indices)
        mat = matricize(tensor, split)
        u, s, _ = np.linalg.svd(mat, full_matrices=False)
        r = _truncation_rank(s, rank, tail_budget)
        node.rank = r
        bases[node.indices] = u[:, :r]
        if node.is_leaf:
            leaf_factors[node.indices[0]] = bases[node.indices]
    tree.root.rank = 1

    transfer_tensors: dict[tuple[int, ...], np.ndarray] = {}
    for node in tree.internal_nodes():
        u_l = bases[node.left.indices]
        u_v = bases[node.right.indices]
        if node is tree.root:
            split = ModeSplit.rows(d, node.left.indices)
            mat = matricize(tensor, split)
            b = np.einsum("ai,bj,ab->ij", u_l, u_v, mat)[:, :, None]
        else:
            u_t = bases[node.indices]
            u_t3 = u_t.reshape(u_l.shape[0], u_v.shape[0], -1)
            b = np.einsum("ai,bj,abk->ijk", u_l, u_v, u_t3)
        transfer_tensors[node.indices] = b

    return HTFormat(tree, leaf_factors, transfer_tensors)


def random_ht_format(
    dims,
    rank: int,
    kind: str = BALANCED,
    rng: np.random.Generator | None = None,
    std: float = 1.0,
    tree: DimensionTree | None = None,
) -> HTFormat:
    """Sample an HT format with i.i.d. Gaussian factor entries.

    Node ranks are the uniform ``rank`` clipped per node to its feasible
    maximum, so synthesized tensors can be recovered exactly at the same
    cap.
    """
    dims = tuple(int(n) for n in dims)
    rng = rng if rng is not None else np.random.default_rng()
    if tree is None:
        tree = build_tree(len(dims), kind)
    tree = tree.clone()
    tree.assign_uniform_ranks(dims, rank)
    leaf_factors = {
        n.indices[0]: std * rng.standard_normal((dims[n.indices[0]], n.rank))
        for n in tree.leaves()
    }
    transfer_tensors = {
        n.indices: std * rng.standard_normal((n.left.rank, n.right.rank, n.rank))
        for n in tree.internal_nodes()
    }
    return HTFormat(tree, leaf_factors, transfer_tensors)
