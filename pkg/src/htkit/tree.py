"""Binary dimension trees over tensor modes.

A tree node covers a contiguous, ascending set of mode indices; the two
children partition their parent with every left index preceding every
right index. Two layouts are supported: ``balanced`` trees split each
index set as evenly as possible (left-heavy on odd sizes), and
``degenerate`` trees peel a single leading index per level, which is the
chain layout underlying the tensor-train format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np

from .errors import ShapeMismatchError

BALANCED = "balanced"
DEGENERATE = "degenerate"


@dataclass
class TreeNode:
    indices: tuple[int, ...]
    rank: int | None = None
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None and self.right is None

    def clone(self) -> "TreeNode":
        return TreeNode(
            self.indices,
            self.rank,
            self.left.clone() if self.left else None,
            self.right.clone() if self.right else None,
        )


@dataclass
class DimensionTree:
    root: TreeNode
    kind: str = BALANCED
    _by_indices: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._by_indices = {n.indices: n for n in self.nodes()}

    @property
    def order(self) -> int:
        return len(self.root.indices)

    def nodes(self) -> list[TreeNode]:
        """All nodes, root first (preorder)."""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)
        return out

    def leaves(self) -> list[TreeNode]:
        """Leaves in mode order."""
        return sorted(
            (n for n in self.nodes() if n.is_leaf), key=lambda n: n.indices[0]
        )

    def internal_nodes(self) -> list[TreeNode]:
        """Internal nodes in preorder (root first)."""
        return [n for n in self.nodes() if not n.is_leaf]

    def node(self, indices) -> TreeNode:
        key = tuple(int(i) for i in indices)
        try:
            return self._by_indices[key]
        except KeyError:
            raise KeyError(f"no tree node covers modes {key}") from None

    def clone(self) -> "DimensionTree":
        return DimensionTree(self.root.clone(), self.kind)

    def assign_uniform_ranks(self, dims, cap: int) -> None:
        """Set every node rank to ``cap`` clipped to its feasible maximum.

        The feasible maximum of a node is min(rows, cols) of the
        matricization with the node's modes as rows; the root rank is 1.
        """
        dims = tuple(int(n) for n in dims)
        if len(dims) != self.order:
            raise ShapeMismatchError(
                f"{len(dims)} dims for an order-{self.order} tree"
            )
        if cap < 1:
            raise ValueError(f"rank cap must be >= 1, got {cap}")
        total = prod(dims)
        for node in self.nodes():
            rows = prod(dims[i] for i in node.indices)
            node.rank = min(cap, rows, total // rows)
        self.root.rank = 1

    def validate(self) -> None:
        d = self.order
        if tuple(self.root.indices) != tuple(range(d)):
            raise ShapeMismatchError(
                f"root must cover modes 0..{d - 1}, covers {self.root.indices}"
            )
        for node in self.nodes():
            if node.is_leaf:
                if len(node.indices) != 1:
                    raise ShapeMismatchError(
                        f"leaf covers {node.indices}, expected a single mode"
                    )
                continue
            li, ri = node.left.indices, node.right.indices
            if tuple(li) + tuple(ri) != tuple(node.indices):
                raise ShapeMismatchError(
                    f"children {li} | {ri} do not partition {node.indices} in order"
                )
        if self.root.rank not in (None, 1):
            raise ShapeMismatchError(f"root rank must be 1, got {self.root.rank}")


def _build_balanced(indices: tuple[int, ...]) -> TreeNode:
    if len(indices) == 1:
        return TreeNode(indices)
    half = (len(indices) + 1) // 2
    return TreeNode(
        indices,
        left=_build_balanced(indices[:half]),
        right=_build_balanced(indices[half:]),
    )


def _build_degenerate(indices: tuple[int, ...]) -> TreeNode:
    if len(indices) == 1:
        return TreeNode(indices)
    return TreeNode(
        indices,
        left=TreeNode(indices[:1]),
        right=_build_degenerate(indices[1:]),
    )


def build_tree(d: int, kind: str = BALANCED) -> DimensionTree:
    """Build a dimension tree over modes 0..d-1. Requires d >= 2."""
    d = int(d)
    if d < 2:
        raise ValueError(f"a dimension tree needs at least 2 modes, got {d}")
    if kind == BALANCED:
        root = _build_balanced(tuple(range(d)))
    elif kind == DEGENERATE:
        root = _build_degenerate(tuple(range(d)))
    else:
        raise ValueError(f"unknown tree kind {kind!r}")
    return DimensionTree(root, kind)


def tree_to_jsonable(tree: DimensionTree) -> dict:
    def node_dict(n: TreeNode) -> dict:
        out: dict = {"indices": list(n.indices), "rank": n.rank}
        if not n.is_leaf:
            out["children"] = [node_dict(n.left), node_dict(n.right)]
        return out

    return {"kind": tree.kind, "root": node_dict(tree.root)}


def tree_from_jsonable(obj: dict) -> DimensionTree:
    def build(nd: dict) -> TreeNode:
        children = nd.get("children")
        node = TreeNode(tuple(int(i) for i in nd["indices"]), nd.get("rank"))
        if children:
            node.left = build(children[0])
            node.right = build(children[1])
        return node

    return DimensionTree(build(obj["root"]), obj.get("kind", BALANCED))
