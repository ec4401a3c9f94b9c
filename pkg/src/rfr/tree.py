"""Binary partition trees over the covariate cube with MCF or intensity leaves."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .mcf import McfEstimate
from .nhpp import IntensityModel


@dataclass(eq=False)
class TreeNode:
    node_id: int
    member_count: int = 0
    failed_count: int = 0
    covariate_index: int = -1
    split_point: float = float("nan")
    left: "TreeNode | None" = None
    right: "TreeNode | None" = None
    payload: McfEstimate | IntensityModel | None = None

    @property
    def is_terminal(self) -> bool:
        return self.left is None

    @property
    def kind(self) -> str:
        return "terminal" if self.is_terminal else "internal"

    def walk(self) -> Iterator["TreeNode"]:
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_terminal:
                stack.extend((node.right, node.left))


@dataclass(eq=False)
class TreeModel:
    root: TreeNode
    bootstrap_ids: tuple = ()
    seed: tuple = ()
    _arrays: tuple | None = field(default=None, repr=False)

    def _compile(self):
        nodes = list(self.root.walk())
        pos = {id(nd): i for i, nd in enumerate(nodes)}
        feature = np.array([nd.covariate_index if not nd.is_terminal else -1 for nd in nodes])
        threshold = np.array([nd.split_point for nd in nodes])
        left = np.array([pos[id(nd.left)] if not nd.is_terminal else -1 for nd in nodes])
        right = np.array([pos[id(nd.right)] if not nd.is_terminal else -1 for nd in nodes])
        self._arrays = (nodes, feature, threshold, left, right)
        return self._arrays

    @property
    def nodes(self) -> list[TreeNode]:
        return (self._arrays or self._compile())[0]

    @property
    def leaves(self) -> list[TreeNode]:
        return [nd for nd in self.nodes if nd.is_terminal]

    @property
    def used_covariates(self) -> set[int]:
        return {nd.covariate_index for nd in self.nodes if not nd.is_terminal}

    def apply(self, X) -> np.ndarray:
        """Position (in :attr:`nodes`) of the terminal node reached by each row.

        Rows go left when ``x[j] <= split_point``.
        """
        nodes, feature, threshold, left, right = self._arrays or self._compile()
        X = np.atleast_2d(np.asarray(X, dtype=float))
        at = np.zeros(X.shape[0], dtype=np.intp)
        rows = np.arange(X.shape[0])
        while True:
            f = feature[at]
            inner = f >= 0
            if not inner.any():
                return at
            r, a = rows[inner], at[inner]
            go_left = X[r, f[inner]] <= threshold[a]
            at[inner] = np.where(go_left, left[a], right[a])

    def leaf_nodes(self, X) -> list[TreeNode]:
        nodes = self.nodes
        return [nodes[i] for i in self.apply(X)]

    def n_leaves(self) -> int:
        return len(self.leaves)
