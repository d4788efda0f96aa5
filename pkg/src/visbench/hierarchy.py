"""Concept DAG with height and common-ancestor queries.

Categories live in a directed acyclic graph (parent -> child edges, multiple
parents allowed). Node height is the length of the longest path down to a
childless node; childless nodes have height zero. The misclassification cost
between two categories is the minimum height over their common ancestors,
where every node counts as an ancestor of itself. On a pure tree this equals
the height of the unique lowest common ancestor.
"""
from __future__ import annotations

from collections import deque
from typing import Iterable


class UnknownCategoryError(KeyError):
    """Raised when a query references a category absent from the graph."""


class SynsetGraph:
    """Immutable category DAG. Heights and ancestor sets are built at load."""

    def __init__(
        self,
        edges: Iterable[tuple[str, str]],
        leaf_set: Iterable[str] = (),
        extra_nodes: Iterable[str] = (),
    ) -> None:
        children: dict[str, list[str]] = {}
        parents: dict[str, list[str]] = {}
        nodes: list[str] = []
        seen: set[str] = set()

        def add_node(n: str) -> None:
            if not n:
                raise ValueError("category ids must be nonempty")
            if n not in seen:
                seen.add(n)
                nodes.append(n)
                children[n] = []
                parents[n] = []

        for parent, child in edges:
            add_node(parent)
            add_node(child)
            if child in children[parent]:
                raise ValueError(f"duplicate edge {parent!r} -> {child!r}")
            children[parent].append(child)
            parents[child].append(parent)
        for n in extra_nodes:
            add_node(n)

        self._nodes: tuple[str, ...] = tuple(nodes)
        self._children: dict[str, tuple[str, ...]] = {
            n: tuple(c) for n, c in children.items()
        }
        self._parents: dict[str, tuple[str, ...]] = {
            n: tuple(p) for n, p in parents.items()
        }
        self.roots: tuple[str, ...] = tuple(n for n in nodes if not parents[n])

        order = self._topological_order()
        self._heights = self._compute_heights(order)
        self._ancestors = self._compute_ancestors(order)

        self.leaf_set: frozenset[str] = frozenset(leaf_set)
        missing = self.leaf_set - seen
        if missing:
            raise ValueError(f"leaf manifest lists unknown categories: {sorted(missing)}")

    # -- construction helpers -------------------------------------------------

    def _topological_order(self) -> list[str]:
        indeg = {n: len(self._parents[n]) for n in self._nodes}
        queue = deque(n for n in self._nodes if indeg[n] == 0)
        order: list[str] = []
        while queue:
            n = queue.popleft()
            order.append(n)
            for c in self._children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(order) != len(self._nodes):
            raise ValueError("hierarchy contains a cycle")
        return order

    def _compute_heights(self, order: list[str]) -> dict[str, int]:
        heights: dict[str, int] = {}
        for n in reversed(order):
            kids = self._children[n]
            heights[n] = 0 if not kids else 1 + max(heights[c] for c in kids)
        return heights

    def _compute_ancestors(self, order: list[str]) -> dict[str, frozenset[str]]:
        anc: dict[str, frozenset[str]] = {}
        for n in order:
            ps = self._parents[n]
            acc: set[str] = {n}
            for p in ps:
                acc |= anc[p]
            anc[n] = frozenset(acc)
        return anc

    # -- queries ---------------------------------------------------------------

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    def __contains__(self, node: str) -> bool:
        return node in self._heights

    def children(self, node: str) -> tuple[str, ...]:
        self._require(node)
        return self._children[node]

    def parents(self, node: str) -> tuple[str, ...]:
        self._require(node)
        return self._parents[node]

    def is_leaf(self, node: str) -> bool:
        self._require(node)
        return not self._children[node]

    def height(self, node: str) -> int:
        """Length of the longest path from `node` down to a childless node."""
        self._require(node)
        return self._heights[node]

    def ancestors(self, node: str) -> frozenset[str]:
        """All ancestors of `node`, including the node itself."""
        self._require(node)
        return self._ancestors[node]

    def hierarchical_cost(self, a: str, b: str) -> int:
        """Minimum height over the common ancestors of `a` and `b`.

        Zero exactly when a == b and the node is childless. Raises ValueError
        if the two categories share no ancestor (malformed trimmed hierarchy).
        """
        common = self.ancestors(a) & self.ancestors(b)
        if not common:
            raise ValueError(f"categories {a!r} and {b!r} share no common ancestor")
        return min(self._heights[n] for n in common)

    def validate_trimmed(self, categories: Iterable[str]) -> list[tuple[str, str]]:
        """All ordered pairs (i, j) from `categories` where i is a proper ancestor of j.

        An empty result means the set is a valid trimmed selection: no member
        subsumes another.
        """
        cats = sorted(set(categories))
        for c in cats:
            self._require(c)
        violations = []
        for j in cats:
            anc_j = self._ancestors[j]
            for i in cats:
                if i != j and i in anc_j:
                    violations.append((i, j))
        return violations

    def _require(self, node: str) -> None:
        if node not in self._heights:
            raise UnknownCategoryError(f"unknown category {node!r}")
