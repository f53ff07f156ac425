"""BK-tree over 64-bit hashes with exact k-nearest search in Hamming space."""
from __future__ import annotations

from .imaging import hamming64


class _Node:
    __slots__ = ("key", "values", "children")

    def __init__(self, key: int, value: str) -> None:
        self.key = key
        self.values = [value]
        self.children: dict[int, _Node] = {}


class BKTree:
    """Metric tree keyed by Hamming distance; values are item ids.

    Insertion order does not affect query results: k-nearest returns the same
    (distance, id)-sorted list as an exhaustive scan.
    """

    def __init__(self) -> None:
        self.root: _Node | None = None
        self.size = 0

    def add(self, key: int, value: str) -> None:
        self.size += 1
        if self.root is None:
            self.root = _Node(key, value)
            return
        node = self.root
        while True:
            d = hamming64(key, node.key)
            if d == 0:
                node.values.append(value)
                return
            child = node.children.get(d)
            if child is None:
                node.children[d] = _Node(key, value)
                return
            node = child

    def nearest(self, query: int, k: int) -> list[tuple[int, str]]:
        """k nearest (distance, id) pairs, ties broken by id; exact."""
        if self.root is None or k <= 0:
            return []
        candidates: list[tuple[int, str]] = []
        bound = 64

        def visit(node: _Node) -> None:
            nonlocal bound
            d = hamming64(query, node.key)
            for value in node.values:
                candidates.append((d, value))
            if len(candidates) >= k:
                candidates.sort()
                del candidates[max(k, _tie_extent(candidates, k)) :]
                bound = candidates[min(k, len(candidates)) - 1][0]
            # triangle inequality prune: child edge e can contain matches
            # within bound only if |e - d| <= bound
            for edge in sorted(node.children):
                if abs(edge - d) <= bound:
                    visit(node.children[edge])

        visit(self.root)
        candidates.sort()
        return candidates[:k]


def _tie_extent(sorted_candidates: list[tuple[int, str]], k: int) -> int:
    """Index one past the tie group at position k (keeps equal-distance rows)."""
    if len(sorted_candidates) <= k:
        return len(sorted_candidates)
    kth = sorted_candidates[k - 1][0]
    end = k
    while end < len(sorted_candidates) and sorted_candidates[end][0] == kth:
        end += 1
    return end
