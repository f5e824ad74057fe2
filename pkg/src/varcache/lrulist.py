"""Intrusive doubly-linked LRU list.

Nodes are arbitrary objects carrying ``_lru_prev``/``_lru_next`` attributes;
the list itself acts as the circular sentinel. Membership costs no extra
allocation and removal is O(1). A node may sit in at most one list at a
time; detached nodes have both links set to None.
"""
from __future__ import annotations


class LruList:
    __slots__ = ("_lru_prev", "_lru_next", "_size")

    def __init__(self):
        self._lru_prev = self
        self._lru_next = self
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @staticmethod
    def linked(node) -> bool:
        return node._lru_next is not None

    def push_front(self, node) -> None:
        if node._lru_next is not None:
            raise ValueError("node is already in a list")
        nxt = self._lru_next
        node._lru_prev = self
        node._lru_next = nxt
        nxt._lru_prev = node
        self._lru_next = node
        self._size += 1

    def remove(self, node) -> None:
        if node._lru_next is None:
            raise ValueError("node is not in a list")
        node._lru_prev._lru_next = node._lru_next
        node._lru_next._lru_prev = node._lru_prev
        node._lru_prev = None
        node._lru_next = None
        self._size -= 1

    def move_to_front(self, node) -> None:
        self.remove(node)
        self.push_front(node)

    def head(self):
        """Most recently used node, or None when empty."""
        node = self._lru_next
        return None if node is self else node

    def tail(self):
        """Least recently used node, or None when empty."""
        node = self._lru_prev
        return None if node is self else node

    def __iter__(self):
        """Head (most recent) to tail (least recent)."""
        node = self._lru_next
        while node is not self:
            nxt = node._lru_next
            yield node
            node = nxt
