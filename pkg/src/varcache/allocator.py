"""Alignment, missing-interval scanning, and greedy variable-size block allocation.

Pure decision logic: given an I/O request and a read-only view of what is
already cached per block size, decide which aligned ranges are missing and
which blocks to allocate for them. Nothing in this module mutates cache
state, so all functions are safe to call from any number of workers.
"""
from __future__ import annotations

from typing import Container, Iterable, Mapping, NamedTuple


class Interval(NamedTuple):
    """Half-open byte range [begin, end), aligned to the smallest block size."""

    begin: int
    end: int


class Allocation(NamedTuple):
    """One cache block to allocate: self-aligned offset plus its size."""

    offset: int
    size: int


class BlockSizeConfig:
    """Ordered set of supported cache-block sizes in bytes.

    Sizes must be strictly increasing powers of two, which guarantees every
    size divides every larger one. The largest size doubles as the group
    size of the physical cache layout. A single size is the fixed-size
    baseline configuration.
    """

    __slots__ = ("sizes",)

    def __init__(self, sizes: Iterable[int]):
        sizes = tuple(int(s) for s in sizes)
        if not sizes:
            raise ValueError("at least one block size is required")
        for s in sizes:
            if s <= 0 or s & (s - 1):
                raise ValueError(f"block size {s} is not a positive power of two")
        if any(a >= b for a, b in zip(sizes, sizes[1:])):
            raise ValueError("block sizes must be strictly increasing")
        self.sizes = sizes

    @property
    def smallest(self) -> int:
        return self.sizes[0]

    @property
    def group_size(self) -> int:
        return self.sizes[-1]

    def __len__(self) -> int:
        return len(self.sizes)

    def __eq__(self, other) -> bool:
        return isinstance(other, BlockSizeConfig) and self.sizes == other.sizes

    def __repr__(self) -> str:
        return f"BlockSizeConfig({list(self.sizes)})"


class DictIndex:
    """Membership view over plain per-size offset collections.

    Convenience adapter so tests and standalone callers can drive the
    allocator with ``{block_size: {offset, ...}}`` style data.
    """

    __slots__ = ("_tables",)

    def __init__(self, tables: Mapping[int, Container[int]]):
        self._tables = tables

    def has(self, size: int, offset: int) -> bool:
        table = self._tables.get(size)
        return table is not None and offset in table


def align(offset: int, block_size: int) -> int:
    """Largest multiple of block_size that is <= offset."""
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    return offset - offset % block_size


def scan_range(offset: int, length: int, smallest: int, strict_range: bool = False) -> Interval:
    """Aligned range a request is scanned over, in smallest-block steps.

    The default end lands one step past the aligned request end whenever
    offset+length is already aligned; strict_range clamps the end to the
    last step actually touched by the request.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    begin = align(offset, smallest)
    if strict_range:
        end = align(offset + length - 1, smallest) + smallest
    else:
        end = align(offset + length, smallest) + smallest
    return Interval(begin, end)


def missing_intervals(offset: int, length: int, cfg: BlockSizeConfig, index,
                      *, strict_range: bool = False) -> list[Interval]:
    """Maximal aligned ranges of the request not covered by any cached block.

    Walks the scan range in smallest-size steps; a step is a hit when its
    address, aligned to any configured size, is present in the index for
    that size. Contiguous missing steps merge into one interval; a hit at a
    larger size skips the remainder of that block in one jump. Returned
    intervals are disjoint, sorted, and never bridge a hit step.

    ``index`` is anything with ``has(size, offset) -> bool`` (see DictIndex).
    """
    b1 = cfg.smallest
    begin, end = scan_range(offset, length, b1, strict_range)
    missing: list[Interval] = []
    sizes = cfg.sizes
    while begin < end:
        covered = False
        for size in sizes:
            base = begin - begin % size
            if index.has(size, base):
                # jump past the covering block; may overshoot end
                begin = base + size
                covered = True
                break
        if not covered:
            if missing and missing[-1].end == begin:
                missing[-1] = Interval(missing[-1].begin, begin + b1)
            else:
                missing.append(Interval(begin, begin + b1))
            begin += b1
    return missing


def greedy_allocate(intervals: Iterable[Interval], cfg: BlockSizeConfig) -> list[Allocation]:
    """Tile each missing interval with the largest feasible blocks.

    At every cursor position the largest configured size that is both
    self-aligned at the cursor and fits inside the interval is chosen; the
    cursor then advances and the search restarts from the largest size.
    Allocations reproduce each interval exactly: no gaps, no overlap, no
    spill past the interval end.
    """
    allocations: list[Allocation] = []
    descending = cfg.sizes[::-1]
    for begin, end in intervals:
        cursor = begin
        while cursor < end:
            for size in descending:
                if cursor % size == 0 and cursor + size <= end:
                    allocations.append(Allocation(cursor, size))
                    cursor += size
                    break
            else:
                raise ValueError(
                    f"interval [{begin}, {end}) is not aligned to the smallest block size"
                )
    return allocations
