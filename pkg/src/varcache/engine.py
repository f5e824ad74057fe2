"""Variable-sized block cache engine.

State is organized in three layers:

* per-size indices mapping (device, aligned source offset) -> block;
* groups: fixed-size physical regions (one group = the largest configured
  block size) holding same-sized blocks, slab style, with at most one open
  group per size accepting new allocations;
* two LRU lists: a global one over blocks and one over groups.

Replacement is two-level: when the cache is full and the global-LRU tail
block matches the needed size, exactly that block is evicted and its slot
reused; otherwise the group at the group-LRU tail is evicted whole and its
extent recycled.

An engine instance is single-owner: all mutations must come from one
logical execution context at a time. Run one instance per device for
cross-device parallelism.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .allocator import BlockSizeConfig, greedy_allocate, missing_intervals, scan_range
from .lrulist import LruList
from .metrics import EngineStats

WRITE_BACK = "writeback"
WRITE_THROUGH = "writethrough"
POLICIES = (WRITE_BACK, WRITE_THROUGH)


class CacheBlock:
    """Per-block metadata: source mapping, cache slot, and LRU links.

    Deliberately minimal; the reported memory model charges a flat 40 bytes
    for exactly this kind of entry.
    """

    __slots__ = ("dev", "offset", "size", "group", "slot_index", "dirty",
                 "_lru_prev", "_lru_next")

    def __init__(self, dev, offset, size, group, slot_index, dirty):
        self.dev = dev
        self.offset = offset
        self.size = size
        self.group = group
        self.slot_index = slot_index
        self.dirty = dirty
        self._lru_prev = None
        self._lru_next = None

    @property
    def slot(self) -> int:
        """Physical byte address of this block inside the cache space."""
        return self.group.base + self.slot_index * self.size

    def __repr__(self):
        flag = "D" if self.dirty else "c"
        return f"<blk {self.dev}@{self.offset}+{self.size} {flag} g{self.group.gid}>"


class Group:
    """Fixed-size physical region holding same-sized blocks."""

    __slots__ = ("gid", "base", "block_size", "slots", "members", "free_slots",
                 "open", "_lru_prev", "_lru_next")

    def __init__(self, gid, base, block_size, slots):
        self.gid = gid
        self.base = base
        self.block_size = block_size
        self.slots = slots
        self.members: dict[int, CacheBlock] = {}
        # stack popped for allocation; seeded so slots hand out in ascending order
        self.free_slots = list(range(slots - 1, -1, -1))
        self.open = True
        self._lru_prev = None
        self._lru_next = None

    @property
    def occupancy(self) -> int:
        return len(self.members)

    def __repr__(self):
        state = "open" if self.open else "full"
        return f"<group {self.gid} @{self.base} bs={self.block_size} {state} {self.occupancy}/{self.slots}>"


class _DevIndexView:
    """Read-only allocator view of one device's per-size indices."""

    __slots__ = ("_index", "_dev")

    def __init__(self, index, dev):
        self._index = index
        self._dev = dev

    def has(self, size, offset):
        return (self._dev, offset) in self._index[size]


@dataclass
class ReadOutcome:
    bytes_from_cache: int
    bytes_from_backend: int
    scan_begin: int
    step: int
    hit_map: list[bool]
    data: bytes | None = None


@dataclass
class WriteOutcome:
    bytes_to_cache: int
    bytes_to_backend: int
    scan_begin: int
    step: int
    hit_map: list[bool]


class BlockCache:
    """Stateful cache over a pluggable backing store.

    ``capacity_bytes`` is rounded down to a whole number of groups and must
    cover at least one. ``strict_range`` clamps the request scan range to
    the last step the request actually touches; ``always_fill`` makes write
    misses fetch entire blocks from the backend even when the write fully
    overwrites them. ``flush_interval`` > 0 flushes all dirty blocks every
    N requests. ``event_log``, when set to a list, receives
    ("hit"|"miss"|"evict", dev, offset, size) and ("evict_group", gid, size)
    tuples in processing order.
    """

    def __init__(self, cfg: BlockSizeConfig, capacity_bytes: int, store,
                 policy: str = WRITE_BACK, *, strict_range: bool = False,
                 always_fill: bool = False, flush_interval: int = 0,
                 track_data: bool | None = None, event_log: list | None = None):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        if flush_interval < 0:
            raise ValueError("flush_interval must be >= 0")
        group_size = cfg.group_size
        if capacity_bytes < group_size:
            raise ValueError(
                f"capacity {capacity_bytes} is smaller than one group ({group_size})")
        self.cfg = cfg
        self.store = store
        self.policy = policy
        self.strict_range = strict_range
        self.always_fill = always_fill
        self.flush_interval = flush_interval
        self.group_budget = capacity_bytes // group_size
        self.capacity_bytes = self.group_budget * group_size
        if track_data is None:
            track_data = bool(getattr(store, "has_content", False))
        self._buf = bytearray(self.capacity_bytes) if track_data else None
        self._index: dict[int, dict] = {size: {} for size in cfg.sizes}
        self._open: dict[int, Group] = {}
        self._free_bases: list[int] = []
        self._next_base = 0
        self._next_gid = 0
        self._blocks = LruList()
        self._groups = LruList()
        self.stats = EngineStats()
        self.event_log = event_log

    # ------------------------------------------------------------------ data paths

    def read(self, dev, offset: int, length: int) -> ReadOutcome:
        """Serve a read, filling any missing blocks from the backing store.

        Missing ranges are fetched as whole allocated blocks (the miss
        penalty grows with block size); every touched block and its group
        are promoted to their LRU heads. A backing-store failure propagates
        and the failed block is not installed.
        """
        if length <= 0:
            raise ValueError("length must be positive")
        begin, missing, hit_map, touched = self._scan(dev, offset, length)
        req_lo, req_hi = offset, offset + length
        buf = self._buf
        out = bytearray(length) if buf is not None else None
        log = self.event_log
        v = self.stats.volumes
        hit_bytes = 0
        for blk in touched:
            if log is not None:
                log.append(("hit", dev, blk.offset, blk.size))
            lo = max(req_lo, blk.offset)
            hi = min(req_hi, blk.offset + blk.size)
            if lo < hi:
                hit_bytes += hi - lo
                if out is not None:
                    src = blk.slot + (lo - blk.offset)
                    out[lo - req_lo:hi - req_lo] = buf[src:src + (hi - lo)]
        v.read_from_cache += hit_bytes
        installed = []
        for off, size in greedy_allocate(missing, self.cfg):
            if log is not None:
                log.append(("miss", dev, off, size))
            data = self.store.read(dev, off, size)
            v.read_from_core += size
            blk = self.allocate_block(dev, off, size, data=data, dirty=False)
            v.write_to_cache += size
            installed.append(blk)
            if out is not None:
                lo = max(req_lo, off)
                hi = min(req_hi, off + size)
                if lo < hi:
                    out[lo - req_lo:hi - req_lo] = data[lo - off:hi - off]
        self._promote(touched, installed)
        h = self.stats.hits
        h.read_requests += 1
        h.read_total_bytes += length
        h.read_hit_bytes += hit_bytes
        if missing:
            self.stats.adaptive.missed_requests += 1
            self.stats.adaptive.missed_request_bytes += length
        else:
            h.read_full_hits += 1
        self._tick()
        return ReadOutcome(hit_bytes, length - hit_bytes, begin, self.cfg.smallest,
                           hit_map, bytes(out) if out is not None else None)

    def write(self, dev, offset: int, length: int, data: bytes | None = None) -> WriteOutcome:
        """Apply a write through the cache.

        Missing blocks are allocated and read-filled from the backend, but
        only the portions not fully overwritten by this request (unless
        ``always_fill``). Write-back marks touched blocks dirty; write-through
        writes the request to the backend first and keeps every block clean.
        ``data`` is optional; a payload-less write behaves as writing zeros.
        """
        if length <= 0:
            raise ValueError("length must be positive")
        if data is not None and len(data) != length:
            raise ValueError("data length does not match request length")
        begin, missing, hit_map, touched = self._scan(dev, offset, length)
        req_lo, req_hi = offset, offset + length
        buf = self._buf
        v = self.stats.volumes
        write_back = self.policy == WRITE_BACK
        if not write_back:
            self.store.write(dev, offset, data if data is not None else bytes(length))
            v.write_to_core += length
        log = self.event_log
        hit_bytes = 0
        for blk in touched:
            if log is not None:
                log.append(("hit", dev, blk.offset, blk.size))
            lo = max(req_lo, blk.offset)
            hi = min(req_hi, blk.offset + blk.size)
            if lo < hi:
                hit_bytes += hi - lo
                if buf is not None:
                    dst = blk.slot + (lo - blk.offset)
                    if data is not None:
                        buf[dst:dst + (hi - lo)] = data[lo - req_lo:hi - req_lo]
                    else:
                        buf[dst:dst + (hi - lo)] = bytes(hi - lo)
                if write_back:
                    blk.dirty = True
                v.write_to_cache += hi - lo
        installed = []
        for off, size in greedy_allocate(missing, self.cfg):
            if log is not None:
                log.append(("miss", dev, off, size))
            lo = max(req_lo, off)
            hi = min(req_hi, off + size)
            content = bytearray(size) if buf is not None else None
            if self.always_fill or lo >= hi:
                fills = ((off, off + size),)
            else:
                fills = tuple(r for r in ((off, lo), (hi, off + size)) if r[0] < r[1])
            for f_lo, f_hi in fills:
                fetched = self.store.read(dev, f_lo, f_hi - f_lo)
                v.read_from_core += f_hi - f_lo
                if content is not None:
                    content[f_lo - off:f_hi - off] = fetched
            if lo < hi and content is not None and data is not None:
                content[lo - off:hi - off] = data[lo - req_lo:hi - req_lo]
            blk = self.allocate_block(dev, off, size, data=content, dirty=write_back)
            v.write_to_cache += size
            installed.append(blk)
        self._promote(touched, installed)
        h = self.stats.hits
        h.write_requests += 1
        h.write_total_bytes += length
        h.write_hit_bytes += hit_bytes
        if missing:
            self.stats.adaptive.missed_requests += 1
            self.stats.adaptive.missed_request_bytes += length
        else:
            h.write_full_hits += 1
        self._tick()
        return WriteOutcome(length, 0 if write_back else length, begin,
                            self.cfg.smallest, hit_map)

    def flush(self, dev=None) -> int:
        """Write back all dirty blocks (of one device, or all); idempotent."""
        dirty = [b for b in self._blocks if b.dirty and (dev is None or b.dev == dev)]
        written = 0
        for blk in sorted(dirty, key=lambda b: (b.dev, b.offset)):
            self._writeback(blk, swallow_errors=False)
            blk.dirty = False
            written += blk.size
        self.stats.flush_count += 1
        self.stats.flush_bytes += written
        return written

    def invalidate(self, dev) -> int:
        """Drop a device's blocks after flushing its dirty ones."""
        self.flush(dev)
        victims = [b for b in self._blocks if b.dev == dev]
        affected: dict[int, Group] = {}
        st = self.stats
        for blk in victims:
            del self._index[blk.size][(blk.dev, blk.offset)]
            self._blocks.remove(blk)
            group = blk.group
            del group.members[blk.slot_index]
            group.free_slots.append(blk.slot_index)
            st.resident_blocks[blk.size] -= 1
            affected[group.gid] = group
        for gid in sorted(affected):
            group = affected[gid]
            if not group.members:
                self._groups.remove(group)
                if group.open:
                    group.open = False
                    del self._open[group.block_size]
                self._free_bases.append(group.base)
            else:
                group.free_slots.sort(reverse=True)
        st.invalidated_blocks += len(victims)
        return len(victims)

    # ------------------------------------------------------------------ allocation

    def allocate_block(self, dev, offset: int, size: int, *,
                       data: bytes | bytearray | None = None,
                       dirty: bool = False) -> CacheBlock:
        """Install one block, evicting per the two-level policy if full.

        Low-level: callers are responsible for only installing ranges that
        are not already covered (read/write guarantee this by allocating
        missing intervals only).
        """
        table = self._index.get(size)
        if table is None:
            raise ValueError(f"unsupported block size {size}")
        if offset % size:
            raise ValueError(f"offset {offset} is not aligned to block size {size}")
        key = (dev, offset)
        if key in table:
            raise ValueError(f"block {key} already cached at size {size}")
        if dirty and self.policy != WRITE_BACK:
            raise ValueError("dirty blocks require the write-back policy")
        group, slot_index = self._take_slot(size)
        blk = CacheBlock(dev, offset, size, group, slot_index, dirty)
        group.members[slot_index] = blk
        table[key] = blk
        self._blocks.push_front(blk)
        st = self.stats
        st.resident_blocks[size] = st.resident_blocks.get(size, 0) + 1
        st.adaptive.allocated_blocks += 1
        st.adaptive.allocated_bytes += size
        st.adaptive.histogram[size] = st.adaptive.histogram.get(size, 0) + 1
        if self._buf is not None and data is not None:
            self._buf[blk.slot:blk.slot + size] = data
        return blk

    def replace(self, needed_size: int):
        """Two-level eviction: the tail block on size match, else the LRU group.

        Returns ("block", group, slot_index) when a single block was evicted
        (the slot is back in the group's free list) or ("group", group) when
        a whole group was evicted and its extent recycled.
        """
        tail = self._blocks.tail()
        if tail is None:
            raise RuntimeError("replace() on an empty cache")
        if tail.size == needed_size:
            group, slot_index = tail.group, tail.slot_index
            self._evict_block(tail)
            return ("block", group, slot_index)
        victim = self._groups.tail()
        self._evict_group(victim)
        return ("group", victim)

    def _take_slot(self, size: int):
        while True:
            group = self._open.get(size)
            if group is not None:
                slot_index = group.free_slots.pop()
                if not group.free_slots:
                    group.open = False
                    del self._open[size]
                return group, slot_index
            base = self._take_extent()
            if base is not None:
                self._new_group(base, size)
                continue
            freed = self.replace(size)
            if freed[0] == "block":
                _, group, slot_index = freed
                group.free_slots.remove(slot_index)
                return group, slot_index
            # group eviction recycled an extent; retry

    def _take_extent(self):
        if self._free_bases:
            return self._free_bases.pop()
        if self._next_base < self.capacity_bytes:
            base = self._next_base
            self._next_base += self.cfg.group_size
            return base
        return None

    def _new_group(self, base: int, size: int) -> Group:
        group = Group(self._next_gid, base, size, self.cfg.group_size // size)
        self._next_gid += 1
        self._open[size] = group
        self._groups.push_front(group)
        return group

    # ------------------------------------------------------------------ eviction

    def _evict_block(self, blk: CacheBlock) -> None:
        if blk.dirty:
            self._writeback(blk, swallow_errors=True)
        del self._index[blk.size][(blk.dev, blk.offset)]
        self._blocks.remove(blk)
        group = blk.group
        del group.members[blk.slot_index]
        group.free_slots.append(blk.slot_index)
        self.stats.resident_blocks[blk.size] -= 1
        self.stats.block_evictions += 1
        if self.event_log is not None:
            self.event_log.append(("evict", blk.dev, blk.offset, blk.size))

    def _evict_group(self, group: Group) -> None:
        if self.event_log is not None:
            self.event_log.append(("evict_group", group.gid, group.block_size))
        st = self.stats
        for slot_index in sorted(group.members):
            blk = group.members[slot_index]
            if blk.dirty:
                self._writeback(blk, swallow_errors=True)
            del self._index[blk.size][(blk.dev, blk.offset)]
            self._blocks.remove(blk)
            st.resident_blocks[blk.size] -= 1
            st.group_evicted_blocks += 1
            if self.event_log is not None:
                self.event_log.append(("evict", blk.dev, blk.offset, blk.size))
        group.members.clear()
        self._groups.remove(group)
        if group.open:
            group.open = False
            del self._open[group.block_size]
        self._free_bases.append(group.base)
        st.group_evictions += 1

    def _writeback(self, blk: CacheBlock, swallow_errors: bool) -> None:
        buf = self._buf
        if buf is not None:
            data = bytes(buf[blk.slot:blk.slot + blk.size])
        else:
            data = bytes(blk.size)
        try:
            self.store.write(blk.dev, blk.offset, data)
        except OSError:
            if not swallow_errors:
                raise
            self.stats.writeback_errors += 1
        else:
            self.stats.volumes.write_to_core += blk.size

    # ------------------------------------------------------------------ internals

    def _scan(self, dev, offset, length):
        """Snapshot pass: missing intervals, per-step hit map, touched blocks."""
        b1 = self.cfg.smallest
        begin, end = scan_range(offset, length, b1, self.strict_range)
        view = _DevIndexView(self._index, dev)
        missing = missing_intervals(offset, length, self.cfg, view,
                                    strict_range=self.strict_range)
        hit_map = [True] * ((end - begin) // b1)
        for m_begin, m_end in missing:
            for i in range((m_begin - begin) // b1, (m_end - begin) // b1):
                hit_map[i] = False
        touched = []
        pos = begin
        for m_begin, m_end in [*missing, (end, end)]:
            while pos < m_begin:
                blk = self._covering_block(dev, pos)
                touched.append(blk)
                pos = min(blk.offset + blk.size, m_begin)
            pos = m_end
        return begin, missing, hit_map, touched

    def _covering_block(self, dev, pos) -> CacheBlock:
        for size in self.cfg.sizes:
            blk = self._index[size].get((dev, pos - pos % size))
            if blk is not None:
                return blk
        raise AssertionError(f"no covering block for resident step {dev}@{pos}")

    def _promote(self, touched, installed) -> None:
        # ascending source order so the highest-offset touched block ends at the head
        for blk in sorted(touched + installed, key=lambda b: (str(b.dev), b.offset)):
            if blk._lru_next is None:  # evicted mid-request
                continue
            self._blocks.move_to_front(blk)
            self._groups.move_to_front(blk.group)

    def _tick(self) -> None:
        st = self.stats
        st.requests += 1
        st.resident_samples += sum(st.resident_blocks.values())
        if self.flush_interval and st.requests % self.flush_interval == 0:
            self.flush()

    # ------------------------------------------------------------------ inspection

    @property
    def group_count(self) -> int:
        return len(self._groups)

    @property
    def open_group_count(self) -> int:
        return len(self._open)

    @property
    def resident_block_count(self) -> int:
        return len(self._blocks)

    def counters(self) -> dict:
        """Plain-dict snapshot of all counters (``stats`` is the live object)."""
        return dataclasses.asdict(self.stats)

    def contents_snapshot(self):
        """Deterministic dump: sorted (dev, offset, size, dirty, group_id)."""
        return sorted((b.dev, b.offset, b.size, b.dirty, b.group.gid)
                      for b in self._blocks)

    def lru_blocks(self):
        """(dev, offset, size) from most to least recently used (test hook)."""
        return [(b.dev, b.offset, b.size) for b in self._blocks]

    def lru_groups(self):
        """Group ids from most to least recently used (test hook)."""
        return [g.gid for g in self._groups]

    def check_invariants(self) -> None:
        """Assert internal consistency; raises AssertionError on violation."""
        live_groups = list(self._groups)
        group_ids = {g.gid for g in live_groups}
        assert len(group_ids) == len(live_groups), "duplicate group in LRU"
        assert len(live_groups) * self.cfg.group_size <= self.capacity_bytes
        assert len(self._open) <= len(self.cfg.sizes), "more open groups than sizes"
        extents = sorted(g.base for g in live_groups) + sorted(self._free_bases)
        assert len(set(extents)) == len(extents), "extent reused twice"
        for base in extents:
            assert 0 <= base < self.capacity_bytes and base % self.cfg.group_size == 0
        for size, group in self._open.items():
            assert group.block_size == size and group.open and group.free_slots
            assert group.gid in group_ids
        indexed = 0
        for size, table in self._index.items():
            for (dev, offset), blk in table.items():
                indexed += 1
                assert blk.size == size and blk.offset == offset and blk.dev == dev
                assert offset % size == 0, "block not self-aligned"
                assert blk.group.gid in group_ids, "block in dead group"
                assert blk.group.members.get(blk.slot_index) is blk
                assert self.policy == WRITE_BACK or not blk.dirty
        assert indexed == len(self._blocks), "LRU/index mismatch"
        for group in live_groups:
            assert group.occupancy == len(group.members)
            assert group.occupancy + len(group.free_slots) == group.slots
            assert not (group.open and not group.free_slots)
            for slot_index, blk in group.members.items():
                assert blk.size == group.block_size
                assert 0 <= slot_index < group.slots
        # no two blocks overlap at byte level
        spans = sorted((b.dev, b.offset, b.offset + b.size) for b in self._blocks)
        for (d1, _, end1), (d2, start2, _) in zip(spans, spans[1:]):
            assert d1 != d2 or end1 <= start2, "overlapping blocks"
        counted: dict[int, int] = {}
        for b in self._blocks:
            counted[b.size] = counted.get(b.size, 0) + 1
        tracked = {s: c for s, c in self.stats.resident_blocks.items() if c}
        assert counted == tracked, "resident counters drifted"
