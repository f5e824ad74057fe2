import random

import pytest

from varcache.allocator import BlockSizeConfig
from varcache.engine import WRITE_BACK, WRITE_THROUGH, BlockCache
from varcache.store import NullStore

from oracle import FixedLruCache

K = 1024
STD = BlockSizeConfig((32 * K, 64 * K, 128 * K, 256 * K))


def make_engine(sizes=STD, capacity=4 * 256 * K, store=None, policy=WRITE_BACK, **kw):
    return BlockCache(sizes, capacity, store or NullStore(), policy, **kw)


class MemoryStore:
    """Test-only content store: one auto-extending bytearray per device."""

    has_content = True

    def __init__(self):
        self.data = {}

    def _dev(self, dev):
        return self.data.setdefault(dev, bytearray())

    def read(self, dev, offset, length):
        buf = self._dev(dev)
        chunk = bytes(buf[offset:offset + length])
        return chunk + bytes(length - len(chunk))

    def write(self, dev, offset, data):
        buf = self._dev(dev)
        if len(buf) < offset + len(data):
            buf.extend(bytes(offset + len(data) - len(buf)))
        buf[offset:offset + len(data)] = data


class FailingStore(MemoryStore):
    def __init__(self, fail_reads=False, fail_writes=False):
        super().__init__()
        self.fail_reads = fail_reads
        self.fail_writes = fail_writes

    def read(self, dev, offset, length):
        if self.fail_reads:
            raise OSError("injected read failure")
        return super().read(dev, offset, length)

    def write(self, dev, offset, data):
        if self.fail_writes:
            raise OSError("injected write failure")
        super().write(dev, offset, data)


# ---------------------------------------------------------------- construction

def test_capacity_rounds_down_to_whole_groups():
    eng = make_engine(capacity=3 * 256 * K + 100)
    assert eng.capacity_bytes == 3 * 256 * K
    assert eng.group_budget == 3


def test_capacity_below_one_group_rejected():
    with pytest.raises(ValueError):
        make_engine(capacity=128 * K)


def test_unknown_policy_rejected():
    with pytest.raises(ValueError):
        make_engine(policy="writearound")


# ---------------------------------------------------------------- read path

def test_read_worked_example_fetches_only_missing_interval():
    eng = make_engine()
    eng.allocate_block("d", 128 * K, 128 * K)  # resident block at 128KiB
    out = eng.read("d", 48 * K, 184 * K)
    v = eng.stats.volumes
    assert v.read_from_core == 96 * K  # exactly [32K, 128K)
    assert out.bytes_from_cache == 104 * K  # request part [128K, 232K)
    assert out.bytes_from_backend == 80 * K
    assert out.bytes_from_cache + out.bytes_from_backend == 184 * K
    snap = eng.contents_snapshot()
    installed = [(o, s) for (_, o, s, _, _) in snap]
    assert (32 * K, 32 * K) in installed and (64 * K, 64 * K) in installed
    eng.check_invariants()


def test_read_fully_contained_in_resident_block_is_pure_hit():
    eng = make_engine()
    eng.read("d", 0, 256 * K)  # warm up one 256K block (scan adds an extra step)
    before = eng.stats.volumes.read_from_core
    out = eng.read("d", 10 * K, 100 * K)
    assert out.bytes_from_backend == 0
    assert eng.stats.volumes.read_from_core == before
    assert eng.stats.hits.read_full_hits == 1


def test_read_rejects_nonpositive_length():
    eng = make_engine()
    with pytest.raises(ValueError):
        eng.read("d", 0, 0)


def test_read_hit_map_matches_residency():
    eng = make_engine()
    eng.allocate_block("d", 64 * K, 64 * K)
    out = eng.read("d", 32 * K, 96 * K)  # scan [32K, 160K)
    assert out.scan_begin == 32 * K
    assert out.hit_map == [False, True, True, False]
    eng.check_invariants()


def test_read_serves_correct_bytes_from_content_store():
    store = MemoryStore()
    payload = bytes(range(256)) * (512 * K // 256)
    store.write("d", 0, payload)
    eng = make_engine(store=store)
    out = eng.read("d", 1000, 50_000)
    assert out.data == payload[1000:51_000]
    out2 = eng.read("d", 1000, 50_000)  # now a pure hit, same bytes
    assert out2.data == payload[1000:51_000]
    assert out2.bytes_from_backend == 0


# ---------------------------------------------------------------- write path

def test_write_through_writes_request_to_backend():
    eng = make_engine(policy=WRITE_THROUGH)
    out = eng.write("d", 10 * K, 100 * K)
    assert out.bytes_to_backend == 100 * K
    assert eng.stats.volumes.write_to_core >= 100 * K
    assert all(not dirty for (_, _, _, dirty, _) in eng.contents_snapshot())
    eng.check_invariants()


def test_write_back_hit_on_clean_block_dirties_without_backend_traffic():
    eng = make_engine()
    eng.read("d", 0, 256 * K)  # install clean
    assert eng.stats.volumes.write_to_core == 0
    eng.write("d", 0, 64 * K)
    assert eng.stats.volumes.write_to_core == 0
    dirty = [(o, s) for (_, o, s, d, _) in eng.contents_snapshot() if d]
    assert dirty == [(0, 256 * K)]


def test_write_back_full_block_aligned_miss_needs_no_read_fill():
    eng = make_engine()
    eng.write("d", 256 * K, 256 * K)
    assert eng.stats.volumes.read_from_core == 32 * K  # only the extra scan step
    eng2 = make_engine(strict_range=True)
    eng2.write("d", 256 * K, 256 * K)
    assert eng2.stats.volumes.read_from_core == 0


def test_always_fill_fetches_whole_blocks_on_write_miss():
    eng = make_engine(strict_range=True, always_fill=True)
    eng.write("d", 0, 256 * K)
    assert eng.stats.volumes.read_from_core == 256 * K


def test_partial_write_miss_fills_only_uncovered_ranges():
    eng = make_engine(strict_range=True)
    eng.write("d", 40 * K, 16 * K)  # one 32K block at 32K; covered [40K, 56K)
    assert eng.stats.volumes.read_from_core == 16 * K  # 8K prefix + 8K suffix


def test_write_content_lands_in_cache_and_backend_after_flush():
    store = MemoryStore()
    eng = make_engine(store=store)
    data = bytes([7]) * 100_000
    eng.write("d", 12_345, 100_000, data)
    out = eng.read("d", 12_345, 100_000)
    assert out.data == data
    eng.flush()
    assert store.read("d", 12_345, 100_000) == data


def test_write_through_content_reaches_backend_immediately():
    store = MemoryStore()
    eng = make_engine(store=store, policy=WRITE_THROUGH)
    data = b"\xabcd" * 25_000
    eng.write("d", 4 * K, len(data), data)
    assert store.read("d", 4 * K, len(data)) == data


# ---------------------------------------------------------------- group/space management

def test_groups_fill_and_transition_open_to_full():
    eng = make_engine(sizes=BlockSizeConfig((32 * K, 64 * K)), capacity=4 * 64 * K)
    eng.allocate_block("d", 0, 32 * K)
    assert eng.open_group_count == 1
    eng.allocate_block("d", 32 * K, 32 * K)
    assert eng.open_group_count == 0  # 64K group holds two 32K slots
    assert eng.group_count == 1


def test_at_most_one_open_group_per_size():
    eng = make_engine(capacity=16 * 256 * K)
    rng = random.Random(1)
    for _ in range(200):
        size = rng.choice(STD.sizes)
        offset = rng.randrange(0, 64) * size
        eng.read("d", offset, size)
        assert eng.open_group_count <= len(STD.sizes)
        assert eng.group_count * STD.group_size <= eng.capacity_bytes
    eng.check_invariants()


def test_group_size_block_uses_whole_group():
    eng = make_engine()
    eng.allocate_block("d", 0, 256 * K)
    assert eng.group_count == 1
    assert eng.open_group_count == 0


# ---------------------------------------------------------------- two-level replacement

def test_replace_same_size_tail_evicts_single_block():
    eng = make_engine(sizes=BlockSizeConfig((32 * K, 64 * K)), capacity=2 * 64 * K,
                      strict_range=True)
    for i in range(4):  # fill both groups with 32K blocks
        eng.read("d", i * 32 * K, 32 * K)
    assert eng.group_count == 2
    snap_before = eng.contents_snapshot()
    old_gid = {o: gid for (_, o, _, _, gid) in snap_before}
    eng.read("d", 1024 * K, 32 * K)  # same-size allocation: evict tail block only
    snap_after = eng.contents_snapshot()
    assert len(snap_after) == len(snap_before)
    assert eng.stats.block_evictions == 1
    assert eng.stats.group_evictions == 0
    gone = set(o for (_, o, _, _, _) in snap_before) - set(
        o for (_, o, _, _, _) in snap_after)
    assert gone == {0}  # the least recently used block
    # the newcomer reuses the freed slot in the same group
    new_gid = {o: gid for (_, o, _, _, gid) in snap_after}
    assert new_gid[1024 * K] == old_gid[0]
    eng.check_invariants()


def test_replace_size_mismatch_evicts_whole_group():
    eng = make_engine(sizes=BlockSizeConfig((32 * K, 64 * K)), capacity=2 * 64 * K,
                      strict_range=True)
    for i in range(4):
        eng.read("d", i * 32 * K, 32 * K)  # two full groups of 32K blocks
    eng.read("d", 1024 * K, 64 * K)  # needs a 64K block: tail is 32K -> group eviction
    assert eng.stats.group_evictions == 1
    assert eng.stats.group_evicted_blocks == 2  # the whole group, never part of it
    assert eng.stats.block_evictions == 0
    eng.check_invariants()


def test_replace_reports_freed_unit():
    eng = make_engine(sizes=BlockSizeConfig((32 * K,)), capacity=2 * 32 * K,
                      strict_range=True)
    eng.read("d", 0, 32 * K)
    eng.read("d", 32 * K, 32 * K)
    kind = eng.replace(32 * K)
    assert kind[0] == "block"
    assert eng.resident_block_count == 1
    eng.check_invariants()


def test_replace_on_empty_cache_fails():
    eng = make_engine()
    with pytest.raises(RuntimeError):
        eng.replace(32 * K)


def test_group_eviction_writes_back_dirty_members():
    store = MemoryStore()
    eng = make_engine(sizes=BlockSizeConfig((32 * K, 64 * K)), capacity=64 * K,
                      store=store, strict_range=True)
    data = b"Z" * 64 * K
    eng.write("d", 0, 64 * K, data)  # two dirty 32K blocks fill the only group
    eng.read("d", 1024 * K, 64 * K)  # forces group eviction
    assert store.read("d", 0, 64 * K) == data
    assert eng.stats.volumes.write_to_core == 64 * K


def test_evicted_extent_is_recycled():
    eng = make_engine(sizes=BlockSizeConfig((32 * K, 64 * K)), capacity=64 * K,
                      strict_range=True)
    eng.read("d", 0, 64 * K)
    first_gid = eng.contents_snapshot()[0][4]
    eng.read("d", 1024 * K, 32 * K)  # group eviction, then new 32K group
    assert eng.group_count == 1
    snap = eng.contents_snapshot()
    assert all(gid != first_gid for (_, _, _, _, gid) in snap)
    eng.check_invariants()


def test_mid_request_self_eviction_stays_consistent():
    # request larger than the whole cache: installs evict earlier installs
    store = MemoryStore()
    payload = bytes(random.Random(3).randbytes(512 * K))
    store.write("d", 0, payload)
    eng = make_engine(sizes=BlockSizeConfig((32 * K, 64 * K)), capacity=128 * K,
                      store=store, strict_range=True)
    out = eng.read("d", 0, 512 * K)
    assert out.data == payload
    eng.check_invariants()
    assert eng.resident_block_count * 32 * K <= 128 * K * 2


# ---------------------------------------------------------------- LRU behavior

def test_promotion_order_highest_offset_ends_at_head():
    eng = make_engine(strict_range=True)
    eng.read("d", 0, 512 * K)  # two 256K blocks
    assert eng.lru_blocks()[0] == ("d", 256 * K, 256 * K)
    assert eng.lru_blocks()[-1] == ("d", 0, 256 * K)


def test_hit_promotes_block_and_group():
    eng = make_engine(sizes=BlockSizeConfig((32 * K,)), capacity=4 * 32 * K,
                      strict_range=True)
    for i in range(4):
        eng.read("d", i * 32 * K, 32 * K)
    eng.read("d", 0, 32 * K)  # re-touch the oldest
    assert eng.lru_blocks()[0] == ("d", 0, 32 * K)
    head_gid = eng.lru_groups()[0]
    snap = {o: gid for (_, o, _, _, gid) in eng.contents_snapshot()}
    assert snap[0] == head_gid


def test_m1_event_log_matches_oracle_small_run():
    b = 64 * K
    eng = make_engine(sizes=BlockSizeConfig((b,)), capacity=4 * b, event_log=[])
    oracle = FixedLruCache(b, 4)
    rng = random.Random(99)
    for _ in range(2000):
        op = "R" if rng.random() < 0.6 else "W"
        offset = rng.randrange(0, 40 * b)
        length = rng.randrange(1, 3 * b)
        if op == "R":
            eng.read("d", offset, length)
        else:
            eng.write("d", offset, length)
        oracle.access(op, "d", offset, length)
    assert eng.event_log == oracle.events
    v, h = eng.stats.volumes, eng.stats.hits
    assert v.read_from_core == oracle.read_from_core
    assert v.write_to_core == oracle.write_to_core
    assert v.read_from_cache == oracle.read_from_cache
    assert v.write_to_cache == oracle.write_to_cache
    assert h.read_full_hits == oracle.read_full_hits
    assert h.write_full_hits == oracle.write_full_hits
    assert h.read_hit_bytes == oracle.read_hit_bytes
    assert h.write_hit_bytes == oracle.write_hit_bytes
    assert eng.stats.block_evictions == oracle.block_evictions
    assert eng.stats.group_evictions == 0


def test_m1_write_through_matches_oracle_counters():
    b = 32 * K
    eng = make_engine(sizes=BlockSizeConfig((b,)), capacity=8 * b,
                      policy=WRITE_THROUGH, event_log=[])
    oracle = FixedLruCache(b, 8, policy="writethrough")
    rng = random.Random(17)
    for _ in range(3000):
        op = "R" if rng.random() < 0.5 else "W"
        offset = rng.randrange(0, 64 * b)
        length = rng.randrange(1, 3 * b)
        if op == "R":
            eng.read("d", offset, length)
        else:
            eng.write("d", offset, length)
        oracle.access(op, "d", offset, length)
    assert eng.event_log == oracle.events
    v = eng.stats.volumes
    assert v.write_to_core == oracle.write_to_core
    assert v.read_from_core == oracle.read_from_core
    assert v.write_to_cache == oracle.write_to_cache
    assert not any(d for (_, _, _, d, _) in eng.contents_snapshot())


def test_allocate_block_rejects_bad_arguments():
    eng = make_engine()
    with pytest.raises(ValueError):
        eng.allocate_block("d", 0, 48 * K)  # not a configured size
    with pytest.raises(ValueError):
        eng.allocate_block("d", 10, 32 * K)  # not self-aligned
    eng.allocate_block("d", 0, 32 * K)
    with pytest.raises(ValueError):
        eng.allocate_block("d", 0, 32 * K)  # duplicate


def test_same_offsets_on_different_devices_coexist():
    eng = make_engine()
    eng.read("a", 0, 64 * K)
    eng.read("b", 0, 64 * K)
    devs = sorted({dev for (dev, _, _, _, _) in eng.contents_snapshot()})
    assert devs == ["a", "b"]
    assert eng.stats.hits.read_full_hits == 0  # cold for each device
    eng.read("a", 0, 32 * K)
    assert eng.stats.hits.read_full_hits == 1
    eng.check_invariants()


def test_strict_range_is_noop_for_unaligned_request_ends():
    rng = random.Random(21)
    verbatim = make_engine(capacity=8 * 256 * K)
    strict = make_engine(capacity=8 * 256 * K, strict_range=True)
    for _ in range(400):
        offset = rng.randrange(0, 4 * 1024 * K)
        length = rng.randrange(1, 300 * K)
        if (offset + length) % (32 * K) == 0:
            length += 1  # keep the end unaligned; the modes agree then
        a = verbatim.read("d", offset, length)
        b = strict.read("d", offset, length)
        assert a.hit_map == b.hit_map
    assert verbatim.counters() == strict.counters()


# ---------------------------------------------------------------- flush / invalidate

def test_flush_writes_dirty_blocks_and_is_idempotent():
    store = MemoryStore()
    eng = make_engine(store=store)
    data = b"Q" * 300 * K
    eng.write("d", 0, 300 * K, data)
    written = eng.flush()
    assert written >= 300 * K
    assert store.read("d", 0, 300 * K) == data
    assert eng.flush() == 0
    assert eng.flush("d") == 0


def test_periodic_flush_by_request_count():
    store = MemoryStore()
    eng = make_engine(store=store, flush_interval=3, strict_range=True)
    for i in range(3):
        eng.write("d", i * 256 * K, 256 * K, b"x" * 256 * K)
    assert not any(d for (_, _, _, d, _) in eng.contents_snapshot())
    assert store.read("d", 0, 1) == b"x"


def test_invalidate_flushes_then_drops_only_that_device():
    store = MemoryStore()
    eng = make_engine(store=store)
    data = b"M" * 256 * K
    eng.write("a", 0, 256 * K, data)
    eng.read("b", 0, 256 * K)
    dropped = eng.invalidate("a")
    assert dropped >= 1
    assert store.read("a", 0, 256 * K) == data  # dirty data flushed first
    devices = {dev for (dev, _, _, _, _) in eng.contents_snapshot()}
    assert devices == {"b"}
    eng.check_invariants()


def test_invalidate_recycles_empty_groups():
    eng = make_engine(sizes=BlockSizeConfig((32 * K,)), capacity=2 * 32 * K,
                      strict_range=True)
    eng.read("a", 0, 32 * K)
    eng.read("a", 32 * K, 32 * K)
    eng.invalidate("a")
    assert eng.group_count == 0
    eng.read("b", 0, 64 * K)  # space is reusable
    assert eng.resident_block_count == 2
    eng.check_invariants()


# ---------------------------------------------------------------- failures

def test_backend_read_failure_propagates_and_installs_nothing():
    store = FailingStore(fail_reads=True)
    eng = make_engine(store=store)
    with pytest.raises(OSError):
        eng.read("d", 0, 64 * K)
    assert eng.resident_block_count == 0
    eng.check_invariants()


def test_write_through_backend_failure_aborts_installation():
    store = FailingStore(fail_writes=True)
    eng = make_engine(store=store, policy=WRITE_THROUGH)
    with pytest.raises(OSError):
        eng.write("d", 0, 64 * K, b"y" * 64 * K)
    assert eng.resident_block_count == 0


def test_eviction_writeback_failure_is_counted_but_eviction_proceeds():
    store = FailingStore()
    eng = make_engine(sizes=BlockSizeConfig((32 * K,)), capacity=32 * K,
                      store=store, strict_range=True)
    eng.write("d", 0, 32 * K, b"d" * 32 * K)  # dirty block
    store.fail_writes = True
    eng.read("d", 1024 * K, 32 * K)  # eviction must write back and fails
    assert eng.stats.writeback_errors == 1
    assert eng.resident_block_count == 1  # old block gone, new one installed
    eng.check_invariants()


def test_flush_failure_propagates():
    store = FailingStore()
    eng = make_engine(store=store)
    eng.write("d", 0, 32 * K, b"a" * 32 * K)
    store.fail_writes = True
    with pytest.raises(OSError):
        eng.flush()


# ---------------------------------------------------------------- invariants under load

def test_randomized_ops_keep_invariants_and_nonoverlap():
    rng = random.Random(0xBEEF)
    eng = make_engine(capacity=8 * 256 * K)
    for i in range(1500):
        op = rng.random()
        offset = rng.randrange(0, 16 * 1024 * K)
        length = rng.randrange(1, 512 * K)
        if op < 0.55:
            out = eng.read("d", offset, length)
            # conservation: every requested byte is served exactly once
            assert out.bytes_from_cache + out.bytes_from_backend == length
        else:
            eng.write("d", offset, length)
        # LRU coherence: the most recently promoted block sits at the global
        # head and its group at the group-LRU head, after every operation
        head = eng._blocks.head()
        assert head is not None
        assert eng._groups.head() is head.group
        if i % 100 == 0:
            eng.check_invariants()
            snap = eng.contents_snapshot()
            for (d1, o1, s1, _, _), (d2, o2, _, _, _) in zip(snap, snap[1:]):
                assert d1 != d2 or o1 + s1 <= o2
    eng.check_invariants()


def test_write_through_never_leaves_dirty_blocks():
    rng = random.Random(5)
    eng = make_engine(policy=WRITE_THROUGH, capacity=4 * 256 * K)
    for _ in range(600):
        offset = rng.randrange(0, 8 * 1024 * K)
        length = rng.randrange(1, 300 * K)
        if rng.random() < 0.5:
            eng.read("d", offset, length)
        else:
            eng.write("d", offset, length)
    assert not any(d for (_, _, _, d, _) in eng.contents_snapshot())
    eng.check_invariants()


def test_counters_is_a_detached_snapshot():
    eng = make_engine()
    eng.read("d", 0, 64 * K)
    snap = eng.counters()
    assert snap["volumes"]["read_from_core"] == eng.stats.volumes.read_from_core
    assert snap["requests"] == 1
    snap["volumes"]["read_from_core"] = -1
    assert eng.stats.volumes.read_from_core > 0  # live stats untouched


def test_contents_snapshot_is_sorted_and_deterministic():
    eng = make_engine()
    eng.read("b", 256 * K, 32 * K)
    eng.read("a", 0, 32 * K)
    snap = eng.contents_snapshot()
    assert snap == sorted(snap)
    assert snap == eng.contents_snapshot()
