"""Seeded synthetic block-workload generation.

The stream is fully determined by the spec (including its seed): same spec,
same events. Request sizes come from a fixed value, a uniform choice set,
or an empirical CDF table; offsets follow a uniform, zipfian, or
sequential-run locality model.
"""
from __future__ import annotations

import bisect
import csv
import random
from dataclasses import dataclass

from .trace import READ, WRITE, IoEvent

SIZE_DISTS = ("fixed", "uniform", "cdf")
LOCALITIES = ("uniform", "zipf", "seq")

# knuth multiplicative hash; spreads zipf ranks over the address space
_SCRAMBLE = 2654435761


@dataclass
class WorkloadSpec:
    seed: int = 0
    devices: int = 1
    address_space: int = 1 << 30          # bytes per device
    read_fraction: float = 0.7
    size_dist: str = "fixed"              # fixed | uniform | cdf
    sizes: tuple[int, ...] = (4096,)      # fixed: first entry; uniform: choices
    size_cdf: tuple[tuple[int, float], ...] = ()  # (size, cumulative prob), ascending
    locality: str = "uniform"             # uniform | zipf | seq
    zipf_theta: float = 1.2
    zipf_items: int = 65536               # distinct hot addresses under zipf
    seq_fraction: float = 0.8             # seq: chance an idle device starts a run
    seq_run_length: int = 8               # mean requests per sequential run
    offset_align: int = 4096
    timestamp_step_ns: int = 1000

    def validate(self) -> None:
        if self.devices < 1:
            raise ValueError("devices must be >= 1")
        if self.offset_align <= 0 or self.address_space < self.offset_align:
            raise ValueError("address_space must cover at least one aligned unit")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise ValueError("read_fraction must be within [0, 1]")
        if self.size_dist not in SIZE_DISTS:
            raise ValueError(f"size_dist must be one of {SIZE_DISTS}")
        if self.locality not in LOCALITIES:
            raise ValueError(f"locality must be one of {LOCALITIES}")
        if self.size_dist in ("fixed", "uniform"):
            if not self.sizes or any(s <= 0 for s in self.sizes):
                raise ValueError("sizes must be positive")
            if max(self.sizes) > self.address_space:
                raise ValueError("request size exceeds address space")
        if self.size_dist == "cdf":
            _check_cdf(self.size_cdf)
            if self.size_cdf[-1][0] > self.address_space:
                raise ValueError("request size exceeds address space")
        if self.locality == "zipf":
            if self.zipf_theta <= 0:
                raise ValueError("zipf_theta must be positive")
            if self.zipf_items < 1:
                raise ValueError("zipf_items must be >= 1")
        if self.locality == "seq":
            if not 0.0 <= self.seq_fraction <= 1.0:
                raise ValueError("seq_fraction must be within [0, 1]")
            if self.seq_run_length < 1:
                raise ValueError("seq_run_length must be >= 1")


def _check_cdf(table) -> None:
    if not table:
        raise ValueError("empty size CDF")
    prev_size, prev_p = 0, 0.0
    for size, p in table:
        if size <= prev_size:
            raise ValueError("CDF sizes must be strictly increasing")
        if p <= prev_p:
            raise ValueError("CDF probabilities must be strictly increasing")
        prev_size, prev_p = size, p
    if abs(table[-1][1] - 1.0) > 1e-9:
        raise ValueError("CDF must end at probability 1.0")


def load_cdf(path: str) -> tuple[tuple[int, float], ...]:
    """Read a size CDF from a two-column CSV (size_bytes, cumulative_prob)."""
    table = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            if not row[0].strip().isdigit():  # header
                continue
            table.append((int(row[0]), float(row[1])))
    _check_cdf(table)
    return tuple(table)


class _SizeSampler:
    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        self._rng = rng
        self._mode = spec.size_dist
        self._sizes = spec.sizes
        if self._mode == "cdf":
            self._cdf_sizes = [s for s, _ in spec.size_cdf]
            self._cdf_probs = [p for _, p in spec.size_cdf]

    def sample(self) -> int:
        if self._mode == "fixed":
            return self._sizes[0]
        if self._mode == "uniform":
            return self._sizes[self._rng.randrange(len(self._sizes))]
        i = bisect.bisect_left(self._cdf_probs, self._rng.random())
        return self._cdf_sizes[min(i, len(self._cdf_sizes) - 1)]


class _OffsetSampler:
    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        self._rng = rng
        self._spec = spec
        self._align = spec.offset_align
        self._space = spec.address_space
        if spec.locality == "zipf":
            units = self._space // self._align
            items = min(spec.zipf_items, units)
            weights = [1.0 / (rank ** spec.zipf_theta) for rank in range(1, items + 1)]
            total = sum(weights)
            cum, acc = [], 0.0
            for w in weights:
                acc += w
                cum.append(acc / total)
            self._zipf_cum = cum
            self._zipf_units = units
        if spec.locality == "seq":
            # per-device run state: (cursor, remaining requests in the run)
            self._runs: dict[int, list[int]] = {}

    def _uniform(self, size: int) -> int:
        top = self._space - size
        return self._rng.randrange(top // self._align + 1) * self._align

    def sample(self, dev: int, size: int) -> int:
        spec = self._spec
        if spec.locality == "uniform":
            return self._uniform(size)
        if spec.locality == "zipf":
            rank = bisect.bisect_left(self._zipf_cum, self._rng.random())
            unit = (rank * _SCRAMBLE) % self._zipf_units
            offset = unit * self._align
            if offset + size > self._space:
                offset = (self._space - size) // self._align * self._align
            return offset
        run = self._runs.get(dev)
        if run and run[1] > 0 and run[0] + size <= self._space:
            offset = run[0]
            run[0] += size
            run[1] -= 1
            return offset
        if self._rng.random() < spec.seq_fraction:
            length = 1 + int(self._rng.expovariate(1.0 / spec.seq_run_length))
            offset = self._uniform(size)
            self._runs[dev] = [offset + size, length - 1]
            return offset
        self._runs[dev] = [0, 0]
        return self._uniform(size)


def generate(spec: WorkloadSpec, n: int):
    """Yield n deterministic IoEvents for the given spec.

    Draw order per event is fixed (device, op, size, offset) so the stream
    can be regenerated identically for multi-pass consumers.
    """
    spec.validate()
    rng = random.Random(spec.seed)
    size_sampler = _SizeSampler(spec, rng)
    offset_sampler = _OffsetSampler(spec, rng)
    for i in range(n):
        dev = rng.randrange(spec.devices)
        op = READ if rng.random() < spec.read_fraction else WRITE
        size = size_sampler.sample()
        offset = offset_sampler.sample(dev, size)
        yield IoEvent(device=f"vd{dev}", op=op, offset=offset, length=size,
                      timestamp=i * spec.timestamp_step_ns)


def write_trace(events, path: str) -> int:
    """Write events as an alibaba-format CSV (round-trips through the parser).

    Devices must be named ``vd<n>``; returns the number of rows written.
    """
    count = 0
    with open(path, "w", newline="") as fh:
        for event in events:
            if not event.device.startswith("vd"):
                raise ValueError(f"device {event.device!r} is not vd<n>")
            fh.write(f"{event.device[2:]},{event.op},{event.offset},"
                     f"{event.length},{event.timestamp // 1000}\n")
            count += 1
    return count
