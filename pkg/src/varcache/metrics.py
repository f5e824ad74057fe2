"""Evaluation counters, the per-block memory model, and report emission.

All quantities are modeled at the device-I/O level: the four-way volume
split (write-to-core / read-from-core / write-to-cache / read-from-cache),
request- and byte-granular hit ratios, block-size adaptiveness, and a
metadata memory estimate charging a fixed 40 bytes per resident block.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

METADATA_BYTES_PER_BLOCK = 40
SCHEMA_VERSION = 1


@dataclass
class VolumeCounters:
    """Device-level byte volumes; core is the slow backend behind the cache."""

    write_to_core: int = 0
    read_from_core: int = 0
    write_to_cache: int = 0
    read_from_cache: int = 0

    def backend_total(self) -> int:
        return self.write_to_core + self.read_from_core

    def cache_total(self) -> int:
        return self.write_to_cache + self.read_from_cache


@dataclass
class HitStats:
    """Request-granular (full hit) and byte-granular hit accounting.

    A request is a full hit only when every aligned step of its scan range
    was resident before the request ran; hit bytes count the requested
    bytes served from resident blocks.
    """

    read_requests: int = 0
    read_full_hits: int = 0
    write_requests: int = 0
    write_full_hits: int = 0
    read_hit_bytes: int = 0
    read_total_bytes: int = 0
    write_hit_bytes: int = 0
    write_total_bytes: int = 0

    @staticmethod
    def _ratio(num: int, den: int):
        return num / den if den else None

    def read_request_hit_ratio(self):
        return self._ratio(self.read_full_hits, self.read_requests)

    def write_request_hit_ratio(self):
        return self._ratio(self.write_full_hits, self.write_requests)

    def read_byte_hit_ratio(self):
        return self._ratio(self.read_hit_bytes, self.read_total_bytes)

    def write_byte_hit_ratio(self):
        return self._ratio(self.write_hit_bytes, self.write_total_bytes)


@dataclass
class SizeAdaptiveness:
    """How allocated block sizes track the sizes of missed requests."""

    missed_requests: int = 0
    missed_request_bytes: int = 0
    allocated_blocks: int = 0
    allocated_bytes: int = 0
    histogram: dict[int, int] = field(default_factory=dict)

    def avg_missed_request_size(self):
        return self.missed_request_bytes / self.missed_requests if self.missed_requests else None

    def avg_allocated_block_size(self):
        return self.allocated_bytes / self.allocated_blocks if self.allocated_blocks else None


@dataclass
class EngineStats:
    """Live counters owned by one cache engine instance."""

    volumes: VolumeCounters = field(default_factory=VolumeCounters)
    hits: HitStats = field(default_factory=HitStats)
    adaptive: SizeAdaptiveness = field(default_factory=SizeAdaptiveness)
    requests: int = 0
    block_evictions: int = 0
    group_evictions: int = 0
    group_evicted_blocks: int = 0
    writeback_errors: int = 0
    flush_count: int = 0
    flush_bytes: int = 0
    invalidated_blocks: int = 0
    resident_blocks: dict[int, int] = field(default_factory=dict)
    resident_samples: int = 0  # sum over requests of the resident block count

    def resident_total(self) -> int:
        return sum(self.resident_blocks.values())

    def metadata_bytes_current(self) -> int:
        return metadata_memory(self.resident_blocks)

    def metadata_bytes_avg(self) -> float:
        if not self.requests:
            return 0.0
        return self.resident_samples / self.requests * METADATA_BYTES_PER_BLOCK


def metadata_memory(block_counts) -> int:
    """Modeled metadata footprint: 40 bytes per resident cache block.

    ``block_counts`` maps block size to resident count; sizes do not affect
    the per-block charge.
    """
    total = 0
    for size, count in block_counts.items():
        if count < 0:
            raise ValueError(f"negative block count for size {size}")
        total += count
    return total * METADATA_BYTES_PER_BLOCK


def fixed_cache_metadata(capacity_bytes: int, block_size: int) -> int:
    """Closed-form footprint of a hypothetical full fixed-size cache."""
    if block_size <= 0:
        raise ValueError("block_size must be positive")
    return capacity_bytes // block_size * METADATA_BYTES_PER_BLOCK


def _hist_pairs(hist: dict[int, int]) -> list[list[int]]:
    return [[size, hist[size]] for size in sorted(hist)]


def device_report(stats: EngineStats, *, events: int, wss_bytes: int,
                  cache_bytes: int, groups: int, open_groups: int) -> dict:
    """Flatten one engine's counters into the per-device report shape."""
    h, v, a = stats.hits, stats.volumes, stats.adaptive
    return {
        "events": events,
        "wss_bytes": wss_bytes,
        "cache_bytes": cache_bytes,
        "groups": groups,
        "open_groups": open_groups,
        "reads": {
            "requests": h.read_requests,
            "full_hits": h.read_full_hits,
            "hit_bytes": h.read_hit_bytes,
            "total_bytes": h.read_total_bytes,
            "request_hit_ratio": h.read_request_hit_ratio(),
            "byte_hit_ratio": h.read_byte_hit_ratio(),
        },
        "writes": {
            "requests": h.write_requests,
            "full_hits": h.write_full_hits,
            "hit_bytes": h.write_hit_bytes,
            "total_bytes": h.write_total_bytes,
            "request_hit_ratio": h.write_request_hit_ratio(),
            "byte_hit_ratio": h.write_byte_hit_ratio(),
        },
        "volumes": {
            "write_to_core": v.write_to_core,
            "read_from_core": v.read_from_core,
            "write_to_cache": v.write_to_cache,
            "read_from_cache": v.read_from_cache,
            "backend_total": v.backend_total(),
            "cache_total": v.cache_total(),
        },
        "evictions": {
            "blocks": stats.block_evictions,
            "groups": stats.group_evictions,
            "group_member_blocks": stats.group_evicted_blocks,
            "writeback_errors": stats.writeback_errors,
        },
        "flush": {"count": stats.flush_count, "bytes": stats.flush_bytes},
        "adaptiveness": {
            "missed_requests": a.missed_requests,
            "missed_request_bytes": a.missed_request_bytes,
            "avg_missed_request_size": a.avg_missed_request_size(),
            "allocated_blocks": a.allocated_blocks,
            "allocated_bytes": a.allocated_bytes,
            "avg_allocated_block_size": a.avg_allocated_block_size(),
            "allocation_histogram": _hist_pairs(a.histogram),
        },
        "metadata": {
            "resident_blocks": stats.resident_total(),
            "bytes_current": stats.metadata_bytes_current(),
            "bytes_avg": stats.metadata_bytes_avg(),
            "resident_histogram": _hist_pairs(
                {s: c for s, c in stats.resident_blocks.items() if c}
            ),
        },
    }


_SUM_PATHS = [
    ("events",), ("wss_bytes",), ("cache_bytes",), ("groups",), ("open_groups",),
    ("reads", "requests"), ("reads", "full_hits"), ("reads", "hit_bytes"),
    ("reads", "total_bytes"),
    ("writes", "requests"), ("writes", "full_hits"), ("writes", "hit_bytes"),
    ("writes", "total_bytes"),
    ("volumes", "write_to_core"), ("volumes", "read_from_core"),
    ("volumes", "write_to_cache"), ("volumes", "read_from_cache"),
    ("volumes", "backend_total"), ("volumes", "cache_total"),
    ("evictions", "blocks"), ("evictions", "groups"),
    ("evictions", "group_member_blocks"), ("evictions", "writeback_errors"),
    ("flush", "count"), ("flush", "bytes"),
    ("adaptiveness", "missed_requests"), ("adaptiveness", "missed_request_bytes"),
    ("adaptiveness", "allocated_blocks"), ("adaptiveness", "allocated_bytes"),
    ("metadata", "resident_blocks"), ("metadata", "bytes_current"),
]


def _get(d: dict, path):
    for key in path:
        d = d[key]
    return d


def _set(d: dict, path, value):
    for key in path[:-1]:
        d = d.setdefault(key, {})
    d[path[-1]] = value


def aggregate_devices(device_reports: dict[str, dict]) -> dict:
    """Fold per-device reports into one aggregate; ratios are recomputed."""
    agg: dict = {}
    for path in _SUM_PATHS:
        _set(agg, path, sum(_get(rep, path) for rep in device_reports.values()))
    for hist_path in (("adaptiveness", "allocation_histogram"),
                      ("metadata", "resident_histogram")):
        merged: dict[int, int] = {}
        for rep in device_reports.values():
            for size, count in _get(rep, hist_path):
                merged[size] = merged.get(size, 0) + count
        _set(agg, hist_path, _hist_pairs(merged))
    r, w = agg["reads"], agg["writes"]
    r["request_hit_ratio"] = HitStats._ratio(r["full_hits"], r["requests"])
    r["byte_hit_ratio"] = HitStats._ratio(r["hit_bytes"], r["total_bytes"])
    w["request_hit_ratio"] = HitStats._ratio(w["full_hits"], w["requests"])
    w["byte_hit_ratio"] = HitStats._ratio(w["hit_bytes"], w["total_bytes"])
    a = agg["adaptiveness"]
    a["avg_missed_request_size"] = HitStats._ratio(
        a["missed_request_bytes"], a["missed_requests"])
    a["avg_allocated_block_size"] = HitStats._ratio(
        a["allocated_bytes"], a["allocated_blocks"])
    # request-weighted average across devices
    md_num = sum(rep["metadata"]["bytes_avg"] * rep["events"]
                 for rep in device_reports.values())
    md_den = sum(rep["events"] for rep in device_reports.values())
    agg["metadata"]["bytes_avg"] = md_num / md_den if md_den else 0.0
    return agg


def build_report(config: dict, device_reports: dict[str, dict],
                 generated_at: str | None = None) -> dict:
    """Assemble the versioned replay report from per-device sections.

    ``generated_at`` is the only field allowed to vary between identical
    runs; it defaults to None so reports are byte-reproducible.
    """
    return {
        "schema_version": SCHEMA_VERSION,
        "generated_at": generated_at,
        "config": config,
        "devices": {dev: device_reports[dev] for dev in sorted(device_reports)},
        "aggregate": aggregate_devices(device_reports) if device_reports else {},
    }


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


_CSV_COLUMNS = [
    ("device", None),
    ("events", ("events",)),
    ("wss_bytes", ("wss_bytes",)),
    ("cache_bytes", ("cache_bytes",)),
    ("groups", ("groups",)),
    ("read_requests", ("reads", "requests")),
    ("read_full_hits", ("reads", "full_hits")),
    ("read_request_hit_ratio", ("reads", "request_hit_ratio")),
    ("read_byte_hit_ratio", ("reads", "byte_hit_ratio")),
    ("write_requests", ("writes", "requests")),
    ("write_full_hits", ("writes", "full_hits")),
    ("write_request_hit_ratio", ("writes", "request_hit_ratio")),
    ("write_byte_hit_ratio", ("writes", "byte_hit_ratio")),
    ("write_to_core", ("volumes", "write_to_core")),
    ("read_from_core", ("volumes", "read_from_core")),
    ("write_to_cache", ("volumes", "write_to_cache")),
    ("read_from_cache", ("volumes", "read_from_cache")),
    ("backend_total", ("volumes", "backend_total")),
    ("block_evictions", ("evictions", "blocks")),
    ("group_evictions", ("evictions", "groups")),
    ("avg_missed_request_size", ("adaptiveness", "avg_missed_request_size")),
    ("avg_allocated_block_size", ("adaptiveness", "avg_allocated_block_size")),
    ("allocated_blocks", ("adaptiveness", "allocated_blocks")),
    ("metadata_bytes_current", ("metadata", "bytes_current")),
    ("metadata_bytes_avg", ("metadata", "bytes_avg")),
]


def report_to_csv(report: dict) -> str:
    """Flat CSV: one row per device plus an ALL aggregate row."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([name for name, _ in _CSV_COLUMNS])
    rows = [(dev, rep) for dev, rep in sorted(report["devices"].items())]
    if report.get("aggregate"):
        rows.append(("ALL", report["aggregate"]))
    for dev, rep in rows:
        row = []
        for name, path in _CSV_COLUMNS:
            if path is None:
                row.append(dev)
                continue
            value = _get(rep, path)
            row.append("" if value is None else value)
        writer.writerow(row)
    return out.getvalue()


COMPARE_METRICS = [
    ("read_request_hit_ratio", ("reads", "request_hit_ratio")),
    ("read_byte_hit_ratio", ("reads", "byte_hit_ratio")),
    ("write_request_hit_ratio", ("writes", "request_hit_ratio")),
    ("write_byte_hit_ratio", ("writes", "byte_hit_ratio")),
    ("read_from_core", ("volumes", "read_from_core")),
    ("write_to_core", ("volumes", "write_to_core")),
    ("backend_total", ("volumes", "backend_total")),
    ("read_from_cache", ("volumes", "read_from_cache")),
    ("write_to_cache", ("volumes", "write_to_cache")),
    ("metadata_bytes_avg", ("metadata", "bytes_avg")),
    ("metadata_bytes_current", ("metadata", "bytes_current")),
    ("allocated_blocks", ("adaptiveness", "allocated_blocks")),
    ("avg_allocated_block_size", ("adaptiveness", "avg_allocated_block_size")),
    ("avg_missed_request_size", ("adaptiveness", "avg_missed_request_size")),
    ("block_evictions", ("evictions", "blocks")),
    ("group_evictions", ("evictions", "groups")),
]


def compare(reports: list[dict], labels: list[str] | None = None) -> dict:
    """Side-by-side aggregate metrics with deltas/ratios against the first run."""
    if not reports:
        raise ValueError("need at least one report to compare")
    if labels is None:
        labels = [f"run{i}" for i in range(len(reports))]
    if len(labels) != len(reports):
        raise ValueError("labels must match reports")
    rows = []
    for name, path in COMPARE_METRICS:
        values = [_get(rep["aggregate"], path) for rep in reports]
        base = values[0]
        ratios = []
        for v in values:
            if v is None or base in (None, 0):
                ratios.append(None)
            else:
                ratios.append(v / base)
        rows.append({"metric": name, "values": values, "ratio_vs_first": ratios})
    return {"labels": labels, "rows": rows}


def format_compare_table(cmp: dict) -> str:
    """Human-readable fixed-width table for a compare() result."""
    labels = cmp["labels"]
    header = ["metric"] + list(labels) + [f"{lbl}/{labels[0]}" for lbl in labels[1:]]
    table = [header]
    for row in cmp["rows"]:
        cells = [row["metric"]]
        for v in row["values"]:
            cells.append("n/a" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)))
        for r in row["ratio_vs_first"][1:]:
            cells.append("n/a" if r is None else f"{r:.4f}")
        table.append(cells)
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
