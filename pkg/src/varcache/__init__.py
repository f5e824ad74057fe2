"""Variable-sized block cache engine and trace-replay simulator.

Blocks are allocated from a configured set of power-of-two sizes to match
request sizes, stored slab-style in fixed-size groups, and replaced with a
two-level LRU policy (single block on size match, whole group otherwise).
"""

from .allocator import (Allocation, BlockSizeConfig, DictIndex, Interval, align,
                        greedy_allocate, missing_intervals, scan_range)
from .engine import (POLICIES, WRITE_BACK, WRITE_THROUGH, BlockCache, CacheBlock,
                     Group, ReadOutcome, WriteOutcome)
from .metrics import (METADATA_BYTES_PER_BLOCK, EngineStats, HitStats,
                      SizeAdaptiveness, VolumeCounters, build_report, compare,
                      device_report, fixed_cache_metadata, metadata_memory,
                      report_to_csv, report_to_json)
from .store import FileStore, NullStore
from .trace import (FORMATS, READ, WRITE, IoEvent, ParseError, TraceStats,
                    iter_trace, load_trace, parse_alibaba, parse_msr, parse_systor,
                    per_device_wss, working_set_size)
from .workload import WorkloadSpec, generate, load_cdf, write_trace

__version__ = "0.1.0"

__all__ = [
    "Allocation", "BlockSizeConfig", "DictIndex", "Interval", "align",
    "greedy_allocate", "missing_intervals", "scan_range",
    "POLICIES", "WRITE_BACK", "WRITE_THROUGH", "BlockCache", "CacheBlock",
    "Group", "ReadOutcome", "WriteOutcome",
    "METADATA_BYTES_PER_BLOCK", "EngineStats", "HitStats", "SizeAdaptiveness",
    "VolumeCounters", "build_report", "compare", "device_report",
    "fixed_cache_metadata", "metadata_memory", "report_to_csv", "report_to_json",
    "FileStore", "NullStore",
    "FORMATS", "READ", "WRITE", "IoEvent", "ParseError", "TraceStats",
    "iter_trace", "load_trace", "parse_alibaba", "parse_msr", "parse_systor",
    "per_device_wss", "working_set_size",
    "WorkloadSpec", "generate", "load_cdf", "write_trace",
    "__version__",
]
