"""Block I/O trace parsing and working-set sizing.

Three plain-text CSV layouts are supported (see docs/trace-formats.md):

* ``msr``      Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime
               timestamps are 100 ns ticks; device is "<host>_<disk>".
* ``alibaba``  device_id,opcode,offset,length,timestamp
               offsets/lengths in bytes, timestamps in microseconds;
               device is "vd<device_id>".
* ``systor``   Timestamp,Response,IOType,LUN,Offset,Size
               timestamps in seconds; device is "LUN<n>".

Format selection is always explicit (a flag), never sniffed from content.
Files ending in ``.gz`` are decompressed transparently. Parsers are strict
by default; skip-with-count is available behind a flag.
"""
from __future__ import annotations

import gzip
from dataclasses import dataclass

READ = "R"
WRITE = "W"


@dataclass(slots=True)
class IoEvent:
    """One trace record; offsets and lengths in bytes, timestamps in ns."""

    device: str
    op: str
    offset: int
    length: int
    timestamp: int


class ParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


def _fields(line: str, line_no: int, expected: int) -> list[str]:
    parts = line.rstrip("\n").split(",")
    if len(parts) != expected:
        raise ParseError(line_no, f"expected {expected} fields, got {len(parts)}")
    return parts


def _positive(value: str, name: str, line_no: int) -> int:
    try:
        n = int(value)
    except ValueError:
        raise ParseError(line_no, f"non-numeric {name}: {value!r}") from None
    if n <= 0:
        raise ParseError(line_no, f"non-positive {name}: {n}")
    return n


def _offset(value: str, line_no: int) -> int:
    try:
        n = int(value)
    except ValueError:
        raise ParseError(line_no, f"non-numeric offset: {value!r}") from None
    if n < 0:
        raise ParseError(line_no, f"negative offset: {n}")
    return n


def parse_msr(line: str, line_no: int = 0) -> IoEvent:
    ts, host, disk, kind, offset, size, _response = _fields(line, line_no, 7)
    kind = kind.strip().lower()
    if kind == "read":
        op = READ
    elif kind == "write":
        op = WRITE
    else:
        raise ParseError(line_no, f"unknown I/O type: {kind!r}")
    try:
        timestamp = int(ts) * 100  # 100 ns ticks -> ns
    except ValueError:
        raise ParseError(line_no, f"non-numeric timestamp: {ts!r}") from None
    return IoEvent(device=f"{host.strip()}_{disk.strip()}", op=op,
                   offset=_offset(offset, line_no),
                   length=_positive(size, "size", line_no),
                   timestamp=timestamp)


def parse_alibaba(line: str, line_no: int = 0, unit: int = 1) -> IoEvent:
    dev_id, opcode, offset, length, ts = _fields(line, line_no, 5)
    opcode = opcode.strip().upper()
    if opcode not in (READ, WRITE):
        raise ParseError(line_no, f"unknown opcode: {opcode!r}")
    try:
        device = f"vd{int(dev_id)}"
    except ValueError:
        raise ParseError(line_no, f"non-numeric device_id: {dev_id!r}") from None
    try:
        timestamp = int(ts) * 1000  # microseconds -> ns
    except ValueError:
        raise ParseError(line_no, f"non-numeric timestamp: {ts!r}") from None
    return IoEvent(device=device, op=opcode,
                   offset=_offset(offset, line_no) * unit,
                   length=_positive(length, "length", line_no) * unit,
                   timestamp=timestamp)


def parse_systor(line: str, line_no: int = 0) -> IoEvent:
    ts, _response, kind, lun, offset, size = _fields(line, line_no, 6)
    kind = kind.strip().upper()
    if kind not in (READ, WRITE):
        raise ParseError(line_no, f"unknown I/O type: {kind!r}")
    try:
        device = f"LUN{int(lun)}"
    except ValueError:
        raise ParseError(line_no, f"non-numeric LUN: {lun!r}") from None
    try:
        timestamp = round(float(ts) * 1e9)  # seconds -> ns
    except ValueError:
        raise ParseError(line_no, f"non-numeric timestamp: {ts!r}") from None
    return IoEvent(device=device, op=kind,
                   offset=_offset(offset, line_no),
                   length=_positive(size, "size", line_no),
                   timestamp=timestamp)


FORMATS = ("msr", "alibaba", "systor")

_HEADERS = {
    "alibaba": "device_id,opcode,offset,length,timestamp",
    "systor": "timestamp,response,iotype,lun,offset,size",
}


@dataclass
class TraceStats:
    lines: int = 0
    events: int = 0
    skipped: int = 0


def _parser_for(fmt: str, unit: int):
    if fmt == "msr":
        return parse_msr
    if fmt == "alibaba":
        return lambda line, line_no: parse_alibaba(line, line_no, unit)
    if fmt == "systor":
        return parse_systor
    raise ValueError(f"unknown trace format {fmt!r} (expected one of {FORMATS})")


def iter_trace(path: str, fmt: str, *, devices=None, max_events: int | None = None,
               strict: bool = True, stats: TraceStats | None = None, unit: int = 1):
    """Stream IoEvents from a trace file.

    ``devices`` filters to the given device names; ``max_events`` caps the
    number of yielded (post-filter) events. In strict mode a malformed line
    raises ParseError; otherwise it is counted in ``stats.skipped``. A known
    header line at the top of the file is skipped silently.
    """
    parse = _parser_for(fmt, unit)
    if devices is not None:
        devices = frozenset(devices)
    header = _HEADERS.get(fmt)
    opener = gzip.open if str(path).endswith(".gz") else open
    yielded = 0
    with opener(path, "rt") as fh:
        for line_no, line in enumerate(fh, start=1):
            if max_events is not None and yielded >= max_events:
                break
            if stats is not None:
                stats.lines += 1
            stripped = line.strip()
            if not stripped:
                continue
            if line_no == 1 and header and stripped.lower().replace(" ", "") == header:
                continue
            try:
                event = parse(stripped, line_no)
            except ParseError:
                if strict:
                    raise
                if stats is not None:
                    stats.skipped += 1
                continue
            if devices is not None and event.device not in devices:
                continue
            yielded += 1
            if stats is not None:
                stats.events += 1
            yield event


def load_trace(path: str, fmt: str, **kwargs) -> tuple[list[IoEvent], TraceStats]:
    stats = kwargs.pop("stats", None) or TraceStats()
    events = list(iter_trace(path, fmt, stats=stats, **kwargs))
    return events, stats


def _touched_steps(event: IoEvent, step: int) -> range:
    first = event.offset - event.offset % step
    last = (event.offset + event.length - 1) // step * step
    return range(first, last + step, step)


def per_device_wss(events, step: int) -> dict[str, int]:
    """Unique aligned bytes touched per device."""
    if step <= 0:
        raise ValueError("step must be positive")
    seen: dict[str, set[int]] = {}
    for event in events:
        seen.setdefault(event.device, set()).update(_touched_steps(event, step))
    return {dev: len(steps) * step for dev, steps in seen.items()}


def working_set_size(events, step: int) -> int:
    """Total unique aligned bytes touched across all devices."""
    return sum(per_device_wss(events, step).values())
