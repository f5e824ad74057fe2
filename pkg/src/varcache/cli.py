"""Command-line front end: trace replay, synthetic runs, WSS, sweeps, reports.

Progress and log output go to standard error; reports go to files or
standard output only, so pipelines stay clean. Exit codes: 0 success,
2 configuration error, 3 trace parse error, 4 backing-store error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor

from .allocator import BlockSizeConfig
from .engine import POLICIES, WRITE_BACK, BlockCache
from .metrics import (build_report, compare, device_report, format_compare_table,
                      report_to_csv, report_to_json)
from .store import FileStore, NullStore
from .trace import FORMATS, READ, ParseError, TraceStats, iter_trace
from .workload import WorkloadSpec, generate, load_cdf, write_trace

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_BACKEND = 4

log = logging.getLogger("varcache")

DEFAULT_BLOCK_SIZES = (32 * 1024, 64 * 1024, 128 * 1024, 256 * 1024)
DEFAULT_WSS_RATIO = 0.1


class ConfigError(ValueError):
    pass


_SIZE_RE = re.compile(r"^(\d+)\s*([KMGT]?)(I?B)?$", re.IGNORECASE)
_SIZE_MULT = {"": 1, "K": 1 << 10, "M": 1 << 20, "G": 1 << 30, "T": 1 << 40}


def parse_size(text) -> int:
    """'32K', '1MiB', '4096' -> bytes (binary multiples)."""
    if isinstance(text, int):
        return text
    m = _SIZE_RE.match(str(text).strip())
    if not m:
        raise ConfigError(f"bad size: {text!r}")
    return int(m.group(1)) * _SIZE_MULT[m.group(2).upper()]


def parse_size_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(parse_size(t) for t in text)
    return tuple(parse_size(part) for part in str(text).split(",") if part.strip())


def _csv_list(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return list(text)
    return [part.strip() for part in str(text).split(",") if part.strip()]


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Merge precedence: command-line flags > config file > defaults."""
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_cfg)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged.get("block_sizes") is not None:
        merged["block_sizes"] = parse_size_list(merged["block_sizes"])
    if merged.get("devices") is not None:
        merged["devices"] = _csv_list(merged["devices"])
    return merged


# ----------------------------------------------------------------------- flags

_CACHE_DEFAULTS = {
    "block_sizes": DEFAULT_BLOCK_SIZES,
    "cache_bytes": None,
    "cache_wss_ratio": None,
    "policy": WRITE_BACK,
    "strict_range": False,
    "always_fill": False,
    "flush_interval": 0,
    "store": "null",
    "store_dir": None,
    "workers": None,
    "sample_interval": 0,
    "seed": 0,
}

_TRACE_DEFAULTS = {
    "traces": None,
    "format": None,
    "devices": None,
    "max_events": None,
    "skip_bad_lines": False,
    "unit": 1,
}

_WORKLOAD_DEFAULTS = {
    "events": 100000,
    "gen_devices": 1,
    "address_space": 1 << 30,
    "read_fraction": 0.7,
    "size_dist": "fixed",
    "sizes": (4096,),
    "size_cdf": None,
    "locality": "uniform",
    "zipf_theta": 1.2,
    "zipf_items": 65536,
    "seq_fraction": 0.8,
    "seq_run_length": 8,
    "offset_align": 4096,
}


def _add_common(parser):
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--out", help="report destination ('-' or absent = stdout)")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log more to stderr (-v info, -vv debug)")


def _add_cache_flags(parser):
    parser.add_argument("--block-sizes", dest="block_sizes",
                        help="comma list of cache block sizes, e.g. 32K,64K,128K,256K")
    parser.add_argument("--cache-bytes", dest="cache_bytes", type=parse_size,
                        help="absolute per-device cache size")
    parser.add_argument("--cache-wss-ratio", dest="cache_wss_ratio", type=float,
                        help="size each device's cache as ratio * its WSS (default 0.1)")
    parser.add_argument("--policy", choices=POLICIES)
    parser.add_argument("--strict-range", dest="strict_range",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="clamp the scan range at aligned request ends")
    parser.add_argument("--always-fill", dest="always_fill",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="read-fill whole blocks on write misses even when overwritten")
    parser.add_argument("--flush-interval", dest="flush_interval", type=int,
                        help="flush dirty blocks every N requests (0 = only on eviction)")
    parser.add_argument("--store", choices=("null", "file"))
    parser.add_argument("--store-dir", dest="store_dir",
                        help="directory for file-backed store (required with --store file)")
    parser.add_argument("--workers", type=int,
                        help="device replay worker pool size (default: device count)")
    parser.add_argument("--sample-interval", dest="sample_interval", type=int,
                        help="emit a time-series sample every N events per device")
    parser.add_argument("--seed", type=int, help="seed echoed into the report")
    parser.add_argument("--csv", dest="csv_out", help="also write the flat CSV report here")


def _add_trace_flags(parser):
    parser.add_argument("--trace", dest="traces", action="append",
                        help="trace file (repeatable); .gz accepted")
    parser.add_argument("--format", choices=FORMATS,
                        help="trace format (explicit, never sniffed)")
    parser.add_argument("--devices", help="comma list of device names to keep")
    parser.add_argument("--max-events", dest="max_events", type=int,
                        help="stop after this many filtered events per trace file")
    parser.add_argument("--skip-bad-lines", dest="skip_bad_lines",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="count malformed lines instead of failing")
    parser.add_argument("--unit", type=int,
                        help="offset/length multiplier for alibaba traces (default 1 = bytes)")


def _add_workload_flags(parser):
    parser.add_argument("--events", type=int, help="number of events to generate")
    parser.add_argument("--gen-devices", dest="gen_devices", type=int,
                        help="number of synthetic devices")
    parser.add_argument("--address-space", dest="address_space", type=parse_size,
                        help="address space per device")
    parser.add_argument("--read-fraction", dest="read_fraction", type=float)
    parser.add_argument("--size-dist", dest="size_dist", choices=("fixed", "uniform", "cdf"))
    parser.add_argument("--sizes", type=parse_size_list,
                        help="request sizes (fixed: one value; uniform: comma list)")
    parser.add_argument("--size-cdf", dest="size_cdf",
                        help="CSV file of (size_bytes, cumulative_prob) rows")
    parser.add_argument("--locality", choices=("uniform", "zipf", "seq"))
    parser.add_argument("--zipf-theta", dest="zipf_theta", type=float)
    parser.add_argument("--zipf-items", dest="zipf_items", type=int)
    parser.add_argument("--seq-fraction", dest="seq_fraction", type=float)
    parser.add_argument("--seq-run-length", dest="seq_run_length", type=int)
    parser.add_argument("--offset-align", dest="offset_align", type=parse_size)


# ----------------------------------------------------------------------- runs


def _make_spec(cfg: dict) -> WorkloadSpec:
    cdf = ()
    if cfg.get("size_cdf"):
        cdf = cfg["size_cdf"] if isinstance(cfg["size_cdf"], tuple) else load_cdf(cfg["size_cdf"])
    try:
        spec = WorkloadSpec(
            seed=cfg["seed"], devices=cfg["gen_devices"],
            address_space=cfg["address_space"], read_fraction=cfg["read_fraction"],
            size_dist=cfg["size_dist"], sizes=tuple(cfg["sizes"]), size_cdf=cdf,
            locality=cfg["locality"], zipf_theta=cfg["zipf_theta"],
            zipf_items=cfg["zipf_items"], seq_fraction=cfg["seq_fraction"],
            seq_run_length=cfg["seq_run_length"], offset_align=cfg["offset_align"])
        spec.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return spec


def _collect_trace_events(cfg: dict):
    """Read all trace files once: per-device op lists plus parse stats."""
    if not cfg.get("traces"):
        raise ConfigError("at least one --trace is required")
    if not cfg.get("format"):
        raise ConfigError("--format is required")
    for path in cfg["traces"]:
        if not os.path.exists(path):
            raise ConfigError(f"trace file not found: {path}")
    stats = TraceStats()
    by_dev: dict[str, list] = {}
    for path in cfg["traces"]:
        for event in iter_trace(path, cfg["format"], devices=cfg["devices"],
                                max_events=cfg["max_events"],
                                strict=not cfg["skip_bad_lines"],
                                stats=stats, unit=cfg["unit"]):
            by_dev.setdefault(event.device, []).append(
                (event.op, event.offset, event.length))
    return by_dev, stats


def _collect_synthetic_events(cfg: dict):
    spec = _make_spec(cfg)
    by_dev: dict[str, list] = {}
    for event in generate(spec, cfg["events"]):
        by_dev.setdefault(event.device, []).append(
            (event.op, event.offset, event.length))
    return by_dev, TraceStats(lines=cfg["events"], events=cfg["events"])


def _wss_of(ops, step: int) -> int:
    seen = set()
    for _, offset, length in ops:
        first = offset - offset % step
        last = (offset + length - 1) // step * step
        seen.update(range(first, last + step, step))
    return len(seen) * step


def _cache_bytes_for(cfg: dict, sizes: BlockSizeConfig, wss: int) -> int:
    if cfg["cache_bytes"] is not None:
        wanted = cfg["cache_bytes"]
    else:
        ratio = cfg["cache_wss_ratio"] if cfg["cache_wss_ratio"] is not None else DEFAULT_WSS_RATIO
        wanted = int(ratio * wss)
    # at least one group; the engine rounds down to whole groups
    return max(wanted, sizes.group_size)


def _replay_device(dev, ops, wss, sizes, cache_bytes, cfg, store):
    engine = BlockCache(sizes, cache_bytes, store, cfg["policy"],
                        strict_range=cfg["strict_range"],
                        always_fill=cfg["always_fill"],
                        flush_interval=cfg["flush_interval"])
    interval = cfg["sample_interval"]
    samples = []
    for i, (op, offset, length) in enumerate(ops, start=1):
        if op == READ:
            engine.read(dev, offset, length)
        else:
            engine.write(dev, offset, length)
        if interval and i % interval == 0:
            v = engine.stats.volumes
            samples.append({
                "events": i,
                "resident_blocks": engine.resident_block_count,
                "read_from_core": v.read_from_core,
                "write_to_core": v.write_to_core,
                "read_from_cache": v.read_from_cache,
                "write_to_cache": v.write_to_cache,
            })
    rep = device_report(engine.stats, events=len(ops), wss_bytes=wss,
                        cache_bytes=engine.capacity_bytes,
                        groups=engine.group_count,
                        open_groups=engine.open_group_count)
    if interval:
        rep["timeseries"] = samples
    return rep


def _validate_cache_cfg(cfg: dict) -> BlockSizeConfig:
    if cfg["cache_bytes"] is not None and cfg["cache_wss_ratio"] is not None:
        raise ConfigError("choose one of --cache-bytes or --cache-wss-ratio")
    if cfg["policy"] not in POLICIES:
        raise ConfigError(f"unknown policy {cfg['policy']!r}")
    if cfg["store"] not in ("null", "file"):
        raise ConfigError(f"unknown store {cfg['store']!r}")
    if cfg["store"] == "file" and not cfg["store_dir"]:
        raise ConfigError("--store file requires --store-dir")
    if cfg["flush_interval"] < 0 or cfg["sample_interval"] < 0:
        raise ConfigError("intervals must be >= 0")
    try:
        return BlockSizeConfig(cfg["block_sizes"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def run_cached(cfg: dict, by_dev: dict, stats: TraceStats) -> dict:
    """Replay per-device event lists over per-device engines; build the report."""
    sizes = _validate_cache_cfg(cfg)
    shared_store = FileStore(cfg["store_dir"]) if cfg["store"] == "file" else None
    devices = sorted(by_dev)
    if not devices:
        raise ConfigError("no events matched the device filter")
    wss = {dev: _wss_of(by_dev[dev], sizes.smallest) for dev in devices}
    total_events = sum(len(v) for v in by_dev.values())
    log.info("replaying %d device(s), %d events total", len(devices), total_events)
    workers = cfg["workers"] or len(devices)
    results: dict[str, dict] = {}
    started = time.monotonic()
    try:
        with ThreadPoolExecutor(max_workers=max(workers, 1)) as pool:
            futures = {
                dev: pool.submit(
                    _replay_device, dev, by_dev[dev], wss[dev], sizes,
                    _cache_bytes_for(cfg, sizes, wss[dev]), cfg,
                    shared_store if shared_store is not None else NullStore())
                for dev in devices
            }
            for dev in devices:
                results[dev] = futures[dev].result()
    finally:
        if shared_store is not None:
            shared_store.close()
    elapsed = time.monotonic() - started
    # wall-clock engine overhead goes to stderr only; reports stay reproducible
    log.info("replayed %d events in %.2fs (%.1f us/event)", total_events, elapsed,
             elapsed / total_events * 1e6 if total_events else 0.0)
    echo = {key: cfg[key] for key in sorted(cfg)}
    echo["block_sizes"] = list(sizes.sizes)
    echo["trace_stats"] = {"lines": stats.lines, "events": stats.events,
                           "skipped": stats.skipped}
    return build_report(echo, results)


def _emit_report(report: dict, cfg: dict, out_path: str | None) -> None:
    text = report_to_json(report)
    if out_path and out_path != "-":
        with open(out_path, "w") as fh:
            fh.write(text)
        log.info("report written to %s", out_path)
    else:
        sys.stdout.write(text)
    csv_out = cfg.get("csv_out")
    if csv_out:
        with open(csv_out, "w") as fh:
            fh.write(report_to_csv(report))


# ----------------------------------------------------------------------- verbs


def cmd_replay(args) -> int:
    cfg = _resolve(args, {**_CACHE_DEFAULTS, **_TRACE_DEFAULTS, "csv_out": None})
    _validate_cache_cfg(cfg)  # fail fast, before reading the trace
    by_dev, stats = _collect_trace_events(cfg)
    report = run_cached(cfg, by_dev, stats)
    _emit_report(report, cfg, args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolve(args, {**_CACHE_DEFAULTS, **_WORKLOAD_DEFAULTS, "csv_out": None})
    _validate_cache_cfg(cfg)
    by_dev, stats = _collect_synthetic_events(cfg)
    report = run_cached(cfg, by_dev, stats)
    _emit_report(report, cfg, args.out)
    return EXIT_OK


def cmd_wss(args) -> int:
    cfg = _resolve(args, {**_TRACE_DEFAULTS, "step": 4096})
    if cfg.get("step") is None or cfg["step"] <= 0:
        raise ConfigError("--step must be positive")
    by_dev, _stats = _collect_trace_events(cfg)
    per_dev = {dev: _wss_of(ops, cfg["step"]) for dev, ops in sorted(by_dev.items())}
    total = sum(per_dev.values())
    if args.json:
        sys.stdout.write(json.dumps({"step": cfg["step"], "devices": per_dev,
                                     "total": total}, indent=2, sort_keys=True) + "\n")
    else:
        for dev, size in per_dev.items():
            sys.stdout.write(f"{dev}\t{size}\n")
        sys.stdout.write(f"TOTAL\t{total}\n")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _resolve(args, {**_WORKLOAD_DEFAULTS, "seed": 0})
    spec = _make_spec(cfg)
    if not args.out or args.out == "-":
        raise ConfigError("generate requires --out FILE")
    count = write_trace(generate(spec, cfg["events"]), args.out)
    log.info("wrote %d events to %s", count, args.out)
    return EXIT_OK


_SWEEP_AXES = ("block-sizes", "cache-wss-ratio", "policy")


def cmd_sweep(args) -> int:
    defaults = {**_CACHE_DEFAULTS, **_TRACE_DEFAULTS, **_WORKLOAD_DEFAULTS, "csv_out": None}
    base = _resolve(args, defaults)
    if args.axis not in _SWEEP_AXES:
        raise ConfigError(f"--axis must be one of {_SWEEP_AXES}")
    values = [v.strip() for v in args.values.split(";") if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one setting")
    if base.get("traces"):
        by_dev, stats = _collect_trace_events(base)
    else:
        by_dev, stats = _collect_synthetic_events(base)
    reports, labels = [], []
    for value in values:
        cfg = dict(base)
        if args.axis == "block-sizes":
            cfg["block_sizes"] = parse_size_list(value)
        elif args.axis == "cache-wss-ratio":
            cfg["cache_bytes"] = None
            cfg["cache_wss_ratio"] = float(value)
        else:
            cfg["policy"] = value
        log.info("sweep run: %s=%s", args.axis, value)
        report = run_cached(cfg, by_dev, stats)
        reports.append(report)
        labels.append(value)
        if args.report_dir:
            os.makedirs(args.report_dir, exist_ok=True)
            name = re.sub(r"[^A-Za-z0-9._-]", "_", f"{args.axis}={value}") + ".json"
            with open(os.path.join(args.report_dir, name), "w") as fh:
                fh.write(report_to_json(report))
    table = format_compare_table(compare(reports, labels))
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_compare(args) -> int:
    reports = []
    for path in args.reports:
        try:
            with open(path) as fh:
                reports.append(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report {path}: {exc}") from exc
    labels = _csv_list(args.labels) if args.labels else [
        os.path.splitext(os.path.basename(p))[0] for p in args.reports]
    try:
        table = format_compare_table(compare(reports, labels))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad report contents: {exc}") from exc
    if args.out and args.out != "-":
        with open(args.out, "w") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


# ----------------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="varcache",
        description="Variable-sized block cache simulator and trace replayer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("replay", help="replay a block I/O trace through the cache")
    _add_common(p)
    _add_trace_flags(p)
    _add_cache_flags(p)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate", help="run a seeded synthetic workload")
    _add_common(p)
    _add_workload_flags(p)
    _add_cache_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("wss", help="compute working-set size of a trace")
    _add_common(p)
    _add_trace_flags(p)
    p.add_argument("--step", type=parse_size, default=None,
                   help="aligned step granularity (default 4K)")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_wss)

    p = sub.add_parser("generate", help="write a synthetic trace file")
    _add_common(p)
    _add_workload_flags(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="run one config axis across several values")
    _add_common(p)
    _add_trace_flags(p)
    _add_workload_flags(p)
    _add_cache_flags(p)
    p.add_argument("--axis", required=True, choices=_SWEEP_AXES)
    p.add_argument("--values", required=True,
                   help="semicolon-separated settings, e.g. '32K;32K,64K,128K,256K'")
    p.add_argument("--report-dir", dest="report_dir",
                   help="also write one full report per sweep run")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="tabulate metrics across report files")
    _add_common(p)
    p.add_argument("reports", nargs="+", help="report JSON files")
    p.add_argument("--labels", help="comma list of column labels")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except ParseError as exc:
        log.error("trace parse error: %s", exc)
        return EXIT_PARSE
    except OSError as exc:
        log.error("backing-store/file error: %s", exc)
        return EXIT_BACKEND


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
