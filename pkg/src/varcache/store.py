"""Backing-store implementations the cache engine sits in front of.

The contract is deliberately small: ``read(dev, offset, length) -> bytes``
(always exactly ``length`` bytes) and ``write(dev, offset, data)``. I/O
failures surface as OSError. ``has_content`` tells the engine whether reads
carry meaningful payloads; when False the engine may skip content copies
and only track byte volumes.
"""
from __future__ import annotations

import os
import re
import threading


class NullStore:
    """Counts bytes and serves zero-filled reads; no data is retained."""

    has_content = False

    def __init__(self):
        self.reads = 0
        self.writes = 0
        self.bytes_read = 0
        self.bytes_written = 0

    def read(self, dev: str, offset: int, length: int) -> bytes:
        self.reads += 1
        self.bytes_read += length
        return bytes(length)

    def write(self, dev: str, offset: int, data: bytes) -> None:
        self.writes += 1
        self.bytes_written += len(data)

    def close(self) -> None:
        pass


_UNSAFE = re.compile(r"[^A-Za-z0-9._-]")


class FileStore:
    """One sparse file per device under a root directory.

    Reads past the current end of file come back zero-filled, matching
    sparse-device semantics. Handles are cached per device; opening is
    guarded by a lock so independent per-device workers can share one
    instance as long as they touch different devices.
    """

    has_content = True

    def __init__(self, root: str, create: bool = True):
        self.root = root
        if create:
            os.makedirs(root, exist_ok=True)
        self._handles: dict[str, object] = {}
        self._lock = threading.Lock()

    def path_for(self, dev: str) -> str:
        return os.path.join(self.root, _UNSAFE.sub("_", str(dev)) + ".dat")

    def _handle(self, dev: str):
        fh = self._handles.get(dev)
        if fh is None:
            with self._lock:
                fh = self._handles.get(dev)
                if fh is None:
                    path = self.path_for(dev)
                    if not os.path.exists(path):
                        open(path, "wb").close()
                    fh = open(path, "r+b")
                    self._handles[dev] = fh
        return fh

    def read(self, dev: str, offset: int, length: int) -> bytes:
        fh = self._handle(dev)
        fh.seek(offset)
        data = fh.read(length)
        if len(data) < length:
            data += bytes(length - len(data))
        return data

    def write(self, dev: str, offset: int, data: bytes) -> None:
        fh = self._handle(dev)
        fh.seek(offset)
        fh.write(data)

    def close(self) -> None:
        with self._lock:
            for fh in self._handles.values():
                fh.close()
            self._handles.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
