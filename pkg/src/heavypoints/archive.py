"""Deterministic run archives.

An archive is a directory: a config snapshot, one JSON report per
replica stream, aggregate CSVs, and a manifest with sha256 hashes of
every payload file.  All serialization is canonical (sorted JSON keys,
17 significant digits in JSON, 6 in CSVs, \n newlines, no timestamps),
so identical inputs produce byte-identical archives no matter how the
work was scheduled.
"""

from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from . import _jsonfmt
from . import __version__

MANIFEST_NAME = "manifest.json"
CONFIG_NAME = "config.txt"
FORMAT_VERSION = 1


def csv_cell(v) -> str:
    """Canonical CSV cell: floats at 6 significant digits, ints plain,
    everything else str()'d (must not contain commas or newlines)."""
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".6g")
    s = str(v)
    if "," in s or "\n" in s:
        raise ValueError(f"CSV cell would need quoting: {s!r}")
    return s


def csv_bytes(header: Sequence[str], rows: Sequence[Sequence]) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(csv_cell(v) for v in row))
    return ("\n".join(lines) + "\n").encode("utf-8")


def json_bytes(obj) -> bytes:
    return (_jsonfmt.dumps(obj) + "\n").encode("utf-8")


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def seed_report_name(stream: int) -> str:
    return f"seed-{int(stream):06d}.json"


class ArchiveWriter:
    """Collects payloads in memory, then writes the directory in one
    deterministic pass (manifest last)."""

    def __init__(self, outdir: Union[str, Path], config_text: str):
        self.outdir = Path(outdir)
        self._files: Dict[str, bytes] = {CONFIG_NAME: config_text.encode("utf-8")}

    def add_seed_report(self, stream: int, report: dict) -> None:
        name = seed_report_name(stream)
        if name in self._files:
            raise ValueError(f"duplicate seed report {name}")
        self._files[name] = json_bytes(report)

    def add_aggregate(self, name: str, payload: bytes) -> None:
        if name in (MANIFEST_NAME, CONFIG_NAME) or name in self._files:
            raise ValueError(f"bad or duplicate aggregate name {name!r}")
        self._files[name] = payload

    def finalize(self, complete: bool = True) -> Path:
        self.outdir.mkdir(parents=True, exist_ok=True)
        for name in sorted(self._files):
            (self.outdir / name).write_bytes(self._files[name])
        manifest = {
            "format_version": FORMAT_VERSION,
            "tool_version": __version__,
            "complete": bool(complete),
            "files": {name: _sha256(data)
                      for name, data in sorted(self._files.items())},
        }
        (self.outdir / MANIFEST_NAME).write_bytes(json_bytes(manifest))
        return self.outdir


class RunArchive:
    """Read side: manifest-driven access with hash checking."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        raw = (self.path / MANIFEST_NAME).read_bytes()
        import json
        self.manifest = json.loads(raw)

    @property
    def complete(self) -> bool:
        return bool(self.manifest.get("complete", False))

    def file_bytes(self, name: str) -> bytes:
        if name not in self.manifest["files"]:
            raise KeyError(f"{name} not in manifest")
        return (self.path / name).read_bytes()

    def config_text(self) -> str:
        return self.file_bytes(CONFIG_NAME).decode("utf-8")

    def seed_reports(self) -> List[Tuple[int, dict]]:
        import json
        out = []
        for name in sorted(self.manifest["files"]):
            if name.startswith("seed-") and name.endswith(".json"):
                stream = int(name[5:-5])
                out.append((stream, json.loads(self.file_bytes(name))))
        return out

    def check_hashes(self) -> List[str]:
        """Names whose on-disk bytes do not match the manifest."""
        bad = []
        for name, want in sorted(self.manifest["files"].items()):
            data = (self.path / name).read_bytes()
            if _sha256(data) != want:
                bad.append(name)
        return bad


def replay_aggregates(archive: RunArchive, aggregator) -> Dict[str, bool]:
    """Recompute aggregates from the per-seed reports via `aggregator`
    (reports -> {name: bytes}) and byte-compare with the stored files.
    Returns {aggregate name: matches}."""
    reports = archive.seed_reports()
    fresh = aggregator(reports)
    out = {}
    for name, data in sorted(fresh.items()):
        try:
            stored = archive.file_bytes(name)
        except (KeyError, OSError):
            out[name] = False
            continue
        out[name] = stored == data
    return out
