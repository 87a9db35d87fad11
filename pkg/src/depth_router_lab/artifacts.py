"""Atomic file output: CSV with a schema comment line, JSON, JSONL and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

from . import __version__
from .env import FEATURE_LAYOUT_VERSION

CSV_SCHEMA_VERSION = 1


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_jsonl(path, records) -> None:
    atomic_write_text(path, "".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path, fields, rows, description: str) -> None:
    """CSV whose first line is ``# <description>; columns: ...``."""
    buf = io.StringIO()
    buf.write(f"# {description}; schema v{CSV_SCHEMA_VERSION}; columns: {', '.join(fields)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for row in rows:
        w.writerow([_fmt(row[f]) for f in fields])
    atomic_write_text(path, buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory, command: str, config, artifacts) -> None:
    """``manifest.json`` recording config hash, seed, versions and artifact checksums."""
    directory = Path(directory)
    entries = {}
    for p in sorted(Path(a) for a in artifacts):
        entries[str(p.relative_to(directory))] = sha256_file(p)
    write_json(directory / "manifest.json", {
        "command": command,
        "config_sha256": config.digest(),
        "config": config.to_json(),
        "master_seed": config.master_seed,
        "versions": {
            "package": __version__,
            "feature_layout": FEATURE_LAYOUT_VERSION,
            "csv_schema": CSV_SCHEMA_VERSION,
        },
        "artifacts": entries,
    })
