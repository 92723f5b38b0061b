"""Trace and manifest files.

A trace is JSON-lines, one example result per line, every record carrying
``schema: "ever-trace/1"``. A manifest sits next to the trace
(``<trace>.manifest.json``) and snapshots everything needed to reproduce the
run: config, dataset path and content hash, prompt revision, seed, and
timestamps. Scoring refuses traces without a manifest.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import TraceError
from .pipeline import TRACE_SCHEMA

MANIFEST_SCHEMA = "ever-manifest/1"


def manifest_path(trace_path: str | Path) -> Path:
    return Path(str(trace_path) + ".manifest.json")


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    config: dict
    dataset_path: str
    dataset_sha256: str
    prompts_revision: str
    seed: int
    started_utc: str = ""
    finished_utc: str = ""
    schema: str = MANIFEST_SCHEMA

    @staticmethod
    def now() -> str:
        return datetime.now(timezone.utc).isoformat(timespec="seconds")

    def to_dict(self) -> dict:
        return asdict(self)


def write_trace(path: str | Path, records: list[dict], manifest: RunManifest) -> None:
    lines = []
    for record in records:
        if record.get("schema") != TRACE_SCHEMA:
            raise TraceError(f"record {record.get('id')!r} has no {TRACE_SCHEMA} schema tag")
        lines.append(json.dumps(record, ensure_ascii=False, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    manifest_path(path).write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_trace(path: str | Path, require_manifest: bool = True) -> tuple[list[dict], dict | None]:
    """Load and validate a trace; returns (records, manifest)."""
    trace_file = Path(path)
    if not trace_file.exists():
        raise TraceError(f"trace not found: {path}")
    manifest = None
    mpath = manifest_path(path)
    if mpath.exists():
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
        if manifest.get("schema") != MANIFEST_SCHEMA:
            raise TraceError(f"unsupported manifest schema {manifest.get('schema')!r}")
    elif require_manifest:
        raise TraceError(f"no manifest next to {path}; refusing to score an unprovenanced trace")
    records = []
    for line_no, line in enumerate(trace_file.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        if record.get("schema") != TRACE_SCHEMA:
            raise TraceError(
                f"{path}:{line_no}: schema {record.get('schema')!r} is not {TRACE_SCHEMA}"
            )
        records.append(record)
    if not records:
        raise TraceError(f"{path} holds no records")
    return records, manifest
