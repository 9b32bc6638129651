"""
Deterministic CSV/JSON emission and run manifests.

Every data file carries the manifest hash: CSV files as a leading comment line,
JSON documents as a top-level "manifest_hash" key. Floats are written with
repr() so values round-trip exactly.
"""

import csv
import hashlib
import json
import logging
import os
from datetime import datetime, timezone
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
from core_model import config_hash
from models import PhysicalConfig, RunManifest
from pydantic import BaseModel

logger = logging.getLogger(__name__)

TOOL_VERSION = "0.1.0"


def format_value(value: Any) -> str:
    """Full-precision text for one CSV cell"""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if value is None:
        return ""
    return str(value)


def to_jsonable(document: Any) -> Any:
    if isinstance(document, BaseModel):
        return document.model_dump(mode="json")
    if isinstance(document, np.ndarray):
        return document.tolist()
    if isinstance(document, dict):
        return {str(k): to_jsonable(v) for k, v in document.items()}
    if isinstance(document, (list, tuple)):
        return [to_jsonable(v) for v in document]
    if isinstance(document, np.generic):
        return document.item()
    return document


def render_json(document: Any, manifest_hash: Optional[str] = None) -> str:
    data = to_jsonable(document)
    if manifest_hash is not None:
        if not isinstance(data, dict):
            data = {"data": data}
        data = {**data, "manifest_hash": manifest_hash}
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_json(path: str, document: Any, manifest_hash: Optional[str] = None) -> str:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(render_json(document, manifest_hash))
    logger.info("Wrote %s", path)
    return path


def write_csv(
    path: str,
    header: Sequence[str],
    rows: Sequence[Sequence[Any]],
    manifest_hash: Optional[str] = None,
) -> str:
    """
    Write a header row and data rows, RFC-4180 quoting, LF line endings.

    Raises:
        ValueError: A row length does not match the header
    """
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as f:
        if manifest_hash is not None:
            f.write(f"# manifest_hash={manifest_hash}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"Row has {len(row)} values, header has {len(header)}")
            writer.writerow([format_value(v) for v in row])
    logger.info("Wrote %s (%d rows)", path, len(rows))
    return path


def read_csv(path: str) -> Dict[str, Any]:
    """Read a file written by write_csv back into header, rows and hash"""
    with open(path, encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()
    manifest_hash = None
    if lines and lines[0].startswith("# manifest_hash="):
        manifest_hash = lines.pop(0).split("=", 1)[1]
    reader = list(csv.reader(lines))
    return {"header": reader[0], "rows": reader[1:], "manifest_hash": manifest_hash}


def _manifest_digest(manifest: RunManifest) -> str:
    payload = manifest.model_dump(mode="json", exclude={"wall_clock", "manifest_hash"})
    text = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def build_manifest(
    config: PhysicalConfig,
    subcommand: str,
    overrides: Optional[Mapping[str, Any]] = None,
    outputs: Optional[List[str]] = None,
    wall_clock: Optional[str] = None,
) -> RunManifest:
    """
    Assemble the manifest of one run.

    The hash covers everything except the wall clock, so identical runs
    share it and reproduce byte-identical data files.
    """
    manifest = RunManifest(
        config_hash=config_hash(config),
        subcommand=subcommand,
        overrides=dict(overrides or {}),
        outputs=list(outputs or []),
        tool_version=TOOL_VERSION,
        wall_clock=wall_clock or datetime.now(timezone.utc).isoformat(),
    )
    return manifest.model_copy(update={"manifest_hash": _manifest_digest(manifest)})


def manifest_path(path: str) -> str:
    stem, _ = os.path.splitext(path)
    return f"{stem}.manifest.json"


def sidecar_path(path: str, key: str) -> str:
    stem, _ = os.path.splitext(path)
    return f"{stem}.{key}.json"
