"""
persistence.py - Dynamic manager: registry documents and hot-swap

Document schema (format_version 1):
    {"format_version": 1, "kind": "<kind>",
     "heads": [<record>, ...],                       # registration order
     "lineages": {"<name>": [{"version", "content_hash", "parent",
                              "created_at", "record"}, ...]}}
"""

import json
import logging
import os
from pathlib import Path
from typing import TYPE_CHECKING, Any

from app.models.lineage import Snapshot
from app.models.resource import EntityKind, RegistrationRecord
from app.services.codec import canonical_json, content_hash, decode_record, encode_record
from app.services.errors import (
    InvalidRecord,
    ParseError,
    PathError,
    UnsupportedFormatVersion,
)

if TYPE_CHECKING:
    from app.services.registry import Registry

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def encode_registry(registry: "Registry") -> bytes:
    with registry.lock:
        heads = registry.heads_in_order()
        lineages = {
            name: [
                {
                    "version": s.version,
                    "content_hash": s.content_hash,
                    "parent": s.parent,
                    "created_at": s.created_at,
                    "record": encode_record(s.record),
                }
                for s in registry.lineage.snapshots(name)
            ]
            for name in registry.lineage.names()
        }
    document = {
        "format_version": FORMAT_VERSION,
        "kind": registry.kind.value,
        "heads": [encode_record(r) for r in heads],
        "lineages": lineages,
    }
    return canonical_json(document).encode("utf-8")


def _decode_snapshot(name: str, raw: Any) -> Snapshot:
    if not isinstance(raw, dict) or "record" not in raw:
        raise ParseError(f"lineage entry for {name!r} is malformed", {"name": name})
    record = decode_record(raw["record"])
    digest = content_hash(record)
    if raw.get("content_hash") != digest:
        raise ParseError(f"content hash mismatch in {name!r} v{raw.get('version')}", {"name": name})
    return Snapshot(
        resource_name=name,
        version=raw.get("version") or record.version,
        content_hash=digest,
        record=record,
        parent=raw.get("parent"),
        created_at=str(raw.get("created_at", "")),
    )


def decode_document(data: bytes | str) -> tuple[EntityKind, list[RegistrationRecord], dict[str, list[Snapshot]]]:
    try:
        document = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ParseError(f"registry document is not valid JSON: {e}")
    if not isinstance(document, dict):
        raise ParseError("registry document must be a JSON object")
    if document.get("format_version") != FORMAT_VERSION:
        raise UnsupportedFormatVersion(
            f"unsupported format_version {document.get('format_version')!r}",
            {"format_version": document.get("format_version")},
        )
    try:
        kind = EntityKind(document.get("kind"))
        heads = [decode_record(r) for r in document.get("heads") or []]
        lineages = {
            name: [_decode_snapshot(name, s) for s in snapshots]
            for name, snapshots in (document.get("lineages") or {}).items()
        }
    except ValueError as e:
        raise ParseError(f"registry document is malformed: {e}")
    except InvalidRecord as e:
        raise ParseError(f"registry document holds an invalid record: {e.message}")
    for head in heads:
        snapshots = lineages.get(head.name) or []
        if not any(s.version == head.version and s.content_hash == content_hash(head) for s in snapshots):
            raise ParseError(f"head {head.name!r} v{head.version} has no matching snapshot", {"name": head.name})
    return kind, heads, lineages


def decode_into(registry: "Registry", data: bytes | str) -> None:
    kind, heads, lineages = decode_document(data)
    if kind != registry.kind:
        raise ParseError(f"document holds {kind.value} records, not {registry.kind.value}")
    registry.install(heads, lineages)


def decode_registry(data: bytes | str) -> "Registry":
    from app.services.registry import Registry

    kind, heads, lineages = decode_document(data)
    registry = Registry(kind)
    registry.install(heads, lineages)
    return registry


def hot_swap(registry: "Registry", record: RegistrationRecord) -> str:
    """update() over a live registry; readers see the old or the new head."""
    return registry.hot_swap(record)


# ── Files ────────────────────────────────────────────────────────────

def save_registry(registry: "Registry", path: str | Path) -> int:
    path = Path(path)
    data = encode_registry(registry)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        tmp.unlink(missing_ok=True)
        raise PathError(f"cannot write {path}: {e}", {"path": str(path)})
    logger.debug("saved %s registry to %s", registry.kind.value, path)
    return len(registry.list())


def load_registry_into(registry: "Registry", path: str | Path) -> int:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise PathError(f"cannot read {path}: {e}", {"path": str(path)})
    decode_into(registry, data)
    return len(registry.list())
