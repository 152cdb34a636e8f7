"""
versioning.py - Version manager: append-only snapshot lineage per resource

Provides:
- next_version(current) - PATCH bump, 0.1.0 for a fresh resource
- LineageStore - immutable snapshots keyed by resource name
- diff_records(a, b) - field-level change set between two records
"""

import logging
from datetime import datetime, timezone
from threading import RLock
from typing import Any, Optional

from app.models.lineage import FieldChange, HistoryEntry, Snapshot, Version
from app.models.resource import RegistrationRecord
from app.services.codec import content_hash
from app.services.errors import NonMonotonicVersion, NotFound, VersionNotFound

logger = logging.getLogger(__name__)

INITIAL_VERSION = "0.1.0"


def next_version(current: Optional[str]) -> str:
    if current is None:
        return INITIAL_VERSION
    return str(Version.parse(current).bump_patch())


def _flatten(value: Any, prefix: str, out: dict[str, Any]) -> None:
    if isinstance(value, dict) and value:
        for key in sorted(value):
            _flatten(value[key], f"{prefix}.{key}" if prefix else str(key), out)
    else:
        out[prefix] = value


def _diff_view(record: RegistrationRecord) -> dict[str, Any]:
    view = record.model_dump(mode="json")
    view.pop("version", None)
    return view


def diff_records(a: RegistrationRecord, b: RegistrationRecord) -> list[FieldChange]:
    """(path, old, new) for every leaf that differs; the version is not content."""
    left: dict[str, Any] = {}
    right: dict[str, Any] = {}
    _flatten(_diff_view(a), "", left)
    _flatten(_diff_view(b), "", right)
    changes = []
    for path in sorted(set(left) | set(right)):
        old, new = left.get(path), right.get(path)
        if old != new:
            changes.append(FieldChange(path=path, old=old, new=new))
    return changes


class LineageStore:
    """Per-kind snapshot store. Appends are serialized; reads copy the list."""

    def __init__(self):
        self._lineages: dict[str, list[Snapshot]] = {}
        self._lock = RLock()

    def __contains__(self, name: str) -> bool:
        return name in self._lineages

    def names(self) -> list[str]:
        with self._lock:
            return list(self._lineages)

    def append(self, name: str, record: RegistrationRecord, created_at: Optional[str] = None) -> Snapshot:
        with self._lock:
            snapshots = self._lineages.setdefault(name, [])
            parent = snapshots[-1].version if snapshots else None
            if parent is not None and not Version.parse(record.version) > Version.parse(parent):
                raise NonMonotonicVersion(
                    f"{name}: version {record.version} is not greater than {parent}",
                    {"name": name, "version": record.version, "last": parent},
                )
            snapshot = Snapshot(
                resource_name=name,
                version=record.version,
                content_hash=content_hash(record),
                record=record,
                parent=parent,
                created_at=created_at or datetime.now(timezone.utc).isoformat(),
            )
            snapshots.append(snapshot)
            logger.debug("lineage %s += %s (%s)", name, snapshot.version, snapshot.content_hash[:12])
            return snapshot

    def restore_snapshots(self, name: str, snapshots: list[Snapshot]) -> None:
        """Install a decoded lineage verbatim (persistence only)."""
        with self._lock:
            self._lineages[name] = list(snapshots)

    def snapshots(self, name: str) -> list[Snapshot]:
        with self._lock:
            if name not in self._lineages:
                raise NotFound(f"no lineage for {name!r}", {"name": name})
            return list(self._lineages[name])

    def history(self, name: str) -> list[HistoryEntry]:
        return [
            HistoryEntry(version=s.version, content_hash=s.content_hash, created_at=s.created_at, parent=s.parent)
            for s in self.snapshots(name)
        ]

    def get_snapshot(self, name: str, version: str) -> Snapshot:
        for snapshot in self.snapshots(name):
            if snapshot.version == version:
                return snapshot
        raise VersionNotFound(f"{name} has no version {version}", {"name": name, "version": version})

    def latest(self, name: str) -> Snapshot:
        return self.snapshots(name)[-1]

    def diff(self, name: str, v_a: str, v_b: str) -> list[FieldChange]:
        a = self.get_snapshot(name, v_a)
        b = self.get_snapshot(name, v_b)
        return diff_records(a.record, b.record)

    def drop(self, name: str) -> None:
        with self._lock:
            self._lineages.pop(name, None)
