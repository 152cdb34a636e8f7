"""
registry.py - Per-kind resource registries and the global substrate

Provides:
- Registry - context-manager operator set for one entity kind
  (init, register, unregister, get/get_info/list, retrieve, build, update,
  copy, restore, get_variables, set_variables, run, get_state,
  save_contract/load_contract, history, diff, save_to_json/load_from_json)
- ResourceSubstrate - the five registries plus the shared tracer, model
  gateway and retrieval scorer; cross-kind atomic set_variables, fingerprint
  and shadow clone

Mutations are serialized per kind behind an RLock; reads copy under the
same lock so a concurrent reader never observes a half-applied update.
"""

from __future__ import annotations

import hashlib
import json
import logging
from contextlib import ExitStack
from pathlib import Path
from threading import RLock
from typing import Any, Iterable, Optional, Union

from pydantic import ValidationError

from app.models.contract import Contract
from app.models.evolution import EvolvableVariable
from app.models.lineage import FieldChange, HistoryEntry, Snapshot, Version
from app.models.resource import (
    DiscoveryReport,
    EntityKind,
    ExportedRepresentation,
    RegistrationRecord,
)
from app.models.trace import TraceEventKind
from app.services import loader, persistence
from app.services.ai_client import ModelGateway
from app.services.codec import canonical_json, decode_record, record_bytes
from app.services.contracts import contract_section, parse_contract, render_contract
from app.services.errors import (
    DuplicateName,
    ExecutionError,
    InvalidDelta,
    InvalidRecord,
    NotFound,
    NotLearnable,
    PathError,
    ProtocolError,
    RootNotFound,
    UnknownVariable,
    UnsupportedOperation,
)
from app.services.retrieval import LexicalScorer, RetrievalScorer, rank
from app.services.tracer import Tracer
from app.services.versioning import LineageStore, next_version

logger = logging.getLogger(__name__)

Assignments = Union[dict[str, str], Iterable[tuple[str, str]]]

# ── Kind conventions ─────────────────────────────────────────────────

PROMPT_TEXT_FIELD = "entity.mapping.prompt_text"
IMPL_FIELD = "impl_descriptor"
PAYLOAD_FIELD = "entity.mapping.payload"

_DEFAULT_DESCRIPTOR = {
    EntityKind.PROMPT: "builtin:prompt_template",
    EntityKind.AGENT: "builtin:tool_calling_agent",
    EntityKind.MEMORY: "builtin:key_value_memory",
    EntityKind.ENVIRONMENT: "builtin:scripted_environment",
}
_DEFAULT_ENTRYPOINT = {EntityKind.ENVIRONMENT: "Environment"}
_STATEFUL_KINDS = (EntityKind.ENVIRONMENT, EntityKind.MEMORY)
_DELTA_KEYS = {"description", "mapping", "trainable", "metadata", "impl_descriptor", "init_params", "exports"}
_MERGED_KEYS = {"mapping", "metadata", "init_params"}
_AGENT_REFERENCES = (
    ("prompts", EntityKind.PROMPT),
    ("tools", EntityKind.TOOL),
    ("memories", EntityKind.MEMORY),
)


def variable_id(kind: EntityKind, name: str, field_path: str) -> str:
    return f"{kind.value}:{name}:{field_path}"


def parse_variable_id(var_id: str) -> tuple[EntityKind, str, str]:
    parts = var_id.split(":", 2)
    if len(parts) != 3:
        raise UnknownVariable(f"malformed variable id {var_id!r}", {"variable_id": var_id})
    try:
        kind = EntityKind(parts[0])
    except ValueError:
        raise UnknownVariable(f"unknown kind in variable id {var_id!r}", {"variable_id": var_id})
    return kind, parts[1], parts[2]


def evolvable_fields(kind: EntityKind, record: RegistrationRecord) -> dict[str, str]:
    """field path -> current text value for every evolvable field of a record."""
    if kind == EntityKind.PROMPT:
        return {PROMPT_TEXT_FIELD: str(record.entity.mapping.get("prompt_text", ""))}
    if kind in (EntityKind.TOOL, EntityKind.ENVIRONMENT) and loader.is_source_text(record.impl_descriptor):
        return {IMPL_FIELD: record.impl_descriptor}
    if kind == EntityKind.MEMORY:
        return {PAYLOAD_FIELD: canonical_json(record.entity.mapping.get("payload") or {})}
    return {}


def _apply_field(record: RegistrationRecord, field_path: str, value: str) -> RegistrationRecord:
    entity = record.entity
    if field_path == PROMPT_TEXT_FIELD:
        mapping = {**entity.mapping, "prompt_text": value}
        return record.model_copy(update={"entity": entity.model_copy(update={"mapping": mapping})})
    if field_path == IMPL_FIELD:
        return record.model_copy(update={"impl_descriptor": value})
    if field_path == PAYLOAD_FIELD:
        try:
            payload = json.loads(value)
        except json.JSONDecodeError as e:
            raise InvalidDelta(f"memory payload is not JSON: {e.msg}")
        if not isinstance(payload, dict):
            raise InvalidDelta("memory payload must be a JSON object")
        mapping = {**entity.mapping, "payload": payload}
        return record.model_copy(update={"entity": entity.model_copy(update={"mapping": mapping})})
    raise UnknownVariable(f"no evolvable field {field_path!r}", {"field": field_path})


def _revalidate(record: RegistrationRecord, error: type[ProtocolError]) -> RegistrationRecord:
    # model_copy skips validation
    try:
        return RegistrationRecord.model_validate(record.model_dump())
    except ValidationError as e:
        raise error(f"invalid record: {e.errors()[0]['msg']}")


class Registry:
    """Active heads, lineage and materialized instances for one kind."""

    def __init__(self, kind: EntityKind, runtime: Optional["ResourceSubstrate"] = None):
        self.kind = EntityKind(kind)
        self.lineage = LineageStore()
        self._runtime = runtime
        # insertion order doubles as registration order
        self._heads: dict[str, RegistrationRecord] = {}
        self._instances: dict[tuple[str, str], Any] = {}
        self._lock = RLock()

    # ── Internals ────────────────────────────────────────────────────

    @property
    def lock(self) -> RLock:
        return self._lock

    @property
    def runtime(self) -> Optional["ResourceSubstrate"]:
        return self._runtime

    def _emit(self, kind: TraceEventKind, payload: dict[str, Any]) -> None:
        if self._runtime is not None:
            self._runtime.tracer.emit(kind, payload)

    def _head(self, name: str) -> RegistrationRecord:
        with self._lock:
            if name not in self._heads:
                raise NotFound(f"no {self.kind.value} named {name!r}", {"kind": self.kind.value, "name": name})
            return self._heads[name]

    def _commit_head(self, record: RegistrationRecord) -> str:
        with self._lock:
            self.lineage.append(record.name, record)
            self._heads[record.name] = record
            for key in [k for k in self._instances if k[0] == record.name]:
                del self._instances[key]
        logger.debug("%s %s -> %s", self.kind.value, record.name, record.version)
        return record.version

    def heads_in_order(self) -> list[RegistrationRecord]:
        with self._lock:
            return list(self._heads.values())

    def install(self, heads: list[RegistrationRecord], lineages: dict[str, list[Snapshot]]) -> None:
        """Replace the whole registry state (persistence only)."""
        with self._lock:
            self._heads = {r.name: r for r in heads}
            self.lineage = LineageStore()
            for name, snapshots in lineages.items():
                self.lineage.restore_snapshots(name, snapshots)
            self._instances.clear()

    # ── Lifecycle ────────────────────────────────────────────────────

    def init(self, discovery_root: str | Path) -> DiscoveryReport:
        """Register every record file under the root at 0.1.0; bad files are reported, not fatal."""
        root = Path(discovery_root)
        if not root.is_dir():
            raise RootNotFound(f"discovery root {root} does not exist", {"path": str(root)})
        report = DiscoveryReport()
        for path in sorted(root.glob("*.json")):
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
                if isinstance(data, dict):
                    data = {**data, "version": None}
                record = decode_record(data)
                self.register(record)
                report.registered.append(record.name)
            except (OSError, json.JSONDecodeError, ProtocolError) as e:
                logger.warning("skipping %s: %s", path.name, e)
                report.skipped.append({"file": path.name, "error": str(e)})
        logger.info("discovered %d %s record(s) under %s", report.count, self.kind.value, root)
        return report

    def register(self, record: RegistrationRecord) -> str:
        if record.version is not None and not Version.is_valid(record.version):
            raise InvalidRecord(f"bad version string {record.version!r}", {"version": record.version})
        with self._lock:
            if record.name in self._heads:
                raise DuplicateName(
                    f"{self.kind.value} {record.name!r} already registered",
                    {"kind": self.kind.value, "name": record.name},
                )
            # a dropped name may come back; start its lineage over
            self.lineage.drop(record.name)
            version = record.version or next_version(None)
            return self._commit_head(record.model_copy(update={"version": version}))

    def unregister(self, name: str) -> RegistrationRecord:
        with self._lock:
            record = self._head(name)
            del self._heads[name]
            self.lineage.drop(name)
            for key in [k for k in self._instances if k[0] == name]:
                del self._instances[key]
        logger.debug("%s %s unregistered", self.kind.value, name)
        return record

    # ── Inspection ───────────────────────────────────────────────────

    def list(self) -> list[str]:
        with self._lock:
            return sorted(self._heads)

    def __contains__(self, name: str) -> bool:
        with self._lock:
            return name in self._heads

    def get_info(self, name: str) -> RegistrationRecord:
        return self._head(name)

    def get(self, name: str) -> Any:
        """Materialized instance for the current head, built on first use."""
        with self._lock:
            record = self._head(name)
            key = (name, record.version)
            if key not in self._instances:
                self._instances[key] = self._materialize(record)
            return self._instances[key]

    def retrieve(self, query: str, k: int = 5) -> list[tuple[str, float]]:
        scorer: RetrievalScorer = self._runtime.scorer if self._runtime is not None else LexicalScorer()
        return rank(query, self.heads_in_order(), k, scorer)

    def history(self, name: str) -> list[HistoryEntry]:
        return self.lineage.history(name)

    def get_snapshot(self, name: str, version: str) -> Snapshot:
        return self.lineage.get_snapshot(name, version)

    def diff(self, name: str, v_a: str, v_b: str) -> list[FieldChange]:
        return self.lineage.diff(name, v_a, v_b)

    # ── Build / run ──────────────────────────────────────────────────

    def _materialize(self, record: RegistrationRecord) -> Any:
        descriptor = record.impl_descriptor or _DEFAULT_DESCRIPTOR.get(self.kind, "")
        return self.build(descriptor, record.init_params, record.entity.mapping)

    def build(self, impl_descriptor: str, params: Optional[dict[str, Any]] = None,
              mapping: Optional[dict[str, Any]] = None) -> Any:
        """Fresh independent handle; registries are not touched."""
        handle = loader.build(
            impl_descriptor, params, mapping,
            default_entrypoint=_DEFAULT_ENTRYPOINT.get(self.kind, "run"),
        )
        if self._runtime is not None and hasattr(handle, "bind"):
            handle.bind(self._runtime)
        return handle

    def run(self, name: str, payload: Optional[dict[str, Any]] = None) -> Any:
        payload = dict(payload or {})
        handle = self.get(name)
        version = self._head(name).version
        event = {"kind": self.kind.value, "name": name, "version": version, "input": payload}
        try:
            output = handle.run(payload)
        except ProtocolError as e:
            self._emit(TraceEventKind.ERROR, {**event, "error": e.to_dict()})
            raise
        except Exception as e:
            self._emit(TraceEventKind.ERROR, {**event, "error": f"{type(e).__name__}: {e}"})
            raise ExecutionError(
                f"{self.kind.value} {name!r} raised {type(e).__name__}: {e}",
                {"kind": self.kind.value, "name": name, "error": str(e)},
            )
        self._emit(TraceEventKind.TOOL_CALL, {**event, "output": output})
        return output

    def get_state(self, name: str) -> Any:
        if self.kind not in _STATEFUL_KINDS:
            raise UnsupportedOperation(f"{self.kind.value} resources expose no state", {"kind": self.kind.value})
        return self.get(name).get_state()

    # ── Versioned mutation ───────────────────────────────────────────

    def _apply_delta(self, record: RegistrationRecord, delta: Union[str, dict[str, Any]]) -> RegistrationRecord:
        if isinstance(delta, str):
            fields = evolvable_fields(self.kind, record)
            if self.kind == EntityKind.PROMPT:
                return _apply_field(record, PROMPT_TEXT_FIELD, delta)
            if self.kind == EntityKind.MEMORY:
                return _apply_field(record, PAYLOAD_FIELD, delta)
            if self.kind in (EntityKind.TOOL, EntityKind.ENVIRONMENT) and (fields or loader.is_source_text(delta)):
                return _apply_field(record, IMPL_FIELD, delta)
            raise InvalidDelta(f"{self.kind.value} {record.name!r} has no text field to replace")
        if not isinstance(delta, dict):
            raise InvalidDelta("delta must be text or a mapping of record keys")
        forbidden = set(delta) - _DELTA_KEYS
        if forbidden:
            raise InvalidDelta(f"delta may not touch {sorted(forbidden)}", {"keys": sorted(forbidden)})

        entity_update: dict[str, Any] = {}
        record_update: dict[str, Any] = {}
        for key, value in delta.items():
            if key in _MERGED_KEYS:
                if not isinstance(value, dict):
                    raise InvalidDelta(f"{key} delta must be a mapping")
                current = record.init_params if key == "init_params" else getattr(record.entity, key)
                value = {**current, **value}
            if key == "exports":
                value = tuple(
                    e if isinstance(e, ExportedRepresentation) else ExportedRepresentation.model_validate(e)
                    for e in value
                )
            if key in ("description", "mapping", "trainable", "metadata"):
                entity_update[key] = value
            else:
                record_update[key] = value
        if entity_update:
            record_update["entity"] = record.entity.model_copy(update=entity_update)
        return _revalidate(record.model_copy(update=record_update), InvalidDelta)

    def update(self, name: str, new_impl: Union[str, dict[str, Any]]) -> str:
        with self._lock:
            head = self._head(name)
            try:
                candidate = self._apply_delta(head, new_impl)
            except ValidationError as e:
                raise InvalidDelta(f"invalid delta: {e.errors()[0]['msg']}")
            return self._commit_head(candidate.model_copy(update={"version": next_version(head.version)}))

    def hot_swap(self, record: RegistrationRecord) -> str:
        """Install a whole new record for an existing name as the next version."""
        record = _revalidate(record, InvalidRecord)
        with self._lock:
            head = self._head(record.name)
            return self._commit_head(record.model_copy(update={"version": next_version(head.version)}))

    def copy(self, name: str, new_name: str) -> str:
        with self._lock:
            source = self._head(name)
            entity = source.entity.model_copy(update={"name": new_name})
            clone = _revalidate(source.model_copy(update={"entity": entity, "version": None}), InvalidRecord)
            return self.register(clone)

    def restore(self, name: str, version: str) -> str:
        """Append a new head whose content equals the historical snapshot."""
        with self._lock:
            head = self._head(name)
            snapshot = self.lineage.get_snapshot(name, version)
            restored = snapshot.record.model_copy(update={"version": next_version(head.version)})
            return self._commit_head(restored)

    # ── Evolvable variables ──────────────────────────────────────────

    def get_variables(self, name: str) -> list[EvolvableVariable]:
        record = self._head(name)
        if self.kind == EntityKind.AGENT:
            if self._runtime is None:
                return []
            variables: list[EvolvableVariable] = []
            for key, kind in _AGENT_REFERENCES:
                for ref in record.entity.mapping.get(key) or []:
                    variables.extend(self._runtime.registry(kind).get_variables(ref))
            return variables
        role = str(record.entity.metadata.get("role") or record.entity.description or f"{self.kind.value} {name}")
        return [
            EvolvableVariable(
                variable_id=variable_id(self.kind, name, path),
                origin=f"{self.kind.value}:{name}",
                field_path=path,
                value=value,
                learnable=record.entity.trainable,
                role_description=role,
            )
            for path, value in evolvable_fields(self.kind, record).items()
        ]

    def plan_assignments(self, assignments: Iterable[tuple[str, str]]) -> dict[str, RegistrationRecord]:
        """Validate a batch and return the staged records without mutating anything."""
        staged: dict[str, RegistrationRecord] = {}
        for var_id, value in assignments:
            kind, name, path = parse_variable_id(var_id)
            if kind != self.kind:
                raise UnknownVariable(f"{var_id!r} does not belong to {self.kind.value}", {"variable_id": var_id})
            record = staged.get(name) or self._head(name)
            if path not in evolvable_fields(self.kind, record):
                raise UnknownVariable(f"{var_id!r} is not an evolvable field", {"variable_id": var_id})
            if not record.entity.trainable:
                raise NotLearnable(f"{var_id!r} is not learnable", {"variable_id": var_id})
            staged[name] = _apply_field(record, path, value)
        return staged

    def apply_planned(self, staged: dict[str, RegistrationRecord]) -> list[str]:
        versions = []
        with self._lock:
            for name, record in staged.items():
                head = self._head(name)
                versions.append(self._commit_head(record.model_copy(update={"version": next_version(head.version)})))
        return versions

    def set_variables(self, assignments: Assignments) -> list[str]:
        items = list(assignments.items()) if isinstance(assignments, dict) else list(assignments)
        with self._lock:
            return self.apply_planned(self.plan_assignments(items))

    # ── Contracts ────────────────────────────────────────────────────

    def contract(self, name: Optional[str] = None) -> Contract:
        records = [self._head(name)] if name else self.heads_in_order()
        return Contract(kind=self.kind, sections=[contract_section(r) for r in records])

    def save_contract(self, name_or_kind: Union[str, EntityKind], path: str | Path) -> str:
        target = None if name_or_kind in (self.kind, self.kind.value) else str(name_or_kind)
        text = render_contract(self.contract(target))
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")
        except OSError as e:
            raise PathError(f"cannot write contract {path}: {e}", {"path": str(path)})
        return text

    def load_contract(self, path: str | Path) -> Contract:
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as e:
            raise PathError(f"cannot read contract {path}: {e}", {"path": str(path)})
        return parse_contract(text)

    # ── Persistence ──────────────────────────────────────────────────

    def save_to_json(self, path: str | Path) -> int:
        return persistence.save_registry(self, path)

    def load_from_json(self, path: str | Path) -> int:
        return persistence.load_registry_into(self, path)

    def __repr__(self) -> str:
        return f"Registry({self.kind.value}, heads={len(self._heads)})"


class ResourceSubstrate:
    """The five per-kind registries plus the shared infrastructure services."""

    def __init__(
        self,
        gateway: Optional[ModelGateway] = None,
        tracer: Optional[Tracer] = None,
        scorer: Optional[RetrievalScorer] = None,
    ):
        self.tracer = tracer or (gateway.tracer if gateway is not None else Tracer())
        self.gateway = gateway or ModelGateway(tracer=self.tracer)
        self.scorer = scorer or LexicalScorer()
        self._registries = {kind: Registry(kind, runtime=self) for kind in EntityKind}

    def registry(self, kind: Union[EntityKind, str]) -> Registry:
        return self._registries[EntityKind(kind)]

    @property
    def prompts(self) -> Registry:
        return self._registries[EntityKind.PROMPT]

    @property
    def agents(self) -> Registry:
        return self._registries[EntityKind.AGENT]

    @property
    def tools(self) -> Registry:
        return self._registries[EntityKind.TOOL]

    @property
    def environments(self) -> Registry:
        return self._registries[EntityKind.ENVIRONMENT]

    @property
    def memories(self) -> Registry:
        return self._registries[EntityKind.MEMORY]

    def registries(self) -> list[Registry]:
        return list(self._registries.values())

    def discover(self, root: str | Path) -> dict[str, DiscoveryReport]:
        """Scan <root>/<kind>/ for every kind directory that exists."""
        root = Path(root)
        if not root.is_dir():
            raise RootNotFound(f"discovery root {root} does not exist", {"path": str(root)})
        return {
            kind.value: self.registry(kind).init(root / kind.value)
            for kind in EntityKind
            if (root / kind.value).is_dir()
        }

    def set_variables(self, assignments: Assignments) -> list[str]:
        """All-or-nothing across kinds: every batch is validated before any head moves."""
        items = list(assignments.items()) if isinstance(assignments, dict) else list(assignments)
        by_kind: dict[EntityKind, list[tuple[str, str]]] = {}
        for var_id, value in items:
            kind, _, _ = parse_variable_id(var_id)
            by_kind.setdefault(kind, []).append((var_id, value))
        kinds = sorted(by_kind, key=lambda k: k.value)
        with ExitStack() as stack:
            for kind in kinds:
                stack.enter_context(self.registry(kind).lock)
            staged = {kind: self.registry(kind).plan_assignments(by_kind[kind]) for kind in kinds}
            versions: list[str] = []
            for kind in kinds:
                versions.extend(self.registry(kind).apply_planned(staged[kind]))
        return versions

    def head_hashes(self) -> dict[str, str]:
        return {
            f"{reg.kind.value}:{record.name}": hashlib.sha256(record_bytes(record)).hexdigest()
            for reg in self.registries()
            for record in reg.heads_in_order()
        }

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.head_hashes()).encode("utf-8")).hexdigest()

    def clone(self) -> "ResourceSubstrate":
        """Shadow copy through the persistence codec; services are shared."""
        shadow = ResourceSubstrate(gateway=self.gateway, tracer=self.tracer, scorer=self.scorer)
        for reg in self.registries():
            with reg.lock:
                data = persistence.encode_registry(reg)
            persistence.decode_into(shadow.registry(reg.kind), data)
        return shadow

    def save(self, home: str | Path) -> None:
        home = Path(home)
        for reg in self.registries():
            reg.save_to_json(home / f"{reg.kind.value}.json")

    def load(self, home: str | Path) -> None:
        home = Path(home)
        for reg in self.registries():
            path = home / f"{reg.kind.value}.json"
            if path.exists():
                reg.load_from_json(path)

