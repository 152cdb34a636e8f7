"""
tracer.py - Execution traces (the trace space consumed by reflection)

Provides:
- Trace - append-only event log with sequence numbering and span parents
- Tracer - hands out one current trace per execution context
- export_trace(trace, path) / load_trace(path) - JSONL persistence
"""

import json
import logging
import time
import uuid
from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from threading import Lock
from typing import Any, Iterator, Optional

from pydantic import ValidationError

from app.models.trace import TraceEvent, TraceEventKind, TraceOutcome
from app.services.errors import InvalidSpan, ParseError, PathError, TraceClosed

logger = logging.getLogger(__name__)


def _json_safe(payload: dict[str, Any]) -> dict[str, Any]:
    return json.loads(json.dumps(payload, default=str))


class Trace:
    """Ordered event log. Sequence numbering is the serialization point for
    events arriving from several threads."""

    def __init__(self, trace_id: Optional[str] = None):
        self.trace_id = trace_id or uuid.uuid4().hex
        self.events: list[TraceEvent] = []
        self.outcome = TraceOutcome()
        self.closed = False
        self._spans: set[str] = set()
        self._lock = Lock()

    def record(
        self,
        kind: TraceEventKind | str,
        payload: Optional[dict[str, Any]] = None,
        *,
        span: Optional[str] = None,
        parent: Optional[str] = None,
    ) -> TraceEvent:
        with self._lock:
            if self.closed:
                raise TraceClosed(f"trace {self.trace_id} is closed")
            if parent is not None and parent not in self._spans:
                raise InvalidSpan(f"unknown parent span {parent!r}", {"parent": parent})
            event = TraceEvent(
                seq=len(self.events),
                span=span or uuid.uuid4().hex[:16],
                parent=parent,
                kind=TraceEventKind(kind),
                payload=_json_safe(payload or {}),
                ts=time.time(),
            )
            self.events.append(event)
            self._spans.add(event.span)
            return event

    def close(self, final_answer: str = "", success: bool = False) -> None:
        with self._lock:
            if not self.closed:
                self.outcome = TraceOutcome(final_answer=final_answer, success=success)
                self.closed = True

    def of_kind(self, kind: TraceEventKind) -> list[TraceEvent]:
        return [e for e in self.events if e.kind == kind]

    def has_errors(self) -> bool:
        return any(e.kind == TraceEventKind.ERROR for e in self.events)

    def render(self, limit: int = 40) -> str:
        """Compact text view used inside reflection prompts."""
        lines = []
        for event in self.events[-limit:]:
            lines.append(f"[{event.seq}] {event.kind.value}: {json.dumps(event.payload, sort_keys=True)}")
        lines.append(f"outcome: answer={self.outcome.final_answer!r} success={self.outcome.success}")
        return "\n".join(lines)

    def to_records(self) -> list[dict[str, Any]]:
        header = {"trace_id": self.trace_id, "outcome": self.outcome.model_dump()}
        events = [
            {"seq": e.seq, "span": e.span, "parent": e.parent, "kind": e.kind.value, "payload": e.payload, "ts": e.ts}
            for e in self.events
        ]
        return [header, *events]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return self.to_records() == other.to_records() and self.closed == other.closed

    def __repr__(self) -> str:
        return f"Trace({self.trace_id!r}, events={len(self.events)}, closed={self.closed})"


_current_trace: ContextVar[Optional[Trace]] = ContextVar("current_trace", default=None)


class Tracer:
    """Routes emitted events to the trace opened in the current context.

    Threads start with an empty context, so each worker thread that opens a
    session records into its own trace.
    """

    def current(self) -> Optional[Trace]:
        return _current_trace.get()

    @contextmanager
    def session(self, trace_id: Optional[str] = None) -> Iterator[Trace]:
        trace = Trace(trace_id)
        token = _current_trace.set(trace)
        try:
            yield trace
        finally:
            _current_trace.reset(token)
            trace.close(trace.outcome.final_answer, trace.outcome.success)

    @contextmanager
    def attach(self, trace: Trace) -> Iterator[Trace]:
        token = _current_trace.set(trace)
        try:
            yield trace
        finally:
            _current_trace.reset(token)

    def emit(
        self,
        kind: TraceEventKind | str,
        payload: Optional[dict[str, Any]] = None,
        *,
        span: Optional[str] = None,
        parent: Optional[str] = None,
    ) -> Optional[TraceEvent]:
        trace = _current_trace.get()
        if trace is None or trace.closed:
            return None
        return trace.record(kind, payload, span=span, parent=parent)


# ── JSONL export / load ──────────────────────────────────────────────

def export_trace(trace: Trace, path: str | Path) -> int:
    """Write header + one line per event. Returns the number of lines."""
    if not trace.closed:
        raise ParseError(f"trace {trace.trace_id} must be closed before export")
    path = Path(path)
    records = trace.to_records()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    except OSError as e:
        raise PathError(f"cannot write trace to {path}: {e}", {"path": str(path)})
    return len(records)


def load_trace(path: str | Path) -> Trace:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise PathError(f"cannot read trace {path}: {e}", {"path": str(path)})
    if not lines:
        raise ParseError(f"{path}: empty trace file", {"line": 1})

    def _parse(lineno: int, text: str) -> dict[str, Any]:
        try:
            value = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}:{lineno}: invalid JSON ({e.msg})", {"line": lineno})
        if not isinstance(value, dict):
            raise ParseError(f"{path}:{lineno}: expected an object", {"line": lineno})
        return value

    header = _parse(1, lines[0])
    if "trace_id" not in header:
        raise ParseError(f"{path}:1: missing trace_id header", {"line": 1})
    trace = Trace(header["trace_id"])
    for lineno, text in enumerate(lines[1:], start=2):
        raw = _parse(lineno, text)
        try:
            event = TraceEvent.model_validate(raw)
        except ValidationError as e:
            raise ParseError(f"{path}:{lineno}: malformed event ({e.errors()[0]['msg']})", {"line": lineno})
        if event.seq != len(trace.events):
            raise ParseError(f"{path}:{lineno}: sequence gap at {event.seq}", {"line": lineno})
        trace.events.append(event)
        trace._spans.add(event.span)
    try:
        outcome = TraceOutcome.model_validate(header.get("outcome") or {})
    except ValidationError:
        raise ParseError(f"{path}:1: malformed outcome", {"line": 1})
    trace.close(outcome.final_answer, outcome.success)
    return trace
