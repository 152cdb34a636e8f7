"""
errors.py - Exception hierarchy shared by the registry, engine and control plane

Every error carries a stable numeric code so the RPC layer can map it onto a
JSON-RPC error object without a lookup table of its own.
"""

from typing import Any, Optional


class ProtocolError(Exception):
    """Base class for every domain error raised by the runtime."""

    code = -32000

    def __init__(self, message: str, data: Optional[dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.data = data or {}

    @property
    def kind(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict[str, Any]:
        return {
            "code": self.code,
            "message": self.message,
            "data": {"kind": self.kind, **self.data},
        }


# ── Registry / lineage ───────────────────────────────────────────────

class NotFound(ProtocolError):
    code = -32004


class DuplicateName(ProtocolError):
    code = -32009


class InvalidRecord(ProtocolError):
    code = -32010


class InvalidDelta(ProtocolError):
    code = -32011


class VersionNotFound(ProtocolError):
    code = -32012


class NonMonotonicVersion(ProtocolError):
    code = -32013


class BuildFailure(ProtocolError):
    code = -32020


class ExecutionError(ProtocolError):
    code = -32021


class NotLearnable(ProtocolError):
    code = -32030


class UnknownVariable(ProtocolError):
    code = -32031


class UnsupportedOperation(ProtocolError):
    code = -32032


class RootNotFound(ProtocolError):
    code = -32040


# ── Files / codecs ───────────────────────────────────────────────────

class PathError(ProtocolError):
    code = -32041


class ParseError(ProtocolError):
    code = -32042


class UnsupportedFormatVersion(ProtocolError):
    code = -32043


class TraceClosed(ProtocolError):
    code = -32050


class InvalidSpan(ProtocolError):
    code = -32051


# ── Models / evolution ───────────────────────────────────────────────

class AllProvidersFailed(ProtocolError):
    code = -32060


class UnregisteredResource(ProtocolError):
    code = -32070


class EmptyCandidateSet(ProtocolError):
    code = -32071


class NoAgents(ProtocolError):
    code = -32080


class ConfigError(ProtocolError):
    code = -32090


class BindError(ProtocolError):
    code = -32091


# ── RPC envelope errors (JSON-RPC 2.0 reserved codes) ────────────────

class MethodNotFound(ProtocolError):
    code = -32601


class InvalidParams(ProtocolError):
    code = -32602


class InvalidRequest(ProtocolError):
    code = -32600


def _subclasses(cls: type) -> list[type]:
    found = []
    for sub in cls.__subclasses__():
        found.append(sub)
        found.extend(_subclasses(sub))
    return found


def error_from_dict(error: dict[str, Any]) -> ProtocolError:
    """Rebuild the typed error from a wire error object (client side)."""
    data = dict(error.get("data") or {})
    kind = data.pop("kind", None)
    by_name = {sub.__name__: sub for sub in _subclasses(ProtocolError)}
    cls = by_name.get(kind) or next(
        (sub for sub in by_name.values() if sub.code == error.get("code")), ProtocolError,
    )
    exc = cls(str(error.get("message", "")), data)
    if cls is ProtocolError and "code" in error:
        exc.code = error["code"]
    return exc
