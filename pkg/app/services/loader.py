"""
loader.py - Materializes implementation descriptors into runnable handles

Provides:
- build(impl_descriptor, params, mapping, default_entrypoint) -> handle
- is_source_text(impl_descriptor) - True when the descriptor is inline Python

A descriptor is one of:
- builtin:<name>       a class from app.services.builtin_resources
- package.module:attr  an importable attribute
- anything else        Python source text, executed in a fresh module
"""

import importlib
import inspect
import logging
import re
import types
import uuid
from typing import Any, Optional

from app.services.errors import BuildFailure, UnsupportedOperation

logger = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"
_IMPORT_PATH_RE = re.compile(r"^[A-Za-z_][\w.]*:[A-Za-z_]\w*$")


def is_builtin(impl_descriptor: str) -> bool:
    return impl_descriptor.startswith(BUILTIN_PREFIX)


def is_import_path(impl_descriptor: str) -> bool:
    return bool(_IMPORT_PATH_RE.match(impl_descriptor.strip())) and "\n" not in impl_descriptor


def is_source_text(impl_descriptor: str) -> bool:
    return bool(impl_descriptor.strip()) and not is_builtin(impl_descriptor) and not is_import_path(impl_descriptor)


# ── Handles ──────────────────────────────────────────────────────────

class FunctionHandle:
    """Wraps a plain function; init params act as keyword defaults."""

    def __init__(self, fn, params: dict[str, Any]):
        self._fn = fn
        self._params = dict(params)

    def run(self, payload: dict[str, Any]) -> Any:
        return self._fn(**{**self._params, **payload})

    def get_state(self) -> dict[str, Any]:
        raise UnsupportedOperation("function resources carry no state")


class ObjectHandle:
    """Wraps a user class instance: run() if defined, else step(action)."""

    def __init__(self, obj: Any):
        self._obj = obj

    def bind(self, runtime: Any) -> None:
        if hasattr(self._obj, "bind"):
            self._obj.bind(runtime)

    def run(self, payload: dict[str, Any]) -> Any:
        if hasattr(self._obj, "run"):
            return self._obj.run(payload)
        if hasattr(self._obj, "step"):
            return self._obj.step(payload.get("action", payload))
        raise UnsupportedOperation(f"{type(self._obj).__name__} defines neither run nor step")

    def get_state(self) -> Any:
        if not hasattr(self._obj, "get_state"):
            raise UnsupportedOperation(f"{type(self._obj).__name__} exposes no state")
        return self._obj.get_state()


# ── Build ────────────────────────────────────────────────────────────

def _load_source(source: str) -> types.ModuleType:
    module = types.ModuleType(f"agp_resource_{uuid.uuid4().hex[:8]}")
    try:
        code = compile(source, module.__name__, "exec")
    except SyntaxError as e:
        raise BuildFailure(f"syntax error at line {e.lineno}: {e.msg}", {"line": e.lineno})
    try:
        exec(code, module.__dict__)
    except Exception as e:
        raise BuildFailure(f"module body raised {type(e).__name__}: {e}")
    return module


def _resolve_target(impl_descriptor: str, entrypoint: str) -> Any:
    if is_builtin(impl_descriptor):
        from app.services.builtin_resources import BUILTINS

        name = impl_descriptor[len(BUILTIN_PREFIX):]
        if name not in BUILTINS:
            raise BuildFailure(f"unknown builtin {name!r}", {"builtin": name})
        return BUILTINS[name]
    if is_import_path(impl_descriptor):
        module_path, attr = impl_descriptor.strip().split(":")
        try:
            module = importlib.import_module(module_path)
        except ImportError as e:
            raise BuildFailure(f"cannot import {module_path}: {e}")
        if not hasattr(module, attr):
            raise BuildFailure(f"{module_path} has no attribute {attr!r}")
        return getattr(module, attr)
    module = _load_source(impl_descriptor)
    if not hasattr(module, entrypoint):
        raise BuildFailure(f"source defines no {entrypoint!r}", {"entrypoint": entrypoint})
    return getattr(module, entrypoint)


def build(
    impl_descriptor: str,
    params: Optional[dict[str, Any]] = None,
    mapping: Optional[dict[str, Any]] = None,
    default_entrypoint: str = "run",
) -> Any:
    """Return a fresh handle. Never touches any registry."""
    params = dict(params or {})
    mapping = dict(mapping or {})
    if not impl_descriptor.strip():
        raise BuildFailure("empty implementation descriptor")
    entrypoint = mapping.get("entrypoint", default_entrypoint)
    target = _resolve_target(impl_descriptor, entrypoint)

    try:
        if is_builtin(impl_descriptor):
            return target(mapping=mapping, **params)
        if inspect.isclass(target):
            return ObjectHandle(target(**params))
        if callable(target):
            return FunctionHandle(target, params)
    except TypeError as e:
        raise BuildFailure(f"cannot instantiate {impl_descriptor[:40]!r}: {e}")
    raise BuildFailure(f"{entrypoint!r} is not callable")
