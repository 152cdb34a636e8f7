"""
rpc.py - JSON-RPC control plane over the resource registries

Provides:
- catalogue() -> list[CatalogueEntry]  (kind x operator, applicability declared)
- dispatch(substrate, request) -> RpcResponse
- to_wire(value) - the canonical result encoding shared with direct callers
- RpcClient(base_url) - httpx client with typed errors

Methods are "<kind>.<operator>", e.g. "tool.list" or "prompt.update".
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Callable, Optional

import httpx
from pydantic import BaseModel, ValidationError

from app.config import settings
from app.models.resource import EntityKind, RegistrationRecord
from app.models.rpc import (
    CatalogueEntry,
    CopyParams,
    DiffParams,
    InitParams,
    NameParams,
    NoParams,
    PathParams,
    RecordParams,
    RestoreParams,
    RetrieveParams,
    RpcError,
    RpcRequest,
    RpcResponse,
    RunParams,
    SaveContractParams,
    SetVariablesParams,
    UpdateParams,
)
from app.services.codec import decode_record, encode_record
from app.services.errors import (
    InvalidParams,
    InvalidRequest,
    MethodNotFound,
    ProtocolError,
    error_from_dict,
)
from app.services.registry import Registry, ResourceSubstrate

logger = logging.getLogger(__name__)

RPC_PARSE_ERROR = -32700
RPC_INTERNAL_ERROR = -32603


def to_wire(value: Any) -> Any:
    """JSON-safe form of a manager result; records use the on-disk schema."""
    if isinstance(value, RegistrationRecord):
        return encode_record(value)
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if isinstance(value, dict):
        return {str(k): to_wire(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_wire(v) for v in value]
    if value is None or isinstance(value, (str, int, float, bool)):
        return value
    return json.loads(json.dumps(value, default=str))


# ── Operators ────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Operator:
    params: type[BaseModel]
    call: Callable[[Registry, Any], Any]
    kinds: Optional[tuple[EntityKind, ...]] = None
    note: str = ""

    def applies_to(self, kind: EntityKind) -> bool:
        return self.kinds is None or kind in self.kinds


_STATEFUL = (EntityKind.ENVIRONMENT, EntityKind.MEMORY)
_IN_PROCESS_ONLY = "returns an in-process handle; not available over the wire"

OPERATORS: dict[str, Operator] = {
    "init": Operator(InitParams, lambda r, p: r.init(p.root)),
    "list": Operator(NoParams, lambda r, p: r.list()),
    "get_info": Operator(NameParams, lambda r, p: r.get_info(p.name)),
    "register": Operator(RecordParams, lambda r, p: r.register(decode_record(p.record))),
    "unregister": Operator(NameParams, lambda r, p: r.unregister(p.name)),
    "retrieve": Operator(RetrieveParams, lambda r, p: r.retrieve(p.query, p.k)),
    "update": Operator(UpdateParams, lambda r, p: r.update(p.name, p.delta)),
    "hot_swap": Operator(RecordParams, lambda r, p: r.hot_swap(decode_record(p.record))),
    "copy": Operator(CopyParams, lambda r, p: r.copy(p.name, p.new_name)),
    "restore": Operator(RestoreParams, lambda r, p: r.restore(p.name, p.version)),
    "history": Operator(NameParams, lambda r, p: r.history(p.name)),
    "diff": Operator(DiffParams, lambda r, p: r.diff(p.name, p.v_a, p.v_b)),
    "get_variables": Operator(NameParams, lambda r, p: r.get_variables(p.name)),
    "set_variables": Operator(SetVariablesParams, lambda r, p: r.set_variables(p.assignments)),
    "run": Operator(RunParams, lambda r, p: r.run(p.name, p.payload)),
    "get_state": Operator(NameParams, lambda r, p: r.get_state(p.name), kinds=_STATEFUL),
    "save_contract": Operator(
        SaveContractParams, lambda r, p: r.save_contract(p.name or r.kind, p.path),
    ),
    "load_contract": Operator(PathParams, lambda r, p: r.load_contract(p.path)),
    "save_to_json": Operator(PathParams, lambda r, p: r.save_to_json(p.path)),
    "load_from_json": Operator(PathParams, lambda r, p: r.load_from_json(p.path)),
    "build": Operator(NoParams, lambda r, p: None, kinds=(), note=_IN_PROCESS_ONLY),
    "get": Operator(NoParams, lambda r, p: None, kinds=(), note=_IN_PROCESS_ONLY),
}


def _param_types(model: type[BaseModel]) -> dict[str, str]:
    types = {}
    for name, field in model.model_fields.items():
        annotation = getattr(field.annotation, "__name__", None) or str(field.annotation).replace("typing.", "")
        types[name] = annotation if field.is_required() else f"{annotation} (optional)"
    return types


def catalogue() -> list[CatalogueEntry]:
    return [
        CatalogueEntry(
            method=f"{kind.value}.{name}",
            kind=kind.value,
            operator=name,
            applicable=op.applies_to(kind),
            params=_param_types(op.params) if op.applies_to(kind) else {},
            note=op.note if not op.applies_to(kind) else "",
        )
        for kind in EntityKind
        for name, op in OPERATORS.items()
    ]


def resolve(method: str) -> tuple[EntityKind, Operator]:
    kind_name, _, op_name = method.partition(".")
    try:
        kind = EntityKind(kind_name)
    except ValueError:
        raise MethodNotFound(f"unknown method {method!r}", {"method": method})
    op = OPERATORS.get(op_name)
    if op is None:
        raise MethodNotFound(f"unknown method {method!r}", {"method": method})
    if not op.applies_to(kind):
        raise MethodNotFound(
            f"{op_name} is not applicable to {kind.value}",
            {"method": method, "note": op.note or f"{kind.value} resources do not support {op_name}"},
        )
    return kind, op


def invoke(substrate: ResourceSubstrate, method: str, params: Optional[dict[str, Any]] = None) -> Any:
    """Resolve and run one catalogue method; returns the wire-encoded result."""
    kind, op = resolve(method)
    try:
        parsed = op.params.model_validate(params or {})
    except ValidationError as e:
        first = e.errors()[0]
        raise InvalidParams(
            f"{method}: {'.'.join(str(p) for p in first['loc']) or 'params'}: {first['msg']}",
            {"method": method},
        )
    return to_wire(op.call(substrate.registry(kind), parsed))


def dispatch(substrate: ResourceSubstrate, request: RpcRequest | dict[str, Any]) -> RpcResponse:
    request_id = request.get("id") if isinstance(request, dict) else request.id
    try:
        if isinstance(request, dict):
            try:
                request = RpcRequest.model_validate(request)
            except ValidationError as e:
                raise InvalidRequest(f"malformed request: {e.errors()[0]['msg']}")
        result = invoke(substrate, request.method, request.params)
        return RpcResponse(id=request.id, result=result)
    except ProtocolError as e:
        logger.debug("rpc %s failed: %s", getattr(request, "method", "?"), e.message)
        return RpcResponse(id=request_id, error=RpcError(**e.to_dict()))


def parse_error_response(detail: str) -> RpcResponse:
    return RpcResponse(error=RpcError(code=RPC_PARSE_ERROR, message=f"parse error: {detail}", data={"kind": "ParseError"}))


# ── Client ───────────────────────────────────────────────────────────


class RpcClient:
    """Calls a running control plane; errors come back as the matching ProtocolError."""

    def __init__(self, base_url: str, timeout: Optional[float] = None, transport: Optional[httpx.BaseTransport] = None):
        self.base_url = base_url.rstrip("/")
        self._client = httpx.Client(
            base_url=self.base_url,
            timeout=timeout if timeout is not None else settings.rpc_timeout_seconds,
            transport=transport,
        )
        self._next_id = 0

    def call(self, method: str, **params: Any) -> Any:
        self._next_id += 1
        response = self._client.post("/rpc", json={"jsonrpc": "2.0", "id": self._next_id, "method": method, "params": params})
        body = response.json()
        if body.get("error") is not None:
            raise error_from_dict(body["error"])
        return body.get("result")

    def catalogue(self) -> list[CatalogueEntry]:
        response = self._client.get("/catalogue")
        response.raise_for_status()
        return [CatalogueEntry.model_validate(e) for e in response.json()["methods"]]

    def health(self) -> dict[str, Any]:
        return self._client.get("/health").json()

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "RpcClient":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()
