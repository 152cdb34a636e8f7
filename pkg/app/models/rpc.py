from typing import Any, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RpcRequest(BaseModel):
    jsonrpc: str = "2.0"
    id: Optional[Union[int, str]] = None
    method: str
    params: dict[str, Any] = {}


class RpcError(BaseModel):
    code: int
    message: str
    data: dict[str, Any] = {}


class RpcResponse(BaseModel):
    jsonrpc: str = "2.0"
    id: Optional[Union[int, str]] = None
    result: Any = None
    error: Optional[RpcError] = None

    @model_validator(mode="after")
    def _result_xor_error(self):
        if self.error is not None and self.result is not None:
            raise ValueError("response carries both result and error")
        return self

    def wire(self) -> dict[str, Any]:
        body: dict[str, Any] = {"jsonrpc": self.jsonrpc, "id": self.id}
        if self.error is not None:
            body["error"] = self.error.model_dump()
        else:
            body["result"] = self.result
        return body


class CatalogueEntry(BaseModel):
    method: str
    kind: str
    operator: str
    applicable: bool = True
    params: dict[str, str] = {}
    note: str = ""


# ── Operator params ──────────────────────────────────────────────────


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NoParams(_Params):
    pass


class NameParams(_Params):
    name: str


class RecordParams(_Params):
    record: dict[str, Any]


class RetrieveParams(_Params):
    query: str
    k: int = Field(default=5, ge=1)


class UpdateParams(_Params):
    name: str
    delta: Union[str, dict[str, Any]]


class CopyParams(_Params):
    name: str
    new_name: str


class RestoreParams(_Params):
    name: str
    version: str


class DiffParams(_Params):
    name: str
    v_a: str
    v_b: str


class SetVariablesParams(_Params):
    assignments: dict[str, str]


class RunParams(_Params):
    name: str
    payload: dict[str, Any] = {}


class PathParams(_Params):
    path: str


class SaveContractParams(_Params):
    path: str
    name: Optional[str] = None


class InitParams(_Params):
    root: str
