from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict


class TraceEventKind(str, Enum):
    MODEL_CALL = "model_call"
    TOOL_CALL = "tool_call"
    DECISION = "decision"
    ERROR = "error"
    EVALUATION = "evaluation"
    COMMIT = "commit"
    ROLLBACK = "rollback"
    WARNING = "warning"
    MESSAGE = "message"


class TraceEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    seq: int
    span: str
    parent: Optional[str] = None
    kind: TraceEventKind
    payload: dict[str, Any] = {}
    ts: float


class TraceOutcome(BaseModel):
    final_answer: str = ""
    success: bool = False
