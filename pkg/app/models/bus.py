from enum import Enum
from typing import Any

from pydantic import BaseModel


class BusMessage(BaseModel):
    topic: str
    sender: str
    correlation_id: str
    payload: dict[str, Any] = {}


class StepStatus(str, Enum):
    PENDING = "pending"
    DONE = "done"
    FAILED = "failed"


class PlanStep(BaseModel):
    step_id: str
    description: str
    agent: str
    status: StepStatus = StepStatus.PENDING


class Plan(BaseModel):
    title: str
    flowchart: str = ""
    steps: list[PlanStep] = []
    revision: str = ""

    @property
    def complete(self) -> bool:
        return bool(self.steps) and all(s.status == StepStatus.DONE for s in self.steps)


class SubtaskResult(BaseModel):
    correlation_id: str
    step_id: str
    agent: str
    ok: bool
    answer: str = ""
    error: str = ""


class OrchestrationResult(BaseModel):
    answer: str
    complete: bool
    rounds: int
    plan: Plan
    plan_versions: list[str] = []
    results: dict[str, SubtaskResult] = {}
