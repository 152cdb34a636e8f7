from typing import Any, Optional

from pydantic import BaseModel, Field

from app.models.evolution import Objective
from app.models.gateway import ScriptedRule
from app.models.resource import EntityKind


class ToyResource(BaseModel):
    kind: EntityKind
    record: dict[str, Any]


class ToyTask(BaseModel):
    """Bundled offline task: resources, objective and the scripted models."""

    name: str
    description: str = ""
    agent: str
    resources: list[ToyResource]
    objective: Objective
    actor_rules: list[ScriptedRule] = []
    actor_default: Optional[str] = None
    critic_rules: list[ScriptedRule] = []
    critic_default: Optional[str] = None
    expected_score: float = Field(default=1.0, ge=0.0, le=1.0)
    budget: int = Field(default=3, ge=1)
