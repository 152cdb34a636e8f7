from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field, field_validator


class ChatMessage(BaseModel):
    role: str
    content: str


class ModelRequest(BaseModel):
    messages: list[ChatMessage] = Field(min_length=1)
    model_id: str = ""
    temperature: float = Field(default=0.0, ge=0.0, le=2.0)
    max_tokens: int = Field(default=1024, ge=1)
    tag: str = ""

    def last_user(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return ""

    def transcript(self) -> str:
        return "\n".join(m.content for m in self.messages)


class ModelResponse(BaseModel):
    text: str
    provider: str
    model_id: str = ""
    attempts: int = 1


class RouteEntry(BaseModel):
    name: str
    priority: int = 0
    cost_weight: float = Field(default=1.0, ge=0.0)


class RouteConfig(BaseModel):
    chain: list[RouteEntry] = Field(min_length=1)
    retry_limit: int = Field(default=0, ge=0)

    @field_validator("chain", mode="before")
    @classmethod
    def _names_to_entries(cls, v):
        # allow ["scripted", "openai"] shorthand
        if isinstance(v, list):
            return [{"name": e} if isinstance(e, str) else e for e in v]
        return v

    @classmethod
    def of(cls, *names: str, retry_limit: int = 0) -> "RouteConfig":
        return cls(chain=[RouteEntry(name=n) for n in names], retry_limit=retry_limit)


class MatchKind(str, Enum):
    EXACT = "exact"
    SUBSTRING = "substring"
    PATTERN = "pattern"


class MatchScope(str, Enum):
    LAST_USER = "last_user"
    TRANSCRIPT = "transcript"


class ScriptedRule(BaseModel):
    match: MatchKind = MatchKind.SUBSTRING
    value: str
    response: str = ""
    # Successive matches walk this list; the last entry repeats
    responses: list[str] = []
    scope: MatchScope = MatchScope.LAST_USER


class ProviderKind(str, Enum):
    SCRIPTED = "scripted"
    HTTP = "http"


class ProviderConfig(BaseModel):
    name: str
    kind: ProviderKind
    base_url: Optional[str] = None
    api_key_env: Optional[str] = None
    model_id: str = ""
    rules: list[ScriptedRule] = []
    default: Optional[str] = None
