from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator


class EntityKind(str, Enum):
    PROMPT = "prompt"
    AGENT = "agent"
    TOOL = "tool"
    ENVIRONMENT = "environment"
    MEMORY = "memory"

    @property
    def title(self) -> str:
        return self.value.capitalize()


class ExportForm(str, Enum):
    FUNCTION_CALLING_SCHEMA = "function_calling_schema"
    NATURAL_LANGUAGE_TEXT = "natural_language_text"
    STRUCTURED_ARGUMENT_SCHEMA = "structured_argument_schema"


class ExportedRepresentation(BaseModel):
    model_config = ConfigDict(frozen=True)

    form: ExportForm
    body: str = Field(min_length=1)


class ResourceEntity(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    description: str = ""
    mapping: dict[str, Any] = {}
    trainable: bool = False
    metadata: dict[str, Any] = {}

    @field_validator("name")
    @classmethod
    def _name_not_blank(cls, v: str) -> str:
        if not v or not v.strip():
            raise ValueError("resource name must be non-empty")
        return v


class RegistrationRecord(BaseModel):
    """Serializable registration record: entity, version, implementation
    descriptor, constructor params and exported representations."""

    model_config = ConfigDict(frozen=True)

    entity: ResourceEntity
    version: Optional[str] = None
    impl_descriptor: str = ""
    init_params: dict[str, Any] = {}
    exports: tuple[ExportedRepresentation, ...] = ()

    @field_validator("exports", mode="after")
    @classmethod
    def _exports_as_set(cls, v: tuple[ExportedRepresentation, ...]) -> tuple[ExportedRepresentation, ...]:
        # set semantics with a stable order
        unique = {(e.form.value, e.body): e for e in v}
        return tuple(unique[k] for k in sorted(unique))

    @property
    def name(self) -> str:
        return self.entity.name

    def export_of(self, form: ExportForm) -> Optional[ExportedRepresentation]:
        for export in self.exports:
            if export.form == form:
                return export
        return None


class DiscoveryReport(BaseModel):
    registered: list[str] = []
    skipped: list[dict[str, str]] = []

    @property
    def count(self) -> int:
        return len(self.registered)
