from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field

OUTPUT_VARIABLE = "output"

DEFAULT_SAFETY = ["no_runtime_error", "output_nonempty", "contract_parse_ok"]


class EvolvableVariable(BaseModel):
    variable_id: str
    # "<kind>:<name>" for resource-backed variables, "output" for the answer artifact
    origin: str
    field_path: str = ""
    value: str = ""
    learnable: bool = False
    role_description: str = ""

    @property
    def is_output(self) -> bool:
        return self.variable_id == OUTPUT_VARIABLE


class VariableSet(BaseModel):
    """Lifted optimization view. Always holds exactly one output variable."""

    variables: list[EvolvableVariable] = []

    def ids(self) -> list[str]:
        return [v.variable_id for v in self.variables]

    def get(self, variable_id: str) -> Optional[EvolvableVariable]:
        for v in self.variables:
            if v.variable_id == variable_id:
                return v
        return None

    def __contains__(self, variable_id: str) -> bool:
        return self.get(variable_id) is not None

    @property
    def output(self) -> EvolvableVariable:
        return self.get(OUTPUT_VARIABLE)

    def trainable(self) -> list[EvolvableVariable]:
        """The learnable subset (never includes the output artifact)."""
        return [v for v in self.variables if v.learnable and not v.is_output]

    def with_values(self, values: dict[str, str]) -> "VariableSet":
        return VariableSet(variables=[
            v.model_copy(update={"value": values[v.variable_id]}) if v.variable_id in values else v
            for v in self.variables
        ])

    def values(self) -> dict[str, str]:
        return {v.variable_id: v.value for v in self.variables}


class Severity(str, Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


class Hypothesis(BaseModel):
    text: str
    targets: list[str] = []
    severity: Severity = Severity.MEDIUM


class Proposal(BaseModel):
    variable_id: str
    value: str
    rationale: str = ""


class SuccessKind(str, Enum):
    EXACT_MATCH = "exact_match"
    SUBSTRING = "substring"
    PREDICATE_SCRIPT = "predicate_script"


class SuccessSpec(BaseModel):
    kind: SuccessKind = SuccessKind.EXACT_MATCH
    value: str = ""


class ScoreKind(str, Enum):
    BINARY = "binary"
    SIMILARITY = "similarity"


class ScoreSpec(BaseModel):
    kind: ScoreKind = ScoreKind.BINARY


class Objective(BaseModel):
    task: str
    attachments: list[str] = []
    success: SuccessSpec = SuccessSpec()
    score: ScoreSpec = ScoreSpec()
    safety: list[str] = Field(default_factory=lambda: list(DEFAULT_SAFETY))
    threshold: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    # Reference solution for the RL penalty term; defaults to the first answer
    reference_solution: Optional[str] = None


class Evaluation(BaseModel):
    score: float = Field(ge=0.0, le=1.0)
    safety: dict[str, bool] = {}
    converged: bool = False
    answer: str = ""

    @property
    def safe(self) -> bool:
        return all(self.safety.values())
