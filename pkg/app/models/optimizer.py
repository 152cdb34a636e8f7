from enum import Enum

from pydantic import BaseModel, Field


class OptimizerName(str, Enum):
    REFLECTION = "reflection"
    TEXTGRAD = "textgrad"
    REINFORCEPP = "reinforcepp"
    GRPO = "grpo"


class ModelRoles(BaseModel):
    """Route names (use cases) for the three model roles."""

    actor: str = "actor"
    evaluator: str = "evaluator"
    optimizer: str = "optimizer"


class OptimizerConfig(BaseModel):
    """Optimizer defaults. Overridable from agp.json or CLI flags."""

    model_config = {"populate_by_name": True}

    optimizer: OptimizerName = OptimizerName.REFLECTION
    epsilon: float = Field(default=0.2, gt=0.0, lt=1.0)
    beta: float = Field(default=0.01, ge=0.0)
    epsilon0: float = Field(default=1e-8, gt=0.0)
    K: int = Field(default=4, ge=1)
    T: int = Field(default=3, ge=1)
    refine_solution: bool = True
    max_workers: int = Field(default=4, ge=1)
    models: ModelRoles = ModelRoles()


class RlSignals(BaseModel):
    reward: float
    advantage: float
    objective: float
    ratio: float
    penalty: float


class GroupSignals(BaseModel):
    rewards: list[float]
    advantages: list[float]
    objectives: list[float]
    ratios: list[float]
    mean_reward: float
    std_reward: float

    @property
    def best_index(self) -> int:
        # highest reward, then highest objective, then earliest
        return max(range(len(self.rewards)), key=lambda i: (self.rewards[i], self.objectives[i], -i))
