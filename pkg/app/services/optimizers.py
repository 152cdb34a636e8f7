"""Optimizer lookup by name; every optimizer exposes run(system, objective, budget)."""

from typing import Optional, Protocol

from app.models.evolution import Objective
from app.models.optimizer import OptimizerConfig, OptimizerName
from app.services.errors import ConfigError
from app.services.grpo import GRPOOptimizer
from app.services.reflection import ReflectionOptimizer
from app.services.reinforcepp import ReinforcePPOptimizer
from app.services.evolution_loop import AgentSystem, LoopResult
from app.services.textgrad import TextGradOptimizer


class RunnableOptimizer(Protocol):
    def run(self, system: AgentSystem, objective: Objective, budget: int) -> LoopResult: ...


def optimizer_names() -> list[str]:
    return [n.value for n in OptimizerName]


def build_optimizer(name: str | OptimizerName, config: Optional[OptimizerConfig] = None) -> RunnableOptimizer:
    config = config or OptimizerConfig()
    try:
        name = OptimizerName(name)
    except ValueError:
        raise ConfigError(f"unknown optimizer {name!r}", {"known": optimizer_names()})
    roles = config.models
    if name == OptimizerName.REFLECTION:
        return ReflectionOptimizer(use_case=roles.optimizer)
    if name == OptimizerName.TEXTGRAD:
        return TextGradOptimizer(evaluator_use_case=roles.evaluator, optimizer_use_case=roles.optimizer)
    if name == OptimizerName.REINFORCEPP:
        return ReinforcePPOptimizer(config)
    return GRPOOptimizer(config)
