"""
grpo.py - Group-relative optimizer over text policies

Each round samples K rollouts of the live system concurrently, normalizes
their rewards within the group, and conditions the optimizer model on the
whole group (rewards, advantages, clipped objectives) before the gated
commit. Stops when any rollout reaches reward 1.
"""

import json
import logging
import uuid
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Optional

from app.models.evolution import OUTPUT_VARIABLE, Evaluation, Objective
from app.models.optimizer import GroupSignals, OptimizerConfig
from app.models.trace import TraceEventKind
from app.services.reinforcepp import gated_update, refine_solution, signal_proposals
from app.services.rl_signals import grpo_signals, reward
from app.services.evolution_loop import (
    AgentSystem,
    Execution,
    LoopResult,
    SystemExecutor,
    assess_execution,
    lift_variables,
    resolve_budget,
    validate_objective,
)
from app.services.tracer import Trace

logger = logging.getLogger(__name__)


def render_group(executions: list[Execution], group: GroupSignals) -> str:
    lines = []
    for i, execution in enumerate(executions):
        lines.append(
            f"[{i}] reward={group.rewards[i]:.1f} advantage={group.advantages[i]:+.3f} "
            f"objective={group.objectives[i]:+.3f} ratio={group.ratios[i]:.3f}\n"
            f"    answer: {json.dumps(execution.answer)}"
        )
    return "\n".join(lines)


class GRPOOptimizer:
    def __init__(self, config: Optional[OptimizerConfig] = None):
        self.config = config or OptimizerConfig()
        self.executor = SystemExecutor()

    def rollouts(self, system: AgentSystem, objective: Objective) -> list[Execution]:
        """K independent executions; each worker thread records into its own trace."""
        k = self.config.K
        with ThreadPoolExecutor(max_workers=min(k, self.config.max_workers)) as pool:
            return list(pool.map(lambda _: self.executor.execute(system, objective), range(k)))

    def run(self, system: AgentSystem, objective: Objective, budget: Optional[int] = None) -> LoopResult:
        budget = resolve_budget(budget, self.config.T)
        validate_objective(objective)
        roles = self.config.models
        tracer = system.substrate.tracer
        variables = lift_variables(system)
        audit = Trace(f"audit-{uuid.uuid4().hex[:12]}")
        target = objective.success.value

        first = self.executor.execute(system, objective)
        baseline = assess_execution(system, objective, first)
        traces = [first.trace]
        previous = solution = first.answer
        best = baseline.score
        evaluations: list[Evaluation] = []
        committed: list[float] = []
        signal_log: list[dict[str, Any]] = []
        satisfied = False
        rounds = 0

        while True:
            group_runs = self.rollouts(system, objective)
            traces.extend(r.trace for r in group_runs)
            group = grpo_signals([r.answer for r in group_runs], target, previous, self.config)
            leader = group_runs[group.best_index]
            signal_log.append({"round": rounds, **group.model_dump()})
            audit.record(TraceEventKind.EVALUATION, {"round": rounds, "signals": group.model_dump()})
            if reward(leader.answer, target) == 1.0:
                solution = leader.answer
                satisfied = True
                break
            if rounds >= budget:
                solution = leader.answer
                break
            rounds += 1

            with tracer.attach(audit):
                proposals = signal_proposals(
                    system, "grpo_reflect.yaml", variables, roles.optimizer,
                    task=objective.task,
                    previous=previous,
                    group=render_group(group_runs, group),
                    mean=f"{group.mean_reward:.3f}",
                    std=f"{group.std_reward:.3f}",
                    trace=leader.trace.render(),
                )
            evaluation, accepted, variables = gated_update(
                system, variables, proposals, objective, self.executor, best, audit,
            )
            if evaluation is not None:
                evaluations.append(evaluation)
                if accepted:
                    best = evaluation.score
            committed.append(best)

            solution = leader.answer
            if self.config.refine_solution:
                with tracer.attach(audit):
                    refined = refine_solution(system, objective, solution, group.model_dump(), roles.optimizer)
                if refined is not None and reward(refined, target) > reward(solution, target):
                    solution = refined
                    satisfied = reward(solution, target) == 1.0
                    if satisfied:
                        break
            previous = leader.answer
            logger.info("grpo round %d: mean=%.3f std=%.3f accepted=%s",
                        rounds, group.mean_reward, group.std_reward, accepted)

        variables = variables.with_values({OUTPUT_VARIABLE: solution})
        audit.close(solution, satisfied)
        return LoopResult(
            variables=variables,
            evaluations=evaluations,
            baseline=baseline,
            traces=traces,
            audit=audit,
            rounds=rounds,
            converged=satisfied,
            best_score=max(best, reward(solution, target)),
            committed_scores=committed,
            answer=solution,
            signals=signal_log,
        )
