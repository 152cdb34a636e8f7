"""
reinforcepp.py - Reinforce++ optimizer over text policies

Each round computes (reward, advantage, clipped objective, ratio) for the
latest solution, asks the optimizer model for edits conditioned on those
signals, gates the edits through the commit gate, re-runs the system and
optionally refines the solution. The loop stops as soon as reward hits 1.
"""

import json
import logging
import uuid
from typing import Any, Optional

from app.models.evolution import OUTPUT_VARIABLE, Evaluation, Objective, Proposal, VariableSet
from app.models.optimizer import OptimizerConfig
from app.models.trace import TraceEventKind
from app.services.errors import AllProvidersFailed, NotLearnable, UnknownVariable
from app.services.prompts import build_messages
from app.services.reflection import ask_json, parse_hypotheses, parse_proposals, render_variables, warn
from app.services.rl_signals import reinforcepp_signals, reward
from app.services.evolution_loop import (
    AgentSystem,
    Execution,
    LoopResult,
    SystemExecutor,
    assess_execution,
    commit,
    evaluate,
    improve,
    lift_variables,
    resolve_budget,
    validate_objective,
)
from app.services.tracer import Trace

logger = logging.getLogger(__name__)


def signal_proposals(
    system: AgentSystem,
    prompt_name: str,
    variables: VariableSet,
    use_case: str,
    **values: Any,
) -> list[Proposal]:
    """RL-conditioned reflection: one call returning hypotheses and proposals."""
    gateway = system.substrate.gateway
    parsed = ask_json(
        gateway,
        build_messages(prompt_name, variables=render_variables(variables), **values),
        use_case,
        prompt_name.removesuffix(".yaml"),
    )
    if parsed is None:
        return []
    hypotheses = parse_hypotheses(parsed.get("hypotheses"), variables)
    proposals, rejected = parse_proposals(parsed.get("proposals"), variables)
    if rejected:
        warn(gateway, "dropped proposals for non-learnable variables", rejected=rejected)
    gateway.tracer.emit(TraceEventKind.DECISION, {
        "hypotheses": [h.model_dump(mode="json") for h in hypotheses],
        "proposals": [p.variable_id for p in proposals],
    })
    return proposals


def refine_solution(system: AgentSystem, objective: Objective, solution: str, signals: dict[str, Any],
                    use_case: str) -> Optional[str]:
    messages = build_messages(
        "solution_refine.yaml",
        task=objective.task,
        solution=solution,
        signals=json.dumps(signals, sort_keys=True),
    )
    try:
        refined = system.substrate.gateway.chat(messages, use_case=use_case).strip()
    except AllProvidersFailed as e:
        logger.warning("solution refinement failed: %s", e.message)
        return None
    return refined or None


def gated_update(
    system: AgentSystem,
    variables: VariableSet,
    proposals: list[Proposal],
    objective: Objective,
    executor: SystemExecutor,
    best: float,
    audit: Trace,
) -> tuple[Optional[Evaluation], bool, VariableSet]:
    """improve -> evaluate -> commit for the trainable edits of one round."""
    resource_edits = [p for p in proposals if p.variable_id != OUTPUT_VARIABLE]
    try:
        candidate = improve(system, variables, resource_edits)
    except (UnknownVariable, NotLearnable) as e:
        audit.record(TraceEventKind.ROLLBACK, {"error": e.to_dict()})
        return None, False, variables
    evaluation, _ = evaluate(system, candidate, objective, executor)
    accepted = commit(system, candidate, evaluation, best, audit)
    return evaluation, accepted, candidate.variables if accepted else variables


class ReinforcePPOptimizer:
    def __init__(self, config: Optional[OptimizerConfig] = None):
        self.config = config or OptimizerConfig()
        self.executor = SystemExecutor()

    def run(self, system: AgentSystem, objective: Objective, budget: Optional[int] = None) -> LoopResult:
        budget = resolve_budget(budget, self.config.T)
        validate_objective(objective)
        roles = self.config.models
        tracer = system.substrate.tracer
        variables = lift_variables(system)
        audit = Trace(f"audit-{uuid.uuid4().hex[:12]}")
        target = objective.success.value

        execution: Execution = self.executor.execute(system, objective)
        baseline = assess_execution(system, objective, execution)
        traces = [execution.trace]
        solution = previous = execution.answer
        reference = objective.reference_solution if objective.reference_solution is not None else solution
        best = baseline.score
        evaluations: list[Evaluation] = []
        committed: list[float] = []
        signal_log: list[dict[str, Any]] = []
        satisfied = False
        rounds = 0

        while True:
            signals = reinforcepp_signals(solution, previous, target, reference, self.config)
            signal_log.append({"round": rounds, **signals.model_dump()})
            audit.record(TraceEventKind.EVALUATION, {"round": rounds, "signals": signals.model_dump()})
            if signals.reward == 1.0:
                satisfied = True
                break
            if rounds >= budget:
                break
            rounds += 1

            with tracer.attach(audit):
                proposals = signal_proposals(
                    system, "rl_reflect.yaml", variables, roles.optimizer,
                    task=objective.task, solution=solution, previous=previous,
                    signals=json.dumps(signals.model_dump(), sort_keys=True),
                    trace=execution.trace.render(),
                )
            evaluation, accepted, variables = gated_update(
                system, variables, proposals, objective, self.executor, best, audit,
            )
            if evaluation is not None:
                evaluations.append(evaluation)
                if accepted:
                    best = evaluation.score
            committed.append(best)

            execution = self.executor.execute(system, objective)
            traces.append(execution.trace)
            next_answer = execution.answer
            if self.config.refine_solution and reward(next_answer, target) < 1.0:
                with tracer.attach(audit):
                    refined = refine_solution(system, objective, next_answer, signals.model_dump(), roles.optimizer)
                if refined is not None and reward(refined, target) >= reward(next_answer, target):
                    next_answer = refined
            previous, solution = solution, next_answer
            logger.info("reinforce++ round %d: reward=%.1f advantage=%.4f accepted=%s",
                        rounds, signals.reward, signals.advantage, accepted)

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
