"""
textgrad.py - TextGrad optimizer: natural-language critiques as gradients

One round:
- loss:     forward pass, then the evaluator model critiques the answer
- backward: the same critique lands in every optimizable prompt's buffer
- step:     the optimizer model rewrites each prompt; the new text must sit
            between <improved> and </improved> lines or the prompt is kept
- sync:     rewritten values are written back atomically, buffers cleared

The evaluator answering the literal NO_ISSUES ends the run early.
"""

import logging
import uuid
from typing import Optional

from app.models.evolution import OUTPUT_VARIABLE, Evaluation, Objective, VariableSet
from app.models.trace import TraceEventKind
from app.services.errors import AllProvidersFailed
from app.services.prompts import build_messages
from app.services.evolution_loop import (
    AgentSystem,
    Execution,
    LoopResult,
    SystemExecutor,
    assess_execution,
    lift_variables,
    resolve_budget,
    trainable_prompt_variables,
    validate_objective,
)
from app.services.tracer import Trace

logger = logging.getLogger(__name__)

NO_ISSUES = "NO_ISSUES"
OPEN_TAG = "<improved>"
CLOSE_TAG = "</improved>"


def extract_improved(text: str) -> Optional[str]:
    """Content between the sentinel lines, exactly; None when absent or unterminated."""
    lines = text.splitlines()
    try:
        start = next(i for i, line in enumerate(lines) if line.strip() == OPEN_TAG)
        end = next(i for i in range(start + 1, len(lines)) if lines[i].strip() == CLOSE_TAG)
    except StopIteration:
        return None
    return "\n".join(lines[start + 1:end])


class TextGradOptimizer:
    def __init__(self, evaluator_use_case: str = "evaluator", optimizer_use_case: str = "optimizer"):
        self.evaluator_use_case = evaluator_use_case
        self.optimizer_use_case = optimizer_use_case
        self.executor = SystemExecutor()
        # variable id -> accumulated critiques
        self.gradients: dict[str, list[str]] = {}

    def loss(self, system: AgentSystem, objective: Objective) -> tuple[Execution, str]:
        execution = self.executor.execute(system, objective)
        messages = build_messages(
            "textgrad_loss.yaml",
            task=objective.task,
            answer=execution.answer,
            expectation=objective.success.value,
            trace=execution.trace.render(),
        )
        try:
            critique = system.substrate.gateway.chat(messages, use_case=self.evaluator_use_case).strip()
        except AllProvidersFailed as e:
            logger.warning("textgrad loss: evaluator failed: %s", e.message)
            critique = ""
        return execution, critique

    def backward(self, variables: VariableSet, critique: str) -> dict[str, list[str]]:
        for variable in trainable_prompt_variables(variables):
            self.gradients.setdefault(variable.variable_id, []).append(critique)
        return self.gradients

    def step(self, system: AgentSystem, variables: VariableSet) -> dict[str, str]:
        updates: dict[str, str] = {}
        for var_id, critiques in self.gradients.items():
            variable = variables.get(var_id)
            if variable is None:
                continue
            messages = build_messages(
                "textgrad_update.yaml",
                role=variable.role_description,
                value=variable.value,
                gradients="\n---\n".join(critiques),
            )
            try:
                reply = system.substrate.gateway.chat(messages, use_case=self.optimizer_use_case)
            except AllProvidersFailed as e:
                logger.warning("textgrad step: optimizer failed for %s: %s", var_id, e.message)
                continue
            improved = extract_improved(reply)
            if improved is None:
                logger.warning("textgrad step: no <improved> block for %s, keeping value", var_id)
                continue
            if improved != variable.value:
                updates[var_id] = improved
        return updates

    def sync(self, system: AgentSystem, variables: VariableSet, updates: dict[str, str]) -> tuple[VariableSet, list[str]]:
        versions = system.substrate.set_variables(updates) if updates else []
        self.gradients.clear()
        return variables.with_values(updates), versions

    def textgrad_round(
        self, system: AgentSystem, variables: VariableSet, objective: Objective,
        critique: Optional[str] = None,
    ) -> VariableSet:
        if not trainable_prompt_variables(variables):
            return variables
        if critique is None:
            _, critique = self.loss(system, objective)
        self.backward(variables, critique)
        updates = self.step(system, variables)
        variables, _ = self.sync(system, variables, updates)
        return variables

    def run(self, system: AgentSystem, objective: Objective, budget: int) -> LoopResult:
        budget = resolve_budget(budget)
        validate_objective(objective)
        variables = lift_variables(system)
        audit = Trace(f"audit-{uuid.uuid4().hex[:12]}")
        traces: list[Trace] = []
        evaluations: list[Evaluation] = []
        committed: list[float] = []
        baseline: Optional[Evaluation] = None
        converged = False
        rounds = 0
        best = 0.0

        while True:
            with system.substrate.tracer.attach(audit):
                execution, critique = self.loss(system, objective)
            evaluation = assess_execution(system, objective, execution)
            traces.append(execution.trace)
            variables = variables.with_values({OUTPUT_VARIABLE: execution.answer})
            audit.record(TraceEventKind.EVALUATION, {"round": rounds, "score": evaluation.score, "critique": critique})
            if baseline is None:
                baseline = evaluation
            else:
                evaluations.append(evaluation)
            best = max(best, evaluation.score)
            if rounds:
                committed.append(best)
            converged = evaluation.converged or critique == NO_ISSUES
            if converged or rounds >= budget or not trainable_prompt_variables(variables):
                break

            rounds += 1
            self.backward(variables, critique)
            audit.record(TraceEventKind.DECISION, {"round": rounds, "gradients": sorted(self.gradients)})
            with system.substrate.tracer.attach(audit):
                updates = self.step(system, variables)
            variables, versions = self.sync(system, variables, updates)
            audit.record(TraceEventKind.COMMIT, {"round": rounds, "variables": sorted(updates), "versions": versions})
            logger.info("textgrad round %d: %d variable(s) rewritten", rounds, len(updates))

        audit.close(execution.answer, converged)
        return LoopResult(
            variables=variables,
            evaluations=evaluations,
            baseline=baseline,
            traces=traces,
            audit=audit,
            rounds=rounds,
            converged=converged,
            best_score=best,
            committed_scores=committed,
            answer=execution.answer,
        )
