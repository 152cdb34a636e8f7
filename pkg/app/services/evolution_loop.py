"""
evolution_loop.py - Closed-loop evolution over registered resources

Provides:
- AgentSystem - the agent resource to evolve plus the substrate it lives in
- lift_variables(system) -> VariableSet
- improve(system, variables, proposals) -> Candidate (staged on a shadow copy)
- evaluate(candidate, objective, executor) -> (Evaluation, Trace)
- commit(system, candidate, evaluation, best_score, audit) -> accepted?
- run_loop(system, objective, optimizer, budget) -> LoopResult

The live registries only move inside commit(); every candidate is staged on
a shadow clone first, so a rejected candidate leaves no trace in the heads.
"""

import logging
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

from app.models.evolution import (
    OUTPUT_VARIABLE,
    Evaluation,
    EvolvableVariable,
    Hypothesis,
    Objective,
    Proposal,
    ScoreKind,
    SuccessKind,
    VariableSet,
)
from app.models.resource import EntityKind
from app.models.trace import TraceEventKind
from app.services import loader
from app.services.contracts import parse_contract, render_contract
from app.services.errors import (
    ConfigError,
    NotFound,
    NotLearnable,
    ProtocolError,
    UnknownVariable,
    UnregisteredResource,
)
from app.services.registry import ResourceSubstrate
from app.services.rl_signals import reward, similarity
from app.services.tracer import Trace

logger = logging.getLogger(__name__)

KNOWN_SAFETY = ("no_runtime_error", "output_nonempty", "contract_parse_ok")


class AgentSystem:
    """An agent resource and the substrate its prompts/tools/memories live in."""

    def __init__(self, substrate: ResourceSubstrate, agent: str):
        self.substrate = substrate
        self.agent = agent

    def with_substrate(self, substrate: ResourceSubstrate) -> "AgentSystem":
        return AgentSystem(substrate, self.agent)


@dataclass
class Execution:
    answer: str
    trace: Trace
    error: Optional[str] = None


@dataclass
class Candidate:
    variables: VariableSet
    shadow: ResourceSubstrate
    staged: dict[str, str] = field(default_factory=dict)
    output_override: Optional[str] = None


@dataclass
class LoopResult:
    variables: VariableSet
    evaluations: list[Evaluation]
    baseline: Evaluation
    traces: list[Trace]
    audit: Trace
    rounds: int
    converged: bool
    best_score: float
    committed_scores: list[float] = field(default_factory=list)
    answer: str = ""
    signals: list[dict[str, Any]] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        return {
            "converged": self.converged,
            "rounds": self.rounds,
            "best_score": self.best_score,
            "baseline_score": self.baseline.score,
            "scores": [e.score for e in self.evaluations],
            "committed_scores": self.committed_scores,
            "answer": self.answer,
        }


class Optimizer(Protocol):
    """Reflect + Select for one iteration of the loop.

    An optional bind(system) is called once before the first round.
    """

    def propose(
        self, trace: Trace, variables: VariableSet, objective: Objective, evaluation: Evaluation,
    ) -> tuple[list[Hypothesis], list[Proposal]]: ...


# ── Lifting ──────────────────────────────────────────────────────────

def output_variable(value: str = "") -> EvolvableVariable:
    return EvolvableVariable(
        variable_id=OUTPUT_VARIABLE,
        origin=OUTPUT_VARIABLE,
        value=value,
        learnable=False,
        role_description="final answer produced by the agent",
    )


def lift_variables(system: AgentSystem) -> VariableSet:
    agents = system.substrate.agents
    if system.agent not in agents:
        raise UnregisteredResource(f"agent {system.agent!r} is not registered", {"name": system.agent})
    try:
        lifted = agents.get_variables(system.agent)
    except NotFound as e:
        raise UnregisteredResource(f"agent {system.agent!r} references a missing resource: {e.message}", e.data)
    unique: dict[str, EvolvableVariable] = {}
    for variable in lifted:
        unique.setdefault(variable.variable_id, variable)
    return VariableSet(variables=[*unique.values(), output_variable()])


# ── Execution ────────────────────────────────────────────────────────

class SystemExecutor:
    """Runs the agent once under a fresh trace."""

    def execute(self, system: AgentSystem, objective: Objective) -> Execution:
        tracer = system.substrate.tracer
        with tracer.session() as trace:
            answer, error = "", None
            try:
                result = system.substrate.agents.run(
                    system.agent, {"task": objective.task, "attachments": list(objective.attachments)},
                )
                answer = str(result.get("answer", "")) if isinstance(result, dict) else str(result)
            except ProtocolError as e:
                error = f"{e.kind}: {e.message}"
            trace.close(answer, error is None and answer_succeeds(objective, answer, trace))
        return Execution(answer=answer, trace=trace, error=error)


def answer_succeeds(objective: Objective, answer: str, trace: Optional[Trace] = None) -> bool:
    spec = objective.success
    if spec.kind == SuccessKind.EXACT_MATCH:
        return reward(answer, spec.value) == 1.0
    if spec.kind == SuccessKind.SUBSTRING:
        return spec.value.casefold() in answer.casefold()
    try:
        handle = loader.build(spec.value, {}, {"entrypoint": "predicate"}, default_entrypoint="predicate")
        return bool(handle.run({"answer": answer, "trace": trace}))
    except Exception as e:
        logger.warning("success predicate failed: %s", e)
        return False


def score_answer(objective: Objective, answer: str, trace: Optional[Trace] = None) -> float:
    if objective.score.kind == ScoreKind.SIMILARITY:
        return similarity(answer, objective.success.value)
    return 1.0 if answer_succeeds(objective, answer, trace) else 0.0


def _contracts_parse(substrate: ResourceSubstrate) -> bool:
    for registry in substrate.registries():
        if not registry.list():
            continue
        contract = registry.contract()
        try:
            parsed = parse_contract(render_contract(contract))
        except ProtocolError:
            return False
        if [s.name for s in parsed.sections] != [s.name for s in contract.sections]:
            return False
    return True


def validate_objective(objective: Objective) -> None:
    unknown = [name for name in objective.safety if name not in KNOWN_SAFETY]
    if unknown:
        raise ConfigError(f"unknown safety invariant(s): {unknown}", {"unknown": unknown})


def resolve_budget(budget: Optional[int], default: Optional[int] = None) -> int:
    """None falls back to the default; anything below one round is a config error."""
    budget = default if budget is None else budget
    if budget is None or budget < 1:
        raise ConfigError("budget must be at least 1", {"budget": budget})
    return budget


# ── Operators ────────────────────────────────────────────────────────

def improve(system: AgentSystem, variables: VariableSet, proposals: list[Proposal]) -> Candidate:
    """Apply proposals to a shadow copy; the live substrate is untouched."""
    staged: dict[str, str] = {}
    override: Optional[str] = None
    for proposal in proposals:
        variable = variables.get(proposal.variable_id)
        if variable is None:
            raise UnknownVariable(f"no variable {proposal.variable_id!r}", {"variable_id": proposal.variable_id})
        if variable.is_output:
            override = proposal.value
        elif not variable.learnable:
            raise NotLearnable(f"{proposal.variable_id!r} is not learnable", {"variable_id": proposal.variable_id})
        elif proposal.value != variable.value:
            staged[proposal.variable_id] = proposal.value

    shadow = system.substrate.clone()
    if staged:
        shadow.set_variables(staged)
    values = dict(staged)
    if override is not None:
        values[OUTPUT_VARIABLE] = override
    return Candidate(variables=variables.with_values(values), shadow=shadow, staged=staged, output_override=override)


def evaluate(
    system: AgentSystem,
    candidate: Candidate,
    objective: Objective,
    executor: Optional[SystemExecutor] = None,
) -> tuple[Evaluation, Execution]:
    """Run the system under the candidate state and score the result."""
    executor = executor or SystemExecutor()
    execution = executor.execute(system.with_substrate(candidate.shadow), objective)
    answer = candidate.output_override if candidate.output_override is not None else execution.answer

    return _assess(objective, execution, answer, candidate.shadow), execution


def commit(
    system: AgentSystem,
    candidate: Candidate,
    evaluation: Evaluation,
    best_score: float,
    audit: Trace,
) -> bool:
    """Accept iff score >= best so far and every safety flag passes."""
    accepted = evaluation.score >= best_score and evaluation.safe
    if accepted:
        versions = system.substrate.set_variables(candidate.staged) if candidate.staged else []
        audit.record(TraceEventKind.COMMIT, {
            "score": evaluation.score, "best": best_score,
            "variables": sorted(candidate.staged), "versions": versions,
        })
    else:
        audit.record(TraceEventKind.ROLLBACK, {
            "score": evaluation.score, "best": best_score,
            "variables": sorted(candidate.staged), "safety": evaluation.safety,
        })
    return accepted


def _assess(objective: Objective, execution: Execution, answer: str, substrate: ResourceSubstrate) -> Evaluation:
    flags: dict[str, bool] = {}
    for name in objective.safety:
        if name == "no_runtime_error":
            flags[name] = execution.error is None
        elif name == "output_nonempty":
            flags[name] = bool(answer.strip())
        elif name == "contract_parse_ok":
            flags[name] = _contracts_parse(substrate)
    score = 0.0 if execution.error is not None else score_answer(objective, answer, execution.trace)
    converged = all(flags.values()) and (
        score == 1.0 or (objective.threshold is not None and score >= objective.threshold)
    )
    return Evaluation(score=score, safety=flags, converged=converged, answer=answer)


def assess_execution(system: AgentSystem, objective: Objective, execution: Execution) -> Evaluation:
    """Evaluation of a plain run of the live system."""
    return _assess(objective, execution, execution.answer, system.substrate)


# ── Loop ─────────────────────────────────────────────────────────────

def run_loop(
    system: AgentSystem,
    objective: Objective,
    optimizer: Optimizer,
    budget: int,
    executor: Optional[SystemExecutor] = None,
) -> LoopResult:
    """reflect -> select -> improve -> evaluate -> commit -> re-execute, until converged or out of budget."""
    budget = resolve_budget(budget)
    validate_objective(objective)
    executor = executor or SystemExecutor()
    bind = getattr(optimizer, "bind", None)
    if bind is not None:
        bind(system)
    tracer = system.substrate.tracer
    variables = lift_variables(system)
    audit = Trace(f"audit-{uuid.uuid4().hex[:12]}")

    execution = executor.execute(system, objective)
    baseline = assess_execution(system, objective, execution)
    audit.record(TraceEventKind.EVALUATION, {"round": 0, "score": baseline.score, "safety": baseline.safety})
    variables = variables.with_values({OUTPUT_VARIABLE: execution.answer})
    current = baseline
    best = baseline.score
    traces = [execution.trace]
    evaluations: list[Evaluation] = []
    committed = []
    converged = baseline.converged
    rounds = 0

    while not converged and rounds < budget:
        rounds += 1
        with tracer.attach(audit):
            hypotheses, proposals = optimizer.propose(execution.trace, variables, objective, current)
        audit.record(TraceEventKind.DECISION, {
            "round": rounds,
            "hypotheses": [h.model_dump(mode="json") for h in hypotheses],
            "proposals": [p.variable_id for p in proposals],
        })
        try:
            candidate = improve(system, variables, proposals)
        except (UnknownVariable, NotLearnable) as e:
            # malformed proposal set: nothing staged, round counts as rejected
            audit.record(TraceEventKind.ROLLBACK, {"round": rounds, "error": e.to_dict()})
            evaluations.append(current)
            committed.append(best)
            continue
        evaluation, candidate_run = evaluate(system, candidate, objective, executor)
        traces.append(candidate_run.trace)
        evaluations.append(evaluation)
        audit.record(TraceEventKind.EVALUATION, {"round": rounds, "score": evaluation.score, "safety": evaluation.safety})

        accepted = commit(system, candidate, evaluation, best, audit)
        logger.info("round %d: score=%.3f best=%.3f %s", rounds, evaluation.score, best,
                    "accept" if accepted else "reject")
        if accepted:
            best = evaluation.score
            current = evaluation
            converged = evaluation.converged
            # re-execute the committed state for the next reflection
            execution = executor.execute(system, objective) if candidate.output_override is None else candidate_run
            variables = candidate.variables.with_values({OUTPUT_VARIABLE: evaluation.answer})
        committed.append(best)

    audit.close(variables.output.value, converged)
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
        answer=variables.output.value,
    )


def trainable_prompt_variables(variables: VariableSet) -> list[EvolvableVariable]:
    return [v for v in variables.trainable() if v.origin.startswith(f"{EntityKind.PROMPT.value}:")]
