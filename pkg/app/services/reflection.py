"""
reflection.py - Reflection optimizer (reflect on a trace, then select edits)

Provides:
- reflection_round(trace, variables, gateway, ...) -> (hypotheses, proposals)
- ReflectionOptimizer - plugs reflection_round into run_loop
- helpers shared by the RL optimizers: parse_model_json, render_variables,
  parse_proposals, parse_hypotheses
"""

import json
import logging
import re
from typing import Any, Optional

from app.models.evolution import Evaluation, Hypothesis, Objective, Proposal, Severity, VariableSet
from app.models.trace import TraceEventKind
from app.services.ai_client import ModelGateway
from app.services.errors import AllProvidersFailed, ConfigError
from app.services.prompts import build_messages
from app.services.evolution_loop import AgentSystem, LoopResult, run_loop
from app.services.tracer import Trace

logger = logging.getLogger(__name__)

_JSON_BLOCK_RE = re.compile(r"\{.*\}", re.DOTALL)


def parse_model_json(text: str) -> Optional[dict[str, Any]]:
    """First JSON object in a model reply (code fences tolerated), else None."""
    match = _JSON_BLOCK_RE.search(text or "")
    if not match:
        return None
    try:
        value = json.loads(match.group(0))
    except json.JSONDecodeError:
        return None
    return value if isinstance(value, dict) else None


def render_variables(variables: VariableSet) -> str:
    lines = []
    for v in variables.variables:
        flag = "learnable" if v.learnable or v.is_output else "frozen"
        lines.append(f"- id: {v.variable_id} ({flag})\n  role: {v.role_description}\n  value: {json.dumps(v.value)}")
    return "\n".join(lines)


def parse_hypotheses(raw: Any, variables: VariableSet) -> list[Hypothesis]:
    hypotheses = []
    for item in raw if isinstance(raw, list) else []:
        if not isinstance(item, dict) or not item.get("text"):
            continue
        targets = [t for t in item.get("targets") or [] if t in variables]
        try:
            severity = Severity(item.get("severity", "medium"))
        except ValueError:
            severity = Severity.MEDIUM
        hypotheses.append(Hypothesis(text=str(item["text"]), targets=targets, severity=severity))
    return hypotheses


def parse_proposals(raw: Any, variables: VariableSet) -> tuple[list[Proposal], list[str]]:
    """Proposals restricted to learnable variables plus the output; returns (kept, rejected ids)."""
    kept, rejected = [], []
    allowed = {v.variable_id for v in variables.trainable()} | {variables.output.variable_id}
    for item in raw if isinstance(raw, list) else []:
        if not isinstance(item, dict) or "variable_id" not in item or "value" not in item:
            continue
        if item["variable_id"] not in allowed:
            rejected.append(str(item["variable_id"]))
            continue
        kept.append(Proposal(
            variable_id=item["variable_id"],
            value=str(item["value"]),
            rationale=str(item.get("rationale", "")),
        ))
    return kept, rejected


def warn(gateway: ModelGateway, message: str, **payload: Any) -> None:
    logger.warning(message)
    gateway.tracer.emit(TraceEventKind.WARNING, {"message": message, **payload})


def ask_json(gateway: ModelGateway, messages: list[dict], use_case: str, stage: str) -> Optional[dict[str, Any]]:
    """One model call expected to return a JSON object; degrades to None with a warning event."""
    try:
        reply = gateway.chat(messages, use_case=use_case)
    except AllProvidersFailed as e:
        warn(gateway, f"{stage}: model call failed", error=e.to_dict())
        return None
    parsed = parse_model_json(reply)
    if parsed is None:
        warn(gateway, f"{stage}: unparseable model output", reply=reply[:500])
    return parsed


def reflection_round(
    trace: Trace,
    variables: VariableSet,
    gateway: ModelGateway,
    task: str = "",
    score: Optional[float] = None,
    use_case: str = "optimizer",
) -> tuple[list[Hypothesis], list[Proposal]]:
    """Diagnose failures in the trace, then turn hypotheses into edits."""
    if trace.outcome.success and not trace.has_errors():
        return [], []

    reflected = ask_json(gateway, build_messages(
        "reflect.yaml",
        task=task,
        trace=trace.render(),
        variables=render_variables(variables),
        score="unknown" if score is None else f"{score:.3f}",
    ), use_case, "reflect")
    if reflected is None:
        return [], []
    hypotheses = parse_hypotheses(reflected.get("hypotheses"), variables)
    if not hypotheses:
        return [], []

    selected = ask_json(gateway, build_messages(
        "select.yaml",
        task=task,
        hypotheses=json.dumps([h.model_dump(mode="json") for h in hypotheses], indent=2),
        variables=render_variables(variables),
    ), use_case, "select")
    if selected is None:
        return hypotheses, []
    proposals, rejected = parse_proposals(selected.get("proposals"), variables)
    if rejected:
        warn(gateway, "select: dropped proposals for non-learnable variables", rejected=rejected)
    return hypotheses, proposals


class ReflectionOptimizer:
    def __init__(self, use_case: str = "optimizer"):
        self.use_case = use_case
        self._gateway: Optional[ModelGateway] = None

    def bind(self, system: AgentSystem) -> None:
        self._gateway = system.substrate.gateway

    def propose(
        self, trace: Trace, variables: VariableSet, objective: Objective, evaluation: Evaluation,
    ) -> tuple[list[Hypothesis], list[Proposal]]:
        if self._gateway is None:
            raise ConfigError("reflection optimizer is not bound to a system")
        return reflection_round(trace, variables, self._gateway, objective.task, evaluation.score, self.use_case)

    def run(self, system: AgentSystem, objective: Objective, budget: int) -> LoopResult:
        return run_loop(system, objective, self, budget)
