"""
agent_bus.py - Message bus and orchestrator for multi-agent runs

Provides:
- MessageBus - topic queues; every publish lands in the attached trace
- render_plan_md / parse_plan_md - the plan.md artifact format
- Orchestrator.orchestrate(task, sub_agents, max_rounds) -> OrchestrationResult
- wrap_agent_as_tool(substrate, agent) -> RegistrationRecord

Sub-agents never call each other: the orchestrator publishes one subtask per
plan step on the agent's topic, workers answer on the results topic, and the
orchestrator collects by correlation id until the round deadline.
"""

import json
import logging
import queue
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Optional

from app.config import settings
from app.models.bus import BusMessage, OrchestrationResult, Plan, PlanStep, StepStatus, SubtaskResult
from app.models.resource import EntityKind, ExportForm, ExportedRepresentation, RegistrationRecord, ResourceEntity
from app.models.trace import TraceEventKind
from app.services.errors import (
    AllProvidersFailed,
    DuplicateName,
    NoAgents,
    NotFound,
    ParseError,
    ProtocolError,
    TraceClosed,
)
from app.services.prompts import build_messages
from app.services.registry import ResourceSubstrate
from app.services.tracer import Trace

logger = logging.getLogger(__name__)

ORCHESTRATOR = "orchestrator"
RESULTS_TOPIC = "results"
PLAN_KEY = "plan.md"
COMPLETE = "COMPLETE"


def agent_topic(agent: str) -> str:
    return f"agent.{agent}"


# ── Bus ──────────────────────────────────────────────────────────────


class MessageBus:
    """In-process multi-producer/multi-consumer bus; one FIFO queue per topic."""

    def __init__(self, trace: Optional[Trace] = None):
        self.trace = trace
        self._topics: dict[str, queue.Queue] = {}
        self._lock = threading.Lock()

    def _queue(self, topic: str) -> queue.Queue:
        with self._lock:
            return self._topics.setdefault(topic, queue.Queue())

    def publish(self, message: BusMessage) -> None:
        if self.trace is not None:
            try:
                self.trace.record(TraceEventKind.MESSAGE, message.model_dump())
            except TraceClosed:
                logger.debug("late message on %s after the run closed", message.topic)
        self._queue(message.topic).put(message)

    def receive(self, topic: str, timeout: Optional[float] = None) -> Optional[BusMessage]:
        try:
            return self._queue(topic).get(timeout=timeout)
        except queue.Empty:
            return None

    def pending(self, topic: str) -> int:
        return self._queue(topic).qsize()


# ── plan.md ──────────────────────────────────────────────────────────

_STEP_RE = re.compile(r"^- \[([ xX])\] (\S+) \(([^)]+)\):\s*(.*)$")


def default_flowchart(steps: list[PlanStep]) -> str:
    return " --> ".join(s.step_id for s in steps)


def render_plan_md(plan: Plan) -> str:
    lines = [f"# Plan: {plan.title}", "", "```flowchart", plan.flowchart or default_flowchart(plan.steps), "```", ""]
    for step in plan.steps:
        mark = "x" if step.status == StepStatus.DONE else " "
        lines.append(f"- [{mark}] {step.step_id} ({step.agent}): {step.description}")
    return "\n".join(lines) + "\n"


def parse_plan_md(text: str) -> Plan:
    """Read plan.md back; text before the title line (model chatter) is ignored."""
    lines = (text or "").splitlines()
    start = next((i for i, line in enumerate(lines) if line.startswith("# ")), None)
    if start is None:
        raise ParseError("plan.md has no title line", {"line": 1})
    title = lines[start][2:].strip()
    title = title[len("Plan:"):].strip() if title.startswith("Plan:") else title

    flowchart: list[str] = []
    steps: list[PlanStep] = []
    in_fence = False
    for lineno, line in enumerate(lines[start + 1:], start=start + 2):
        if line.startswith("```"):
            in_fence = not in_fence
            continue
        if in_fence:
            flowchart.append(line)
            continue
        if not line.startswith("- ["):
            continue
        match = _STEP_RE.match(line)
        if not match:
            raise ParseError(f"line {lineno}: malformed checklist item", {"line": lineno})
        steps.append(PlanStep(
            step_id=match[2],
            agent=match[3].strip(),
            description=match[4].strip(),
            status=StepStatus.DONE if match[1] in "xX" else StepStatus.PENDING,
        ))
    if in_fence:
        raise ParseError("plan.md flowchart block is not closed", {"line": len(lines)})
    return Plan(title=title, flowchart="\n".join(flowchart).strip(), steps=steps)


def fallback_plan(task: str, agents: list[str]) -> Plan:
    steps = [PlanStep(step_id=f"step-{i}", description=task, agent=a) for i, a in enumerate(agents, start=1)]
    return Plan(title=task.splitlines()[0][:80] if task else "task", steps=steps)


def summarize(plan: Plan, answers: dict[str, SubtaskResult]) -> str:
    """Deterministic concatenation of the successful answers, plan order first."""
    order = [s.step_id for s in plan.steps if s.step_id in answers]
    order += sorted(set(answers) - set(order))
    return "\n".join(f"{sid} ({answers[sid].agent}): {answers[sid].answer}" for sid in order)


# ── Orchestrator ─────────────────────────────────────────────────────


class Orchestrator:
    def __init__(
        self,
        substrate: ResourceSubstrate,
        planner_use_case: str = "planner",
        plan_name: str = "plan",
        shared_memory: Optional[str] = None,
        round_timeout: Optional[float] = None,
    ):
        self.substrate = substrate
        self.planner_use_case = planner_use_case
        self.plan_name = plan_name
        self.shared_memory = shared_memory
        self.round_timeout = round_timeout if round_timeout is not None else settings.bus_round_timeout_seconds
        self.bus = MessageBus()
        self.trace: Optional[Trace] = None

    # ── Planner calls ────────────────────────────────────────────────

    def _ask_planner(self, prompt_name: str, **values: Any) -> Optional[str]:
        try:
            with self.substrate.tracer.attach(self.trace):
                return self.substrate.gateway.chat(build_messages(prompt_name, **values), use_case=self.planner_use_case)
        except AllProvidersFailed as e:
            logger.warning("planner call %s failed: %s", prompt_name, e.message)
            return None

    def initial_plan(self, task: str, agents: list[str]) -> Plan:
        reply = self._ask_planner("orchestrator_plan.yaml", task=task, agents=self._describe_agents(agents))
        plan = self._parse_reply(reply, agents)
        return plan if plan is not None else fallback_plan(task, agents)

    def _describe_agents(self, agents: list[str]) -> str:
        lines = []
        for name in agents:
            record = self.substrate.agents.get_info(name)
            lines.append(f"- {name}: {record.entity.description or '(no description)'}")
        return "\n".join(lines)

    def _parse_reply(self, reply: Optional[str], agents: list[str]) -> Optional[Plan]:
        if not reply:
            return None
        try:
            plan = parse_plan_md(reply)
        except ParseError as e:
            logger.warning("unparseable plan from planner: %s", e.message)
            return None
        unknown = sorted({s.agent for s in plan.steps} - set(agents))
        if unknown:
            logger.warning("planner assigned unknown agents %s", unknown)
            return None
        return plan if plan.steps else None

    # ── Plan resource ────────────────────────────────────────────────

    def _register_plan(self, plan: Plan) -> str:
        memories = self.substrate.memories
        if self.plan_name in memories:
            raise DuplicateName(f"plan resource {self.plan_name!r} already exists", {"name": self.plan_name})
        return memories.register(RegistrationRecord(
            entity=ResourceEntity(
                name=self.plan_name,
                description="Orchestrator plan (plan.md)",
                mapping={"payload": {PLAN_KEY: render_plan_md(plan)}},
            ),
            impl_descriptor="builtin:key_value_memory",
        ))

    def _revise_plan(self, plan: Plan) -> str:
        return self.substrate.memories.update(
            self.plan_name, {"mapping": {"payload": {PLAN_KEY: render_plan_md(plan)}}},
        )

    # ── Rounds ───────────────────────────────────────────────────────

    def _work(self, agent: str) -> None:
        """One sub-agent turn: take a subtask off the agent's topic, answer on the results topic."""
        message = self.bus.receive(agent_topic(agent), timeout=self.round_timeout)
        if message is None:
            return
        payload = message.payload
        try:
            with self.substrate.tracer.attach(self.trace):
                output = self.substrate.agents.run(agent, {"task": payload["description"], "context": payload["task"]})
            result = {"ok": True, "answer": str(output.get("answer", "") if isinstance(output, dict) else output)}
        except ProtocolError as e:
            result = {"ok": False, "error": e.message}
        self.bus.publish(BusMessage(
            topic=RESULTS_TOPIC,
            sender=agent,
            correlation_id=message.correlation_id,
            payload={"step_id": payload["step_id"], **result},
        ))

    def _broadcast(self, round_no: int, task: str, steps: list[PlanStep]) -> dict[str, PlanStep]:
        expected = {}
        for step in steps:
            correlation_id = f"r{round_no}:{step.step_id}"
            expected[correlation_id] = step
            self.bus.publish(BusMessage(
                topic=agent_topic(step.agent),
                sender=ORCHESTRATOR,
                correlation_id=correlation_id,
                payload={"step_id": step.step_id, "description": step.description, "task": task},
            ))
        return expected

    def _collect(self, expected: dict[str, PlanStep]) -> dict[str, SubtaskResult]:
        """Barrier over the round's correlation ids; stragglers become failed results."""
        results: dict[str, SubtaskResult] = {}
        deadline = time.monotonic() + self.round_timeout
        while len(results) < len(expected):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                break
            message = self.bus.receive(RESULTS_TOPIC, timeout=remaining)
            if message is None:
                break
            step = expected.get(message.correlation_id)
            if step is None:
                # late answer from an earlier round
                continue
            results[message.correlation_id] = SubtaskResult(
                correlation_id=message.correlation_id,
                step_id=step.step_id,
                agent=message.sender,
                ok=bool(message.payload.get("ok")),
                answer=str(message.payload.get("answer", "")),
                error=str(message.payload.get("error", "")),
            )
        for correlation_id, step in expected.items():
            if correlation_id not in results:
                results[correlation_id] = SubtaskResult(
                    correlation_id=correlation_id, step_id=step.step_id, agent=step.agent,
                    ok=False, error="timed out",
                )
        return results

    def _run_round(self, round_no: int, task: str, plan: Plan) -> dict[str, SubtaskResult]:
        todo = [s for s in plan.steps if s.status != StepStatus.DONE]
        expected = self._broadcast(round_no, task, todo)
        pool = ThreadPoolExecutor(max_workers=max(1, len(todo)), thread_name_prefix="sub-agent")
        try:
            for step in todo:
                pool.submit(self._work, step.agent)
            return self._collect(expected)
        finally:
            pool.shutdown(wait=False, cancel_futures=True)

    def _share(self, results: dict[str, SubtaskResult]) -> None:
        if not self.shared_memory:
            return
        for correlation_id, result in results.items():
            self.substrate.memories.run(self.shared_memory, {
                "op": "write", "key": correlation_id, "value": result.model_dump(),
            })

    def _review(self, task: str, plan: Plan, summary: str, results: dict[str, SubtaskResult],
                agents: list[str]) -> tuple[bool, Optional[Plan]]:
        """(complete?, replacement plan). The planner either says COMPLETE or sends a new plan."""
        reply = self._ask_planner(
            "orchestrator_review.yaml",
            task=task,
            plan=render_plan_md(plan),
            results="\n".join(
                f"- {cid} ({r.agent}): {'ok ' + r.answer if r.ok else 'FAILED ' + r.error}"
                for cid, r in sorted(results.items())
            ),
            summary=summary or "(nothing yet)",
        )
        if reply is not None and reply.strip().splitlines()[:1] == [COMPLETE]:
            return plan.complete, None
        replan = self._parse_reply(reply, agents)
        if replan is not None:
            return False, replan
        return plan.complete, None

    def orchestrate(self, task: str, sub_agents: list[str], max_rounds: int = 3) -> OrchestrationResult:
        if not sub_agents:
            raise NoAgents("orchestration needs at least one sub-agent")
        for agent in sub_agents:
            if agent not in self.substrate.agents:
                raise NotFound(f"no agent named {agent!r}", {"kind": EntityKind.AGENT.value, "name": agent})

        self.trace = Trace()
        self.bus = MessageBus(self.trace)
        plan = self.initial_plan(task, sub_agents)
        versions = [self._register_plan(plan)]
        answers: dict[str, SubtaskResult] = {}
        all_results: dict[str, SubtaskResult] = {}
        complete = False
        rounds = 0

        while rounds < max_rounds and not complete:
            rounds += 1
            results = self._run_round(rounds, task, plan)
            all_results.update(results)
            self._share(results)
            done = {r.step_id for r in results.values() if r.ok}
            for result in results.values():
                if result.ok:
                    answers[result.step_id] = result
            plan = plan.model_copy(update={"steps": [
                s.model_copy(update={"status": StepStatus.DONE}) if s.step_id in done
                else s.model_copy(update={"status": StepStatus.FAILED}) if s.status != StepStatus.DONE
                else s
                for s in plan.steps
            ]})
            complete, replan = self._review(task, plan, summarize(plan, answers), results, sub_agents)
            if replan is not None:
                plan = replan
            versions.append(self._revise_plan(plan))
            logger.info("orchestration round %d: %d/%d step(s) done, complete=%s",
                        rounds, sum(s.status == StepStatus.DONE for s in plan.steps), len(plan.steps), complete)

        answer = summarize(plan, answers)
        self.trace.close(answer, complete)
        return OrchestrationResult(
            answer=answer,
            complete=complete,
            rounds=rounds,
            plan=plan.model_copy(update={"revision": versions[-1]}),
            plan_versions=versions,
            results=all_results,
        )


def orchestrate(substrate: ResourceSubstrate, task: str, sub_agents: list[str], max_rounds: int = 3,
                **options: Any) -> OrchestrationResult:
    return Orchestrator(substrate, **options).orchestrate(task, sub_agents, max_rounds)


# ── Agent as tool ────────────────────────────────────────────────────


def wrap_agent_as_tool(substrate: ResourceSubstrate, agent: str, tool_name: Optional[str] = None) -> RegistrationRecord:
    """Register a Tool whose run() dispatches the agent and returns its final answer."""
    source = substrate.agents.get_info(agent)
    name = tool_name or f"{agent}_tool"
    description = f"Delegate a task to agent {agent}. {source.entity.description}".strip()
    schema = json.dumps({
        "name": name,
        "description": f"Delegate a task to agent {agent}",
        "parameters": {
            "type": "object",
            "properties": {"task": {"type": "string", "description": "task for the agent"}},
            "required": ["task"],
        },
    }, sort_keys=True)
    substrate.tools.register(RegistrationRecord(
        entity=ResourceEntity(name=name, description=description, metadata={"wraps_agent": agent}),
        impl_descriptor="builtin:agent_tool",
        init_params={"agent": agent},
        exports=(
            ExportedRepresentation(form=ExportForm.NATURAL_LANGUAGE_TEXT, body=description),
            ExportedRepresentation(form=ExportForm.FUNCTION_CALLING_SCHEMA, body=schema),
        ),
    ))
    logger.info("agent %s wrapped as tool %s", agent, name)
    return substrate.tools.get_info(name)
