"""
test_agent_bus.py - Message bus, plan.md, orchestration rounds and agent-as-tool
"""

import threading

import pytest

from app.models.gateway import RouteConfig
from app.models.bus import BusMessage, Plan, PlanStep, StepStatus
from app.models.trace import TraceEventKind
from app.services.agent_bus import (
    MessageBus,
    Orchestrator,
    orchestrate,
    parse_plan_md,
    render_plan_md,
    wrap_agent_as_tool,
)
from app.services.ai_client import ScriptedBackend
from app.services.errors import DuplicateName, NoAgents, NotFound, ParseError
from app.services.tracer import Trace
from tests.conftest import rule

TWO_STEP_PLAN = """Here is the plan.
# Plan: greet and summarize

```flowchart
step-1 --> step-2
```

- [ ] step-1 (echo): hello
- [ ] step-2 (echo2): summarize
"""

ENDLESS_REPLAN = """# Plan: keep going

- [ ] again-1 (echo): hello
"""


def _add_echo_clone(substrate, record, name="echo2"):
    substrate.agents.register(record(
        name,
        description="Second echo agent",
        mapping={"prompts": ["echo_prompt"], "use_case": "actor", "max_steps": 2},
        impl="builtin:tool_calling_agent",
    ))


class TestMessageBus:
    def test_fifo_per_topic(self):
        bus = MessageBus()
        for i in range(3):
            bus.publish(BusMessage(topic="t", sender="s", correlation_id=str(i)))
        bus.publish(BusMessage(topic="other", sender="s", correlation_id="x"))
        assert [bus.receive("t", timeout=0.1).correlation_id for _ in range(3)] == ["0", "1", "2"]
        assert bus.pending("other") == 1
        assert bus.receive("t", timeout=0.01) is None

    def test_publish_records_message_events(self):
        trace = Trace()
        bus = MessageBus(trace)
        bus.publish(BusMessage(topic="t", sender="a", correlation_id="c1", payload={"k": 1}))
        event = trace.of_kind(TraceEventKind.MESSAGE)[0]
        assert event.payload["correlation_id"] == "c1"

    def test_publish_after_close_still_delivers(self):
        trace = Trace()
        bus = MessageBus(trace)
        trace.close()
        bus.publish(BusMessage(topic="t", sender="a", correlation_id="late"))
        assert bus.receive("t", timeout=0.1).correlation_id == "late"

    def test_many_producers(self):
        bus = MessageBus()

        def produce(n):
            for i in range(50):
                bus.publish(BusMessage(topic="t", sender=str(n), correlation_id=f"{n}:{i}"))

        threads = [threading.Thread(target=produce, args=(n,)) for n in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert bus.pending("t") == 200


class TestPlanMarkdown:
    def test_render_then_parse(self):
        plan = Plan(title="demo", steps=[
            PlanStep(step_id="a", description="first thing", agent="x", status=StepStatus.DONE),
            PlanStep(step_id="b", description="second: with colon", agent="y"),
        ])
        text = render_plan_md(plan)
        assert "- [x] a (x): first thing" in text
        assert "```flowchart\na --> b\n```" in text
        parsed = parse_plan_md(text)
        assert parsed.title == "demo"
        assert parsed.flowchart == "a --> b"
        assert [(s.step_id, s.agent, s.description, s.status) for s in parsed.steps] == [
            ("a", "x", "first thing", StepStatus.DONE),
            ("b", "y", "second: with colon", StepStatus.PENDING),
        ]

    def test_chatter_before_title_ignored(self):
        plan = parse_plan_md(TWO_STEP_PLAN)
        assert plan.title == "greet and summarize"
        assert [s.agent for s in plan.steps] == ["echo", "echo2"]

    @pytest.mark.parametrize("text", [
        "no title at all\n- [ ] a (x): y",
        "# Plan: t\n- [ ] missing agent",
        "# Plan: t\n```flowchart\na --> b\n",
    ])
    def test_malformed(self, text):
        with pytest.raises(ParseError):
            parse_plan_md(text)


class TestOrchestrate:
    def test_single_agent_completes_in_one_round(self, echo_agent_substrate):
        result = orchestrate(echo_agent_substrate, "hello", ["echo"], max_rounds=3, round_timeout=5.0)
        assert result.complete
        assert result.rounds == 1
        assert result.plan_versions == ["0.1.0", "0.1.1"]
        assert result.plan.revision == "0.1.1"
        assert result.answer == "step-1 (echo): echo: hello"
        stored = echo_agent_substrate.memories.get_state("plan")["payload"]["plan.md"]
        assert [s.status for s in parse_plan_md(stored).steps] == [StepStatus.DONE]

    def test_two_agents_run_concurrently(self, echo_agent_substrate, record):
        substrate = echo_agent_substrate
        _add_echo_clone(substrate, record)
        substrate.gateway.register_backend("planner", _planner_backend(plan=TWO_STEP_PLAN, review="COMPLETE"))
        substrate.gateway.set_route("planner", _route("planner"))

        orchestrator = Orchestrator(substrate, round_timeout=5.0)
        result = orchestrator.orchestrate("greet then summarize", ["echo", "echo2"])
        assert result.complete and result.rounds == 1
        assert sorted(result.results) == ["r1:step-1", "r1:step-2"]
        assert result.results["r1:step-1"].answer == "echo: hello"
        assert result.results["r1:step-2"].answer == "echo: summary"
        assert result.answer.splitlines() == ["step-1 (echo): echo: hello", "step-2 (echo2): echo: summary"]
        messages = orchestrator.trace.of_kind(TraceEventKind.MESSAGE)
        assert len(messages) == 4
        assert orchestrator.trace.closed

    def test_max_rounds_bounds_an_endless_planner(self, echo_agent_substrate):
        substrate = echo_agent_substrate
        substrate.gateway.register_backend("planner", _planner_backend(plan=None, review=ENDLESS_REPLAN))
        substrate.gateway.set_route("planner", _route("planner"))
        result = orchestrate(substrate, "hello", ["echo"], max_rounds=1, round_timeout=5.0)
        assert not result.complete
        assert result.rounds == 1
        assert len(result.plan_versions) == 2
        assert [s.step_id for s in result.plan.steps] == ["again-1"]

    def test_failed_step_retried_until_budget(self, echo_agent_substrate, record):
        substrate = echo_agent_substrate
        substrate.agents.register(record("broken", mapping={"prompts": ["missing"]}, impl="builtin:tool_calling_agent"))
        result = orchestrate(substrate, "hello", ["broken"], max_rounds=2, round_timeout=5.0)
        assert not result.complete
        assert result.rounds == 2
        assert sorted(result.results) == ["r1:step-1", "r2:step-1"]
        assert not any(r.ok for r in result.results.values())
        assert result.plan.steps[0].status == StepStatus.FAILED
        assert result.answer == ""

    def test_results_shared_through_memory(self, echo_agent_substrate, record):
        echo_agent_substrate.memories.register(record("shared", mapping={"payload": {}}))
        orchestrate(echo_agent_substrate, "hello", ["echo"], shared_memory="shared", round_timeout=5.0)
        state = echo_agent_substrate.memories.get_state("shared")["payload"]
        assert state["r1:step-1"]["answer"] == "echo: hello"

    def test_plan_name_must_be_free(self, echo_agent_substrate):
        orchestrate(echo_agent_substrate, "hello", ["echo"], round_timeout=5.0)
        with pytest.raises(DuplicateName):
            orchestrate(echo_agent_substrate, "hello", ["echo"], round_timeout=5.0)
        orchestrate(echo_agent_substrate, "hello", ["echo"], plan_name="plan-2", round_timeout=5.0)

    def test_no_agents(self, echo_agent_substrate):
        with pytest.raises(NoAgents):
            orchestrate(echo_agent_substrate, "hello", [])

    def test_unknown_agent(self, echo_agent_substrate):
        with pytest.raises(NotFound):
            orchestrate(echo_agent_substrate, "hello", ["ghost"])


class TestAgentAsTool:
    def test_wrapped_tool_matches_direct_run(self, echo_agent_substrate):
        record = wrap_agent_as_tool(echo_agent_substrate, "echo")
        assert record.name == "echo_tool"
        assert record.entity.metadata == {"wraps_agent": "echo"}
        direct = echo_agent_substrate.agents.run("echo", {"task": "hello"})["answer"]
        assert echo_agent_substrate.tools.run("echo_tool", {"task": "hello"}) == direct == "echo: hello"

    def test_wrapped_tool_is_retrievable_with_contract(self, echo_agent_substrate, tmp_path):
        wrap_agent_as_tool(echo_agent_substrate, "echo", tool_name="delegate_echo")
        assert echo_agent_substrate.tools.retrieve("delegate a task to echo")[0][0] == "delegate_echo"
        echo_agent_substrate.tools.save_contract("tool", tmp_path / "tools.md")
        section = echo_agent_substrate.tools.load_contract(tmp_path / "tools.md").sections[0]
        assert [a.name for a in section.arguments] == ["task"]

    def test_unregistered_agent_surfaces_not_found(self, echo_agent_substrate):
        wrap_agent_as_tool(echo_agent_substrate, "echo")
        echo_agent_substrate.agents.unregister("echo")
        with pytest.raises(NotFound):
            echo_agent_substrate.tools.run("echo_tool", {"task": "hello"})

    def test_unknown_agent(self, echo_agent_substrate):
        with pytest.raises(NotFound):
            wrap_agent_as_tool(echo_agent_substrate, "ghost")


def _planner_backend(plan, review):
    rules = [rule("^Review this round", review, match="pattern")]
    if plan is not None:
        rules.insert(0, rule("^Plan this task", plan, match="pattern"))
    return ScriptedBackend(rules)


def _route(name):
    return RouteConfig.of(name)
