"""Shared fixtures: fresh substrates, record builders and scripted models."""

import sys
from pathlib import Path
from typing import Any, Optional

import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from app.models.gateway import RouteConfig, ScriptedRule
from app.models.resource import EntityKind, ExportForm, ExportedRepresentation, RegistrationRecord, ResourceEntity
from app.services.ai_client import ModelGateway, ScriptedBackend
from app.services.registry import ResourceSubstrate
from app.services.tracer import Tracer


def make_record(
    name: str,
    description: str = "",
    mapping: Optional[dict[str, Any]] = None,
    trainable: bool = False,
    impl: str = "",
    init_params: Optional[dict[str, Any]] = None,
    exports: tuple = (),
    metadata: Optional[dict[str, Any]] = None,
) -> RegistrationRecord:
    return RegistrationRecord(
        entity=ResourceEntity(
            name=name,
            description=description,
            mapping=mapping or {},
            trainable=trainable,
            metadata=metadata or {},
        ),
        impl_descriptor=impl,
        init_params=init_params or {},
        exports=exports,
    )


ADD_TOOL_SOURCE = "def run(a, b):\n    return a + b\n"


@pytest.fixture
def record():
    """Record builder: record(name, **fields)."""
    return make_record


@pytest.fixture
def prompt_record():
    def build(name: str, text: str, trainable: bool = True, **kw) -> RegistrationRecord:
        return make_record(name, mapping={"prompt_text": text}, trainable=trainable, **kw)
    return build


@pytest.fixture
def add_tool():
    return make_record(
        "adder",
        description="Adds two integers",
        impl=ADD_TOOL_SOURCE,
        trainable=True,
        exports=(
            ExportedRepresentation(form=ExportForm.NATURAL_LANGUAGE_TEXT, body="adds two integers a and b"),
            ExportedRepresentation(
                form=ExportForm.FUNCTION_CALLING_SCHEMA,
                body='{"name": "adder", "parameters": {"type": "object", "properties": '
                     '{"a": {"type": "integer", "description": "left"}, "b": {"type": "integer", "description": "right"}}}}',
            ),
        ),
    )


@pytest.fixture
def tracer():
    return Tracer()


@pytest.fixture
def substrate(tracer):
    return ResourceSubstrate(gateway=ModelGateway(tracer=tracer, backoff_seconds=0.0))


@pytest.fixture
def scripted_substrate(tracer):
    """Factory: substrate whose 'actor' route and everything else go to two scripted backends."""

    def build(actor_rules=(), actor_default=None, critic_rules=(), critic_default=None) -> ResourceSubstrate:
        gateway = ModelGateway(tracer=tracer, backoff_seconds=0.0)
        gateway.register_backend("actor", ScriptedBackend(list(actor_rules), default=actor_default))
        gateway.register_backend("critic", ScriptedBackend(list(critic_rules), default=critic_default))
        gateway.set_route("actor", RouteConfig.of("actor"))
        gateway.set_route("default", RouteConfig.of("critic"))
        return ResourceSubstrate(gateway=gateway)

    return build


def rule(value: str, response: str = "", **kw) -> ScriptedRule:
    return ScriptedRule(value=value, response=response, **kw)


@pytest.fixture
def echo_agent_substrate(scripted_substrate, prompt_record, record):
    """One agent 'echo' whose scripted model answers 'echo: <task>' for a few known tasks."""
    substrate = scripted_substrate(
        actor_rules=[
            rule("hello", "echo: hello"),
            rule("summarize", "echo: summary"),
        ],
        actor_default="echo: ?",
    )
    substrate.prompts.register(prompt_record("echo_prompt", "Repeat the task.", trainable=False))
    substrate.agents.register(record(
        "echo",
        description="Echoes its task back",
        mapping={"prompts": ["echo_prompt"], "use_case": "actor", "max_steps": 2},
        impl="builtin:tool_calling_agent",
    ))
    return substrate


@pytest.fixture
def kinds():
    return list(EntityKind)
