"""
toy_tasks.py - Bundled offline evolution tasks

Provides:
- list_toy_tasks() -> names under app/data/toy_tasks
- load_toy_task(name_or_path) -> ToyTask
- load_evolution_task(name_or_path) -> ToyTask, or a bare Objective for an agent
  already in the store
- build_toy_system(task) -> AgentSystem wired to two scripted backends:
  "actor" (the agent being evolved) and "critic" (evaluator, optimizer, planner)
- install_toy_task(substrate, task) -> registers only what the store lacks
"""

import json
import logging
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from app.models.evolution import Objective
from app.models.gateway import RouteConfig
from app.models.optimizer import ModelRoles
from app.models.toy_task import ToyTask
from app.services.ai_client import ModelGateway, ScriptedBackend
from app.services.codec import decode_record
from app.services.errors import ConfigError, NotFound
from app.services.registry import ResourceSubstrate
from app.services.evolution_loop import AgentSystem
from app.services.tracer import Tracer

logger = logging.getLogger(__name__)

TOY_TASK_DIR = Path(__file__).parent.parent / "data" / "toy_tasks"


def list_toy_tasks() -> list[str]:
    names = []
    for path in sorted(TOY_TASK_DIR.glob("*.json")):
        names.append(json.loads(path.read_text(encoding="utf-8"))["name"])
    return names


def _task_path(name_or_path: str) -> Path:
    path = Path(name_or_path)
    if path.suffix == ".json" and path.exists():
        return path
    for candidate in sorted(TOY_TASK_DIR.glob("*.json")):
        if candidate.stem == name_or_path.replace("-", "_"):
            return candidate
    raise NotFound(f"no toy task {name_or_path!r}", {"name": name_or_path, "known": list_toy_tasks()})


def load_toy_task(name_or_path: str) -> ToyTask:
    path = _task_path(name_or_path)
    try:
        return ToyTask.model_validate_json(path.read_text(encoding="utf-8"))
    except (OSError, ValidationError) as e:
        raise ConfigError(f"invalid task file {path}: {e}", {"path": str(path)})


def load_evolution_task(name_or_path: str) -> ToyTask | Objective:
    """A toy task, or a bare objective when the file names no resources and no agent."""
    path = _task_path(name_or_path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(document, dict) and "resources" not in document and "agent" not in document:
            return Objective.model_validate(document)
        return ToyTask.model_validate(document)
    except (OSError, ValueError) as e:
        raise ConfigError(f"invalid task file {path}: {e}", {"path": str(path)})


def build_toy_gateway(task: ToyTask, tracer: Optional[Tracer] = None, roles: Optional[ModelRoles] = None) -> ModelGateway:
    roles = roles or ModelRoles()
    gateway = ModelGateway(tracer=tracer, backoff_seconds=0.0)
    gateway.register_backend("actor", ScriptedBackend(task.actor_rules, default=task.actor_default))
    gateway.register_backend("critic", ScriptedBackend(task.critic_rules, default=task.critic_default))
    gateway.set_route(roles.actor, RouteConfig.of("actor"))
    for use_case in (roles.evaluator, roles.optimizer, "planner", "default"):
        gateway.set_route(use_case, RouteConfig.of("critic"))
    return gateway


def build_toy_system(task: ToyTask, gateway: Optional[ModelGateway] = None,
                     roles: Optional[ModelRoles] = None) -> AgentSystem:
    gateway = gateway or build_toy_gateway(task, roles=roles)
    return install_toy_task(ResourceSubstrate(gateway=gateway), task)


def install_toy_task(substrate: ResourceSubstrate, task: ToyTask) -> AgentSystem:
    """Register the task's resources the store lacks; stored ones are evolved in place."""
    added = 0
    for resource in task.resources:
        registry = substrate.registry(resource.kind)
        record = decode_record(resource.record)
        if record.name in registry:
            continue
        registry.register(record)
        added += 1
    logger.info("toy task %s: %d of %d resource(s) registered, agent %s",
                task.name, added, len(task.resources), task.agent)
    return AgentSystem(substrate, task.agent)
