"""
builtin_resources.py - Stock implementations behind builtin: descriptors

Provides:
- PromptTemplate          (prompt)       run -> {"text": rendered}
- ToolCallingAgent        (agent)        run({"task"}) -> {"answer", "steps"}
- KeyValueMemory          (memory)       run({"op": read|write|query, ...})
- ScriptedEnvironment     (environment)  transition-table step(action)
- AgentTool               (tool)         runs a registered agent, returns its answer
"""

import copy
import json
import logging
import re
from typing import Any, Optional

from app.config import settings
from app.models.resource import EntityKind, ExportForm
from app.services.errors import ExecutionError

logger = logging.getLogger(__name__)


class _KeepMissing(dict):
    def __missing__(self, key: str) -> str:
        return "{" + key + "}"


def render_template(text: str, values: dict[str, Any]) -> str:
    """str.format_map over the payload; unknown placeholders stay verbatim."""
    try:
        return text.format_map(_KeepMissing(values))
    except (ValueError, IndexError, AttributeError):
        # literal braces that are not placeholders
        return text


class PromptTemplate:
    def __init__(self, mapping: dict[str, Any]):
        self.text = str(mapping.get("prompt_text", ""))

    def run(self, payload: dict[str, Any]) -> dict[str, str]:
        return {"text": render_template(self.text, payload)}


class KeyValueMemory:
    def __init__(self, mapping: dict[str, Any]):
        self._data: dict[str, Any] = copy.deepcopy(dict(mapping.get("payload") or {}))

    def run(self, payload: dict[str, Any]) -> dict[str, Any]:
        op = payload.get("op", "read")
        if op == "read":
            key = payload.get("key")
            if key is None:
                return {"payload": copy.deepcopy(self._data)}
            return {"key": key, "value": copy.deepcopy(self._data.get(key))}
        if op == "write":
            if "key" not in payload:
                raise ValueError("write requires a key")
            self._data[payload["key"]] = copy.deepcopy(payload.get("value"))
            return {"ok": True, "key": payload["key"]}
        if op == "query":
            needle = str(payload.get("text", "")).casefold()
            matches = {
                k: v for k, v in self._data.items()
                if needle in k.casefold() or needle in json.dumps(v, default=str).casefold()
            }
            return {"matches": copy.deepcopy(matches)}
        raise ValueError(f"unknown memory op {op!r}")

    def get_state(self) -> dict[str, Any]:
        return {"payload": copy.deepcopy(self._data)}


class ScriptedEnvironment:
    """mapping: {"initial": state, "transitions": {state: {action: next}},
    "observations": {state: text}, "terminal": [states]}"""

    def __init__(self, mapping: dict[str, Any]):
        self._transitions: dict[str, dict[str, str]] = mapping.get("transitions") or {}
        self._observations: dict[str, str] = mapping.get("observations") or {}
        self._terminal = set(mapping.get("terminal") or [])
        self._state = str(mapping.get("initial", "start"))
        self._steps = 0

    def step(self, action: Any) -> dict[str, Any]:
        action = str(action)
        moves = self._transitions.get(self._state, {})
        if action not in moves:
            raise ValueError(f"action {action!r} not allowed in state {self._state!r}")
        self._state = moves[action]
        self._steps += 1
        return {
            "state": self._state,
            "observation": self._observations.get(self._state, ""),
            "done": self._state in self._terminal,
        }

    def run(self, payload: dict[str, Any]) -> dict[str, Any]:
        return self.step(payload.get("action", ""))

    def get_state(self) -> dict[str, Any]:
        return {"state": self._state, "steps": self._steps}


# ── Agents ───────────────────────────────────────────────────────────

_CALL_RE = re.compile(r"^CALL\s+(\S+)\s*(.*)$", re.DOTALL)


class ToolCallingAgent:
    """A model-driven loop over the prompts, tools and memories it references.

    The model either answers directly or replies `CALL <tool> <json-args>`;
    tool results are fed back as `TOOL_RESULT <tool>: <json>`.
    """

    def __init__(self, mapping: dict[str, Any]):
        self.prompts: list[str] = list(mapping.get("prompts") or [])
        self.tools: list[str] = list(mapping.get("tools") or [])
        self.memories: list[str] = list(mapping.get("memories") or [])
        self.use_case: str = mapping.get("use_case", "actor")
        self.max_steps: int = int(mapping.get("max_steps") or settings.max_agent_steps)
        self.temperature: float = float(mapping.get("temperature", 0.0))
        self._runtime = None

    def bind(self, runtime: Any) -> None:
        self._runtime = runtime

    def _system_prompt(self, payload: dict[str, Any]) -> str:
        prompts = self._runtime.registry(EntityKind.PROMPT)
        parts = [prompts.run(name, payload)["text"] for name in self.prompts]
        if self.tools:
            tool_registry = self._runtime.registry(EntityKind.TOOL)
            lines = []
            for name in self.tools:
                record = tool_registry.get_info(name)
                export = record.export_of(ExportForm.NATURAL_LANGUAGE_TEXT)
                lines.append(f"- {name}: {export.body if export else record.entity.description}")
            parts.append("Tools (reply `CALL <tool> <json-args>` to use one):\n" + "\n".join(lines))
        if self.memories:
            memory_registry = self._runtime.registry(EntityKind.MEMORY)
            for name in self.memories:
                state = memory_registry.get_state(name)
                parts.append(f"Memory {name}: {json.dumps(state.get('payload', state), sort_keys=True, default=str)}")
        return "\n\n".join(p for p in parts if p)

    def run(self, payload: dict[str, Any]) -> dict[str, Any]:
        if self._runtime is None:
            raise ExecutionError("agent is not bound to a runtime")
        task = str(payload.get("task", payload.get("input", "")))
        messages = [
            {"role": "system", "content": self._system_prompt(payload)},
            {"role": "user", "content": task},
        ]
        reply = ""
        for step in range(1, self.max_steps + 1):
            reply = self._runtime.gateway.chat(messages, use_case=self.use_case, temperature=self.temperature)
            match = _CALL_RE.match(reply.strip())
            if not match:
                return {"answer": reply.strip(), "steps": step}
            tool, raw_args = match[1], match[2].strip()
            messages.append({"role": "assistant", "content": reply})
            messages.append({"role": "user", "content": self._call_tool(tool, raw_args)})
        logger.warning("agent step budget (%d) exhausted", self.max_steps)
        return {"answer": reply.strip(), "steps": self.max_steps}

    def _call_tool(self, tool: str, raw_args: str) -> str:
        if tool not in self.tools:
            return f"TOOL_RESULT {tool}: {json.dumps({'error': 'tool not available'})}"
        try:
            args = json.loads(raw_args) if raw_args else {}
        except json.JSONDecodeError:
            return f"TOOL_RESULT {tool}: {json.dumps({'error': 'arguments are not valid JSON'})}"
        if not isinstance(args, dict):
            args = {"input": args}
        result = self._runtime.registry(EntityKind.TOOL).run(tool, args)
        return f"TOOL_RESULT {tool}: {json.dumps(result, sort_keys=True, default=str)}"


class AgentTool:
    """Tool-kind wrapper that dispatches a registered agent."""

    def __init__(self, mapping: dict[str, Any], agent: Optional[str] = None):
        self.agent = agent or mapping.get("agent")
        self._runtime = None

    def bind(self, runtime: Any) -> None:
        self._runtime = runtime

    def run(self, payload: dict[str, Any]) -> str:
        if self._runtime is None:
            raise ExecutionError("agent tool is not bound to a runtime")
        result = self._runtime.registry(EntityKind.AGENT).run(self.agent, payload)
        return result["answer"]


BUILTINS: dict[str, type] = {
    "prompt_template": PromptTemplate,
    "tool_calling_agent": ToolCallingAgent,
    "key_value_memory": KeyValueMemory,
    "scripted_environment": ScriptedEnvironment,
    "agent_tool": AgentTool,
}
