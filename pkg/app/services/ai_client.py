"""Centralized model gateway: routing, fallback and retries across providers.

Usage:
    from app.services.ai_client import ModelGateway, ScriptedBackend

    gateway = ModelGateway()
    gateway.register_backend("scripted", ScriptedBackend([ScriptedRule(value="ping", response="pong")]))
    text = gateway.chat(
        messages=[{"role": "user", "content": "ping"}],
        use_case="actor",        # "actor", "evaluator", "optimizer", "planner" or None for default
    )

Routes map a use case to an ordered provider chain. Providers in a chain
are tried in (priority, cost_weight) order; each provider is retried up to
the route's retry limit, and every attempt is recorded as a model_call
trace event.

HTTP providers auto-detect the SDK from the model name:
  - Models starting with "claude-" route to Anthropic
  - Everything else routes to OpenAI
API keys are only ever read from the environment variable the provider
configuration names.
"""

import json
import logging
import os
import re
from enum import Enum
from pathlib import Path
from threading import Lock
from typing import Any, Callable, Optional, Protocol, Union

from pydantic import TypeAdapter, ValidationError
from tenacity import Retrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from app.config import settings
from app.models.gateway import (
    ChatMessage,
    MatchKind,
    MatchScope,
    ModelRequest,
    ModelResponse,
    ProviderConfig,
    ProviderKind,
    RouteConfig,
    RouteEntry,
    ScriptedRule,
)
from app.models.trace import TraceEventKind
from app.services.errors import AllProvidersFailed, ConfigError, DuplicateName
from app.services.tracer import Tracer

logger = logging.getLogger(__name__)


class AIProvider(str, Enum):
    OPENAI = "openai"
    ANTHROPIC = "anthropic"


# Known Anthropic model prefixes for auto-detection
_ANTHROPIC_PREFIXES = ("claude-",)
DEFAULT_HTTP_MODEL = "gpt-4o-mini"


def _detect_provider(model: str) -> AIProvider:
    """Models starting with 'claude-' are routed to Anthropic, everything else to OpenAI."""
    model_lower = model.lower()
    for prefix in _ANTHROPIC_PREFIXES:
        if model_lower.startswith(prefix):
            return AIProvider.ANTHROPIC
    return AIProvider.OPENAI


class ModelBackend(Protocol):
    # exclusive backends are serialized by the gateway
    exclusive: bool

    def complete(self, request: ModelRequest) -> str: ...


class ScriptedNoMatch(RuntimeError):
    pass


# ── Scripted backend ─────────────────────────────────────────────────

class ScriptedBackend:
    """Deterministic canned replies. First matching rule wins; a rule with a
    responses list walks it on successive matches and then repeats the last."""

    exclusive = False

    def __init__(self, rules: list[ScriptedRule], default: Optional[str] = None):
        self.rules = list(rules)
        self.default = default
        self._counts = [0] * len(self.rules)
        self._lock = Lock()

    @staticmethod
    def _matches(rule: ScriptedRule, request: ModelRequest) -> bool:
        target = request.transcript() if rule.scope == MatchScope.TRANSCRIPT else request.last_user()
        if rule.match == MatchKind.EXACT:
            return target.strip() == rule.value.strip()
        if rule.match == MatchKind.SUBSTRING:
            return rule.value in target
        return re.search(rule.value, target) is not None

    def complete(self, request: ModelRequest) -> str:
        with self._lock:
            for i, rule in enumerate(self.rules):
                if not self._matches(rule, request):
                    continue
                count = self._counts[i]
                self._counts[i] += 1
                if rule.responses:
                    return rule.responses[min(count, len(rule.responses) - 1)]
                return rule.response
        if self.default is not None:
            return self.default
        raise ScriptedNoMatch(f"no scripted rule matched {request.last_user()[:80]!r}")


# ── HTTP backend (OpenAI / Anthropic SDKs) ───────────────────────────

ClientFactory = Callable[[AIProvider, str, Optional[str]], Any]


def _default_client(provider: AIProvider, api_key: str, base_url: Optional[str]) -> Any:
    if provider == AIProvider.ANTHROPIC:
        import anthropic

        return anthropic.Anthropic(api_key=api_key, base_url=base_url)
    from openai import OpenAI

    return OpenAI(api_key=api_key, base_url=base_url)


class HttpBackend:
    exclusive = False

    def __init__(
        self,
        model_id: str,
        api_key_env: str,
        base_url: Optional[str] = None,
        client_factory: Optional[ClientFactory] = None,
    ):
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.base_url = base_url
        self.provider = _detect_provider(model_id)
        self._client_factory = client_factory or _default_client
        self._client = None

    def _get_client(self) -> Any:
        if self._client is None:
            api_key = os.environ.get(self.api_key_env, "")
            if not api_key:
                raise RuntimeError(f"environment variable {self.api_key_env} is not set")
            self._client = self._client_factory(self.provider, api_key, self.base_url)
        return self._client

    def complete(self, request: ModelRequest) -> str:
        client = self._get_client()
        model = request.model_id or self.model_id
        messages = [m.model_dump() for m in request.messages]
        if self.provider == AIProvider.OPENAI:
            response = client.chat.completions.create(
                model=model,
                messages=messages,
                temperature=request.temperature,
                max_tokens=request.max_tokens,
            )
            return response.choices[0].message.content or ""

        # Anthropic uses a separate system parameter, not a system message
        system_text = "\n".join(m["content"] for m in messages if m["role"] == "system")
        chat_messages = [m for m in messages if m["role"] != "system"]
        kwargs: dict = {
            "model": model,
            "messages": chat_messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if system_text.strip():
            kwargs["system"] = system_text.strip()
        response = client.messages.create(**kwargs)
        return response.content[0].text


# ── Gateway ──────────────────────────────────────────────────────────

class ModelGateway:
    def __init__(
        self,
        tracer: Optional[Tracer] = None,
        routes: Optional[dict[str, RouteConfig]] = None,
        backoff_seconds: Optional[float] = None,
    ):
        self.tracer = tracer or Tracer()
        self.routes: dict[str, RouteConfig] = dict(routes or {})
        self.backoff_seconds = settings.model_retry_backoff_seconds if backoff_seconds is None else backoff_seconds
        self._backends: dict[str, ModelBackend] = {}
        self._exclusive_locks: dict[str, Lock] = {}
        self._lock = Lock()

    def register_backend(self, name: str, backend: ModelBackend) -> None:
        with self._lock:
            if name in self._backends:
                raise DuplicateName(f"backend {name!r} already registered", {"name": name})
            self._backends[name] = backend
            if getattr(backend, "exclusive", False):
                self._exclusive_locks[name] = Lock()

    def backends(self) -> list[str]:
        return list(self._backends)

    def set_route(self, use_case: str, route: RouteConfig) -> None:
        self.routes[use_case] = route

    def route_for(self, use_case: Optional[str]) -> RouteConfig:
        if use_case and use_case in self.routes:
            return self.routes[use_case]
        if "default" in self.routes:
            return self.routes["default"]
        if not self._backends:
            raise AllProvidersFailed("no model backends registered", {"diagnostics": []})
        return RouteConfig(chain=[RouteEntry(name=n) for n in self._backends])

    def _attempt(self, name: str, backend: ModelBackend, request: ModelRequest, attempt: int) -> str:
        event = {"provider": name, "attempt": attempt, "tag": request.tag, "prompt": request.last_user()[:2000]}
        try:
            lock = self._exclusive_locks.get(name)
            if lock is not None:
                with lock:
                    text = backend.complete(request)
            else:
                text = backend.complete(request)
        except Exception as e:
            self.tracer.emit(TraceEventKind.MODEL_CALL, {**event, "ok": False, "error": f"{type(e).__name__}: {e}"})
            raise
        self.tracer.emit(TraceEventKind.MODEL_CALL, {**event, "ok": True, "response": text})
        return text

    def complete(self, request: ModelRequest, route: RouteConfig) -> ModelResponse:
        """First provider in the (priority, cost)-ordered chain to succeed wins."""
        chain = sorted(route.chain, key=lambda e: (e.priority, e.cost_weight))
        diagnostics: list[dict[str, Any]] = []
        attempts = 0
        for entry in chain:
            backend = self._backends.get(entry.name)
            if backend is None:
                diagnostics.append({"provider": entry.name, "error": "UnknownProvider"})
                continue
            retrying = Retrying(
                stop=stop_after_attempt(route.retry_limit + 1),
                wait=wait_exponential(multiplier=self.backoff_seconds, max=30),
                retry=retry_if_exception_type(Exception),
                before_sleep=lambda retry_state, name=entry.name: logger.warning(
                    "%s call failed (attempt %d), retrying: %s",
                    name,
                    retry_state.attempt_number,
                    retry_state.outcome.exception(),
                ),
                reraise=True,
            )
            try:
                for attempt in retrying:
                    with attempt:
                        attempts += 1
                        text = self._attempt(entry.name, backend, request, attempt.retry_state.attempt_number)
                return ModelResponse(text=text, provider=entry.name, model_id=request.model_id, attempts=attempts)
            except Exception as e:
                logger.warning("provider %s failed: %s", entry.name, e)
                diagnostics.append({"provider": entry.name, "error": f"{type(e).__name__}: {e}"})
        raise AllProvidersFailed(
            f"all {len(chain)} provider(s) failed", {"diagnostics": diagnostics, "attempts": attempts}
        )

    def chat(
        self,
        messages: list[dict],
        *,
        use_case: Optional[str] = None,
        temperature: float = 0.0,
        max_tokens: int = 1024,
    ) -> str:
        """Send a chat request on the use case's route and return the text."""
        request = ModelRequest(
            messages=[ChatMessage(**m) for m in messages],
            temperature=temperature,
            max_tokens=max_tokens,
            tag=use_case or "default",
        )
        return self.complete(request, self.route_for(use_case)).text


# ── Provider configuration ───────────────────────────────────────────

def load_providers(source: Union[str, Path, list[dict]]) -> list[ProviderConfig]:
    """Provider configuration from a JSON file path or an already-parsed list."""
    raw: Any = source
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read provider config {source}: {e}")
    try:
        return TypeAdapter(list[ProviderConfig]).validate_python(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid provider config: {e.errors()[0]['msg']}")


def build_backend(config: ProviderConfig) -> ModelBackend:
    if config.kind == ProviderKind.SCRIPTED:
        return ScriptedBackend(config.rules, default=config.default)
    if not config.api_key_env:
        raise ConfigError(f"http provider {config.name!r} needs api_key_env")
    return HttpBackend(config.model_id or DEFAULT_HTTP_MODEL, config.api_key_env, config.base_url)


def gateway_from_config(
    providers: list[ProviderConfig],
    routes: Optional[dict[str, RouteConfig]] = None,
    tracer: Optional[Tracer] = None,
) -> ModelGateway:
    gateway = ModelGateway(tracer=tracer, routes=routes)
    for provider in providers:
        gateway.register_backend(provider.name, build_backend(provider))
    return gateway
