"""
test_rpc_server.py - JSON-RPC dispatch, the FastAPI app and a loopback server

Tests:
- every catalogue method resolves; inapplicable pairs answer MethodNotFound
- wire results equal the direct manager call run through to_wire
- envelope errors use the reserved JSON-RPC codes
- RpcClient against a live server: typed errors, concurrent writers, shutdown
- random operation sequences over every kind leave local and remote registries with equal hashes
"""

import random
import threading

import httpx
import pytest
from fastapi.testclient import TestClient

from app.server import create_app, parse_bind_address, serve
from app.services.codec import encode_record
from app.services.errors import (
    BindError,
    ConfigError,
    InvalidParams,
    InvalidRecord,
    InvalidRequest,
    MethodNotFound,
    NotFound,
    ProtocolError,
    UnsupportedOperation,
    error_from_dict,
)
from app.services.registry import ResourceSubstrate
from app.services.rpc import RpcClient, catalogue, dispatch, invoke, resolve, to_wire
from tests.conftest import ADD_TOOL_SOURCE, make_record


def _prompt(name, text="hello", **kw):
    return encode_record(make_record(name, mapping={"prompt_text": text}, trainable=True, **kw))


KINDS = ["prompt", "agent", "tool", "environment", "memory"]


def _record_for(kind, name, step):
    if kind == "prompt":
        return _prompt(name, text=f"t{step}")
    if kind == "agent":
        return encode_record(make_record(name, mapping={"prompts": [], "use_case": "actor"}))
    if kind == "tool":
        return encode_record(make_record(name, impl=ADD_TOOL_SOURCE, trainable=True))
    if kind == "environment":
        return encode_record(make_record(name, mapping={
            "initial": "closed",
            "transitions": {"closed": {"open": "opened"}},
            "terminal": ["opened"],
        }))
    return encode_record(make_record(name, mapping={"payload": {"step": step}}))


def _random_call(rng, kind, name, pool, step):
    op = rng.choice(["register", "update", "copy", "restore", "unregister", "hot_swap"])
    if op in ("register", "hot_swap"):
        return op, {"record": _record_for(kind, name, step)}
    if op == "update":
        if kind == "prompt" and rng.random() < 0.5:
            return op, {"name": name, "delta": f"u{step}"}
        if kind == "tool" and rng.random() < 0.5:
            return op, {"name": name, "delta": f"def run(a, b):\n    return a + b + {step}\n"}
        return op, {"name": name, "delta": {"description": f"d{step}"}}
    if op == "copy":
        return op, {"name": name, "new_name": rng.choice(pool)}
    if op == "restore":
        return op, {"name": name, "version": f"0.1.{rng.randint(0, 3)}"}
    return op, {"name": name}


@pytest.fixture
def live(substrate):
    handle = serve("127.0.0.1:0", substrate)
    client = RpcClient(handle.url, timeout=10.0)
    yield substrate, handle, client
    client.close()
    if handle.running:
        handle.shutdown()


# ── Dispatch ─────────────────────────────────────────────────────────


class TestDispatch:
    def test_empty_list(self, substrate):
        response = dispatch(substrate, {"jsonrpc": "2.0", "id": 1, "method": "tool.list"})
        assert response.wire() == {"jsonrpc": "2.0", "id": 1, "result": []}

    def test_get_info_matches_direct_call(self, substrate, add_tool):
        substrate.tools.register(add_tool)
        via_rpc = invoke(substrate, "tool.get_info", {"name": "adder"})
        assert via_rpc == to_wire(substrate.tools.get_info("adder"))
        assert via_rpc["version"] == "0.1.0"

    def test_register_then_update_over_rpc(self, substrate):
        assert invoke(substrate, "prompt.register", {"record": _prompt("p")}) == "0.1.0"
        assert invoke(substrate, "prompt.update", {"name": "p", "delta": "bye"}) == "0.1.1"
        changes = invoke(substrate, "prompt.diff", {"name": "p", "v_a": "0.1.0", "v_b": "0.1.1"})
        assert changes == [{"path": "entity.mapping.prompt_text", "old": "hello", "new": "bye"}]
        assert [h["version"] for h in invoke(substrate, "prompt.history", {"name": "p"})] == ["0.1.0", "0.1.1"]

    def test_get_state_only_for_stateful_kinds(self, substrate, record):
        substrate.memories.register(record("notes", mapping={"payload": {"k": 1}}))
        assert invoke(substrate, "memory.get_state", {"name": "notes"})["payload"] == {"k": 1}
        with pytest.raises(MethodNotFound):
            invoke(substrate, "prompt.get_state", {"name": "p"})

    @pytest.mark.parametrize("method", ["tool.build", "agent.get", "tool.nonsense", "widget.list", "list"])
    def test_method_not_found(self, substrate, method):
        response = dispatch(substrate, {"id": 7, "method": method})
        assert response.error.code == -32601
        assert response.id == 7

    def test_invalid_params(self, substrate):
        with pytest.raises(InvalidParams):
            invoke(substrate, "prompt.get_info", {})
        with pytest.raises(InvalidParams):
            invoke(substrate, "prompt.list", {"unexpected": 1})
        with pytest.raises(InvalidParams):
            invoke(substrate, "prompt.retrieve", {"query": "x", "k": 0})

    def test_invalid_request(self, substrate):
        response = dispatch(substrate, {"id": 3, "params": {}})
        assert response.error.code == InvalidRequest.code == -32600
        assert response.id == 3

    def test_domain_error_keeps_its_code(self, substrate):
        response = dispatch(substrate, {"id": 1, "method": "prompt.get_info", "params": {"name": "ghost"}})
        assert response.error.code == NotFound.code
        assert response.error.data["kind"] == "NotFound"
        assert response.result is None

    def test_bad_record_over_rpc(self, substrate):
        with pytest.raises(InvalidRecord):
            invoke(substrate, "prompt.register", {"record": {"name": "x", "colour": "red"}})


class TestCatalogue:
    def test_every_kind_operator_pair_is_listed(self, kinds):
        entries = catalogue()
        methods = {e.method for e in entries}
        for kind in kinds:
            for op in ("init", "list", "get_info", "register", "update", "restore", "run", "save_to_json"):
                assert f"{kind.value}.{op}" in methods

    def test_applicable_entries_resolve(self):
        for entry in catalogue():
            if entry.applicable:
                kind, _ = resolve(entry.method)
                assert kind.value == entry.kind
            else:
                assert entry.note or entry.operator == "get_state"
                with pytest.raises(MethodNotFound):
                    resolve(entry.method)

    def test_params_described(self):
        by_method = {e.method: e for e in catalogue()}
        assert by_method["prompt.restore"].params == {"name": "str", "version": "str"}
        assert by_method["tool.retrieve"].params["k"] == "int (optional)"
        assert by_method["tool.build"].params == {}


class TestErrorMapping:
    @pytest.mark.parametrize("exc", [NotFound("x"), MethodNotFound("m"), UnsupportedOperation("u")])
    def test_round_trip(self, exc):
        rebuilt = error_from_dict(exc.to_dict())
        assert type(rebuilt) is type(exc)
        assert rebuilt.message == exc.message

    def test_unknown_code_stays_generic(self):
        rebuilt = error_from_dict({"code": -31999, "message": "odd", "data": {}})
        assert type(rebuilt) is ProtocolError
        assert rebuilt.code == -31999


# ── HTTP app ─────────────────────────────────────────────────────────


class TestHttpApp:
    def test_rpc_endpoint(self, substrate, add_tool):
        substrate.tools.register(add_tool)
        client = TestClient(create_app(substrate))
        body = client.post("/rpc", json={"jsonrpc": "2.0", "id": "a", "method": "tool.run",
                                         "params": {"name": "adder", "payload": {"a": 2, "b": 3}}}).json()
        assert body == {"jsonrpc": "2.0", "id": "a", "result": 5}

    def test_parse_error(self, substrate):
        client = TestClient(create_app(substrate))
        body = client.post("/rpc", content=b"{not json").json()
        assert body["error"]["code"] == -32700
        assert body["id"] is None
        assert client.post("/rpc", json=[1, 2]).json()["error"]["code"] == -32700

    def test_catalogue_and_health(self, substrate, add_tool):
        substrate.tools.register(add_tool)
        client = TestClient(create_app(substrate))
        methods = client.get("/catalogue").json()["methods"]
        assert len(methods) == len(catalogue())
        health = client.get("/health").json()
        assert health["status"] == "ok"
        assert health["resources"]["tool"] == 1
        assert health["resources"]["prompt"] == 0


# ── Live server ──────────────────────────────────────────────────────


class TestLoopback:
    def test_typed_errors_cross_the_wire(self, live):
        _, _, client = live
        assert client.call("tool.list") == []
        with pytest.raises(NotFound):
            client.call("tool.get_info", name="ghost")
        with pytest.raises(MethodNotFound):
            client.call("prompt.build")
        assert client.health()["status"] == "ok"
        assert any(e.method == "agent.run" for e in client.catalogue())

    def test_remote_writes_are_visible_locally(self, live):
        substrate, _, client = live
        client.call("prompt.register", record=_prompt("p"))
        client.call("prompt.update", name="p", delta="changed")
        assert substrate.prompts.get_info("p").entity.mapping["prompt_text"] == "changed"
        assert client.call("prompt.get_info", name="p") == to_wire(substrate.prompts.get_info("p"))

    def test_concurrent_writers(self, live):
        substrate, handle, _ = live
        names = [f"p{i}" for i in range(4)]
        for name in names:
            substrate.prompts.register(make_record(name, mapping={"prompt_text": "v0"}, trainable=True))
        errors = []

        def write(name):
            try:
                with RpcClient(handle.url, timeout=10.0) as client:
                    for i in range(1, 11):
                        client.call("prompt.update", name=name, delta=f"v{i}")
            except Exception as e:  # surfaced below
                errors.append(e)

        threads = [threading.Thread(target=write, args=(n,)) for n in names]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []
        for name in names:
            history = substrate.prompts.history(name)
            assert [h.version for h in history] == [f"0.1.{i}" for i in range(11)]
            assert substrate.prompts.get_info(name).entity.mapping["prompt_text"] == "v10"

    def test_random_sequences_match_direct_calls(self, live):
        remote_substrate, _, client = live
        local = ResourceSubstrate()
        pool = ["a", "b", "c"]

        for sequence in range(120):
            rng = random.Random(sequence)
            for step in range(20):
                kind = rng.choice(KINDS)
                name = rng.choice(pool)
                op, args = _random_call(rng, kind, name, pool, step)

                try:
                    local_result = invoke(local, f"{kind}.{op}", args)
                except ProtocolError as e:
                    local_result = type(e)
                try:
                    remote_result = client.call(f"{kind}.{op}", **args)
                except ProtocolError as e:
                    remote_result = type(e)
                assert local_result == remote_result, (sequence, step, kind, op, args)

            assert local.head_hashes() == remote_substrate.head_hashes(), sequence
        assert local.fingerprint() == remote_substrate.fingerprint()

    def test_shutdown(self, live):
        _, handle, client = live
        assert handle.running
        handle.shutdown()
        assert not handle.running
        with pytest.raises(httpx.HTTPError):
            client.call("tool.list")


class TestBind:
    def test_port_in_use(self, live):
        substrate, handle, _ = live
        with pytest.raises(BindError):
            serve(f"127.0.0.1:{handle.port}", substrate)

    def test_bad_address(self):
        with pytest.raises(ConfigError):
            parse_bind_address("127.0.0.1:http")

    def test_port_zero_picks_a_free_port(self, live):
        _, handle, _ = live
        assert handle.port > 0
        assert handle.url == f"http://127.0.0.1:{handle.port}"
