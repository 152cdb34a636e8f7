"""
test_persistence.py - Registry documents

Tests:
- save/load reproduces heads, lineage and registration order
- re-encoding a loaded document is byte-identical
- tampered, foreign and future-format documents are refused
- whole-substrate save/load through the home directory
"""

import json
import random

import pytest

from app.models.resource import EntityKind, ExportForm, ExportedRepresentation
from app.services import persistence
from app.services.errors import ParseError, PathError, UnsupportedFormatVersion
from app.services.registry import ResourceSubstrate
from tests.conftest import make_record


def _populated(substrate):
    prompts = substrate.prompts
    prompts.register(make_record("zeta", mapping={"prompt_text": "z"}, trainable=True))
    prompts.register(make_record("alpha", mapping={"prompt_text": "a"}, metadata={"role": "system"}))
    prompts.update("zeta", "z2")
    prompts.restore("zeta", "0.1.0")
    return prompts


class TestRoundTrip:
    def test_heads_lineage_and_order_survive(self, substrate, tmp_path):
        prompts = _populated(substrate)
        prompts.save_to_json(tmp_path / "prompt.json")

        fresh = ResourceSubstrate()
        assert fresh.prompts.load_from_json(tmp_path / "prompt.json") == 2
        assert [r.name for r in fresh.prompts.heads_in_order()] == ["zeta", "alpha"]
        assert fresh.prompts.history("zeta") == prompts.history("zeta")
        assert fresh.prompts.get_info("zeta") == prompts.get_info("zeta")

    def test_reencode_is_bit_exact(self, substrate):
        data = persistence.encode_registry(_populated(substrate))
        assert persistence.encode_registry(persistence.decode_registry(data)) == data

    def test_loaded_registry_keeps_mutating(self, substrate):
        data = persistence.encode_registry(_populated(substrate))
        fresh = ResourceSubstrate()
        persistence.decode_into(fresh.prompts, data)
        assert fresh.prompts.update("zeta", "z3") == "0.1.3"

    def test_substrate_save_and_load(self, substrate, add_tool, tmp_path):
        _populated(substrate)
        substrate.tools.register(add_tool)
        substrate.save(tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == sorted(f"{k.value}.json" for k in EntityKind)

        fresh = ResourceSubstrate()
        fresh.load(tmp_path)
        assert fresh.fingerprint() == substrate.fingerprint()
        assert fresh.tools.run("adder", {"a": 40, "b": 2}) == 42


class TestRejection:
    def test_hash_mismatch(self, substrate):
        document = json.loads(persistence.encode_registry(_populated(substrate)))
        document["lineages"]["alpha"][0]["record"]["description"] = "tampered"
        with pytest.raises(ParseError):
            persistence.decode_registry(json.dumps(document))

    def test_head_without_snapshot(self, substrate):
        document = json.loads(persistence.encode_registry(_populated(substrate)))
        document["heads"][0]["version"] = "0.9.9"
        with pytest.raises(ParseError):
            persistence.decode_registry(json.dumps(document))

    def test_unsupported_format_version(self, substrate):
        document = json.loads(persistence.encode_registry(_populated(substrate)))
        document["format_version"] = 2
        with pytest.raises(UnsupportedFormatVersion):
            persistence.decode_registry(json.dumps(document))

    def test_not_json(self):
        with pytest.raises(ParseError):
            persistence.decode_registry(b"\x00 nope")

    def test_wrong_kind(self, substrate):
        data = persistence.encode_registry(_populated(substrate))
        with pytest.raises(ParseError):
            persistence.decode_into(substrate.tools, data)

    def test_missing_file(self, substrate, tmp_path):
        with pytest.raises(PathError):
            substrate.prompts.load_from_json(tmp_path / "absent.json")


class TestAtomicWrite:
    def test_failed_write_keeps_previous_document(self, substrate, tmp_path, monkeypatch):
        prompts = _populated(substrate)
        target = tmp_path / "prompt.json"
        prompts.save_to_json(target)
        before = target.read_bytes()

        prompts.update("alpha", "a2")

        def torn_write(self, data):
            with open(self, "wb") as f:
                f.write(data[: len(data) // 2])
            raise OSError("disk full")

        monkeypatch.setattr(persistence.Path, "write_bytes", torn_write)
        with pytest.raises(PathError):
            prompts.save_to_json(target)
        monkeypatch.undo()

        assert target.read_bytes() == before
        assert not (tmp_path / "prompt.json.tmp").exists()
        fresh = ResourceSubstrate()
        fresh.prompts.load_from_json(target)
        assert fresh.prompts.get_info("alpha").version == "0.1.0"

    def test_failed_replace_keeps_previous_document(self, substrate, tmp_path, monkeypatch):
        prompts = _populated(substrate)
        target = tmp_path / "prompt.json"
        prompts.save_to_json(target)
        before = target.read_bytes()

        prompts.update("zeta", "z3")

        def refuse(src, dst):
            raise OSError("cross-device link")

        monkeypatch.setattr(persistence.os, "replace", refuse)
        with pytest.raises(PathError):
            prompts.save_to_json(target)
        monkeypatch.undo()

        assert target.read_bytes() == before
        assert sorted(p.name for p in tmp_path.iterdir()) == ["prompt.json"]


class TestRandomRegistries:
    def test_many_random_registries_round_trip(self):
        rng = random.Random(7)
        words = ["plan", "act", "tool", "memory", "note", "check", "ü", "\n", "{x}"]
        for _ in range(200):
            substrate = ResourceSubstrate()
            registry = substrate.registry(rng.choice(list(EntityKind)))
            for i in range(rng.randint(0, 5)):
                name = f"r{i}"
                exports = ()
                if rng.random() < 0.5:
                    exports = (ExportedRepresentation(form=rng.choice(list(ExportForm)), body=rng.choice(words) + "!"),)
                registry.register(make_record(
                    name,
                    description=" ".join(rng.choices(words, k=3)),
                    mapping={"payload": {"n": rng.randint(0, 9)}, "prompt_text": rng.choice(words)},
                    trainable=rng.random() < 0.5,
                    metadata={"score": rng.random()},
                    exports=exports,
                ))
                for _ in range(rng.randint(0, 3)):
                    registry.update(name, {"description": rng.choice(words), "metadata": {"k": rng.randint(0, 3)}})
            data = persistence.encode_registry(registry)
            loaded = persistence.decode_registry(data)
            assert persistence.encode_registry(loaded) == data
            assert [r.name for r in loaded.heads_in_order()] == [r.name for r in registry.heads_in_order()]
