"""CLI: exit codes, the offline demo, evolve run persistence and registry inspection."""

import json

import pytest

from app.cli import main
from app.services.registry import ResourceSubstrate
from app.services.toy_tasks import install_toy_task, load_toy_task
from app.services.tracer import load_trace
from tests.conftest import make_record


@pytest.fixture
def home(tmp_path):
    return tmp_path / "store"


def _run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestUsage:
    def test_fresh_store_lists_nothing(self, capsys, home):
        code, out, _ = _run(capsys, "--home", str(home), "registry", "list")
        assert code == 0
        assert out.strip() == "(empty)"

    def test_json_listing(self, capsys, home):
        code, out, _ = _run(capsys, "--json", "--home", str(home), "registry", "list", "--kind", "tool")
        assert code == 0
        assert json.loads(out) == []

    def test_unknown_optimizer_prints_catalogue(self, capsys):
        code, _, err = _run(capsys, "demo", "string-target", "--optimizer", "annealing")
        assert code == 2
        assert "commands:" in err
        assert "reinforcepp" in err

    def test_missing_command(self, capsys):
        code, _, err = _run(capsys)
        assert code == 2
        assert "toy tasks: arithmetic-format, string-target" in err


class TestDemo:
    @pytest.mark.parametrize("optimizer", ["reflection", "textgrad", "reinforcepp", "grpo"])
    def test_string_target(self, capsys, optimizer):
        code, out, _ = _run(capsys, "--json", "demo", "string-target", "--optimizer", optimizer)
        assert code == 0
        summary = json.loads(out)
        assert summary["best_score"] == 1.0
        assert summary["converged"]
        assert summary["rounds"] <= 3
        assert summary["optimizer"] == optimizer

    def test_text_summary(self, capsys):
        code, out, _ = _run(capsys, "demo", "arithmetic-format")
        assert code == 0
        assert "best score:     1.0" in out
        assert "answer:         42" in out

    def test_unknown_toy_task_is_a_domain_error(self, capsys):
        code, _, err = _run(capsys, "demo", "no-such-task")
        assert code == 1
        assert err.startswith("error: NotFound")


class TestEvolveAndInspect:
    def test_evolve_persists_store_and_trace(self, capsys, home, tmp_path):
        trace_file = tmp_path / "audit.jsonl"
        code, out, _ = _run(
            capsys, "--home", str(home), "evolve", "run",
            "--task", "string-target", "--optimizer", "reflection", "--trace-out", str(trace_file),
        )
        assert code == 0
        assert "converged:      yes" in out
        assert (home / "prompt.json").exists()

        stored = ResourceSubstrate()
        stored.load(home)
        assert [h.version for h in stored.prompts.history("solver_prompt")] == ["0.1.0", "0.1.1"]

        trace = load_trace(trace_file)
        assert trace.closed
        assert trace.outcome.success

        code, out, _ = _run(capsys, "trace", "dump", str(trace_file))
        assert code == 0
        assert out.startswith(f"trace {trace.trace_id}: {len(trace.events)} event(s), success=True")

    def test_registry_show_diff_restore(self, capsys, home):
        _run(capsys, "--home", str(home), "evolve", "run", "--task", "string-target", "--optimizer", "textgrad")

        code, out, _ = _run(capsys, "--home", str(home), "registry", "show", "prompt", "solver_prompt")
        assert code == 0
        shown = json.loads(out)
        assert shown["record"]["version"] == "0.1.1"
        assert [h["version"] for h in shown["history"]] == ["0.1.0", "0.1.1"]

        code, out, _ = _run(capsys, "--home", str(home), "registry", "diff", "prompt", "solver_prompt", "0.1.0", "0.1.1")
        assert code == 0
        assert out.startswith('entity.mapping.prompt_text: "Answer the question in one word." ->')

        code, out, _ = _run(capsys, "--home", str(home), "registry", "restore", "prompt", "solver_prompt", "0.1.0")
        assert code == 0
        assert out.strip() == "prompt solver_prompt: restored 0.1.0 as 0.1.2"

        reopened = ResourceSubstrate()
        reopened.load(home)
        assert reopened.prompts.get_info("solver_prompt").entity.mapping["prompt_text"] == "Answer the question in one word."

    def test_missing_resource_exits_one(self, capsys, home):
        code, _, err = _run(capsys, "--json", "--home", str(home), "registry", "show", "tool", "ghost")
        assert code == 1
        assert json.loads(err)["error"]["data"]["kind"] == "NotFound"

    def test_unknown_version_exits_one(self, capsys, home):
        _run(capsys, "--home", str(home), "evolve", "run", "--task", "string-target", "--optimizer", "reflection")
        code, _, err = _run(capsys, "--home", str(home), "registry", "restore", "prompt", "solver_prompt", "9.9.9")
        assert code == 1
        assert "VersionNotFound" in err

    def test_evolve_keeps_existing_resources(self, capsys, home):
        stored = ResourceSubstrate()
        stored.prompts.register(make_record("keep_me", mapping={"prompt_text": "v0"}, trainable=True))
        stored.prompts.update("keep_me", "v1")
        stored.save(home)

        code, _, _ = _run(capsys, "--home", str(home), "evolve", "run", "--task", "string-target", "--optimizer", "reflection")
        assert code == 0

        reopened = ResourceSubstrate()
        reopened.load(home)
        assert [h.version for h in reopened.prompts.history("keep_me")] == ["0.1.0", "0.1.1"]
        assert reopened.prompts.get_info("keep_me").entity.mapping["prompt_text"] == "v1"
        assert [h.version for h in reopened.prompts.history("solver_prompt")] == ["0.1.0", "0.1.1"]

    def test_second_run_evolves_the_stored_prompt(self, capsys, home):
        _run(capsys, "--home", str(home), "evolve", "run", "--task", "string-target", "--optimizer", "reflection")
        code, out, _ = _run(capsys, "--json", "--home", str(home), "evolve", "run",
                            "--task", "string-target", "--optimizer", "reflection")
        assert code == 0
        summary = json.loads(out)
        assert summary["baseline_score"] == 1.0
        assert summary["rounds"] == 0

        reopened = ResourceSubstrate()
        reopened.load(home)
        assert [h.version for h in reopened.prompts.history("solver_prompt")] == ["0.1.0", "0.1.1"]

    def test_zero_budget_is_rejected(self, capsys, home):
        code, _, err = _run(capsys, "--home", str(home), "evolve", "run",
                            "--task", "string-target", "--optimizer", "grpo", "--budget", "0")
        assert code == 1
        assert err.startswith("error: ConfigError")
        assert not (home / "prompt.json").exists()


class TestObjectiveFile:
    @pytest.fixture
    def scripted_home(self, home):
        """A store holding the string-target agent, with the task's scripted models in agp.json."""
        task = load_toy_task("string-target")
        substrate = ResourceSubstrate()
        install_toy_task(substrate, task)
        substrate.save(home)

        def scripted(name, rules, default):
            return {"name": name, "kind": "scripted",
                    "rules": [r.model_dump(mode="json") for r in rules], "default": default}

        config = {
            "providers": [
                scripted("actor", task.actor_rules, task.actor_default),
                scripted("critic", task.critic_rules, task.critic_default),
            ],
            "routes": {
                "actor": {"chain": ["actor"]},
                "evaluator": {"chain": ["critic"]},
                "optimizer": {"chain": ["critic"]},
                "default": {"chain": ["critic"]},
            },
        }
        (home / "agp.json").write_text(json.dumps(config), encoding="utf-8")
        return home, task

    @pytest.fixture
    def objective_file(self, scripted_home, tmp_path):
        _, task = scripted_home
        path = tmp_path / "sky.json"
        path.write_text(json.dumps(task.objective.model_dump(mode="json")), encoding="utf-8")
        return path

    def test_evolves_a_stored_agent(self, capsys, scripted_home, objective_file):
        home, _ = scripted_home
        code, out, _ = _run(capsys, "--json", "--home", str(home), "evolve", "run",
                            "--task", str(objective_file), "--agent", "solver", "--optimizer", "reflection")
        assert code == 0
        summary = json.loads(out)
        assert summary["task"] == "sky"
        assert summary["converged"]
        assert summary["answer"] == "blue"

        reopened = ResourceSubstrate()
        reopened.load(home)
        assert [h.version for h in reopened.prompts.history("solver_prompt")] == ["0.1.0", "0.1.1"]

    def test_objective_without_agent(self, capsys, scripted_home, objective_file):
        home, _ = scripted_home
        code, _, err = _run(capsys, "--home", str(home), "evolve", "run",
                            "--task", str(objective_file), "--optimizer", "reflection")
        assert code == 1
        assert "--agent" in err

    def test_malformed_objective(self, capsys, home, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"task": "x", "success": {"kind": "telepathy"}}), encoding="utf-8")
        code, _, err = _run(capsys, "--home", str(home), "evolve", "run",
                            "--task", str(path), "--agent", "solver", "--optimizer", "reflection")
        assert code == 1
        assert err.startswith("error: ConfigError")
