#!/usr/bin/env python3
"""
End-to-end evolution check
==========================
Runs every optimizer on every bundled toy task, offline, then drives the
same store through a loopback control plane.

For each (task, optimizer) pair:
  - baseline fails, best score reaches the task's expected score
  - committed scores never decrease
  - the audit trace survives export + reload
  - the trainable prompt gained at least one version; frozen prompts none

Usage:
  python3 scripts/e2e_evolution_test.py [--report FILE]
"""

import argparse
import json
import sys
import tempfile
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent))

from app.services.optimizers import build_optimizer, optimizer_names  # noqa: E402
from app.server import serve  # noqa: E402
from app.services.rpc import RpcClient  # noqa: E402
from app.services.toy_tasks import build_toy_system, list_toy_tasks, load_toy_task  # noqa: E402
from app.services.tracer import export_trace, load_trace  # noqa: E402

PASS = 0
FAIL = 0
ROWS = []


def check(label, ok, detail=""):
    global PASS, FAIL
    tag = "PASS" if ok else "FAIL"
    if ok:
        PASS += 1
    else:
        FAIL += 1
    extra = f"  ({detail})" if detail else ""
    print(f"  [{tag}] {label}{extra}")
    return ok


def run_pair(task_name, optimizer, workdir):
    task = load_toy_task(task_name)
    system = build_toy_system(task)
    prompts = system.substrate.prompts
    before = {name: len(prompts.history(name)) for name in prompts.list()}

    started = time.time()
    result = build_optimizer(optimizer).run(system, task.objective, task.budget)
    elapsed = time.time() - started

    label = f"{task_name} / {optimizer}"
    check(f"{label}: baseline fails", result.baseline.score < task.expected_score, f"baseline={result.baseline.score}")
    check(f"{label}: reaches expected score", result.best_score >= task.expected_score, f"best={result.best_score}")
    check(f"{label}: within budget", result.rounds <= task.budget, f"rounds={result.rounds}")
    check(f"{label}: committed scores monotone", result.committed_scores == sorted(result.committed_scores))

    trace_path = Path(workdir) / f"{task_name}-{optimizer}.jsonl"
    export_trace(result.audit, trace_path)
    reloaded = load_trace(trace_path)
    check(f"{label}: audit trace reloads", len(reloaded.events) == len(result.audit.events),
          f"events={len(reloaded.events)}")

    grew = []
    for name in prompts.list():
        record = prompts.get_info(name)
        versions = len(prompts.history(name))
        if record.entity.trainable:
            grew.append(versions > before[name])
        else:
            check(f"{label}: frozen prompt {name} untouched", versions == before[name])
    check(f"{label}: a trainable prompt evolved", any(grew))

    ROWS.append({
        "task": task_name,
        "optimizer": optimizer,
        **result.summary(),
        "seconds": round(elapsed, 3),
    })
    return system


def loopback(system):
    print("\n=== Control plane loopback ===")
    handle = serve("127.0.0.1:0", system.substrate)
    try:
        with RpcClient(handle.url) as client:
            check("health ok", client.health().get("status") == "ok")
            remote = client.call("prompt.list")
            check("prompt.list matches local", remote == system.substrate.prompts.list(), json.dumps(remote))
            name = remote[0]
            history = client.call("prompt.history", name=name)
            check("history visible remotely", len(history) == len(system.substrate.prompts.history(name)))
            version = client.call("prompt.restore", name=name, version="0.1.0")
            check("restore over the wire appends", version == system.substrate.prompts.get_info(name).version, version)
    finally:
        handle.shutdown()
    check("server stopped", not handle.running)


def main():
    parser = argparse.ArgumentParser(description="Offline end-to-end check of every optimizer")
    parser.add_argument("--report", help="write the per-run summaries as JSON")
    args = parser.parse_args()

    last_system = None
    with tempfile.TemporaryDirectory() as workdir:
        for task_name in list_toy_tasks():
            print(f"\n=== {task_name} ===")
            for optimizer in optimizer_names():
                last_system = run_pair(task_name, optimizer, workdir)

    if last_system is not None:
        loopback(last_system)

    print(f"\n  {'Task':<20} {'Optimizer':<12} {'Base':<6} {'Best':<6} {'Rounds':<7} {'Seconds'}")
    print(f"  {'─'*20} {'─'*12} {'─'*6} {'─'*6} {'─'*7} {'─'*7}")
    for row in ROWS:
        print(f"  {row['task']:<20} {row['optimizer']:<12} {row['baseline_score']:<6.2f} "
              f"{row['best_score']:<6.2f} {row['rounds']:<7} {row['seconds']}")

    if args.report:
        Path(args.report).write_text(json.dumps(ROWS, indent=2), encoding="utf-8")

    print(f"\n  {PASS} passed, {FAIL} failed")
    return 0 if FAIL == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
