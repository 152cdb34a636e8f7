"""
cli.py - Command-line surface

    run.py [--json] [--home DIR] registry list [--kind K]
    run.py registry show|diff|restore ...
    run.py evolve run --task FILE --optimizer NAME [--agent NAME] [--budget T] [--trace-out FILE]
    run.py trace dump FILE
    run.py serve [--bind HOST:PORT]
    run.py demo TOY_TASK [--optimizer NAME] [--budget T]

Exit codes: 0 success, 1 domain error, 2 usage error (the command
catalogue is printed to stderr).
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional

from app.config import load_runtime_config, settings
from app.models.resource import EntityKind
from app.models.evolution import Objective
from app.services.ai_client import ModelGateway, gateway_from_config
from app.services.errors import ConfigError, ProtocolError
from app.services.evolution_loop import AgentSystem, LoopResult
from app.services.optimizers import build_optimizer, optimizer_names
from app.server import serve
from app.services.registry import ResourceSubstrate
from app.services.rpc import to_wire
from app.services.toy_tasks import build_toy_gateway, install_toy_task, list_toy_tasks, load_evolution_task
from app.services.tracer import export_trace, load_trace

logger = logging.getLogger(__name__)

KINDS = [k.value for k in EntityKind]

CATALOGUE = """\
commands:
  registry list [--kind KIND]
  registry show KIND NAME
  registry diff KIND NAME V_A V_B
  registry restore KIND NAME VERSION
  evolve run --task FILE --optimizer NAME [--agent NAME] [--budget T] [--trace-out FILE]
  trace dump FILE
  serve [--bind HOST:PORT]
  demo TOY_TASK [--optimizer NAME] [--budget T]
optimizers: {optimizers}
toy tasks: {tasks}
kinds: {kinds}
"""


def catalogue_text() -> str:
    return CATALOGUE.format(
        optimizers=", ".join(optimizer_names()),
        tasks=", ".join(list_toy_tasks()),
        kinds=", ".join(KINDS),
    )


class UsageError(Exception):
    pass


class CatalogueParser(argparse.ArgumentParser):
    """Usage errors raise instead of exiting so main() owns the exit code."""

    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}")


# ── Output ───────────────────────────────────────────────────────────


class Output:
    def __init__(self, as_json: bool):
        self.as_json = as_json

    def emit(self, data: Any, text: Optional[str] = None) -> None:
        if self.as_json:
            print(json.dumps(to_wire(data), indent=2, sort_keys=True))
        else:
            print(text if text is not None else json.dumps(to_wire(data), indent=2, sort_keys=True))


# ── Store ────────────────────────────────────────────────────────────


def open_store(home: Path, gateway: Optional[ModelGateway] = None) -> ResourceSubstrate:
    if gateway is None:
        runtime = load_runtime_config(home / settings.config_file)
        gateway = gateway_from_config(runtime.providers, runtime.routes) if runtime.providers else None
    substrate = ResourceSubstrate(gateway=gateway)
    if home.is_dir():
        substrate.load(home)
    return substrate


# ── Commands ─────────────────────────────────────────────────────────


def cmd_registry(args: argparse.Namespace, out: Output) -> int:
    home = Path(args.home)
    substrate = open_store(home)

    if args.action == "list":
        kinds = [args.kind] if args.kind else KINDS
        rows = [
            {"kind": kind, "name": record.name, "version": record.version}
            for kind in kinds
            for record in sorted(substrate.registry(kind).heads_in_order(), key=lambda r: r.name)
        ]
        out.emit(rows, "\n".join(f"{r['kind']:<12} {r['name']:<24} {r['version']}" for r in rows) or "(empty)")
        return 0

    registry = substrate.registry(args.kind)
    if args.action == "show":
        record = registry.get_info(args.name)
        history = registry.history(args.name)
        out.emit({"record": record, "history": history})
        return 0
    if args.action == "diff":
        changes = registry.diff(args.name, args.v_a, args.v_b)
        text = "\n".join(
            f"{c.path}: {json.dumps(c.old, default=str)} -> {json.dumps(c.new, default=str)}" for c in changes
        ) or "(no changes)"
        out.emit(changes, text)
        return 0
    # restore
    version = registry.restore(args.name, args.version)
    substrate.save(home)
    out.emit({"name": args.name, "restored_from": args.version, "version": version},
             f"{args.kind} {args.name}: restored {args.version} as {version}")
    return 0


def _run_evolution(task_ref: str, optimizer: str, budget: Optional[int], agent: Optional[str],
                   home: Optional[Path]) -> tuple[str, AgentSystem, LoopResult]:
    """Evolve inside the store at home (or a throwaway one); stored records and lineages are kept."""
    runtime = load_runtime_config(home / settings.config_file if home else None)
    config = runtime.optimizer
    task = load_evolution_task(task_ref)
    configured = gateway_from_config(runtime.providers, runtime.routes) if runtime.providers else None

    if isinstance(task, Objective):
        if home is None or not agent:
            raise ConfigError("an objective file evolves a stored agent: pass --home and --agent",
                              {"task": task_ref})
        substrate = open_store(home, configured)
        system = AgentSystem(substrate, agent)
        objective, default_budget, name = task, config.T, Path(task_ref).stem
    else:
        gateway = configured if configured is not None else build_toy_gateway(task, roles=config.models)
        substrate = open_store(home, gateway) if home else ResourceSubstrate(gateway=gateway)
        system = install_toy_task(substrate, task)
        if agent:
            system = AgentSystem(substrate, agent)
        objective, default_budget, name = task.objective, task.budget, task.name

    result = build_optimizer(optimizer, config).run(
        system, objective, default_budget if budget is None else budget,
    )
    return name, system, result


def _summary_text(task_name: str, optimizer: str, summary: dict[str, Any]) -> str:
    return "\n".join([
        f"task:           {task_name}",
        f"optimizer:      {optimizer}",
        f"baseline score: {summary['baseline_score']:.1f}",
        f"best score:     {summary['best_score']:.1f}",
        f"rounds:         {summary['rounds']}",
        f"converged:      {'yes' if summary['converged'] else 'no'}",
        f"answer:         {summary['answer']}",
    ])


def cmd_evolve(args: argparse.Namespace, out: Output) -> int:
    home = Path(args.home)
    name, system, result = _run_evolution(args.task, args.optimizer, args.budget, args.agent, home)
    system.substrate.save(home)
    if args.trace_out:
        export_trace(result.audit, args.trace_out)
    summary = {**result.summary(), "task": name, "optimizer": args.optimizer}
    out.emit(summary, _summary_text(name, args.optimizer, summary))
    return 0


def cmd_demo(args: argparse.Namespace, out: Output) -> int:
    name, _, result = _run_evolution(args.task, args.optimizer, args.budget, None, None)
    summary = {**result.summary(), "task": name, "optimizer": args.optimizer}
    out.emit(summary, _summary_text(name, args.optimizer, summary))
    return 0


def cmd_trace(args: argparse.Namespace, out: Output) -> int:
    trace = load_trace(args.file)
    if out.as_json:
        for record in trace.to_records():
            print(json.dumps(record, sort_keys=True))
        return 0
    print(f"trace {trace.trace_id}: {len(trace.events)} event(s), success={trace.outcome.success}")
    for event in trace.events:
        print(f"{event.seq:>4} {event.kind.value:<11} {json.dumps(event.payload, sort_keys=True, default=str)}")
    return 0


def cmd_serve(args: argparse.Namespace, out: Output) -> int:
    home = Path(args.home)
    substrate = open_store(home)
    handle = serve(args.bind or f"{settings.host}:{settings.port}", substrate)
    out.emit({"url": handle.url}, f"control plane listening on {handle.url} (Ctrl-C to stop)")
    try:
        handle.wait()
    except KeyboardInterrupt:
        pass
    finally:
        handle.shutdown()
        substrate.save(home)
    return 0


# ── Parser ───────────────────────────────────────────────────────────


def build_parser() -> CatalogueParser:
    parser = CatalogueParser(prog="run.py", description="Agent resource registry and self-evolution runtime")
    parser.add_argument("--json", action="store_true", help="machine-readable output")
    parser.add_argument("--home", default=settings.home, help="persistence root (default: AGP_HOME or .agp)")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CatalogueParser)

    registry = commands.add_parser("registry", help="inspect and restore registered resources")
    actions = registry.add_subparsers(dest="action", required=True, parser_class=CatalogueParser)
    listing = actions.add_parser("list")
    listing.add_argument("--kind", choices=KINDS)
    show = actions.add_parser("show")
    show.add_argument("kind", choices=KINDS)
    show.add_argument("name")
    diff = actions.add_parser("diff")
    diff.add_argument("kind", choices=KINDS)
    diff.add_argument("name")
    diff.add_argument("v_a")
    diff.add_argument("v_b")
    restore = actions.add_parser("restore")
    restore.add_argument("kind", choices=KINDS)
    restore.add_argument("name")
    restore.add_argument("version")
    registry.set_defaults(handler=cmd_registry)

    evolve = commands.add_parser("evolve", help="run an optimizer on a task file")
    evolve_actions = evolve.add_subparsers(dest="action", required=True, parser_class=CatalogueParser)
    evolve_run = evolve_actions.add_parser("run")
    evolve_run.add_argument("--task", required=True, help="toy task JSON, objective JSON or bundled toy task name")
    evolve_run.add_argument("--agent", help="stored agent to evolve (required for an objective file)")
    evolve_run.add_argument("--optimizer", required=True, choices=optimizer_names())
    evolve_run.add_argument("--budget", type=int)
    evolve_run.add_argument("--trace-out", help="write the audit trace as JSONL")
    evolve.set_defaults(handler=cmd_evolve)

    trace = commands.add_parser("trace", help="inspect exported traces")
    trace_actions = trace.add_subparsers(dest="action", required=True, parser_class=CatalogueParser)
    dump = trace_actions.add_parser("dump")
    dump.add_argument("file")
    trace.set_defaults(handler=cmd_trace)

    serve = commands.add_parser("serve", help="start the JSON-RPC control plane")
    serve.add_argument("--bind", help="HOST:PORT (default from settings)")
    serve.set_defaults(handler=cmd_serve)

    demo = commands.add_parser("demo", help="run a bundled toy task offline")
    demo.add_argument("task", help="toy task name")
    demo.add_argument("--optimizer", default="reflection", choices=optimizer_names())
    demo.add_argument("--budget", type=int)
    demo.set_defaults(handler=cmd_demo)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        print(catalogue_text(), file=sys.stderr)
        return 2
    out = Output(args.json)
    try:
        return args.handler(args, out)
    except ProtocolError as e:
        if args.json:
            print(json.dumps({"error": e.to_dict()}, sort_keys=True, default=str), file=sys.stderr)
        else:
            print(f"error: {e.kind}: {e.message}", file=sys.stderr)
        return 1
