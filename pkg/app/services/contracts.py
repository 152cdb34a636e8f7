"""
contracts.py - skills.md-style capability contracts

Provides:
- contract_section(record) - structured section from a registration record
- render_contract(contract) -> markdown
- parse_contract(text) -> Contract (ParseError on malformed input)
"""

import json
import re
from typing import Any

from app.models.contract import Contract, ContractArgument, ContractSection
from app.models.resource import EntityKind, ExportForm, RegistrationRecord
from app.services.errors import ParseError

_NONE = "- (none)"
_TITLE_RE = re.compile(r"^# (\w+) Contract\s*$")
_SECTION_RE = re.compile(r"^## (.+) \(v([^)]+)\)\s*$")
_ARG_RE = re.compile(r"^- ([^:]+):\s*(\S+)(?:\s+[-—]\s+(.*))?$")
_FIELDS = ("Description", "Arguments", "Preconditions", "Constraints")


def _schema_arguments(body: str) -> list[ContractArgument]:
    try:
        schema = json.loads(body)
    except json.JSONDecodeError:
        return []
    if not isinstance(schema, dict):
        return []
    params = schema.get("parameters", schema)
    properties: dict[str, Any] = params.get("properties") or {}
    return [
        ContractArgument(
            name=name,
            type=str(spec.get("type", "string")) if isinstance(spec, dict) else "string",
            description=str(spec.get("description", "")) if isinstance(spec, dict) else "",
        )
        for name, spec in properties.items()
    ]


def contract_section(record: RegistrationRecord) -> ContractSection:
    arguments: list[ContractArgument] = []
    for form in (ExportForm.FUNCTION_CALLING_SCHEMA, ExportForm.STRUCTURED_ARGUMENT_SCHEMA):
        export = record.export_of(form)
        if export is not None:
            arguments = _schema_arguments(export.body)
            if arguments:
                break
    metadata = record.entity.metadata
    return ContractSection(
        name=record.entity.name,
        version=record.version or "",
        description=record.entity.description,
        arguments=arguments,
        preconditions=[str(p) for p in metadata.get("preconditions", [])],
        constraints=[str(c) for c in metadata.get("constraints", [])],
    )


def _bullets(items: list[str]) -> list[str]:
    return [f"- {item}" for item in items] or [_NONE]


def render_contract(contract: Contract) -> str:
    lines = [f"# {contract.kind.title} Contract", ""]
    for section in contract.sections:
        lines += [f"## {section.name} (v{section.version})", ""]
        lines += ["**Description**", section.description or "(none)", ""]
        args = [
            f"- {a.name}: {a.type}" + (f" — {a.description}" if a.description else "")
            for a in section.arguments
        ]
        lines += ["**Arguments**", *(args or [_NONE]), ""]
        lines += ["**Preconditions**", *_bullets(section.preconditions), ""]
        lines += ["**Constraints**", *_bullets(section.constraints), ""]
    return "\n".join(lines).rstrip() + "\n"


def parse_contract(text: str) -> Contract:
    lines = text.splitlines()
    if not lines or not _TITLE_RE.match(lines[0]):
        raise ParseError("contract must begin with '# <Kind> Contract'", {"line": 1})
    try:
        kind = EntityKind(_TITLE_RE.match(lines[0])[1].lower())
    except ValueError:
        raise ParseError(f"unknown kind in title {lines[0]!r}", {"line": 1})

    sections: list[dict[str, Any]] = []
    field = None
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped:
            continue
        header = _SECTION_RE.match(line)
        if header:
            sections.append({
                "name": header[1], "version": header[2], "description": [],
                "arguments": [], "preconditions": [], "constraints": [],
            })
            field = None
            continue
        if stripped.startswith("**") and stripped.endswith("**"):
            field = stripped.strip("*")
            if field not in _FIELDS:
                raise ParseError(f"line {lineno}: unknown field {field!r}", {"line": lineno})
            if not sections:
                raise ParseError(f"line {lineno}: field outside a section", {"line": lineno})
            continue
        if not sections or field is None:
            raise ParseError(f"line {lineno}: unexpected text", {"line": lineno})
        current = sections[-1]
        if field == "Description":
            if stripped != "(none)":
                current["description"].append(stripped)
        elif stripped == _NONE:
            continue
        elif field == "Arguments":
            match = _ARG_RE.match(stripped)
            if not match:
                raise ParseError(f"line {lineno}: malformed argument {stripped!r}", {"line": lineno})
            current["arguments"].append(
                ContractArgument(name=match[1].strip(), type=match[2], description=match[3] or "")
            )
        else:
            if not stripped.startswith("- "):
                raise ParseError(f"line {lineno}: expected a bullet", {"line": lineno})
            current[field.lower()].append(stripped[2:])

    return Contract(kind=kind, sections=[
        ContractSection(**{**s, "description": "\n".join(s["description"])}) for s in sections
    ])
