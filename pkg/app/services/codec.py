"""
codec.py - Canonical JSON encoding of registration records

The canonical form (sorted keys, no insignificant whitespace) is what every
content hash is computed over, so it must stay byte-stable across save/load.
"""

import hashlib
import json
from typing import Any

from pydantic import ValidationError

from app.models.resource import RegistrationRecord
from app.services.errors import InvalidRecord

RECORD_KEYS = (
    "name", "description", "mapping", "trainable", "metadata",
    "version", "impl_descriptor", "init_params", "exports",
)


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def encode_record(record: RegistrationRecord) -> dict[str, Any]:
    """Flatten a record to the on-disk schema."""
    entity = record.entity
    return {
        "name": entity.name,
        "description": entity.description,
        "mapping": entity.mapping,
        "trainable": entity.trainable,
        "metadata": entity.metadata,
        "version": record.version,
        "impl_descriptor": record.impl_descriptor,
        "init_params": record.init_params,
        "exports": [{"form": e.form.value, "body": e.body} for e in record.exports],
    }


def decode_record(data: dict[str, Any]) -> RegistrationRecord:
    if not isinstance(data, dict):
        raise InvalidRecord("record must be a JSON object")
    unknown = set(data) - set(RECORD_KEYS)
    if unknown:
        raise InvalidRecord(f"unknown record keys: {sorted(unknown)}")
    try:
        return RegistrationRecord.model_validate({
            "entity": {
                "name": data.get("name", ""),
                "description": data.get("description", ""),
                "mapping": data.get("mapping") or {},
                "trainable": data.get("trainable", False),
                "metadata": data.get("metadata") or {},
            },
            "version": data.get("version"),
            "impl_descriptor": data.get("impl_descriptor", ""),
            "init_params": data.get("init_params") or {},
            "exports": data.get("exports") or [],
        })
    except ValidationError as e:
        raise InvalidRecord(f"malformed record: {e.errors()[0]['msg']}", {"errors": str(e)})


def record_bytes(record: RegistrationRecord) -> bytes:
    return canonical_json(encode_record(record)).encode("utf-8")


def content_hash(record: RegistrationRecord) -> str:
    """sha256 over the canonical encoding with the version left out, so a
    restored head hashes the same as the snapshot it was restored from."""
    body = encode_record(record)
    body.pop("version")
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
