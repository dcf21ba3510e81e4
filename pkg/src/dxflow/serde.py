"""Canonical JSON helpers: stable bytes, digests, strict field checking.

Internal files use UTF-8 JSON with lowercase snake_case field names.
Canonical bytes keep insertion order and compact separators so digests
and byte-equality checks are stable across platforms.
"""
from __future__ import annotations

import hashlib
import json
from typing import Any, Iterable

from .errors import SchemaError


def canonical_json_bytes(obj: Any) -> bytes:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"), allow_nan=False).encode(
        "utf-8"
    )


def dump_json_bytes(obj: Any) -> bytes:
    """Pretty variant used for files a human may read; still deterministic."""
    return (json.dumps(obj, ensure_ascii=False, indent=2, allow_nan=False) + "\n").encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of(obj: Any) -> str:
    return sha256_hex(canonical_json_bytes(obj))


def load_json(data: bytes | str) -> Any:
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"malformed JSON: {exc}") from exc


def require_mapping(value: Any, ctx: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(f"{ctx}: expected an object, got {type(value).__name__}")
    return value


def require_list(value: Any, ctx: str) -> list:
    if not isinstance(value, list):
        raise SchemaError(f"{ctx}: expected an array, got {type(value).__name__}")
    return value


def check_fields(
    data: dict,
    required: Iterable[str],
    optional: Iterable[str] = (),
    *,
    ctx: str,
    strict: bool = True,
) -> None:
    required = set(required)
    allowed = required | set(optional)
    missing = required - data.keys()
    if missing:
        raise SchemaError(f"{ctx}: missing fields {sorted(missing)}")
    if strict:
        unknown = data.keys() - allowed
        if unknown:
            raise SchemaError(f"{ctx}: unknown fields {sorted(unknown)}")


def get_str(data: dict, key: str, ctx: str) -> str:
    value = data.get(key)
    if not isinstance(value, str):
        raise SchemaError(f"{ctx}: field {key!r} must be a string")
    return value


def get_number(data: dict, key: str, ctx: str) -> float:
    value = data.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{ctx}: field {key!r} must be a number")
    return float(value)
