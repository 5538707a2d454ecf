"""Canonical JSON bytes and digest helpers.

Every hash and signature in the package is computed over the same byte
encoding: JSON with lexicographically sorted keys, no whitespace, and
UTF-8 output (non-ASCII preserved, not escaped). Two structurally equal
documents therefore always produce identical bytes regardless of insertion
order.
"""

from __future__ import annotations

import hashlib
import json
from datetime import date, datetime, timezone

_JSON_SCALARS = (str, int, float, bool, type(None))


def _check_tree(value, path: str) -> None:
    if isinstance(value, dict):
        for key, child in value.items():
            if not isinstance(key, str):
                raise TypeError(f"non-string key {key!r} at {path}")
            _check_tree(child, f"{path}.{key}")
    elif isinstance(value, (list, tuple)):
        for i, child in enumerate(value):
            _check_tree(child, f"{path}[{i}]")
    elif not isinstance(value, _JSON_SCALARS):
        raise TypeError(f"unencodable {type(value).__name__} at {path}")


def canonical_bytes(value) -> bytes:
    """Encode a JSON-compatible tree to its unique canonical byte string."""
    _check_tree(value, "$")
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of(value) -> str:
    """SHA-256 hex digest of the canonical encoding of a JSON tree."""
    return sha256_hex(canonical_bytes(value))


# ---------------------------------------------------------------------------
# time rendering: one format for instants, one for calendar dates


def iso_instant(dt: datetime) -> str:
    """Render an aware datetime as UTC with second precision, Z suffix."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime")
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def iso_instant_ms(dt: datetime) -> str:
    """Render an aware datetime as UTC with millisecond precision."""
    if dt.tzinfo is None:
        raise ValueError("naive datetime")
    dt = dt.astimezone(timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"


def parse_instant(text: str) -> datetime:
    """Parse ISO-8601 instants with or without fractional seconds."""
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1] + "+00:00"
    parsed = datetime.fromisoformat(cleaned)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def iso_date(d: date) -> str:
    return d.isoformat()


def parse_date(text: str) -> date:
    return date.fromisoformat(text.strip())
