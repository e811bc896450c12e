"""Canonical fingerprinting of configuration payloads."""

from __future__ import annotations

import hashlib
import json


def fingerprint(payload: dict) -> str:
    """SHA-256 over the canonical JSON rendering of ``payload``.

    Keys are sorted and floats rendered by json's repr, so structurally
    equal configurations fingerprint identically across runs.
    """
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
