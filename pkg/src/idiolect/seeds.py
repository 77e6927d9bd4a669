"""Deterministic seed derivation so every stage is reproducible from one master seed."""

from __future__ import annotations

import hashlib


def seed_for(*parts: object) -> int:
    """Derive a stable 63-bit seed from an arbitrary key path.

    Same parts always give the same seed, on any platform, so shuffles and
    subsampling stay reproducible no matter what order work items run in.
    """
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1
