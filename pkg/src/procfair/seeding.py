"""Deterministic seed derivation for independent random substreams."""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, tag: str) -> int:
    """Derive a reproducible sub-seed from a base seed and a purpose tag."""
    digest = hashlib.sha256(f"{seed}|{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")
