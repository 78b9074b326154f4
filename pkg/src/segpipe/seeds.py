"""Stable seed derivation so every generated artifact is reproducible
independent of execution order."""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Map an ordered tuple of parts to a 63-bit seed via SHA-256.

    Parts are joined with an unambiguous length-prefixed encoding, so
    ("a", "bc") and ("ab", "c") derive different seeds.
    """
    hasher = hashlib.sha256()
    for part in parts:
        token = str(part).encode("utf-8")
        hasher.update(len(token).to_bytes(4, "big"))
        hasher.update(token)
    return int.from_bytes(hasher.digest()[:8], "big") >> 1
