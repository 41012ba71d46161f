"""Seed derivation.

One master seed drives every component. Component seeds are split off with
SHA-256 so any part of a run can be re-executed in isolation:

    split_seed(master, "agent-3") == first 8 little-endian bytes of
    SHA-256(master_le64 || b"agent-3")

``mix_to_seed`` does the same over a sequence of 64-bit integers and is used
for per-step decode seeds.
"""

from __future__ import annotations

import hashlib

_U64 = 0xFFFFFFFFFFFFFFFF


def split_seed(master: int, label: str) -> int:
    """Derive a component seed from the master seed and a string label."""
    data = (int(master) & _U64).to_bytes(8, "little") + label.encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


def mix_to_seed(*parts: int) -> int:
    """Hash a sequence of integers into one 64-bit seed."""
    data = b"".join((int(p) & _U64).to_bytes(8, "little") for p in parts)
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


def fold_digest(digest: int, value: int) -> int:
    """Cheap LCG fold of one value into a running 64-bit context digest."""
    return (digest * 6364136223846793005 + (int(value) & _U64) + 0x9E3779B97F4A7C15) & _U64
