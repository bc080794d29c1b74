"""Per-stage seed derivation from a single master seed.

``derive_seed(master, "embed", "Race")`` hashes the master seed together
with the stage labels, so each stage can be rerun on its own and still draw
the same random numbers as in a full run.
"""
from __future__ import annotations

import hashlib


def derive_seed(master: int, *labels: str) -> int:
    key = "/".join([str(int(master)), *labels]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")
