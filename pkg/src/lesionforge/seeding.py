"""Per-case random substreams.

Each case gets an independent stream keyed by (root seed, case id, extra
labels), so results do not depend on case order or worker count, and a
single case can be replayed in isolation.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["case_rng", "case_entropy"]


def case_entropy(root_seed: int, *keys: str) -> list[int]:
    digest = hashlib.sha256("\x1f".join(keys).encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return [int(root_seed) & (2**63 - 1), *words]


def case_rng(root_seed: int, *keys: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(case_entropy(root_seed, *keys)))
