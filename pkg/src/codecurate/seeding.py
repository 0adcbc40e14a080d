"""Per-document random streams.

Each document gets its own generator derived from the pipeline seed, a stage
salt and the document id, so outcomes do not depend on stream order or on
how work is split across workers.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(seed: int, salt: str, doc_id: str) -> int:
    raw = hashlib.sha256(f"{seed}\x1f{salt}\x1f{doc_id}".encode("utf-8")).digest()
    return int.from_bytes(raw[:8], "little")


def doc_rng(seed: int, salt: str, doc_id: str) -> random.Random:
    return random.Random(derive_seed(seed, salt, doc_id))
