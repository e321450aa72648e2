"""Deterministic named random substreams derived from one master seed.

Every random draw in a run comes from a substream named after its purpose
(plus the day or iteration where relevant), e.g. ``substream(seed,
"exposure", 41)``.  Draws for a purpose are made as whole vectors indexed by
agent id, so the amount of randomness one agent consumes never shifts the
draws seen by another, and reordering independent work (or splitting it
across workers) cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np

_U64 = 0xFFFFFFFFFFFFFFFF


def _label_entropy(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & _U64
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Return a Generator for the substream named by ``labels``.

    The same (seed, labels) pair always yields an identical stream;
    distinct label tuples yield independent streams.
    """
    entropy = [int(master_seed) & _U64] + [_label_entropy(lab) for lab in labels]
    return np.random.default_rng(np.random.SeedSequence(entropy))
