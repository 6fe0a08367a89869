"""Named random substreams derived from one master seed."""

from __future__ import annotations

import numpy as np

STREAMS = {
    "cohort": 1,
    "physiology": 2,
    "measurement": 3,
    "policy": 4,
    "training": 5,
    "validation": 6,
}


def substream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, name, *keys)``.

    The same arguments always give the same stream, so per-patient draws do
    not depend on batching or on the order in which patients are simulated.
    """
    if name not in STREAMS:
        raise KeyError(f"unknown random stream {name!r}")
    return np.random.default_rng([int(seed), STREAMS[name], *(int(k) for k in keys)])
