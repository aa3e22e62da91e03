"""Named random substreams derived from a single run seed."""

import numpy as np

STREAMS = {"init": 0, "shuffle": 1, "synth": 2, "probe": 3, "subset": 4}


def substream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent generator for ``name`` (and optional extra keys, e.g. an epoch)."""
    key = [int(seed), STREAMS[name], *(int(e) for e in extra)]
    return np.random.default_rng(np.random.SeedSequence(key))
