"""Named, independent random streams derived from one master seed.

Every stochastic component (weight init, augmentation, attack starts,
epoch shuffling, probe init, synthetic data) pulls from its own stream so
that disabling one component never perturbs the draws of another.  This is
what makes the alpha=0 run bit-identical to an attack-free baseline.
"""

import numpy as np

# Stable stream ids; never renumber, checkpoints depend on init determinism.
STREAMS = {
    "init": 0,
    "augment": 1,
    "attack": 2,
    "shuffle": 3,
    "probe": 4,
    "data": 5,
}


def stream(seed: int, name: str, *key: int) -> np.random.Generator:
    """Return a generator for stream `name`, optionally sub-keyed.

    Sub-keys (step index, epoch index, ...) give per-use streams whose
    draws are independent of how many draws earlier uses consumed.
    """
    if name not in STREAMS:
        raise KeyError(f"unknown rng stream {name!r}")
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[name], *key))
    return np.random.Generator(np.random.PCG64(ss))
