import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator keyed deterministically by ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *(int(k) for k in key)]))
