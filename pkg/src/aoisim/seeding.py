"""Per-purpose RNG streams derived from a single master seed.

Every random consumer in the simulator (event transitions, device
activations, exploration, replay sampling, weight init, ...) draws from its
own named stream. Streams are keyed by label, not by creation order, so
adding a new consumer never perturbs the draws seen by existing ones and
any stream can be reconstructed in isolation.
"""

import hashlib

import numpy as np


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Return an independent generator for (master_seed, labels).

    Labels may be strings or ints (e.g. substream(seed, "events", episode)).
    The same (seed, labels) pair always yields an identical stream.
    """
    tag = "/".join(str(x) for x in labels)
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    # 128 bits of the label hash as the spawn key; master seed as entropy.
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))
