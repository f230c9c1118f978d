"""Counter-based random streams.

Every estimate in this package is a deterministic function of
``(seed, stream id)``: each worker, chain or chunk of paths draws from its own
Philox generator keyed by the run seed and its stream id, so results do not
depend on how many threads are used or in which order jobs finish.
"""

import numpy as np

# Stream id offsets keep the different consumers of one seed disjoint.
PARTITION_STREAMS = 0
CHAIN_STREAMS = 1 << 20
SCAN_STREAMS = 1 << 30


def stream(seed, stream_id=0):
    """
    Return a Philox-backed generator for one stream.

    Args:
        seed: run seed (nonnegative integer)
        stream_id: index of the consumer (chunk, chain, scan cell)

    Returns:
        numpy.random.Generator
    """
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed, stream_id):
    """Derive a child seed, e.g. one per scan cell, from a run seed."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(SCAN_STREAMS + int(stream_id),))
    return int(seq.generate_state(1, dtype=np.uint32)[0])
