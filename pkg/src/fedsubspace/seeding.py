"""Derivation of independent, reproducible random streams from one master seed.

Every stochastic consumer in the pipeline (partitioning, weight init, client
sampling, k-means, ...) draws from its own stream, tagged by a fixed integer.
This keeps runs bit-reproducible regardless of evaluation order or threading.
"""

import numpy as np

# Stream tags. Never reuse or renumber: seeds derived from them are part of
# the reproducibility contract of saved runs.
PARTITION = 1
ENCODER_INIT = 2
DECODER_INIT = 3
SERVER_SAMPLING = 4
CLUSTERING = 5
BASELINE = 6
SWEEP = 7
SYNTH = 8

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed: int, *stream: int) -> int:
    """A 64-bit seed unique to (master_seed, stream...)."""
    ss = np.random.SeedSequence([int(master_seed) & _MASK64, *stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(master_seed: int, *stream: int) -> np.random.Generator:
    """A fresh generator for the stream (master_seed, stream...)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & _MASK64, *stream]))
