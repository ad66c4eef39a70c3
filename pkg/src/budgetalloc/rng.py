"""Named random streams.

Every consumer of randomness asks for a generator by ``(seed, purpose, *keys)``.
Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so two
purposes never share state and adding draws to one purpose leaves the others
untouched.
"""
import numpy as np

STREAMS = {
    "ground_truth": 1,
    "treatments": 2,
    "outcomes": 3,
    "features": 4,
    "feature_map": 5,
    "initial_v": 6,
    "split": 7,
    "shuffle": 8,
    "init_params": 9,
    "budget": 10,
    "fd_mask": 11,
    "nes": 12,
    "scores": 13,
}


def stream(seed, purpose, *keys):
    """Return a fresh ``Generator`` for ``purpose`` under the global ``seed``.

    ``keys`` are extra non-negative integers (epoch, step, run index, ...)
    that select an independent sub-stream.
    """
    if purpose not in STREAMS:
        raise KeyError(f"unknown random stream {purpose!r}")
    spawn_key = (STREAMS[purpose],) + tuple(int(k) for k in keys)
    ss = np.random.SeedSequence(int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed, purpose, *keys):
    """Integer seed for a sub-stream, for APIs that take a plain seed."""
    return int(stream(seed, purpose, *keys).integers(0, 2**63 - 1))
