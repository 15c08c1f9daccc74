"""Counter-based random streams keyed by (seed, purpose, index)."""

import hashlib

import numpy as np


def stream_key(seed, purpose, *index):
    """128-bit Philox key derived from a seed, a purpose label and indices."""
    payload = repr((int(seed), str(purpose), tuple(int(i) for i in index)))
    digest = hashlib.blake2b(payload.encode(), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def rng_stream(seed, purpose, *index):
    """Independent generator for one (seed, purpose, index) cell.

    Streams never share state, so cells can be drawn in any order or in
    parallel and still reproduce bit-identical values.
    """
    return np.random.Generator(np.random.Philox(key=stream_key(seed, purpose, *index)))


def derive_seed(seed, purpose, *index):
    """A 63-bit child seed, for handing to another seeded routine."""
    return stream_key(seed, purpose, *index) & ((1 << 63) - 1)
