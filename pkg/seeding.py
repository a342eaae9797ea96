"""
Deterministic seed splitting.

A 64-bit root seed is split into independent substreams by label, so that e.g.
trial 7's planner never shares random numbers with trial 8's.

Bit-exact scheme (reproducible from any language):
    digest = first 8 bytes of SHA-256(label as UTF-8), read little-endian
    state  = (root XOR digest) mod 2**64
    seed   = splitmix64(state)
where splitmix64 is
    z = (state + 0x9E3779B97F4A7C15) mod 2**64
    z = ((z XOR (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2**64
    z = ((z XOR (z >> 27)) * 0x94D049BB133111EB) mod 2**64
    z =   z XOR (z >> 31)
The derived seed feeds numpy's PCG64 bit generator.
"""

import hashlib
import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(state):
    z = (state + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def label_digest(label):
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")


def derive_seed(root, label):
    """64-bit seed for the substream `label` under `root`."""
    return splitmix64((int(root) ^ label_digest(label)) & MASK64)


def generator(root, label):
    """numpy Generator for the substream `label` under `root`."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, label)))
