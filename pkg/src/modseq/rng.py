"""Named, independently replayable random streams.

Every consumer of randomness (data generation, batch order, encoder sampler,
decoder sampler, weight init) pulls from its own counter-based Philox stream
derived from ``(seed, name)``, so replaying one component never perturbs
another.
"""
import hashlib

import numpy as np
import torch


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return a fresh generator for the stream ``name`` under ``seed``."""
    ss = np.random.SeedSequence([int(seed), _name_key(name)])
    return np.random.Generator(np.random.Philox(ss))


def torch_generator(seed: int, name: str) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(stream(seed, name).integers(0, 2**62)))
    return g
