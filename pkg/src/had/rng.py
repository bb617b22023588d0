"""Named random sub-streams derived from one root seed."""
from __future__ import annotations

import contextlib
import zlib

import numpy as np
import torch


def stream(root_seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([root_seed, zlib.crc32(name.encode("utf-8"))])


def derived_seed(root_seed: int, name: str) -> int:
    return int(stream(root_seed, name).integers(2**62))


@contextlib.contextmanager
def torch_seeded(root_seed: int, name: str):
    """Seed torch's global generator from a named stream for the block only."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derived_seed(root_seed, name))
        yield
