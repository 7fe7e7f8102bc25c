"""
Deterministic seed derivation

derive_seed(master, label, *indices) hashes the text
    "<master>|<label>|<index_1>|...|<index_m>"
(UTF-8, indices rendered with str(); floats with repr) through SHA-256 and
reads the first 8 digest bytes as a little-endian unsigned integer.
Any reimplementation following this definition reproduces the random streams,
since every generator is numpy.random.default_rng(seed).
"""
import hashlib
from typing import Union

import numpy as np

SeedPart = Union[int, float, str]


def _render(part: SeedPart) -> str:
    if isinstance(part, float):
        return repr(part)
    if hasattr(part, 'value') and hasattr(part, 'name'):
        return str(part.value)
    return str(part)


def derive_seed(master_seed: int, label: str, *indices: SeedPart) -> int:
    """Stable 64-bit seed for a task identified by (label, indices)"""
    text = '|'.join([str(int(master_seed)), label] + [_render(i) for i in indices])
    digest = hashlib.sha256(text.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little')


def derive_rng(master_seed: int, label: str, *indices: SeedPart) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, label, *indices))
