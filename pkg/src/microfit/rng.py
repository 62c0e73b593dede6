"""Seed derivation.

Every random draw in the toolkit flows from one root seed through labeled
derivation, so any stage (space sampling, search, weight generation) can be
reproduced in isolation and parallel schedules cannot perturb the streams.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Collapse a label path (strings/ints) into a 64-bit seed."""
    text = "/".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
