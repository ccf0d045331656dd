"""Seed derivation, canonical JSON, and config hashing.

Every stochastic step in the pipeline draws its generator from
:func:`derive_seed` so that reruns with the same master seed are bit-identical
regardless of execution order or process boundaries.
"""
from __future__ import annotations

import hashlib
import json
from typing import Any

import numpy as np


def derive_seed(master_seed: int, *tags: object) -> int:
    """Derive a stable 32-bit seed from a master seed and a tag path.

    The tag path is hashed, not summed, so (1, 2) and (2, 1) derive
    different streams.
    """
    payload = repr((int(master_seed),) + tuple(tags)).encode()
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:4], "little")


def rng_for(master_seed: int, *tags: object) -> np.random.Generator:
    """Generator seeded via :func:`derive_seed`."""
    return np.random.default_rng(derive_seed(master_seed, *tags))


def canonical_json(obj: Any) -> str:
    """Serialize deterministically: sorted keys, no whitespace variance."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(obj: Any) -> str:
    """sha256 hex digest of the canonical JSON form of ``obj``."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def dump_json(obj: Any, path: str) -> None:
    """Write ``obj`` as deterministic, human-readable JSON."""
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")


def load_json(path: str) -> Any:
    with open(path) as fh:
        return json.load(fh)
