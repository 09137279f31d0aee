"""Small shared helpers: named RNG substreams and deterministic JSON."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def rng_substream(master_seed: int, *names: str) -> np.random.Generator:
    """A generator keyed by (master seed, name path).

    Every consumer of randomness derives its own stream by name, so
    results never depend on scheduling or evaluation order.
    """
    digest = hashlib.blake2b("/".join(names).encode("utf-8"), digest_size=8).digest()
    words = tuple(int.from_bytes(digest[i:i + 4], "little") for i in (0, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=words))


def substream_seed(master_seed: int, *names: str) -> int:
    """A derived integer seed for APIs that take one (stable across runs)."""
    digest = hashlib.blake2b(
        ("/".join(names)).encode("utf-8"),
        digest_size=8,
        key=str(master_seed).encode("utf-8"),
    ).digest()
    return int.from_bytes(digest, "little")


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def sha256_of(payload) -> str:
    return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()
