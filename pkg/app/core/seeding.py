"""Seed splitting: one experiment seed fans out to independent per-component
streams.

A sub-seed is a pure function of ``(seed, component)``, so adding a new
component never shifts the random stream of an existing one.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np


def derive_seed(seed: int, component: str) -> int:
    payload = json.dumps([int(seed), component], ensure_ascii=False)
    digest = hashlib.sha256(payload.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def component_rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, component))
