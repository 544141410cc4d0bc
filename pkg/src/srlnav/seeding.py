"""Deterministic named RNG substreams.

Every stochastic component pulls its own Generator from a master seed plus a
string label.  Streams with different labels are statistically independent,
and the mapping (seed, label) -> stream is stable across runs and platforms.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Return the named child generator of ``master_seed``.

    The label is folded in through the SeedSequence spawn key so that adding
    a new named stream never perturbs existing ones.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class RunStreams:
    """The named streams one training run consumes.

    init: network initialization; env: spawn/target draws; explore: epsilon
    draws; sample: replay and pair sampling; srl: encoder training batches;
    eval: greedy evaluation episodes.
    """

    master_seed: int
    init: np.random.Generator
    env: np.random.Generator
    explore: np.random.Generator
    sample: np.random.Generator
    srl: np.random.Generator
    eval: np.random.Generator

    @classmethod
    def from_seed(cls, master_seed: int) -> "RunStreams":
        return cls(
            master_seed,
            *(substream(master_seed, name)
              for name in ("init", "env", "explore", "sample", "srl", "eval")),
        )
