"""Deterministic derivation of independent random streams.

Every stochastic operation in the toolkit draws from a generator built by
``rng_for(seed, *parts)``.  The parts form a counter-style key (strings are
hashed with CRC32, integers are split into 32-bit words), so the stream a
computation sees depends only on its logical address, never on evaluation
order.  This is what makes parallel evaluation bit-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _as_words(parts: tuple) -> tuple[int, ...]:
    words: list[int] = []
    for part in parts:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, (int, np.integer)):
            value = int(part)
            if value < 0:
                raise ValueError(f"seed parts must be non-negative, got {value}")
            while True:
                words.append(value & 0xFFFFFFFF)
                value >>= 32
                if value == 0:
                    break
        else:
            raise TypeError(f"seed parts must be str or int, got {type(part)!r}")
    return tuple(words)


def rng_for(seed: int, *parts: str | int) -> np.random.Generator:
    """Generator for the stream addressed by ``(seed, *parts)``."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=_as_words(parts))
    return np.random.default_rng(sequence)


def derive_seed(seed: int, *parts: str | int) -> int:
    """A 63-bit integer seed for the stream addressed by ``(seed, *parts)``."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=_as_words(parts))
    return int(sequence.generate_state(1, np.uint64)[0] >> np.uint64(1))
