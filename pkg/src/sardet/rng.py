"""Named, splittable random streams on top of numpy's counter-based Philox."""

from __future__ import annotations

import hashlib

import numpy as np


def _key(path: tuple) -> int:
    digest = hashlib.sha256("/".join(map(str, path)).encode()).digest()
    return int.from_bytes(digest[:16], "little")


class Rng:
    """A seed plus a name path; ``split`` derives independent child streams.

    The same (seed, path) always yields the same stream, regardless of which
    other streams were drawn before it.
    """

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)

    def split(self, *names) -> "Rng":
        return Rng(self.seed, self.path + tuple(names))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=_key((self.seed,) + self.path)))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={'/'.join(map(str, self.path)) or '<root>'})"
