"""Counter-based random streams for reproducible ensembles.

Built on numpy's Philox generator: the key is derived from
``(master_seed, stream_id)`` and the 256-bit counter is set per draw, so
``(master_seed, stream_id, counter)`` determines every block of numbers
bit-exactly and blocks can be generated in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["RngStream", "PURPOSE_INIT", "PURPOSE_NOISE", "PURPOSE_GENERIC"]

PURPOSE_INIT = 0
PURPOSE_NOISE = 1
PURPOSE_GENERIC = 2

# Philox counter blocks are spaced far apart so one logical draw can never
# run into the next one's stream (2^64 values per draw).
_COUNTER_STRIDE = 1 << 64


@dataclass(frozen=True)
class RngStream:
    """One logical stream of a counter-based RNG family.

    ``stream_id`` is typically ``(trajectory_index, purpose_tag)``; distinct
    ids give statistically independent streams.
    """

    master_seed: int
    stream_id: tuple[int, ...] = ()

    @cached_property
    def _key(self) -> np.ndarray:
        ss = np.random.SeedSequence(entropy=self.master_seed, spawn_key=tuple(self.stream_id))
        return ss.generate_state(2, np.uint64)

    @cached_property
    def _bitgen(self) -> np.random.Philox:
        return np.random.Philox(key=self._key)

    def substream(self, *ids: int) -> "RngStream":
        return RngStream(self.master_seed, tuple(self.stream_id) + tuple(ids))

    def _position(self, counter: int) -> np.random.Philox:
        """Reset the cached bit generator to the given block boundary."""
        bg = self._bitgen
        state = bg.state
        # block boundaries live at counter * 2^64: word 1 of the 256-bit
        # little-endian counter, with the output buffer invalidated
        state["state"]["counter"][:] = (0, counter & 0xFFFFFFFFFFFFFFFF, counter >> 64, 0)
        state["buffer_pos"] = 4
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bg.state = state
        return bg

    def generator(self, counter: int = 0) -> np.random.Generator:
        """Fresh Generator positioned at the given draw counter."""
        return np.random.Generator(self._position(counter))

    def standard_normal(self, counter: int, shape) -> np.ndarray:
        """The counter-th block of iid standard normals for this stream."""
        return np.random.Generator(self._position(counter)).standard_normal(shape)
