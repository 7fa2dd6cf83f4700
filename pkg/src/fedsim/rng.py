"""Counter-based splittable random number streams.

Every variate produced here is a pure function of ``(seed, worker_id,
counter)``.  Streams never share hidden state, so any number of workers can
draw in any interleaving (or in parallel) and still produce bit-identical
results.  The generator is SplitMix64: a stream is keyed by mixing
``(seed, worker_id)``, and the output word at position ``i`` is the SplitMix64
finalizer applied to ``key + i * GOLDEN``.

Counter bookkeeping: each *variate* (one gaussian, one uniform, one index)
occupies exactly one counter slot, regardless of how many 64-bit words it
internally consumes.  Words within a slot are addressed as
``(slot << 32) + j``, so a slot can use up to 2**32 words without colliding
with its neighbours.  Gaussians use two words (Box-Muller), uniforms one,
index draws one word per rejection round (rejection is astronomically rare
for any practical range).
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

# one gaussian or uniform or index draw per slot; words addressed below 2**32
_SLOT_SHIFT = 32
_MAX_REJECTION_ROUNDS = 128

_INV_2_53 = 2.0 ** -53


def _mix_int(z: int) -> int:
    """SplitMix64 finalizer on a plain python int (no numpy scalar overflow)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX_A) & _MASK
    z = ((z ^ (z >> 27)) * _MIX_B) & _MASK
    return z ^ (z >> 31)


def _finalize_array(z: np.ndarray) -> np.ndarray:
    """Vectorized SplitMix64 finalizer; uint64 array arithmetic wraps silently."""
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, worker_id: int) -> int:
    """Derive the 64-bit key identifying stream (seed, worker_id)."""
    s = _mix_int((int(seed) & _MASK) + _GOLDEN)
    w = _mix_int(((int(worker_id) & _MASK) + 1) * _GOLDEN)
    return _mix_int(s ^ w)


def _words(keys: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Raw output words for every (key, word-index) pair; shape broadcast of inputs."""
    states = keys + idx * np.uint64(_GOLDEN)
    return _finalize_array(states)


def _slot_word_idx(counter: int, count: int, word: int) -> np.ndarray:
    slots = np.arange(counter, counter + count, dtype=np.uint64)
    return (slots << np.uint64(_SLOT_SHIFT)) + np.uint64(word)


def _to_unit(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to floats in [0, 1) using the top 53 bits."""
    return (words >> np.uint64(11)).astype(np.float64) * _INV_2_53


def _to_unit_open(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to floats in (0, 1] so that log() is always finite."""
    return ((words >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _INV_2_53


class StreamBundle:
    """A family of streams sharing one seed, advancing their counters in lockstep.

    The bundle draws for all workers at once (vectorized), but each row is
    bit-identical to what the corresponding ``RngStream(seed, worker_id)``
    would produce on its own.
    """

    __slots__ = ("seed", "worker_ids", "counter", "_keys")

    def __init__(self, seed: int, worker_ids, counter: int = 0):
        self.seed = int(seed)
        ids = np.asarray(worker_ids, dtype=np.int64).ravel()
        self.worker_ids = ids
        self.counter = int(counter)
        self._keys = np.array(
            [stream_key(seed, int(m)) for m in ids], dtype=np.uint64
        ).reshape(-1, 1)

    def __len__(self) -> int:
        return self._keys.shape[0]

    def _take_slots(self, count: int) -> int:
        start = self.counter
        self.counter = start + count
        return start

    def uniforms(self, count: int) -> np.ndarray:
        """Shape (workers, count) floats in [0, 1); advances counter by count."""
        start = self._take_slots(count)
        idx = _slot_word_idx(start, count, 0)
        return _to_unit(_words(self._keys, idx))

    def gaussians(self, count: int) -> np.ndarray:
        """Shape (workers, count) standard normals; advances counter by count."""
        start = self._take_slots(count)
        idx0 = _slot_word_idx(start, count, 0)
        idx1 = _slot_word_idx(start, count, 1)
        u1 = _to_unit_open(_words(self._keys, idx0))
        u2 = _to_unit(_words(self._keys, idx1))
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def indices(self, n: int, count: int = 1) -> np.ndarray:
        """Shape (workers, count) uniform integers in [0, n); advances counter by count.

        Uses rejection against the largest multiple of n below 2**64, so the
        distribution is exactly uniform with no modulo bias.
        """
        if n < 1:
            raise ValueError(f"index range must be >= 1, got {n}")
        start = self._take_slots(count)
        nn = np.uint64(n)
        threshold = np.uint64((((1 << 64) // n) * n) & _MASK)
        # threshold == 0 means n divides 2**64 exactly: accept everything
        out = np.empty((len(self), count), dtype=np.int64)
        pending = np.ones((len(self), count), dtype=bool)
        for word in range(_MAX_REJECTION_ROUNDS):
            idx = _slot_word_idx(start, count, word)
            w = _words(self._keys, idx)
            if threshold:
                ok = pending & (w < threshold)
            else:
                ok = pending.copy()
            out[ok] = (w[ok] % nn).astype(np.int64)
            pending &= ~ok
            if not pending.any():
                return out
        raise RuntimeError("rejection sampling failed to terminate")  # pragma: no cover


class RngStream:
    """A single random stream identified by (seed, worker_id).

    Thin wrapper over :class:`StreamBundle` with one worker; draws return flat
    arrays.  ``counter`` is exposed so callers can checkpoint or fast-forward.
    """

    __slots__ = ("_bundle",)

    def __init__(self, seed: int, worker_id: int = 0, counter: int = 0):
        self._bundle = StreamBundle(seed, [worker_id], counter)

    @property
    def seed(self) -> int:
        return self._bundle.seed

    @property
    def worker_id(self) -> int:
        return int(self._bundle.worker_ids[0])

    @property
    def counter(self) -> int:
        return self._bundle.counter

    @counter.setter
    def counter(self, value: int) -> None:
        self._bundle.counter = int(value)

    def uniforms(self, count: int) -> np.ndarray:
        return self._bundle.uniforms(count)[0]

    def gaussians(self, count: int) -> np.ndarray:
        return self._bundle.gaussians(count)[0]

    def indices(self, n: int, count: int = 1) -> np.ndarray:
        return self._bundle.indices(n, count)[0]


def rng_draw_gaussian(stream: RngStream, count: int) -> np.ndarray:
    """Draw `count` standard normals from the stream (counter advances by count)."""
    return stream.gaussians(count)


def rng_draw_index(stream: RngStream, n: int) -> int:
    """Draw one uniform integer in [0, n) from the stream (counter advances by 1)."""
    return int(stream.indices(n, 1)[0])
