"""Counter-based random streams derived from a master seed.

Every consumer asks for its own stream with a tuple of keys, so results do not
depend on the order in which streams are created or on scheduling.
"""

import zlib

import numpy as np


def _key_int(key):
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"stream keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def stream(seed, *keys):
    """Return an independent generator for ``(seed, *keys)``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def _to_jsonable(value):
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.dtype.str, "values": [int(v) for v in value.ravel()]}
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (np.integer,)):
        return int(value)
    return value


def _from_jsonable(value):
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.array(value["values"], dtype=np.dtype(value["__ndarray__"]))
        return {k: _from_jsonable(v) for k, v in value.items()}
    return value


def get_state(gen):
    """JSON-serializable bit generator state."""
    return _to_jsonable(gen.bit_generator.state)


def from_state(state):
    """Rebuild a generator from :func:`get_state` output."""
    state = _from_jsonable(state)
    bit_gen = getattr(np.random, state["bit_generator"])()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


def set_state(gen, state):
    gen.bit_generator.state = _from_jsonable(state)
