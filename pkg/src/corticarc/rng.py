"""Counter-based deterministic random streams keyed by entity identity.

Every stochastic draw in the simulator comes from a Philox stream whose
key/counter encode (seed, purpose, entity ids) instead of a shared
sequential state.  Two consequences:

* any entity's draws can be regenerated in isolation, bit-exactly;
* results do not depend on worker count or iteration order, because no
  draw consumes state that another entity's draw advanced.

Streams for different purposes never overlap: the purpose tag sits in
the key, entity ids sit in the high counter words, and the low counter
word is the only one Philox increments while a stream is consumed.
"""

import numpy as np

__all__ = [
    "Purpose",
    "stream",
    "splitmix64",
    "counter_uniforms",
]

# Domain tag in the top counter word, so these streams can never collide
# with a plain Philox(seed) used elsewhere.
_DOMAIN = np.uint64(0x636F7274_69636172)


class Purpose:
    """Stream purpose tags. Values are part of the reproducibility contract."""

    CONNECTIVITY = 1
    WEIGHT = 2
    DELAY = 3
    INIT_STATE = 4
    EXTERNAL = 5
    FUZZ = 6
    EXTERNAL_TIME = 7


def stream(seed: int, purpose: int, a: int = 0, b: int = 0) -> np.random.Generator:
    """Return the Generator for (seed, purpose, a, b).

    ``a`` and ``b`` are entity ids (neuron gid, column index, timestep...).
    The same arguments always yield an identical stream.
    """
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, purpose & 0xFFFFFFFFFFFFFFFF],
                   dtype=np.uint64)
    counter = np.array([0, a & 0xFFFFFFFFFFFFFFFF, b & 0xFFFFFFFFFFFFFFFF,
                        _DOMAIN], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)
_SM_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_SM_M1 = np.uint64(0xBF58476D1CE4E5B9)
_SM_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(x) -> np.ndarray:
    """Vectorized splitmix64 finalizer; uint64 in, uint64 out.

    Multiplication wraps modulo 2^64 by design; the errstate guard
    silences numpy's overflow warning on the scalar fast path.
    """
    with np.errstate(over="ignore"):
        z = (np.asarray(x, dtype=np.uint64) + _SM_GAMMA)
        z = (z ^ (z >> np.uint64(30))) * _SM_M1
        z = (z ^ (z >> np.uint64(27))) * _SM_M2
        return z ^ (z >> np.uint64(31))


def counter_uniforms(seed: int, purpose: int, a, b, k) -> np.ndarray:
    """Uniform [0, 1) doubles addressed by (seed, purpose, a, b, k).

    Stateless companion to ``stream`` for draws that are needed one
    value at a time over huge index spaces (external input needs a few
    values per (neuron, timestep)); building a Generator per address
    would dominate the run.  Values come from a chain of splitmix64
    mixes, so any single draw is recomputable from its address.
    ``a``, ``b``, ``k`` broadcast together.
    """
    h = splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) ^ _DOMAIN)
    h = splitmix64(h ^ np.uint64(purpose))
    h = splitmix64(h ^ (np.asarray(a, dtype=np.uint64) & _MASK))
    h = splitmix64(h ^ (np.asarray(b, dtype=np.uint64) & _MASK))
    h = splitmix64(h ^ (np.asarray(k, dtype=np.uint64) & _MASK))
    # top 53 bits -> double in [0, 1)
    return (h >> np.uint64(11)) * (1.0 / (1 << 53))
