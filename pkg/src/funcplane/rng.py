"""Deterministic random-number substreams.

All randomness in the package flows from a single integer seed.  Substreams
are derived by hashing string/integer labels into a ``SeedSequence`` spawn
key and feeding it to the counter-based Philox generator, so a stream is
identified by ``(seed, labels...)`` alone: results do not depend on call
order, scheduling, or worker count.
"""

import hashlib

import numpy as np


def _label_words(label):
    if isinstance(label, (bool, np.bool_)):
        raise TypeError("boolean labels are ambiguous; use int or str")
    if isinstance(label, (int, np.integer)):
        v = int(label)
        if v < 0:
            raise ValueError("integer labels must be nonnegative")
        words = []
        while True:
            words.append(v & 0xFFFFFFFF)
            v >>= 32
            if v == 0:
                return words
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return list(np.frombuffer(digest[:16], dtype="<u4"))


def substream(seed, *labels):
    """Return a ``numpy.random.Generator`` for the stream ``(seed, *labels)``.

    Parameters
    ----------
    seed : int
        Top-level seed.
    *labels : int or str
        Stream identifiers, e.g. ``substream(seed, "boot", b)``.
    """
    key = []
    for lab in labels:
        key.extend(_label_words(lab))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))
