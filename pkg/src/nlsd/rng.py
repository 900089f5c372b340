"""Seedable random number generation.

All randomness in the package flows through Philox, a 64-bit counter-based
generator, so sequences are reproducible across platforms and can be split
into independent streams without correlation.
"""

import numpy as np


def make_rng(seed, stream=0):
    """Return a Generator for (seed, stream). Same arguments, same sequence."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))
