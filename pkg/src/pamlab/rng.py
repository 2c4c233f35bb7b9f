"""Counter-based random streams.

Every random number in the package is a pure function of an integer key and
an integer counter, evaluated with the SplitMix64 finalizer.  No generator
state is carried between calls, so values do not depend on query order,
batch composition or how work is split between processes.
"""

import numpy as np
from scipy.special import ndtri

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

_SITE_SALT = np.uint64(0x5A17E5A17E5A17E5)
_REPLICA_SALT = np.uint64(0x0DDBA11CAFEF00D5)
STRIDE_SALT = 0x7F4A7C15F39CC060

_MASK64 = (1 << 64) - 1


def mix64(z):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def as_u64(value):
    """Coerce Python ints (possibly negative or > 2**63) to uint64 arrays."""
    if isinstance(value, np.ndarray) and value.dtype == np.uint64:
        return value
    arr = np.asarray(value)
    if arr.dtype == object or arr.dtype.kind in "iu":
        flat = [int(v) & _MASK64 for v in np.ravel(arr)]
        return np.array(flat, dtype=np.uint64).reshape(arr.shape)
    raise TypeError(f"seed must be integral, got {arr.dtype}")


def replica_seeds(master_seed, count, start=0):
    """Per-replica stream seeds derived from a master seed.

    Replica ``r`` always receives the same 64-bit seed regardless of how many
    replicas are requested, so chunked and parallel runs agree bit for bit.
    """
    idx = np.arange(start, start + count, dtype=np.uint64)
    master = as_u64(master_seed)
    with np.errstate(over="ignore"):
        return mix64(mix64(master ^ _REPLICA_SALT) + (idx + np.uint64(1)) * _GOLDEN)


def site_keys(seeds, site_codes):
    """Stream keys for every (seed, site) pair, shape ``seeds.shape + (S,)``."""
    seeds = as_u64(seeds)
    codes = np.asarray(site_codes, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = mix64(seeds ^ _SITE_SALT)[..., None]
        return mix64(base + mix64(codes + _GOLDEN) * _GOLDEN)


def counter_uniforms(keys, counters):
    """Uniforms in (0, 1) at ``counters`` of the streams ``keys``.

    Broadcasting follows numpy rules on ``keys[..., None]`` against
    ``counters``; the trailing axis indexes counters.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = mix64(keys[..., None] + counters * _GOLDEN)
    return ((h >> _S11).astype(np.float64) + 0.5) * (2.0 ** -53)


def counter_normals(keys, counters):
    """Standard normals at ``counters`` of the streams ``keys``."""
    return ndtri(counter_uniforms(keys, counters))


def numpy_generator(seed, *salt):
    """A numpy ``Generator`` whose state is a pure function of ``seed`` and ``salt``."""
    words = [int(seed) & _MASK64] + [int(v) & _MASK64 for v in salt]
    return np.random.default_rng(np.random.SeedSequence(words))
