"""Corridor sequences, space-time blocks and the block drift tilt."""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ..env_field import Region, TiltSpec
from ..errors import CapExceededError, ConfigurationError, DomainError

CORRIDOR_CAP = 10 ** 6


def smallest_square_at_least(x):
    """Smallest perfect square ``k**2 >= x`` (with ``k >= 1``)."""
    if x <= 1:
        return 1
    k = math.isqrt(int(math.ceil(x)))
    while k * k < x:
        k += 1
    return k * k


def prescribed_n_d1(beta, C1, C2):
    """Block length ``C1**2 C2 beta**-4`` rounded up to a perfect square."""
    if beta <= 0:
        return math.inf
    return smallest_square_at_least(C1 ** 2 * C2 * beta ** -4)


def prescribed_n_d2(beta, C5):
    """Block length ``exp(C5 / beta**4)``, reported as ``log n`` when it overflows."""
    if beta <= 0:
        return math.inf
    expo = C5 / beta ** 4
    if expo > 700:
        return math.inf
    return smallest_square_at_least(math.exp(expo))


@dataclass(frozen=True)
class CoarseGrainSpec:
    """Parameters of the coarse-graining scheme.

    ``C1`` is the d=1 block half-width, ``C3`` the d=2 one (both in units of
    ``sqrt(n)``); ``C4`` and ``K`` enter the correlation penalty.  ``delta``
    defaults to ``C1**-0.5 * n**-0.75``.  ``norm`` is used for block
    membership and the kernel indicator in d=2.
    """

    d: int
    n: float
    m: int
    theta: float = 0.5
    C1: float = 4.0
    C2: float = 1.0
    C3: float = 10.0
    C4: float = 10.0
    C5: float = 1.0
    K: float = 2.0
    delta: float = None
    R: int = 2
    norm: str = "euclidean"
    dt_R: float = 0.25
    cap: int = CORRIDOR_CAP

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigurationError("coarse graining is defined for d = 1 or 2")
        if not 0 < self.theta < 1:
            raise ConfigurationError("theta must lie in (0, 1)")
        if self.n < 1 or self.m < 1:
            raise ConfigurationError("need n >= 1 and m >= 1")
        for name in ("C1", "C2", "C3", "C4", "C5", "K"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.R < 0:
            raise ConfigurationError("R must be >= 0")
        if self.norm not in ("euclidean", "sup"):
            raise ConfigurationError(f"unknown norm {self.norm!r}")
        if self.delta is None:
            object.__setattr__(self, "delta", self.C1 ** -0.5 * self.n ** -0.75)
        if not self.delta >= 0:
            raise ConfigurationError("delta must be >= 0")

    @classmethod
    def with_requested_n(cls, d, n_request, m, **kw):
        """Spec whose ``n`` is the smallest perfect square at least ``n_request``."""
        return cls(d=d, n=smallest_square_at_least(n_request), m=m, **kw)

    @property
    def sqrt_n(self):
        return math.sqrt(self.n)

    @property
    def T(self):
        return self.m * self.n

    @property
    def block_constant(self):
        return self.C1 if self.d == 1 else self.C3

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class CorridorSequence:
    """``(z_1, ..., z_m)``, each entry a ``d``-tuple; ``z_0 = 0`` by convention."""

    entries: tuple

    def __post_init__(self):
        ents = tuple((int(z),) if isinstance(z, (int, np.integer)) else tuple(int(c) for c in z) for z in self.entries)
        if not ents:
            raise ConfigurationError("a corridor sequence needs m >= 1 entries")
        if len({len(z) for z in ents}) != 1:
            raise ConfigurationError("mixed dimensions in corridor sequence")
        object.__setattr__(self, "entries", ents)

    @property
    def m(self):
        return len(self.entries)

    @property
    def d(self):
        return len(self.entries[0])

    def with_origin(self):
        """``(z_0, z_1, ..., z_m)``."""
        return ((0,) * self.d,) + self.entries

    def increments(self):
        full = np.array(self.with_origin())
        return [tuple(int(c) for c in row) for row in np.diff(full, axis=0)]

    def max_step(self):
        return max(max(abs(c) for c in inc) for inc in self.increments())

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return self.m


def corridor_count(spec):
    """``(2R + 1)**(d m)``; raises :class:`CapExceededError` above ``spec.cap``."""
    count = (2 * spec.R + 1) ** (spec.d * spec.m)
    if count > spec.cap:
        raise CapExceededError(f"{count} corridor sequences exceed the cap {spec.cap}")
    return count


def enumerate_corridors(spec):
    """All sequences with ``|z_i - z_{i-1}|_inf <= R``, lexicographic in the increments."""
    corridor_count(spec)
    steps = list(itertools.product(range(-spec.R, spec.R + 1), repeat=spec.d))
    out = []
    for incs in itertools.product(steps, repeat=spec.m):
        cum = np.cumsum(np.array(incs), axis=0)
        out.append(CorridorSequence(tuple(tuple(int(c) for c in row) for row in cum)))
    return out


def _dist(offsets, norm):
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1:
        return np.abs(offsets)
    if norm == "sup":
        return np.abs(offsets).max(axis=-1)
    return np.sqrt((offsets ** 2).sum(axis=-1))


@dataclass(frozen=True)
class Block:
    """``[t0, t1) x {y : |y - center| < radius}``."""

    k: int
    t0: float
    t1: float
    center: tuple
    radius: float
    norm: str = "euclidean"

    @property
    def d(self):
        return len(self.center)

    @property
    def duration(self):
        return self.t1 - self.t0

    def contains(self, y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return bool(_dist((y - np.asarray(self.center))[None, :], self.norm)[0] < self.radius)

    def bounding_box(self):
        """Integer ``(lo, hi)`` corners (inclusive) of the smallest box holding the block."""
        c = np.asarray(self.center, dtype=float)
        lo = np.floor(c - self.radius).astype(int)
        hi = np.ceil(c + self.radius).astype(int)
        return lo, hi

    def mask(self):
        """Boolean membership on the bounding box grid, plus its lower corner."""
        lo, hi = self.bounding_box()
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack(grids, axis=-1)
        inside = _dist(pts - np.asarray(self.center, dtype=float), self.norm) < self.radius
        if self.d == 1:
            inside = inside.reshape(-1)
        return inside, lo

    def sites(self):
        """``(S, d)`` int array of block sites in C order."""
        inside, lo = self.mask()
        idx = np.argwhere(inside)
        return idx + lo

    def n_sites(self):
        return int(self.mask()[0].sum())

    def volume(self):
        return self.duration * self.n_sites()


def blocks_for(corridors, spec):
    """Blocks ``J_0, ..., J_{m-1}``; block ``k`` is centred at ``z_k sqrt(n)`` with ``z_0 = 0``."""
    zs = CorridorSequence(corridors.entries if isinstance(corridors, CorridorSequence) else corridors)
    if zs.d != spec.d:
        raise DomainError("corridor dimension does not match spec.d")
    centers = zs.with_origin()[: zs.m]
    rad = spec.block_constant * spec.sqrt_n
    norm = spec.norm if spec.d > 1 else "sup"
    return [
        Block(k, k * spec.n, (k + 1) * spec.n, tuple(float(c) * spec.sqrt_n for c in z), rad, norm)
        for k, z in enumerate(centers)
    ]


def block_volume(corridors, spec, lattice=None):
    """``|J_Z|``: site-time measure of the union of blocks (clipped to the box if given)."""
    total = 0.0
    for b in blocks_for(corridors, spec):
        sites = b.sites()
        if lattice is not None:
            sites = sites[np.all(np.abs(sites) <= lattice.L, axis=1)]
        total += b.duration * sites.shape[0]
    return total


def tilt_for(corridors, spec, lattice=None, sign=-1.0):
    """Drift ``sign * delta`` on every block (d = 1 only).

    ``sign=-1`` is the tilt of the bound chain; other signs exist to build
    deliberately wrong instances.
    """
    if spec.d != 1:
        raise ConfigurationError("the drift tilt is only used in d = 1; d = 2 uses the penalty")
    regs = []
    for b in blocks_for(corridors, spec):
        sites = b.sites()
        if lattice is not None:
            sites = sites[np.all(np.abs(sites) <= lattice.L, axis=1)]
        regs.append(Region(b.t0, b.t1, frozenset(tuple(int(c) for c in s) for s in sites), sign * spec.delta))
    return TiltSpec(tuple(regs))
