"""Brownian environment: one Brownian motion per lattice site, sampled lazily.

Each site's path is built by the Levy midpoint construction on the dyadic
grid of spacing ``2**-LEVELS``.  The value at a dyadic node is a
deterministic function of ``(stream seed, site, level, index)``, so any set
of queries, issued in any order, sees the same path.  Query times are snapped
to the finest grid (about 1e-9), well below any time scale used here.

A field holds either a single environment (scalar seed) or a batch of
independent replicas (1-D array of stream seeds); values then carry the
batch as the leading axis.
"""

import math
import threading
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigurationError, DomainError

LEVELS = 30
TICKS = 1 << LEVELS
_LEVEL_SHIFT = 58
_SD = np.array([0.0] + [2.0 ** (-(lev + 1) / 2.0) for lev in range(1, LEVELS + 1)])
_COORD_OFFSET = 1 << 20


@dataclass(frozen=True)
class LatticeSpec:
    """Finite box ``{x : |x|_inf <= L}`` of the lattice Z^d."""

    d: int
    L: int
    boundary: str = "absorbing"

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.L < 1:
            raise ConfigurationError(f"box half-width must be >= 1, got {self.L}")
        if self.boundary not in ("absorbing", "periodic"):
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")

    @property
    def width(self):
        return 2 * self.L + 1

    @property
    def shape(self):
        return (self.width,) * self.d

    @property
    def n_sites(self):
        return self.width ** self.d

    def coords(self):
        """All sites as an ``(n_sites, d)`` int array, in C order of ``shape``."""
        axes = [np.arange(-self.L, self.L + 1)] * self.d
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def contains(self, site):
        return all(abs(c) <= self.L for c in as_site(site, self.d))

    def wrap(self, site):
        """Reduce a site modulo the periodic box."""
        w = self.width
        return tuple(((c + self.L) % w) - self.L for c in as_site(site, self.d))

    def index(self, site):
        """Flat index of ``site`` in ``coords()`` order."""
        idx = 0
        for c in as_site(site, self.d):
            if abs(c) > self.L:
                raise DomainError(f"site {site} outside box of half-width {self.L}")
            idx = idx * self.width + (c + self.L)
        return idx

    def to_dict(self):
        return {"d": self.d, "L": self.L, "boundary": self.boundary}


def as_site(site, d=None):
    """Normalise an int or coordinate sequence to a tuple of ints."""
    if isinstance(site, (int, np.integer)):
        out = (int(site),)
    else:
        out = tuple(int(c) for c in site)
    if d is not None and len(out) != d:
        raise DomainError(f"site {site} does not have dimension {d}")
    return out


def site_code(site):
    code = 0
    for i, c in enumerate(site):
        code |= (int(c) + _COORD_OFFSET) << (21 * i)
    return code


def site_codes(coords):
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    code = np.zeros(coords.shape[0], dtype=np.uint64)
    for i in range(coords.shape[1]):
        code |= (coords[:, i] + _COORD_OFFSET).astype(np.uint64) << np.uint64(21 * i)
    return code


def to_ticks(t):
    """Snap times to the finest dyadic grid; negative times are rejected."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(~np.isfinite(arr)):
        raise DomainError("environment times must be finite and >= 0")
    return np.rint(arr * TICKS).astype(np.int64)


def dyadic_level(dt):
    """Return ``k`` with ``dt == 2**-k`` (0 <= k <= LEVELS), else None."""
    if dt <= 0 or dt > 1:
        return None
    k = -math.log2(dt)
    if abs(k - round(k)) > 1e-12 or round(k) > LEVELS:
        return None
    return int(round(k))


def _node_counter(level, index):
    return (np.uint64(level) << np.uint64(_LEVEL_SHIFT)) | np.asarray(index, dtype=np.uint64)


class EnvironmentField:
    """Lazily sampled independent Brownian motions ``B^x``, one per site.

    Parameters
    ----------
    lattice : LatticeSpec
    seed : int or array of uint64
        A scalar gives one environment.  An array gives one replica per entry
        (use :meth:`replicas` to derive them from a master seed).
    """

    def __init__(self, lattice, seed, master_seed=None):
        self.lattice = lattice
        arr = np.asarray(seed)
        if arr.ndim == 0:
            self.seeds = rng.as_u64(int(seed))
            self.batch_shape = ()
        elif arr.ndim == 1:
            self.seeds = rng.as_u64(arr)
            self.batch_shape = (arr.shape[0],)
        else:
            raise ConfigurationError("seed must be a scalar or a 1-D array")
        self.master_seed = int(seed) if arr.ndim == 0 else master_seed
        self._keys = {}
        self._level0 = {}
        self._cache = {}
        self._pins = {}
        self._lock = threading.RLock()

    @classmethod
    def replicas(cls, lattice, master_seed, count, start=0):
        """Batch of ``count`` replicas ``start, start+1, ...`` of ``master_seed``."""
        seeds = rng.replica_seeds(master_seed, count, start)
        return cls(lattice, seeds, master_seed=master_seed)

    # pickling drops the lock; caches are rebuilt on demand
    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    def _site(self, site):
        s = as_site(site, self.lattice.d)
        if not self.lattice.contains(s):
            raise DomainError(f"site {s} outside the lattice box")
        return s

    def _key(self, code):
        key = self._keys.get(code)
        if key is None:
            key = rng.site_keys(self.seeds, np.array([code], dtype=np.uint64))[..., 0]
            self._keys[code] = key
        return key

    def _w0(self, code, jmax):
        """Integer-time values ``W(0..jmax)`` of the unpinned path."""
        w = self._level0.get(code)
        have = -1 if w is None else w.shape[-1] - 1
        if jmax > have:
            grow = max(jmax, 2 * have, 16)
            start = have + 1
            counters = np.arange(max(start, 1), grow + 1, dtype=np.uint64)
            z = rng.counter_normals(self._key(code), _node_counter(0, counters))
            if w is None:
                zero = np.zeros(self.batch_shape + (1,))
                w = np.cumsum(np.concatenate([zero, z], axis=-1), axis=-1)
            else:
                w = np.cumsum(np.concatenate([w[..., -1:], z], axis=-1), axis=-1)
                w = np.concatenate([self._level0[code][..., :-1], w], axis=-1)
            self._level0[code] = w
        return w

    def _raw(self, code, ticks):
        """Unpinned path at integer ``ticks`` (any 1-D int array)."""
        ticks = np.asarray(ticks, dtype=np.int64)
        n = ticks.shape[0]
        out = np.empty(self.batch_shape + (n,))
        if n == 0:
            return out
        j = ticks >> LEVELS
        rem = ticks & (TICKS - 1)
        w = self._w0(code, int(j.max()) + 1)
        out[...] = w[..., j]
        act = np.nonzero(rem)[0]
        if act.size == 0:
            return out
        key = self._key(code)
        lo = w[..., j[act]]
        hi = w[..., j[act] + 1]
        a = j[act].copy()
        target = ticks[act]
        for lev in range(1, LEVELS + 1):
            shift = LEVELS - lev
            mid = 2 * a + 1
            z = rng.counter_normals(key, _node_counter(lev, mid))
            val = 0.5 * (lo + hi) + _SD[lev] * z
            q = target >> shift
            hit = (q == mid) & ((target & ((1 << shift) - 1)) == 0)
            right = q >= mid
            if hit.any():
                out[..., act[hit]] = val[..., hit]
            right_b = np.broadcast_to(right, val.shape)
            lo = np.where(right_b, val, lo)
            hi = np.where(right_b, hi, val)
            a = np.where(right, mid, 2 * a)
            keep = ~hit
            if not keep.any():
                break
            act, lo, hi, a, target = act[keep], lo[..., keep], hi[..., keep], a[keep], target[keep]
        return out

    def _correction(self, code, ticks):
        """Additive bridge correction that enforces pinned values."""
        pins = self._pins.get(code)
        if pins is None:
            return 0.0
        pin_ticks, offsets, _ = pins
        x = np.asarray(ticks, dtype=np.float64)
        xp = pin_ticks.astype(np.float64)
        flat = offsets.reshape(-1, offsets.shape[-1])
        res = np.stack([np.interp(x, xp, row) for row in flat])
        return res.reshape(offsets.shape[:-1] + (x.shape[0],))

    def _values_ticks(self, code, ticks):
        return self._raw(code, ticks) + self._correction(code, ticks)

    # public API -------------------------------------------------------

    def pin(self, site, t, value):
        """Condition the path of ``site`` on ``B(t) = value``.

        Pins must be placed before the site is queried; the resulting path is
        a Brownian bridge between pins (and a free Brownian motion after the
        last one).
        """
        s = self._site(site)
        code = site_code(s)
        tick = int(to_ticks(t))
        if tick == 0:
            raise DomainError("B(0) = 0 is fixed")
        with self._lock:
            if self._cache.get(code):
                raise ConfigurationError("pins must precede queries at a site")
            prev = self._pins.get(code)
            if prev is None:
                ticks = np.array([0], dtype=np.int64)
                vals = [np.zeros(self.batch_shape)]
            else:
                ticks = prev[0]
                vals = list(np.moveaxis(prev[2], -1, 0))
            target = np.broadcast_to(np.asarray(value, dtype=float), self.batch_shape)
            order = list(ticks) + [tick]
            vals = vals + [np.array(target)]
            idx = np.argsort(order, kind="stable")
            ticks = np.asarray(order, dtype=np.int64)[idx]
            if np.any(np.diff(ticks) == 0):
                raise ConfigurationError(f"time {t} already pinned at site {s}")
            pinned = np.stack([vals[i] for i in idx], axis=-1)
            offsets = pinned - self._raw(code, ticks)
            self._pins[code] = (ticks, offsets, pinned)

    def value_at(self, site, t):
        """``B^site_t``; cached so that repeated queries return the same value."""
        s = self._site(site)
        code = site_code(s)
        tick = int(to_ticks(t))
        with self._lock:
            cache = self._cache.setdefault(code, {0: np.zeros(self.batch_shape)})
            val = cache.get(tick)
            if val is None:
                val = self._values_ticks(code, np.array([tick]))[..., 0]
                cache[tick] = val
        return float(val) if self.batch_shape == () else val.copy()

    def values(self, site, times):
        """Vectorised :meth:`value_at` over a 1-D array of times."""
        s = self._site(site)
        ticks = to_ticks(np.atleast_1d(times))
        code = site_code(s)
        with self._lock:
            self._cache.setdefault(code, {0: np.zeros(self.batch_shape)})
            return self._values_ticks(code, ticks)

    def increment(self, site, t1, t2):
        """``B(t2) - B(t1)`` for ``0 <= t1 <= t2``."""
        if t1 > t2:
            raise DomainError(f"increment needs t1 <= t2, got {t1} > {t2}")
        if t1 == t2:
            return 0.0 if self.batch_shape == () else np.zeros(self.batch_shape)
        return self.value_at(site, t2) - self.value_at(site, t1)

    def cache(self, site):
        """Sorted ``(time, value)`` pairs cached for ``site`` (starts at (0, 0))."""
        code = site_code(self._site(site))
        with self._lock:
            items = sorted(self._cache.get(code, {0: np.zeros(self.batch_shape)}).items())
        return [(k / TICKS, v if self.batch_shape else float(v)) for k, v in items]

    def grid_values(self, sites, t0, dt, steps):
        """Values at ``t0 + i*dt`` for ``i = 0..steps``, shape ``batch + (S, steps+1)``.

        ``sites`` is an ``(S, d)`` array.  Dyadic ``dt`` uses a vectorised
        refinement; anything else falls back to per-site descent.  Both agree
        bit for bit with :meth:`value_at`.
        """
        coords = np.asarray(sites, dtype=np.int64).reshape(-1, self.lattice.d)
        if np.any(np.abs(coords) > self.lattice.L):
            raise DomainError("grid sites outside the lattice box")
        codes = site_codes(coords)
        k = dyadic_level(dt)
        t0_ticks = int(to_ticks(t0))
        if k is not None and t0_ticks % (TICKS >> k) == 0:
            out = self._grid_dyadic(codes, t0_ticks >> (LEVELS - k), k, steps)
        else:
            ticks = to_ticks(t0 + dt * np.arange(steps + 1))
            out = np.stack([self._raw(int(c), ticks) for c in codes], axis=-2)
        with self._lock:
            pinned = [i for i, c in enumerate(codes) if int(c) in self._pins]
        if pinned:
            ticks = t0_ticks + (np.arange(steps + 1) * int(round(dt * TICKS)))
            for i in pinned:
                out[..., i, :] += self._correction(int(codes[i]), ticks)
        return out

    def grid_increments(self, sites, t0, dt, steps):
        """Increments over ``[t0 + i*dt, t0 + (i+1)*dt)``, shape ``batch + (S, steps)``."""
        return np.diff(self.grid_values(sites, t0, dt, steps), axis=-1)

    def _grid_dyadic(self, codes, start, k, steps):
        per_unit = 1 << k
        first_unit = start // per_unit
        last_index = start + steps
        last_unit = (last_index - 1) // per_unit if steps > 0 else first_unit
        keys = rng.site_keys(self.seeds, codes)
        counters = np.arange(1, last_unit + 2, dtype=np.uint64)
        z0 = rng.counter_normals(keys, _node_counter(0, counters))
        zero = np.zeros(keys.shape + (1,))
        w = np.cumsum(np.concatenate([zero, z0], axis=-1), axis=-1)
        out = np.empty(keys.shape + (steps + 1,))
        for unit in range(first_unit, last_unit + 1):
            vals = w[..., unit:unit + 2]
            for lev in range(1, k + 1):
                half = vals.shape[-1] - 1
                idx = unit * (1 << lev) + 2 * np.arange(half, dtype=np.int64) + 1
                z = rng.counter_normals(keys, _node_counter(lev, idx))
                mids = 0.5 * (vals[..., :-1] + vals[..., 1:]) + _SD[lev] * z
                nxt = np.empty(vals.shape[:-1] + (2 * half + 1,))
                nxt[..., 0::2] = vals
                nxt[..., 1::2] = mids
                vals = nxt
            lo = max(start, unit * per_unit)
            hi = min(last_index, (unit + 1) * per_unit)
            out[..., lo - start:hi - start + 1] = vals[..., lo - unit * per_unit:hi - unit * per_unit + 1]
        return out


@dataclass(frozen=True)
class Region:
    """Space-time cell ``[t0, t1) x sites`` carrying a constant drift."""

    t0: float
    t1: float
    sites: frozenset
    drift: float

    @property
    def volume(self):
        return (self.t1 - self.t0) * len(self.sites)


@dataclass(frozen=True)
class TiltSpec:
    """Disjoint space-time regions, each adding ``drift * dt`` to ``dB``."""

    regions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        regs = tuple(
            r if isinstance(r, Region) else Region(float(r[0]), float(r[1]), frozenset(as_site(s) for s in r[2]), float(r[3]))
            for r in self.regions
        )
        object.__setattr__(self, "regions", regs)
        for r in regs:
            if not (r.t0 <= r.t1) or not math.isfinite(r.drift) or r.t0 < 0:
                raise ConfigurationError(f"invalid tilt region {r}")
        order = sorted(range(len(regs)), key=lambda i: regs[i].t0)
        for pos, i in enumerate(order):
            for j in order[pos + 1:]:
                if regs[j].t0 >= regs[i].t1:
                    break
                if regs[i].sites & regs[j].sites:
                    raise ConfigurationError("tilt regions overlap in space-time")

    @classmethod
    def from_predicate(cls, lattice, intervals_and_drifts, predicate):
        """Build regions whose site sets are ``{x in box : predicate(k, x)}``."""
        coords = [tuple(int(c) for c in row) for row in lattice.coords()]
        regs = []
        for k, (t0, t1, drift) in enumerate(intervals_and_drifts):
            sites = frozenset(x for x in coords if predicate(k, x))
            regs.append(Region(t0, t1, sites, drift))
        return cls(tuple(regs))

    @property
    def volume(self):
        """Site-time Lebesgue measure of the tilted set."""
        return sum(r.volume for r in self.regions)

    def by_site(self):
        table = {}
        for r in self.regions:
            for s in r.sites:
                table.setdefault(s, []).append(r)
        return table


class TiltedField:
    """View of a field under an added drift: ``B = B_base + drift * time in region``.

    If ``B_base`` is Brownian under the sampling law, this view has the law
    of the drifted measure.  The base field is left untouched.
    """

    def __init__(self, base, tilt):
        self.base = base
        self.tilt = tilt
        self.lattice = base.lattice
        self.batch_shape = base.batch_shape
        self.seeds = base.seeds
        self.master_seed = base.master_seed
        self._by_site = tilt.by_site()

    def _shift(self, site, times):
        times = np.asarray(times, dtype=float)
        total = np.zeros_like(times)
        for r in self._by_site.get(site, ()):
            total += r.drift * np.clip(times - r.t0, 0.0, r.t1 - r.t0)
        return total

    def value_at(self, site, t):
        s = as_site(site, self.lattice.d)
        return self.base.value_at(s, t) + float(self._shift(s, t))

    def values(self, site, times):
        s = as_site(site, self.lattice.d)
        return self.base.values(s, times) + self._shift(s, np.atleast_1d(times))

    def increment(self, site, t1, t2):
        if t1 > t2:
            raise DomainError(f"increment needs t1 <= t2, got {t1} > {t2}")
        if t1 == t2:
            return 0.0 if self.batch_shape == () else np.zeros(self.batch_shape)
        return self.value_at(site, t2) - self.value_at(site, t1)

    def grid_values(self, sites, t0, dt, steps):
        out = self.base.grid_values(sites, t0, dt, steps)
        times = t0 + dt * np.arange(steps + 1)
        coords = np.asarray(sites, dtype=np.int64).reshape(-1, self.lattice.d)
        for i, row in enumerate(coords):
            s = tuple(int(c) for c in row)
            if s in self._by_site:
                out[..., i, :] += self._shift(s, times)
        return out

    def grid_increments(self, sites, t0, dt, steps):
        return np.diff(self.grid_values(sites, t0, dt, steps), axis=-1)


def value_at(env, site, t):
    return env.value_at(site, t)


def increment(env, site, t1, t2):
    return env.increment(site, t1, t2)


def apply_tilt(env, tilt):
    """Drifted view of ``env``; see :class:`TiltedField`."""
    return TiltedField(env, tilt)


def girsanov_log_density(env, tilt, normalized=True):
    """Log density of the drifted environment law against the base law.

    ``sum_regions sum_sites [drift * (B(t1) - B(t0)) - drift**2 (t1 - t0) / 2]``
    evaluated on ``env``.  ``normalized=False`` drops the quadratic term,
    giving the product of plain exponentials ``exp(drift * dB)``.
    """
    total = np.zeros(env.batch_shape)
    for r in tilt.regions:
        if r.drift == 0.0 or r.t1 == r.t0:
            continue
        for s in r.sites:
            vals = env.values(s, np.array([r.t0, r.t1]))
            total = total + r.drift * (vals[..., 1] - vals[..., 0])
        if normalized:
            total = total - 0.5 * r.drift ** 2 * r.volume
    return float(total) if env.batch_shape == () else total


def correlation_rho(env, site1, site2, T, dt):
    """Off-diagonal increment double sum ``sum_{s != u} dB1_s dB2_u`` on a grid of step ``dt``.

    The full double sum telescopes to ``B1_T * B2_T``; dropping the diagonal
    leaves a discretisation error with mean 0 and variance ``T * dt`` that
    vanishes as ``dt -> 0``.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    s1 = as_site(site1, env.lattice.d)
    s2 = as_site(site2, env.lattice.d)
    if s1 == s2:
        raise DomainError("correlation_rho needs two distinct sites")
    steps = int(round(T / dt))
    if abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise DomainError("dt must divide T")
    if steps == 0:
        return 0.0 if env.batch_shape == () else np.zeros(env.batch_shape)
    inc = env.grid_increments(np.array([s1, s2]), 0.0, dt, steps)
    a, b = inc[..., 0, :], inc[..., 1, :]
    res = a.sum(-1) * b.sum(-1) - (a * b).sum(-1)
    return float(res) if env.batch_shape == () else res
