"""Lattice stochastic heat equation solver for the partition function.

Evolves ``dZ_t(x) = kappa Delta Z_t(x) dt + beta Z_t(x) dB^x_t`` from a point
mass.  By Feynman-Kac, the total mass at time ``T`` is the polymer partition
function restricted to paths that stay in the box (absorbing boundary) or
projected on the torus (periodic boundary).

Fields are kept as ``values * exp(log_scale)`` with a per-replica log scale,
renormalised every few steps, so ``ln Z_T`` is available at any ``beta * T``.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .env_field import LatticeSpec, dyadic_level
from .errors import ConfigurationError, DomainError

RESCALE_EVERY = 8


def default_dt(d, kappa, beta):
    """Largest ``2**-k`` not above ``min(0.01, 0.1/(2 d kappa), 0.1/beta**2)``."""
    cap = 0.01
    if kappa > 0:
        cap = min(cap, 0.1 / (2 * d * kappa))
    if beta > 0:
        cap = min(cap, 0.1 / beta ** 2)
    return 2.0 ** (-math.ceil(-math.log2(cap)))


@dataclass(frozen=True)
class SolverSpec:
    lattice: LatticeSpec
    beta: float
    kappa: float
    T: float
    dt: float = None
    scheme: str = "exponential_euler"

    def __post_init__(self):
        if self.beta < 0 or self.kappa < 0 or self.T < 0:
            raise ConfigurationError("beta, kappa and T must be non-negative")
        if self.scheme not in ("exponential_euler", "explicit_euler"):
            raise ConfigurationError(f"unknown scheme {self.scheme!r}")
        dt = self.dt if self.dt is not None else default_dt(self.lattice.d, self.kappa, self.beta)
        object.__setattr__(self, "dt", float(dt))
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ConfigurationError(f"T={self.T} is not a multiple of dt={self.dt}")
        if 2 * self.lattice.d * self.kappa * self.dt >= 1:
            raise ConfigurationError(
                f"unstable step: 2 d kappa dt = {2 * self.lattice.d * self.kappa * self.dt:.3g} >= 1"
            )

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    def steps_to(self, t):
        s = t / self.dt
        if abs(s - round(s)) > 1e-9 * max(1.0, s):
            raise ConfigurationError(f"time {t} is not on the dt grid")
        return int(round(s))

    def to_dict(self):
        return {
            "lattice": self.lattice.to_dict(),
            "beta": self.beta,
            "kappa": self.kappa,
            "T": self.T,
            "dt": self.dt,
            "scheme": self.scheme,
        }


@dataclass
class LatticeField:
    """Site-resolved ``Z_t(x) = values * exp(log_scale)``.

    ``values`` has shape ``batch + lattice.shape``; ``log_scale`` has shape
    ``batch``.
    """

    values: np.ndarray
    time: float
    log_scale: np.ndarray
    lattice: LatticeSpec

    @property
    def batch_shape(self):
        return self.values.shape[: self.values.ndim - self.lattice.d]

    def _site_axes(self):
        return tuple(range(self.values.ndim - self.lattice.d, self.values.ndim))

    def log_mass(self):
        with np.errstate(divide="ignore"):
            return np.log(self.values.sum(axis=self._site_axes())) + self.log_scale

    def total_mass(self):
        return np.exp(self.log_mass())

    def site_values(self):
        return self.values * np.exp(self.log_scale)[(...,) + (None,) * self.lattice.d]

    def value_at(self, site):
        idx = tuple(c + self.lattice.L for c in site)
        return self.site_values()[(...,) + idx]

    def rescale(self):
        axes = self._site_axes()
        mass = self.values.sum(axis=axes)
        ok = mass > 0
        safe = np.where(ok, mass, 1.0)
        self.values = self.values / safe[(...,) + (None,) * self.lattice.d]
        with np.errstate(divide="ignore"):
            self.log_scale = self.log_scale + np.where(ok, np.log(safe), -np.inf)
        self.values = np.where(np.isfinite(self.log_scale)[(...,) + (None,) * self.lattice.d], self.values, 0.0)

    def copy(self):
        return LatticeField(self.values.copy(), self.time, np.array(self.log_scale, copy=True), self.lattice)

    def to_csv(self, path, replica=0):
        """Write one replica as ``x..., value`` rows."""
        vals = self.site_values()
        if self.batch_shape:
            vals = vals[replica]
        coords = self.lattice.coords()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{i}" for i in range(self.lattice.d)] + ["value"])
            for row, v in zip(coords, vals.ravel()):
                w.writerow([int(c) for c in row] + [repr(float(v))])


def init_field(lattice, start=None, batch_shape=()):
    """Point mass 1 at ``start`` (default the origin) at time 0."""
    start = (0,) * lattice.d if start is None else tuple(start)
    if not lattice.contains(start):
        raise DomainError(f"start {start} outside the lattice box")
    values = np.zeros(tuple(batch_shape) + lattice.shape)
    values[(...,) + tuple(c + lattice.L for c in start)] = 1.0
    return LatticeField(values, 0.0, np.zeros(batch_shape), lattice)


def heat_step(u, kappa_dt, lattice):
    """``u + kappa dt * Delta u`` on the trailing ``d`` axes."""
    d = lattice.d
    out = (1.0 - 2 * d * kappa_dt) * u
    if kappa_dt == 0.0:
        return out
    nd = u.ndim
    for ax in range(nd - d, nd):
        if lattice.boundary == "periodic":
            out += kappa_dt * (np.roll(u, 1, axis=ax) + np.roll(u, -1, axis=ax))
        else:
            lo = [slice(None)] * nd
            hi = [slice(None)] * nd
            lo[ax] = slice(1, None)
            hi[ax] = slice(None, -1)
            out[tuple(lo)] += kappa_dt * u[tuple(hi)]
            out[tuple(hi)] += kappa_dt * u[tuple(lo)]
    return out


def _apply_noise(h, u, dB, spec):
    if spec.scheme == "exponential_euler":
        return np.exp(spec.beta * dB - 0.5 * spec.beta ** 2 * spec.dt) * h
    return h + spec.beta * u * dB


def _increment_block(env, spec, t0, steps):
    """Environment increments as a contiguous ``(steps,) + batch + lattice.shape`` array."""
    lat = spec.lattice
    inc = env.grid_increments(lat.coords(), t0, spec.dt, steps)
    inc = np.ascontiguousarray(np.moveaxis(inc, -1, 0))
    return inc.reshape(inc.shape[:-1] + lat.shape)


def _chunk_steps(spec):
    k = dyadic_level(spec.dt)
    return (1 << k) if k is not None else max(1, int(round(1.0 / spec.dt)))


def step(field, env, spec):
    """Advance ``field`` by one ``dt``."""
    if field.time + spec.dt > spec.T + 1e-12:
        raise DomainError("step would pass the horizon T")
    dB = _increment_block(env, spec, field.time, 1)[0]
    h = heat_step(field.values, spec.kappa * spec.dt, spec.lattice)
    vals = _apply_noise(h, field.values, dB, spec)
    return LatticeField(vals, field.time + spec.dt, np.array(field.log_scale, copy=True), field.lattice)


def evolve(field, env, spec, until=None, record=None, drift=None, mask_at=None):
    """Evolve ``field`` to time ``until`` (default ``spec.T``).

    Parameters
    ----------
    record : sequence of times, optional
        Returns ``log Z`` at those times as an array ``batch + (len(record),)``.
    drift : callable ``t -> array or None``, optional
        Extra deterministic drift per site added to ``dB / dt`` on the step
        starting at ``t``.
    mask_at : dict ``{step index: site mask}``, optional
        Multiply the field by the mask right after that many steps.
    """
    until = spec.T if until is None else until
    lat = spec.lattice
    start = spec.steps_to(field.time)
    stop = spec.steps_to(until)
    rec_steps = {} if record is None else {spec.steps_to(t): i for i, t in enumerate(record)}
    rec = np.full(field.batch_shape + (len(rec_steps),), np.nan)
    f = field.copy()
    if 0 in rec_steps and start == 0:
        rec[..., rec_steps[0]] = f.log_mass()
    chunk = _chunk_steps(spec)
    kdt = spec.kappa * spec.dt
    s = start
    while s < stop:
        n = min(chunk - (s % chunk), stop - s)
        inc = _increment_block(env, spec, s * spec.dt, n)
        for i in range(n):
            dB = inc[i]
            if drift is not None:
                extra = drift((s + i) * spec.dt)
                if extra is not None:
                    dB = dB + extra * spec.dt
            h = heat_step(f.values, kdt, lat)
            f.values = _apply_noise(h, f.values, dB, spec)
            done = s + i + 1
            if mask_at is not None and done in mask_at:
                f.values = f.values * mask_at[done]
            if done % RESCALE_EVERY == 0 or done == stop:
                f.rescale()
            if done in rec_steps:
                rec[..., rec_steps[done]] = f.log_mass()
        s += n
    f.time = stop * spec.dt
    return (f, rec) if record is not None else f


def _survival_series(spec, times, start=None):
    """Noise-free log mass at ``times``; exactly 0 on a periodic box."""
    if spec.lattice.boundary == "periodic":
        return np.zeros(len(times))
    lat = spec.lattice
    u = init_field(lat, start).values
    kdt = spec.kappa * spec.dt
    want = {spec.steps_to(t): i for i, t in enumerate(times)}
    out = np.zeros(len(times))
    if 0 in want:
        out[want[0]] = 0.0
    for k in range(1, max(want, default=0) + 1):
        u = heat_step(u, kdt, lat)
        if k in want:
            out[want[k]] = math.log(u.sum()) if u.sum() > 0 else -math.inf
    return out


def log_partition_function(env, spec, start=None):
    """``ln Z_T`` per replica.

    At ``beta = 0`` the field is deterministic and the noise is not sampled.
    """
    if spec.beta == 0:
        val = _survival_series(spec, [spec.T], start)[0]
        out = np.full(env.batch_shape, val)
        return float(out) if np.ndim(out) == 0 else out
    f = evolve(init_field(spec.lattice, start, env.batch_shape), env, spec)
    return f.log_mass()


def partition_function(env, spec, start=None):
    """``Z_T`` per replica (total mass of the evolved field)."""
    out = np.exp(log_partition_function(env, spec, start))
    return float(out) if np.ndim(out) == 0 else out


def log_partition_series(env, spec, times, start=None):
    """``ln Z_t`` at each of ``times`` from a single evolution, shape ``batch + (len(times),)``."""
    if spec.beta == 0:
        vals = _survival_series(spec, times, start)
        return np.broadcast_to(vals, env.batch_shape + (len(times),)).copy()
    _, rec = evolve(init_field(spec.lattice, start, env.batch_shape), env, spec, record=times)
    return rec


def survival_mass(spec, start=None):
    """Mass left in the box at ``T`` with the noise switched off.

    This is ``E[Z_T]`` for the truncated model; ``1 - survival_mass`` is the
    truncation loss of an absorbing box.
    """
    lat = spec.lattice
    u = init_field(lat, start).values
    kdt = spec.kappa * spec.dt
    for _ in range(spec.steps):
        u = heat_step(u, kdt, lat)
    return float(u.sum())


def corridor_cells(lattice, n, z):
    """Mask of the box sites in ``I_z = prod_i [z_i sqrt(n), (z_i + 1) sqrt(n))``."""
    root = math.isqrt(int(n)) if float(n).is_integer() and math.isqrt(int(n)) ** 2 == int(n) else math.sqrt(n)
    z = tuple(z) if not isinstance(z, (int, np.integer)) else (int(z),)
    axes = np.arange(-lattice.L, lattice.L + 1)
    masks = [(axes >= zi * root) & (axes < (zi + 1) * root) for zi in z]
    out = masks[0]
    for m in masks[1:]:
        out = np.multiply.outer(out, m)
    return out.astype(float)


def corridor_range(lattice, n):
    """Corridor labels ``z`` (per axis) whose interval meets the box."""
    root = math.sqrt(n)
    lo = math.floor(-lattice.L / root)
    hi = math.floor(lattice.L / root)
    return list(range(lo, hi + 1))


def evolve_corridors(env, spec, n, m, children, drift_for=None, start=None):
    """Restricted partition functions for a tree of corridor sequences.

    The field is evolved block by block over ``[k n, (k+1) n)``.  At the end
    of block ``k`` each branch splits into children ``z_{k+1}`` given by
    ``children(k + 1, prefix)``, keeping only the mass in ``I_{z_{k+1}}``.
    ``drift_for(k, prefix)`` may return a per-site drift array for block
    ``k`` (``prefix = (z_1, ..., z_k)``; block 0 has the empty prefix).

    Returns ``{(z_1, ..., z_m): log Zbar}`` with per-replica arrays.
    """
    lat = spec.lattice
    if abs(m * n - spec.T) > 1e-9:
        raise ConfigurationError("T must equal m * n")
    root = init_field(lat, start, env.batch_shape)
    branches = [((), root)]
    for k in range(m):
        t0, t1 = k * n, (k + 1) * n
        if not branches:
            break
        prefixes = [p for p, _ in branches]
        stacked = LatticeField(
            np.stack([b.values for _, b in branches]), t0, np.stack([b.log_scale for _, b in branches]), lat
        )
        drifts = None
        if drift_for is not None:
            parts = [drift_for(k, p) for p in prefixes]
            if any(d is not None for d in parts):
                dr = np.stack([np.zeros(lat.shape) if d is None else d for d in parts])
                drifts = dr.reshape((len(parts),) + (1,) * len(env.batch_shape) + lat.shape)
        env_b = _BranchView(env, len(prefixes))
        out = evolve(stacked, env_b, spec, until=t1, drift=(lambda t, dr=drifts: dr) if drifts is not None else None)
        new = []
        for b, p in enumerate(prefixes):
            for z in children(k + 1, p):
                mask = corridor_cells(lat, n, z)
                if not mask.any():
                    raise DomainError(f"corridor {z} lies outside the box")
                vals = out.values[b] * mask
                new.append((p + (z,), LatticeField(vals, t1, out.log_scale[b].copy(), lat)))
        branches = new
    res = {}
    for p, fld in branches:
        res[p] = fld.log_mass()
    return res


class _BranchView:
    """Broadcast one environment across a leading branch axis."""

    def __init__(self, env, n_branches):
        self.env = env
        self.batch_shape = (n_branches,) + env.batch_shape
        self.lattice = env.lattice

    def grid_increments(self, sites, t0, dt, steps):
        inc = self.env.grid_increments(sites, t0, dt, steps)
        return inc[None, ...]


def restricted_partition(env, spec, corridors, n):
    """``Zbar`` for one corridor sequence: mass is zeroed outside ``I_{z_i}`` at ``i n``."""
    zs = [tuple(z) if not isinstance(z, (int, np.integer)) else (int(z),) for z in corridors]
    m = len(zs)
    out = evolve_corridors(env, spec, n, m, lambda k, p: [zs[k - 1]])
    val = np.exp(out[tuple(zs)])
    return float(val) if np.ndim(val) == 0 else val
