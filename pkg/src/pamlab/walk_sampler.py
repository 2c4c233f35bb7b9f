"""Exact continuous-time nearest-neighbour walks and their path functionals.

The generator is ``kappa * Delta`` with ``Delta f(x) = sum_{y ~ x} (f(y) - f(x))``,
so the walk jumps at total rate ``2 d kappa`` and each coordinate has variance
``2 kappa t``.  Paths are stored as exact jump lists, never on a time grid.
"""

import csv
from dataclasses import dataclass

import numpy as np

from . import rng
from .env_field import as_site
from .errors import DomainError, OutOfBoxError
from .stats import Estimate


@dataclass(frozen=True)
class WalkSpec:
    d: int
    kappa: float
    T: float
    start: tuple = None

    def __post_init__(self):
        if self.d < 1:
            raise DomainError("dimension must be >= 1")
        if self.kappa < 0 or self.T <= 0:
            raise DomainError("need kappa >= 0 and T > 0")
        start = (0,) * self.d if self.start is None else as_site(self.start, self.d)
        object.__setattr__(self, "start", start)

    @property
    def jump_rate(self):
        return 2 * self.d * self.kappa


@dataclass(frozen=True, eq=False)
class PolymerPath:
    """Cadlag nearest-neighbour path on ``[0, T]``.

    ``positions[k]`` is the site held on ``[jump_times[k-1], jump_times[k])``
    with ``jump_times[-1] := 0`` and ``jump_times[J] := T``.
    """

    jump_times: np.ndarray
    positions: np.ndarray
    T: float

    @property
    def start(self):
        return tuple(int(c) for c in self.positions[0])

    @property
    def d(self):
        return self.positions.shape[1]

    @property
    def n_jumps(self):
        return self.jump_times.shape[0]

    def holding_intervals(self):
        """``(t_start, t_end, positions)`` arrays for every holding interval."""
        edges = np.concatenate([[0.0], self.jump_times, [self.T]])
        return edges[:-1], edges[1:], self.positions

    def endpoint(self):
        return tuple(int(c) for c in self.positions[-1])

    def to_csv(self, path):
        """Write ``t_jump, x...`` rows, the first row being ``0, start``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_jump"] + [f"x{i}" for i in range(self.d)])
            times = np.concatenate([[0.0], self.jump_times])
            for t, pos in zip(times, self.positions):
                w.writerow([repr(float(t))] + [int(c) for c in pos])


def _build(times, axes, signs, start, T):
    d = len(start)
    steps = np.zeros((times.shape[0], d), dtype=np.int64)
    steps[np.arange(times.shape[0]), axes] = signs
    positions = np.vstack([np.asarray(start, dtype=np.int64)[None, :], start + np.cumsum(steps, axis=0)])
    return PolymerPath(times, positions, float(T))


def sample_path(seed, spec):
    """One exact path; a pure function of ``(seed, spec)``."""
    return sample_paths(seed, spec, 1)[0]


def sample_paths(seed, spec, count):
    """``count`` independent paths from one seed, vectorised."""
    gen = rng.numpy_generator(seed, 0x3A1C)
    n_jumps = gen.poisson(spec.jump_rate * spec.T, size=count) if spec.kappa > 0 else np.zeros(count, dtype=np.int64)
    total = int(n_jumps.sum())
    times = gen.uniform(0.0, spec.T, size=total)
    axes = gen.integers(0, spec.d, size=total)
    signs = 2 * gen.integers(0, 2, size=total) - 1
    out = []
    offset = 0
    for k in n_jumps:
        sl = slice(offset, offset + int(k))
        order = np.argsort(times[sl], kind="stable")
        out.append(_build(times[sl][order], axes[sl][order], signs[sl][order], spec.start, spec.T))
        offset += int(k)
    return out


def position_at(path, t):
    """Site occupied at time ``t`` (right-continuous)."""
    if t < 0 or t > path.T:
        raise DomainError(f"t={t} outside [0, {path.T}]")
    k = int(np.searchsorted(path.jump_times, t, side="right"))
    return tuple(int(c) for c in path.positions[k])


def _segments(paths, lattice):
    """Flatten holding intervals of many paths: (path index, site rows, t0, t1)."""
    idx, sites, t0, t1 = [], [], [], []
    for i, p in enumerate(paths):
        a, b, pos = p.holding_intervals()
        idx.append(np.full(a.shape[0], i))
        sites.append(pos)
        t0.append(a)
        t1.append(b)
    idx = np.concatenate(idx)
    sites = np.concatenate(sites)
    t0 = np.concatenate(t0)
    t1 = np.concatenate(t1)
    inside = np.ones(len(paths), dtype=bool)
    if lattice.boundary == "periodic":
        w = lattice.width
        sites = ((sites + lattice.L) % w) - lattice.L
    else:
        bad = np.any(np.abs(sites) > lattice.L, axis=1)
        inside[np.unique(idx[bad])] = False
    return idx, sites, t0, t1, inside


def hamiltonians(paths, env, out_of_box="raise"):
    """``H_T`` for many paths in one field, exactly (no time grid).

    Returns shape ``(len(paths),) + env.batch_shape`` for batched fields.
    Paths that leave an absorbing box raise :class:`OutOfBoxError`, or give
    NaN with ``out_of_box="nan"``.
    """
    lattice = env.lattice
    idx, sites, t0, t1, inside = _segments(paths, lattice)
    if not inside.all() and out_of_box == "raise":
        raise OutOfBoxError("path leaves the absorbing lattice box")
    keep = inside[idx]
    idx, sites, t0, t1 = idx[keep], sites[keep], t0[keep], t1[keep]
    contrib = np.zeros(env.batch_shape + (idx.shape[0],))
    if idx.size:
        uniq, inv = np.unique(sites, axis=0, return_inverse=True)
        inv = np.asarray(inv).ravel()
        for u, row in enumerate(uniq):
            sel = np.nonzero(inv == u)[0]
            vals = env.values(tuple(int(c) for c in row), np.concatenate([t0[sel], t1[sel]]))
            m = sel.shape[0]
            contrib[..., sel] = vals[..., m:] - vals[..., :m]
    H = _segment_sum(contrib, idx, len(paths))
    H[..., ~inside] = np.nan
    return np.moveaxis(H, -1, 0) if env.batch_shape != () else H


def _segment_sum(values, idx, n):
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    starts = np.searchsorted(sorted_idx, np.arange(n))
    vals = values[..., order]
    out = np.zeros(values.shape[:-1] + (n,))
    nonempty = np.bincount(sorted_idx, minlength=n) > 0
    sums = np.add.reduceat(vals, starts[nonempty], axis=-1) if vals.shape[-1] else out[..., :0]
    out[..., nonempty] = sums
    return out


def hamiltonian(path, env):
    """``H_T(X) = sum over holding intervals of the environment increment``."""
    H = hamiltonians([path], env)
    return float(H[0]) if env.batch_shape == () else H[0]


def occupation_time(path, regions):
    """Time ``path`` spends inside a union of ``(t0, t1, sites)`` regions.

    ``regions`` may be a :class:`~pamlab.env_field.TiltSpec` or any iterable
    of objects/tuples giving ``t0, t1, sites``.
    """
    regs = getattr(regions, "regions", regions)
    a, b, pos = path.holding_intervals()
    pos_t = [tuple(int(c) for c in row) for row in pos]
    total = 0.0
    for r in regs:
        r0, r1, sites = (r.t0, r.t1, r.sites) if hasattr(r, "t0") else (r[0], r[1], r[2])
        if sites is None:
            mask = np.ones(len(pos_t), dtype=bool)
        else:
            sset = {as_site(s) for s in sites}
            mask = np.array([p in sset for p in pos_t])
        overlap = np.clip(np.minimum(b, r1) - np.maximum(a, r0), 0.0, None)
        total += float(overlap[mask].sum())
    return total


def path_max_norm(path, norm="sup"):
    pos = path.positions.astype(float)
    if norm == "sup":
        return float(np.abs(pos).max())
    if norm == "euclidean":
        return float(np.sqrt((pos ** 2).sum(axis=1)).max())
    raise DomainError(f"unknown norm {norm!r}")


def exit_probability(spec, C, reps, seed=0, norm="sup"):
    """Monte Carlo ``P[max_{[0,T]} |X_t| > C sqrt(T)]`` for walks from the origin.

    ``sup`` is the max-coordinate norm, ``euclidean`` the 2-norm.
    """
    if reps < 1:
        raise DomainError("reps must be >= 1")
    paths = sample_paths(seed, WalkSpec(spec.d, spec.kappa, spec.T), reps)
    rad = C * np.sqrt(spec.T)
    hits = np.array([path_max_norm(p, norm) > rad for p in paths], dtype=float)
    return Estimate.from_samples(hits, metadata={"seed": seed, "C": C, "norm": norm})
