"""Correlation kernel ``V``, the block statistic ``R_k`` and its variance.

``R_k`` is discretised with left-point Ito sums on a grid of step ``dt``::

    R = sum_{j < i} sum_{x, y in block} V(i dt - j dt, |x - y|) dB^x_i dB^y_j

with ``dB_i`` the increment over ``[t0 + i dt, t0 + (i+1) dt)``.  Three
evaluators are provided:

``fft``
    One real FFT of the (time x space) increment array per replica;
    ``R = sum_f,k w_f |F(f,k)|**2 M(f,k) / (N_t prod P)`` where ``M`` is the
    transform of the lag-dependent disk kernels, precomputed per geometry.
``banded``
    Direct sums over the spatial offsets inside the largest disk and all
    time lags; no transforms, so it is exact up to summation order.
``naive``
    Dense ``(K S) x (K S)`` kernel matrix; the reference for tiny blocks.
"""

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from ..errors import ConfigurationError, DomainError
from .geometry import _dist, blocks_for

FFT_CHUNK_BYTES = 64 * 2 ** 20


@dataclass(frozen=True)
class CorrelationKernel:
    """``V(tau, r) = 1{r <= C4 sqrt(tau)} / (100 C3 C4 n sqrt(log n) (tau + 1))``."""

    C3: float
    C4: float
    n: float
    norm: str = "euclidean"

    def __post_init__(self):
        if not (self.C3 > 0 and self.C4 > 0):
            raise ConfigurationError("C3 and C4 must be positive")
        if self.n < 3:
            raise ConfigurationError("the kernel needs n >= 3 so that log n > 1")

    @property
    def prefactor(self):
        return 1.0 / (100.0 * self.C3 * self.C4 * self.n * math.sqrt(math.log(self.n)))

    def radius(self, tau):
        return self.C4 * np.sqrt(np.abs(tau))

    def value(self, tau, dist):
        tau = np.abs(np.asarray(tau, dtype=float))
        on = np.asarray(dist, dtype=float) <= self.radius(tau)
        return np.where(on, self.prefactor / (tau + 1.0), 0.0)


def kernel_value(kern, s, x, u, y):
    """``V_{(s,x),(u,y)}`` for scalar times and sites."""
    off = np.atleast_1d(np.asarray(x, dtype=float)) - np.atleast_1d(np.asarray(y, dtype=float))
    dist = float(_dist(off[None, :], kern.norm)[0])
    return float(kern.value(s - u, dist))


def f_K(x, K):
    """``-K 1{x > exp(K**2)}``."""
    return np.where(np.asarray(x) > math.exp(K ** 2), -float(K), 0.0)


# geometry helpers ----------------------------------------------------------


def _half_extents(shape, reach=None):
    return [w - 1 if reach is None else min(w - 1, reach) for w in shape]


def _offset_grid(shape, reach=None):
    """Integer offsets ``(-h .. h)`` per axis with ``h = min(w - 1, reach)``."""
    axes = [np.arange(-h, h + 1) for h in _half_extents(shape, reach)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack(grids, axis=-1)


def _offset_dist(shape, norm, reach=None):
    off = _offset_grid(shape, reach)
    if len(shape) == 1:
        return np.abs(off[..., 0]).astype(float)
    return _dist(off, norm)


def _lag_classes(dist_values, kern, dt, K):
    """Group lags ``1..K-1`` by the set of offsets their disk contains.

    Returns ``(thresholds, lag_class)`` where class ``j`` contains the
    offsets with ``dist <= thresholds[j]``.
    """
    uniq = np.unique(dist_values)
    lags = np.arange(1, K)
    radii = kern.radius(lags * dt)
    # number of distinct distances not above each radius, consistent with value()
    counts = np.searchsorted(uniq, radii, side="right")
    classes, lag_class = np.unique(counts, return_inverse=True)
    thresholds = np.array([uniq[c - 1] if c > 0 else -1.0 for c in classes])
    return thresholds, lag_class, lags


@functools.lru_cache(maxsize=16)
def _fft_plan(box_shape, kern, dt, K):
    d = len(box_shape)
    # offsets beyond the widest disk carry no weight, so padding to w + reach avoids wrap-around
    reach = int(math.floor(float(kern.radius(max(K - 1, 0) * dt)))) if K > 1 else 0
    ext = _half_extents(box_shape, reach)
    P = tuple(sfft.next_fast_len(w + h, real=False) for w, h in zip(box_shape, ext))
    Nt = sfft.next_fast_len(2 * K - 1, real=True)
    dist = _offset_dist(box_shape, kern.norm, reach)
    thresholds, lag_class, lags = _lag_classes(dist, kern, dt, K)
    coef = kern.prefactor / (lags * dt + 1.0)
    nf = Nt // 2 + 1
    f = np.arange(nf)
    h = np.zeros((nf, thresholds.shape[0]))
    cosm = np.cos(2.0 * np.pi * np.outer(f, lags) / Nt)
    np.add.at(h.T, lag_class, (cosm * coef).T)
    # circular placement of the offset kernel on the padded grid
    idx = np.meshgrid(*[np.arange(-h, h + 1) % p for h, p in zip(ext, P)], indexing="ij")
    dhat = np.empty((thresholds.shape[0],) + P)
    for j, thr in enumerate(thresholds):
        ker = np.zeros(P)
        ker[tuple(idx)] = (dist <= thr).astype(float)
        dhat[j] = sfft.fftn(ker).real
    M = (h @ dhat.reshape(thresholds.shape[0], -1)).reshape((nf,) + P)
    w = np.full(nf, 2.0)
    w[0] = 1.0
    if Nt % 2 == 0:
        w[-1] = 1.0
    M *= w.reshape((nf,) + (1,) * d)
    M /= Nt * float(np.prod(P))
    # layout (space..., time-frequency) to match rfftn over (space..., time)
    return P, Nt, np.ascontiguousarray(np.moveaxis(M, 0, -1))


def _r_fft(A, kern, dt, d):
    box_shape = A.shape[-d:]
    K = A.shape[-d - 1]
    P, Nt, M = _fft_plan(tuple(box_shape), kern, float(dt), int(K))
    batch = A.shape[: -d - 1]
    flat = A.reshape((-1, K) + tuple(box_shape))
    # move time to the last axis so that rfftn transforms it with the real FFT
    flat = np.moveaxis(flat, 1, -1)
    per = 16 * float(np.prod(P)) * (Nt // 2 + 1)
    chunk = max(1, int(FFT_CHUNK_BYTES // per))
    out = np.empty(flat.shape[0])
    axes = tuple(range(1, d + 2))
    for s in range(0, flat.shape[0], chunk):
        F = sfft.rfftn(flat[s:s + chunk], s=P + (Nt,), axes=axes)
        power = F.real ** 2 + F.imag ** 2
        out[s:s + chunk] = power.reshape(power.shape[0], -1) @ M.ravel()
    return out.reshape(batch)


def _r_banded(A, kern, dt, d):
    box_shape = A.shape[-d:]
    K = A.shape[-d - 1]
    batch = A.shape[: -d - 1]
    flat = A.reshape((-1, K) + tuple(box_shape))
    off = _offset_grid(box_shape).reshape(-1, d)
    dist = _offset_dist(box_shape, kern.norm).reshape(-1)
    lags = np.arange(1, K)
    coef = kern.prefactor / (lags * dt + 1.0)
    radii = kern.radius(lags * dt)
    keep = dist <= (radii.max() if lags.size else -1.0)
    total = np.zeros(flat.shape[0])
    for o, r in zip(off[keep], dist[keep]):
        # x ranges over the overlap of the box with the box shifted by o
        sx = tuple(slice(max(0, c), w + min(0, c)) for c, w in zip(o, box_shape))
        sy = tuple(slice(max(0, -c), w + min(0, -c)) for c, w in zip(o, box_shape))
        ax = flat[(slice(None), slice(None)) + sx].reshape(flat.shape[0], K, -1)
        ay = flat[(slice(None), slice(None)) + sy].reshape(flat.shape[0], K, -1)
        active = np.nonzero(r <= radii)[0]
        for li in active:
            lag = lags[li]
            total += coef[li] * np.einsum("bij,bij->b", ax[:, lag:], ay[:, : K - lag])
    return total.reshape(batch)


def _r_naive(A, kern, dt, d):
    box_shape = A.shape[-d:]
    K = A.shape[-d - 1]
    batch = A.shape[: -d - 1]
    flat = A.reshape(-1, K * int(np.prod(box_shape)))
    sites = np.stack(np.meshgrid(*[np.arange(w) for w in box_shape], indexing="ij"), axis=-1).reshape(-1, d)
    S = sites.shape[0]
    times = np.repeat(np.arange(K), S) * dt
    locs = np.tile(sites, (K, 1))
    V = np.zeros((K * S, K * S))
    for a in range(K * S):
        tau = times[a] - times
        diff = locs[a] - locs
        dist = np.abs(diff[:, 0]).astype(float) if d == 1 else _dist(diff, kern.norm)
        v = kern.value(tau, dist)
        v[tau <= 0] = 0.0
        V[a] = v
    return np.einsum("ba,ac,bc->b", flat, V, flat).reshape(batch)


_METHODS = {"fft": _r_fft, "banded": _r_banded, "naive": _r_naive}


def r_statistic(A, kern, dt, d, method="auto"):
    """``R`` for increment arrays ``A`` of shape ``batch + (K,) + box``.

    ``A`` must already be zero outside the block.
    """
    A = np.asarray(A, dtype=float)
    if dt <= 0:
        raise DomainError("dt must be positive")
    if method == "auto":
        size = A.shape[-d - 1] * int(np.prod(A.shape[-d:]))
        method = "banded" if size <= 256 else "fft"
    if method not in _METHODS:
        raise ConfigurationError(f"unknown method {method!r}")
    return _METHODS[method](A, kern, dt, d)


# environment plumbing ------------------------------------------------------


def _steps(duration, dt):
    K = duration / dt
    if dt <= 0:
        raise DomainError("dt must be positive")
    if abs(K - round(K)) > 1e-9 * max(1.0, K):
        raise DomainError(f"dt={dt} does not divide the block duration {duration}")
    return int(round(K))


def block_increments(env, block, dt):
    """Increments of ``env`` on the block, as ``batch + (K,) + box`` (zero off-block)."""
    mask, lo = block.mask()
    sites = np.argwhere(mask) + lo
    if np.any(np.abs(sites) > env.lattice.L):
        raise DomainError("block sites leave the environment box")
    K = _steps(block.duration, dt)
    inc = env.grid_increments(sites, block.t0, dt, K)
    out = np.zeros(env.batch_shape + (K,) + mask.shape)
    idx = tuple(np.argwhere(mask).T)
    out[(...,) + (slice(None),) + idx] = np.moveaxis(inc, -2, -1)
    return out


def correlation_R(env, block, kern, dt, method="auto"):
    """``R_k`` of the block in the environment ``env`` (per replica)."""
    A = block_increments(env, block, dt)
    out = r_statistic(A, kern, dt, block.d, method)
    return float(out) if np.ndim(out) == 0 else out


def occupation_grid(path, block, dt):
    """Time spent by ``path`` at each block site during each grid cell, ``(K,) + box``."""
    mask, lo = block.mask()
    K = _steps(block.duration, dt)
    out = np.zeros((K,) + mask.shape)
    a, b, pos = path.holding_intervals()
    a = np.clip(a, block.t0, block.t1)
    b = np.clip(b, block.t0, block.t1)
    for s, e, x in zip(a, b, pos):
        if e <= s:
            continue
        rel = tuple(int(c) - int(l) for c, l in zip(x, lo))
        if any(r < 0 or r >= w for r, w in zip(rel, mask.shape)) or not mask[rel]:
            continue
        i0 = int(math.floor((s - block.t0) / dt))
        i1 = min(int(math.ceil((e - block.t0) / dt)), K)
        for i in range(i0, i1):
            c0 = block.t0 + i * dt
            overlap = min(e, c0 + dt) - max(s, c0)
            if overlap > 0:
                out[(i,) + rel] += overlap
    return out


# variance ------------------------------------------------------------------


def _pair_counts(mask, norm):
    """Ordered pairs of block sites at each distance: ``(distances, counts)``."""
    shape = mask.shape
    P = tuple(sfft.next_fast_len(2 * w - 1, real=True) for w in shape)
    F = sfft.rfftn(mask.astype(float), s=P)
    auto = sfft.irfftn(np.abs(F) ** 2, s=P)
    idx = np.meshgrid(*[np.arange(-(w - 1), w) % p for w, p in zip(shape, P)], indexing="ij")
    counts = np.rint(auto[tuple(idx)]).astype(np.int64)
    dist = _offset_dist(shape, norm)
    keep = counts > 0
    dist, counts = dist[keep], counts[keep]
    uniq, inv = np.unique(dist, return_inverse=True)
    tot = np.bincount(inv.ravel(), weights=counts.ravel()).astype(np.int64)
    return uniq, tot


def variance_Q_R(block, kern, dt=None):
    """Variance of ``R`` under the base law.

    With ``dt`` this is the exact variance of the grid statistic,
    ``dt**2 sum_l (K - l) c_l**2 N(r_l)`` with ``N(r)`` the number of ordered
    site pairs within distance ``r``.  With ``dt=None`` it is the continuum
    integral ``sum_{x,y} int_0^n int_0^s V**2 du ds``, evaluated in closed
    form per pair distance.
    """
    mask, _ = block.mask()
    if not mask.any():
        return 0.0
    dists, counts = _pair_counts(mask, kern.norm)
    c = kern.prefactor
    n = block.duration
    if dt is not None:
        K = _steps(n, dt)
        lags = np.arange(1, K)
        if lags.size == 0:
            return 0.0
        tau = lags * dt
        cum = np.concatenate([[0], np.cumsum(counts)])
        within = cum[np.searchsorted(dists, kern.radius(tau), side="right")]
        return float(dt ** 2 * np.sum((K - lags) * within * (c / (tau + 1.0)) ** 2))
    tau0 = (dists / kern.C4) ** 2
    live = tau0 < n

    def F(t):
        return -(n + 1.0) / (t + 1.0) - np.log(t + 1.0)

    return float(c ** 2 * np.sum(counts[live] * (F(n) - F(tau0[live]))))


def variance_bound_terms(block, kern):
    """The crude bound ``16 C3**2 C4**2 n**2 log n / (1e4 C3**2 C4**2 n**2 log n)`` and its inputs."""
    return {"bound": 16.0 / 1e4, "sites": block.n_sites(), "sites_bound": 4 * kern.C3 ** 2 * kern.n}


# penalty -------------------------------------------------------------------


def block_statistics(env, corridors, spec, dt=None, method="auto"):
    """``(R_0, ..., R_{m-1})`` along a corridor sequence, shape ``batch + (m,)``."""
    dt = spec.dt_R if dt is None else dt
    kern = CorrelationKernel(spec.C3, spec.C4, spec.n, spec.norm if spec.d > 1 else "sup")
    vals = [correlation_R(env, b, kern, dt, method) for b in blocks_for(corridors, spec)]
    return np.stack([np.asarray(v) for v in vals], axis=-1)


def penalty(env, corridors, spec, dt=None, method="auto"):
    """``g = exp(sum_k f_K(R_k))``; takes values in ``{exp(-j K) : 0 <= j <= m}``."""
    R = block_statistics(env, corridors, spec, dt, method)
    out = np.exp(f_K(R, spec.K).sum(axis=-1))
    return float(out) if np.ndim(out) == 0 else out
