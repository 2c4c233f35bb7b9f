"""The deterministic integral ``D_n`` and its path version ``Y``.

Both share the integrand ``1 / (n sqrt(log n) (s - u + 1))`` over
``0 <= u < s <= n``; ``Y`` keeps only the pairs with
``|X_s - X_u| <= C4 sqrt(s - u)``.  ``Y`` is evaluated exactly on the
holding intervals of the path, using the closed-form second antiderivative
of the truncated integrand.
"""

import math

import numpy as np
from scipy import integrate

from ..errors import DomainError
from .geometry import _dist


def D_n_closed_form(n):
    """``((n + 1) log(n + 1) - n) / (n sqrt(log n))``."""
    n = float(n)
    return ((n + 1.0) * math.log1p(n) - n) / (n * math.sqrt(math.log(n)))


def D_n_quadrature(n):
    """``D_n`` by adaptive quadrature of ``int_0^n (n - tau) / (tau + 1) dtau``.

    The double integral collapses to one dimension in the lag ``tau = s - u``;
    the lag is integrated on a log scale so the range ``[0, n]`` is resolved
    for ``n`` up to ``1e9``.
    """
    n = float(n)
    if n < 3:
        raise DomainError("D_n needs n >= 3")

    # tau = exp(v) - 1, dtau = exp(v) dv, and (tau + 1) cancels
    def g(v):
        return n - math.expm1(v)

    val, _ = integrate.quad(g, 0.0, math.log1p(n), epsabs=0.0, epsrel=1e-12, limit=200)
    return val / (n * math.sqrt(math.log(n)))


def _G2(tau, tau0):
    """Second antiderivative of ``1{t >= tau0} / (t + 1)``, vanishing below ``tau0``."""
    tau = np.asarray(tau, dtype=float)
    out = np.zeros(np.broadcast(tau, tau0).shape)
    live = np.broadcast_to(tau > tau0, out.shape)
    t = np.broadcast_to(tau, out.shape)[live]
    t0 = np.broadcast_to(tau0, out.shape)[live]
    out[live] = (t + 1.0) * np.log((t + 1.0) / (t0 + 1.0)) - (t - t0)
    return out


def Y_value(path, n, C4, norm="euclidean", t0=0.0):
    """``Y`` for the path segment on ``[t0, t0 + n]``."""
    if n < 3:
        raise DomainError("Y needs n >= 3")
    a, b, pos = path.holding_intervals()
    lo, hi = t0, t0 + n
    a = np.clip(a, lo, hi) - lo
    b = np.clip(b, lo, hi) - lo
    live = b > a
    a, b, pos = a[live], b[live], pos[live].astype(float)
    if pos.shape[1] == 1:
        dist = np.abs(pos[:, None, 0] - pos[None, :, 0])
    else:
        dist = _dist(pos[:, None, :] - pos[None, :, :], norm)
    tau0 = (dist / C4) ** 2
    # rows index s-intervals, columns u-intervals; u < s is built into G2
    s0, s1 = a[:, None], b[:, None]
    u0, u1 = a[None, :], b[None, :]
    total = _G2(s1 - u0, tau0) - _G2(s0 - u0, tau0) - _G2(s1 - u1, tau0) + _G2(s0 - u1, tau0)
    return float(total.sum() / (n * math.sqrt(math.log(n))))


def D_n_and_Y(n, C4, path, norm="euclidean"):
    """``(D_n, Y)``; ``D_n`` by quadrature, ``Y`` exactly along ``path`` on ``[0, n]``."""
    return D_n_quadrature(n), Y_value(path, n, C4, norm)
