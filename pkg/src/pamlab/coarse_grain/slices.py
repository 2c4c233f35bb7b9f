"""Exact one-block slice factors from the killed walk semigroup.

For the one-dimensional walk with generator ``kappa Delta`` and killing rate
``a`` on ``J_0 = {|y| < C sqrt(n)}``::

    v_z(x) = E_x[exp(-a T_{J_0}) 1{X_n in I_z}] = (exp(n (kappa Delta - a 1_{J_0})) 1_{I_z})(x)

computed with ``scipy.sparse.linalg.expm_multiply`` on a segment wide enough
that paths reaching its ends carry negligible weight over time ``n``.  In
d = 2 the coordinates of the walk are independent one-dimensional walks, so
the killing-free factors ``P_x[X_n in I_z]`` are products of 1-D ones.
"""

import math

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import expm_multiply

from ..errors import ConfigurationError


def segment_half_width(n, kappa, reach):
    """Half-width covering ``reach`` plus 14 walk standard deviations over time ``n``."""
    return int(math.ceil(reach + 14.0 * math.sqrt(2.0 * kappa * n) + 2))


def _laplacian(W):
    size = 2 * W + 1
    main = -2.0 * np.ones(size)
    off = np.ones(size - 1)
    return sparse.diags([off, main, off], [-1, 0, 1], format="csr")


def corridor_labels(n, W):
    """Labels ``z`` with ``I_z = [z sqrt n, (z+1) sqrt n)`` meeting ``[-W, W]``."""
    r = math.sqrt(n)
    return np.arange(math.floor(-W / r), math.floor(W / r) + 1)


def _indicator_columns(n, W, labels):
    r = math.sqrt(n)
    y = np.arange(-W, W + 1)
    lab = np.floor(y / r).astype(int)
    return (lab[:, None] == labels[None, :]).astype(float)


def origin_cell(n):
    """Integer points of ``I_0 = [0, sqrt n)``."""
    return np.arange(0, int(math.ceil(math.sqrt(n))))


def killed_endpoint_table(n, kappa, killing_rate, half_width, W=None):
    """``E_x[exp(-a T_{J_0}) 1{X_n in I_z}]`` for ``x`` in ``I_0`` and every label ``z``.

    Returns ``(labels, table)`` with ``table`` of shape ``(len(I_0), len(labels))``.
    ``half_width`` is the block half-width ``C sqrt(n)``.
    """
    if kappa <= 0:
        raise ConfigurationError("slice factors need kappa > 0")
    if W is None:
        W = segment_half_width(n, kappa, half_width + math.sqrt(n))
    y = np.arange(-W, W + 1)
    kill = killing_rate * (np.abs(y) < half_width)
    gen = kappa * _laplacian(W) - sparse.diags(kill)
    labels = corridor_labels(n, W)
    cols = _indicator_columns(n, W, labels)
    vals = expm_multiply(n * gen, cols)
    rows = origin_cell(n) + W
    return labels, np.clip(vals[rows], 0.0, None)


def slice_factors_d1(n, kappa, beta, delta, C1):
    """``S_z = max_{x in I_0} E_x[exp(-beta delta T_{J_0}) 1{X_n in I_z}]``.

    Returns ``(labels, S)``.
    """
    labels, table = killed_endpoint_table(n, kappa, beta * delta, C1 * math.sqrt(n))
    return labels, table.max(axis=0)


def endpoint_factors_1d(n, kappa):
    """``q(z) = max_{x in I_0} P_x[X_n in I_z]`` for the 1-D walk."""
    labels, table = killed_endpoint_table(n, kappa, 0.0, 0.0)
    return labels, table.max(axis=0)


def block_stay_probability(n, kappa, half_width):
    """``min_{x in I_0} P_x[|X_t| < half_width for all t <= n]`` (1-D)."""
    W = int(math.ceil(half_width)) - 1
    if W < 0:
        return 0.0
    gen = kappa * _laplacian(W)
    vals = expm_multiply(n * gen, np.ones(2 * W + 1))
    rows = origin_cell(n) + W
    rows = rows[rows < 2 * W + 1]
    return float(vals[rows].min()) if rows.size else 0.0


def tail_sum(labels, S, theta, R):
    """``sum_{|z| > R} S_z**theta`` and ``sum_{|z| <= R} S_z**theta``."""
    S = np.asarray(S, dtype=float)
    near = np.abs(labels) <= R
    return float((S[~near] ** theta).sum()), float((S[near] ** theta).sum())
