import math

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import within
from pamlab.coarse_grain import endpoint_factors_1d, killed_endpoint_table, slice_factors_d1, tail_sum
from pamlab.coarse_grain.slices import block_stay_probability, corridor_labels
from pamlab.errors import ConfigurationError
from pamlab.walk_sampler import WalkSpec, sample_paths


def test_labels_partition_the_segment():
    labs = corridor_labels(16, 10)
    assert labs[0] == -3 and labs[-1] == 2


def test_endpoint_table_rows_are_probabilities():
    labels, table = killed_endpoint_table(16, 1.0, 0.0, 0.0)
    assert np.allclose(table.sum(axis=1), 1.0, atol=1e-10)
    assert table.shape == (4, labels.size)


def test_killed_table_against_dense_expm():
    n, kappa, a, hw, W = 4, 0.5, 0.3, 3.0, 12
    y = np.arange(-W, W + 1)
    L = np.diag(-2.0 * np.ones(y.size)) + np.diag(np.ones(y.size - 1), 1) + np.diag(np.ones(y.size - 1), -1)
    G = kappa * L - np.diag(a * (np.abs(y) < hw))
    P = expm(n * G)
    labels, table = killed_endpoint_table(n, kappa, a, hw, W=W)
    for j, z in enumerate(labels):
        col = P[:, (y >= 2 * z) & (y < 2 * z + 2)].sum(axis=1)
        assert np.allclose(table[:, j], col[[W, W + 1]], rtol=1e-10, atol=1e-14)


def test_killed_table_against_path_monte_carlo():
    n, kappa, a, hw = 9.0, 1.0, 0.2, 4.5
    labels, table = killed_endpoint_table(n, kappa, a, hw)
    paths = sample_paths(1, WalkSpec(1, kappa, n), 20_000)
    weights, ends = [], []
    for p in paths:
        s, e, x = p.holding_intervals()
        inside = (e - s)[np.abs(x[:, 0]) < hw].sum()
        weights.append(math.exp(-a * inside))
        ends.append(math.floor(p.endpoint()[0] / 3.0))
    weights, ends = np.array(weights), np.array(ends)
    for z in (-1, 0, 1):
        v = weights * (ends == z)
        j = int(np.flatnonzero(labels == z)[0])
        assert within(v.mean(), table[0, j], v.std(ddof=1) / math.sqrt(v.size))


def test_slice_factors_monotone_and_bounded():
    labels, S = slice_factors_d1(16, 1.0, 1.0, 0.2, 2.0)
    lq, q = endpoint_factors_1d(16, 1.0)
    l0, S0 = slice_factors_d1(16, 1.0, 0.0, 0.2, 2.0)
    common, i, j = np.intersect1d(labels, lq, return_indices=True)
    assert common.size > 10
    assert np.all(S[i] <= q[j] + 1e-15) and np.allclose(S0[np.isin(l0, common)], q[j], atol=1e-14)
    assert np.all(S > 0)


def test_stay_probability():
    # a single allowed site: the walk must not jump, probability exp(-2 kappa n)
    assert block_stay_probability(16, 1.0, 0.5) == pytest.approx(math.exp(-32.0), rel=1e-6)
    p_small, p_big = block_stay_probability(16, 1.0, 4.0), block_stay_probability(16, 1.0, 16.0)
    assert 0 < p_small < p_big <= 1
    with pytest.raises(ConfigurationError):
        killed_endpoint_table(16, 0.0, 0.0, 0.0)


def test_tail_sum_partition():
    labels = np.arange(-4, 5)
    S = np.linspace(0.1, 0.9, 9)
    far, near = tail_sum(labels, S, 0.5, 2)
    assert far + near == pytest.approx((S ** 0.5).sum())
    assert near == pytest.approx((S[2:7] ** 0.5).sum())
