import math

import numpy as np
import pytest

from pamlab.coarse_grain import D_n_and_Y, D_n_closed_form, D_n_quadrature, Y_value
from pamlab.errors import DomainError
from pamlab.walk_sampler import PolymerPath, WalkSpec, sample_path, sample_paths


@pytest.mark.parametrize("n", [10.0, 1e3, 1e6, 1e9])
def test_quadrature_matches_closed_form(n):
    assert D_n_quadrature(n) == pytest.approx(D_n_closed_form(n), rel=1e-6)


def test_closed_form_by_direct_integration():
    # two-dimensional Riemann oracle on a fine grid, n = 10
    n, h = 10.0, 0.005
    g = np.arange(0.0, n, h) + h / 2
    s, u = np.meshgrid(g, g, indexing="ij")
    val = np.where(s > u, 1.0 / np.abs(s - u + 1.0), 0.0).sum() * h * h / (n * math.sqrt(math.log(n)))
    assert val == pytest.approx(D_n_closed_form(n), rel=2e-3)


def test_small_n_rejected():
    with pytest.raises(DomainError):
        D_n_quadrature(2.0)
    with pytest.raises(DomainError):
        Y_value(sample_path(0, WalkSpec(1, 1.0, 2.0)), 2.0, 1.0)


def test_constant_path_gives_D_n():
    p = PolymerPath(np.zeros(0), np.zeros((1, 2), dtype=np.int64), 50.0)
    assert Y_value(p, 50.0, 1.0) == pytest.approx(D_n_closed_form(50.0), rel=1e-12)


def test_Y_against_grid_oracle():
    n, C4 = 20.0, 1.0
    p = sample_path(3, WalkSpec(1, 1.0, n))
    h = 0.01
    g = np.arange(0.0, n, h) + h / 2
    x = np.array([p.positions[np.searchsorted(p.jump_times, t, side="right")][0] for t in g], float)
    s, u = np.meshgrid(g, g, indexing="ij")
    close = np.abs(x[:, None] - x[None, :]) <= C4 * np.sqrt(np.clip(s - u, 0, None))
    integrand = np.where((s > u) & close, 1.0 / np.abs(s - u + 1.0), 0.0)
    oracle = integrand.sum() * h * h / (n * math.sqrt(math.log(n)))
    assert Y_value(p, n, C4) == pytest.approx(oracle, rel=2e-2)


def test_Y_bounded_by_D_n_and_shifted_window():
    n = 100.0
    D = D_n_quadrature(n)
    paths = sample_paths(4, WalkSpec(2, 1.0, 2 * n), 200)
    ys = np.array([Y_value(p, n, 10.0) for p in paths])
    assert np.all(ys <= D * (1 + 1e-12)) and np.all(ys >= 0)
    last = [Y_value(p, n, 10.0, t0=n) for p in paths[:5]]
    assert all(0 <= y <= D * (1 + 1e-12) for y in last)
    assert D_n_and_Y(n, 10.0, paths[0])[0] == D
