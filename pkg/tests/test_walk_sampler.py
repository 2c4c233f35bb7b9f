import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import within
from pamlab.env_field import EnvironmentField, LatticeSpec
from pamlab.errors import DomainError, OutOfBoxError
from pamlab.walk_sampler import (
    PolymerPath,
    WalkSpec,
    exit_probability,
    hamiltonian,
    hamiltonians,
    occupation_time,
    position_at,
    sample_path,
    sample_paths,
)

N = 10_000


def test_spec_validation():
    with pytest.raises(DomainError):
        WalkSpec(1, 1.0, 0.0)
    with pytest.raises(DomainError):
        WalkSpec(0, 1.0, 1.0)
    assert WalkSpec(2, 1.5, 1.0).jump_rate == 6.0


def test_rate_zero_path_is_constant():
    p = sample_path(1, WalkSpec(2, 0.0, 5.0, start=(1, -1)))
    assert p.n_jumps == 0 and p.endpoint() == (1, -1)


@given(st.integers(0, 2 ** 32), st.integers(1, 3))
def test_path_structure(seed, d):
    p = sample_path(seed, WalkSpec(d, 1.0, 3.0))
    assert np.all(np.diff(p.jump_times) > 0)
    assert np.all((p.jump_times > 0) & (p.jump_times <= 3.0))
    assert p.positions.shape == (p.n_jumps + 1, d)
    steps = np.abs(np.diff(p.positions, axis=0)).sum(axis=1)
    assert np.all(steps == 1)
    assert p.start == (0,) * d


def test_sampling_is_pure():
    spec = WalkSpec(1, 1.0, 4.0)
    a, b = sample_paths(5, spec, 3), sample_paths(5, spec, 3)
    assert all(np.array_equal(x.jump_times, y.jump_times) for x, y in zip(a, b))


def test_jump_count_and_endpoint_variance():
    paths = sample_paths(2, WalkSpec(1, 1.0, 10.0), N)
    jumps = np.array([p.n_jumps for p in paths], dtype=float)
    assert within(jumps.mean(), 20.0, jumps.std(ddof=1) / np.sqrt(N))
    x = np.array([p.endpoint()[0] for p in paths], dtype=float)
    # discrete oracle: Poisson(20) many +-1 steps, Var = E[N] = 20
    var = x.var(ddof=1)
    se = np.sqrt((np.mean((x - x.mean()) ** 4) - var ** 2) / N)
    assert within(var, 20.0, se)


def test_discrete_time_oracle_agrees_on_law():
    # independent oracle: lazy discrete walk of step h, jump prob 2 kappa h
    gen = np.random.default_rng(0)
    h, T = 1e-3, 2.0
    move = gen.random((4000, int(T / h))) < 2 * h
    signs = np.where(gen.random(move.shape) < 0.5, -1, 1)
    oracle = (move * signs).sum(axis=1)
    exact = np.array([p.endpoint()[0] for p in sample_paths(3, WalkSpec(1, 1.0, T), 4000)])
    from scipy import stats

    assert stats.ks_2samp(oracle, exact).pvalue > 1e-3


def test_scaling_in_kappa():
    a = sample_paths(4, WalkSpec(1, 3.0, 2.0), 5000)
    b = sample_paths(5, WalkSpec(1, 1.0, 6.0), 5000)
    ja = np.array([p.n_jumps for p in a], float)
    jb = np.array([p.n_jumps for p in b], float)
    se = np.hypot(ja.std(), jb.std()) / np.sqrt(5000)
    assert within(ja.mean(), jb.mean(), se)


def test_increments_stationary():
    paths = sample_paths(6, WalkSpec(1, 1.0, 6.0), 5000)
    early = np.array([position_at(p, 2.0)[0] for p in paths], float)
    late = np.array([position_at(p, 6.0)[0] - position_at(p, 4.0)[0] for p in paths], float)
    ve, vl = early.var(ddof=1), late.var(ddof=1)
    assert within(ve, vl, np.sqrt(2.0 / 5000) * (ve + vl) / np.sqrt(2))


def test_position_at_matches_linear_scan():
    p = sample_path(7, WalkSpec(2, 1.0, 5.0))
    gen = np.random.default_rng(1)
    assert position_at(p, 0.0) == p.start
    if p.n_jumps:
        assert position_at(p, np.nextafter(p.jump_times[0], 0)) == p.start
        assert position_at(p, p.jump_times[0]) == tuple(p.positions[1])
    for t in gen.uniform(0, 5.0, 1000):
        k = 0
        while k < p.n_jumps and p.jump_times[k] <= t:
            k += 1
        assert position_at(p, t) == tuple(p.positions[k])
    with pytest.raises(DomainError):
        position_at(p, 5.1)


def test_constant_path_hamiltonian():
    env = EnvironmentField(LatticeSpec(1, 3), 9)
    p = sample_path(0, WalkSpec(1, 0.0, 2.5))
    assert hamiltonian(p, env) == env.value_at(0, 2.5)


def test_hamiltonian_law_over_environments():
    beta, T = 0.8, 3.0
    p = sample_path(8, WalkSpec(1, 1.0, T))
    env = EnvironmentField.replicas(LatticeSpec(1, 40), 10, N)
    H = hamiltonian(p, env)
    var = H.var(ddof=1)
    assert within(var, T, var * np.sqrt(2.0 / N))
    w = np.exp(beta * H - T * beta ** 2 / 2)
    assert within(w.mean(), 1.0, w.std(ddof=1) / np.sqrt(N))


class _Deterministic:
    """Synthetic field ``B^x_t = f(x, t)``, for linearity checks."""

    def __init__(self, lattice, f):
        self.lattice, self.f, self.batch_shape = lattice, f, ()

    def values(self, site, times):
        return np.array([self.f(site, t) for t in times])


def test_hamiltonian_linear_in_environment():
    lat = LatticeSpec(1, 30)
    f1 = lambda x, t: np.sin(3 * t + x[0])
    f2 = lambda x, t: t ** 2 * (1 + x[0])
    paths = sample_paths(9, WalkSpec(1, 1.0, 2.0), 5)
    h1 = hamiltonians(paths, _Deterministic(lat, f1))
    h2 = hamiltonians(paths, _Deterministic(lat, f2))
    h12 = hamiltonians(paths, _Deterministic(lat, lambda x, t: f1(x, t) + f2(x, t)))
    assert np.allclose(h12, h1 + h2, rtol=1e-12, atol=1e-12)


def test_hamiltonians_batch_matches_single():
    env = EnvironmentField(LatticeSpec(1, 30), 3)
    paths = sample_paths(1, WalkSpec(1, 1.0, 3.0), 6)
    many = hamiltonians(paths, env)
    assert np.allclose(many, [hamiltonian(p, env) for p in paths], rtol=0, atol=1e-12)


def test_out_of_box():
    env = EnvironmentField(LatticeSpec(1, 1), 3)
    path = PolymerPath(np.array([0.5, 1.0]), np.array([[0], [1], [2]]), 2.0)
    with pytest.raises(OutOfBoxError):
        hamiltonian(path, env)
    assert np.isnan(hamiltonians([path], env, out_of_box="nan")[0])
    torus = EnvironmentField(LatticeSpec(1, 1, "periodic"), 3)
    assert np.isfinite(hamiltonian(path, torus))


def test_occupation_time():
    p = sample_path(11, WalkSpec(1, 1.0, 4.0))
    assert occupation_time(p, [(0.0, 4.0, None)]) == pytest.approx(4.0)
    assert occupation_time(p, []) == 0.0
    sites = [(0,), (1,)]
    a = occupation_time(p, [(0.0, 2.0, sites)])
    b = occupation_time(p, [(2.0, 4.0, sites)])
    assert occupation_time(p, [(0.0, 4.0, sites)]) == pytest.approx(a + b)
    dt = 1e-4
    grid = np.arange(0.0, 2.0, dt) + dt / 2
    riemann = dt * sum(position_at(p, t) in sites for t in grid)
    assert abs(a - riemann) < 2 * dt * (p.n_jumps + 1)


def test_exit_probability_limits():
    spec = WalkSpec(1, 1.0, 100.0)
    assert exit_probability(spec, 0.0, 50).value == 1.0
    assert exit_probability(spec, 1e6, 50).value == 0.0


def test_exit_probability_against_discrete_oracle():
    spec = WalkSpec(1, 1.0, 100.0)
    est = exit_probability(spec, 3.0, 2000, seed=4)
    # oracle: embedded jump chain with Poisson(200) steps, reflection-free brute force
    gen = np.random.default_rng(2)
    hits = []
    for k in gen.poisson(200, 4000):
        walk = np.cumsum(gen.choice([-1, 1], size=k))
        hits.append(k > 0 and np.abs(walk).max() > 30.0)
    hits = np.array(hits, float)
    se = np.hypot(est.stderr, hits.std(ddof=1) / np.sqrt(hits.size))
    assert within(est.value, hits.mean(), se)


def test_path_csv(tmp_path):
    p = sample_path(1, WalkSpec(2, 1.0, 1.0))
    p.to_csv(tmp_path / "p.csv")
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "t_jump,x0,x1" and len(rows) == p.n_jumps + 2
