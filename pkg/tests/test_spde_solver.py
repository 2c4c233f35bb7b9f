import math

import numpy as np
import pytest

from conftest import within
from pamlab.env_field import EnvironmentField, LatticeSpec
from pamlab.errors import ConfigurationError, DomainError
from pamlab.spde_solver import (
    SolverSpec,
    default_dt,
    evolve,
    heat_step,
    init_field,
    log_partition_function,
    log_partition_series,
    partition_function,
    restricted_partition,
    evolve_corridors,
    corridor_cells,
    step,
    survival_mass,
)


def test_default_dt():
    assert default_dt(1, 1.0, 0.5) == 2.0 ** -7
    assert default_dt(1, 1.0, 4.0) == 2.0 ** -8
    assert default_dt(2, 0.0, 0.0) == 2.0 ** -7


def test_spec_validation():
    lat = LatticeSpec(1, 4)
    with pytest.raises(ConfigurationError):
        SolverSpec(lat, 1.0, 1.0, 1.0, dt=0.3)
    with pytest.raises(ConfigurationError):
        SolverSpec(lat, 1.0, 1.0, 1.0, dt=0.5)
    with pytest.raises(ConfigurationError):
        SolverSpec(lat, -1.0, 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        SolverSpec(lat, 1.0, 1.0, 1.0, scheme="rk4")


def test_init_field():
    lat = LatticeSpec(2, 3)
    f = init_field(lat, (1, -2))
    assert f.total_mass() == 1.0 and f.value_at((1, -2)) == 1.0
    assert f.site_values().sum() == 1.0 and f.time == 0.0
    with pytest.raises(DomainError):
        init_field(lat, (4, 0))


def test_heat_step_conserves_mass_on_torus():
    lat = LatticeSpec(2, 3, "periodic")
    u = np.random.default_rng(0).random(lat.shape)
    assert math.isclose(heat_step(u, 0.1, lat).sum(), u.sum(), rel_tol=1e-14)
    absorbing = LatticeSpec(2, 3)
    assert heat_step(u, 0.1, absorbing).sum() < u.sum()


def test_step_beta_zero_torus_conserves_mass():
    lat = LatticeSpec(1, 5, "periodic")
    spec = SolverSpec(lat, 0.0, 1.0, 1.0, dt=2.0 ** -6)
    env = EnvironmentField(lat, 0)
    f = init_field(lat)
    for _ in range(10):
        f = step(f, env, spec)
        assert abs(f.total_mass() - 1.0) < 1e-14
    assert partition_function(env, spec) == 1.0


def test_kappa_zero_matches_exponential_martingale():
    lat = LatticeSpec(1, 1)
    spec = SolverSpec(lat, 0.7, 0.0, 3.0, dt=2.0 ** -5)
    env = EnvironmentField.replicas(lat, 1, 4)
    logz = log_partition_function(env, spec)
    exact = 0.7 * env.value_at(0, 3.0) - 0.5 * 0.49 * 3.0
    assert np.allclose(logz, exact, rtol=0, atol=1e-10)


def test_step_horizon():
    lat = LatticeSpec(1, 2)
    spec = SolverSpec(lat, 1.0, 1.0, 2.0 ** -5, dt=2.0 ** -5)
    f = step(init_field(lat), EnvironmentField(lat, 0), spec)
    with pytest.raises(DomainError):
        step(f, EnvironmentField(lat, 0), spec)


def test_step_matches_evolve():
    lat = LatticeSpec(1, 4)
    spec = SolverSpec(lat, 1.0, 1.0, 0.25, dt=2.0 ** -5)
    env = EnvironmentField(lat, 3)
    f = init_field(lat)
    for _ in range(spec.steps):
        f = step(f, env, spec)
    g = evolve(init_field(lat), env, spec)
    assert np.allclose(f.site_values(), g.site_values(), rtol=1e-12, atol=0)


def test_martingale_mean_one():
    lat = LatticeSpec(1, 20)
    spec = SolverSpec(lat, 0.5, 1.0, 1.0)
    z = partition_function(EnvironmentField.replicas(lat, 4, 10_000), spec)
    assert within(z.mean(), 1.0, z.std(ddof=1) / 100)


@pytest.mark.parametrize("d, beta", [(1, 1.0), (2, 0.7), (3, 0.5)])
def test_martingale_grid_torus(d, beta):
    lat = LatticeSpec(d, 3 if d < 3 else 2, "periodic")
    spec = SolverSpec(lat, beta, 1.0, 1.0, dt=2.0 ** -6)
    z = partition_function(EnvironmentField.replicas(lat, 5, 2000), spec)
    assert within(z.mean(), 1.0, z.std(ddof=1) / np.sqrt(2000))


def test_positivity_where_heat_has_reached():
    lat = LatticeSpec(1, 6)
    spec = SolverSpec(lat, 3.0, 1.0, 2.0, dt=2.0 ** -7)
    env = EnvironmentField.replicas(lat, 6, 20)
    f = evolve(init_field(lat, batch_shape=(20,)), env, spec, until=0.5)
    assert np.all(f.site_values() > 0)


def test_explicit_euler_close_to_exponential_for_small_dt():
    lat = LatticeSpec(1, 6)
    env = EnvironmentField.replicas(lat, 7, 50)
    a = log_partition_function(env, SolverSpec(lat, 0.5, 1.0, 1.0, dt=2.0 ** -10))
    b = log_partition_function(env, SolverSpec(lat, 0.5, 1.0, 1.0, dt=2.0 ** -10, scheme="explicit_euler"))
    assert np.max(np.abs(a - b)) < 0.02


def test_log_rescaling_large_beta_t():
    lat = LatticeSpec(1, 8, "periodic")
    spec = SolverSpec(lat, 4.0, 1.0, 40.0, dt=2.0 ** -8)
    logz = log_partition_function(EnvironmentField.replicas(lat, 8, 2), spec)
    assert np.all(np.isfinite(logz)) and np.all(logz < -10)


def test_series_matches_endpoint():
    lat = LatticeSpec(1, 5)
    spec = SolverSpec(lat, 1.0, 1.0, 2.0, dt=2.0 ** -6)
    env = EnvironmentField.replicas(lat, 9, 3)
    ser = log_partition_series(env, spec, [0.0, 1.0, 2.0])
    assert np.all(ser[:, 0] == 0.0)
    assert np.allclose(ser[:, 2], log_partition_function(env, spec), rtol=0, atol=1e-12)
    short = SolverSpec(lat, 1.0, 1.0, 1.0, dt=2.0 ** -6)
    assert np.allclose(ser[:, 1], log_partition_function(env, short), rtol=0, atol=1e-12)


def test_beta_zero_absorbing_is_survival():
    lat = LatticeSpec(1, 3)
    spec = SolverSpec(lat, 0.0, 1.0, 2.0)
    v = log_partition_function(EnvironmentField(lat, 0), spec)
    assert v == pytest.approx(math.log(survival_mass(spec)), abs=1e-13)
    assert 0 < survival_mass(spec) < 1


def test_dt_convergence_first_order():
    lat = LatticeSpec(1, 6)
    env = EnvironmentField.replicas(lat, 10, 100)
    z = [partition_function(env, SolverSpec(lat, 1.0, 1.0, 1.0, dt=2.0 ** -k)) for k in (5, 6, 7)]
    e1, e2 = np.mean(np.abs(z[0] - z[1])), np.mean(np.abs(z[1] - z[2]))
    assert 1.4 < e1 / e2 < 2.8


def test_field_csv(tmp_path):
    lat = LatticeSpec(1, 2)
    init_field(lat).to_csv(tmp_path / "f.csv")
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0] == "x0,value" and len(lines) == 6 and lines[3] == "0,1.0"


def test_corridor_cells():
    lat = LatticeSpec(1, 8)
    assert np.flatnonzero(corridor_cells(lat, 16, 0)).tolist() == [8, 9, 10, 11]
    assert np.flatnonzero(corridor_cells(lat, 16, -1)).tolist() == [4, 5, 6, 7]


def test_decomposition_exact():
    lat = LatticeSpec(1, 8)
    spec = SolverSpec(lat, 1.0, 1.0, 32.0, dt=2.0 ** -5)
    env = EnvironmentField.replicas(lat, 11, 3)
    labels = list(range(-2, 3))
    parts = evolve_corridors(env, spec, 16, 2, lambda k, p: labels)
    total = np.logaddexp.reduce(np.stack(list(parts.values())), axis=0)
    assert np.allclose(total, log_partition_function(env, spec), rtol=1e-12, atol=0)


def test_restricted_partition_trivial_cases():
    lat = LatticeSpec(1, 3)
    env = EnvironmentField(lat, 12)
    spec = SolverSpec(lat, 1.0, 1.0, 1.0, dt=2.0 ** -5)
    assert restricted_partition(env, spec, [0], 1) > 0
    # a single block: the corridors covering the box add up to Z_T
    one = sum(restricted_partition(env, spec, [z], 1) for z in range(-3, 4))
    assert one == pytest.approx(partition_function(env, spec), rel=1e-12)
    # no mass reaches I_1 when the walk cannot move
    spec16 = SolverSpec(LatticeSpec(1, 8), 1.0, 0.0, 16.0, dt=2.0 ** -4)
    assert restricted_partition(EnvironmentField(LatticeSpec(1, 8), 1), spec16, [1], 16) == 0.0
    with pytest.raises(DomainError):
        restricted_partition(EnvironmentField(LatticeSpec(1, 8), 1), spec16, [5], 16)
