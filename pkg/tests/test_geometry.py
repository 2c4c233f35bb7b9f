import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pamlab.coarse_grain import (
    CoarseGrainSpec,
    CorridorSequence,
    block_volume,
    blocks_for,
    enumerate_corridors,
    prescribed_n_d1,
    prescribed_n_d2,
    smallest_square_at_least,
    tilt_for,
)
from pamlab.env_field import LatticeSpec
from pamlab.errors import CapExceededError, ConfigurationError


@given(st.floats(min_value=0.0, max_value=1e9))
def test_smallest_square(x):
    s = smallest_square_at_least(x)
    k = math.isqrt(s)
    assert k * k == s and s >= x and (k - 1) ** 2 < max(x, 1)


def test_prescribed_n():
    assert prescribed_n_d1(1.0, 2.0, 3.0) == 16
    assert prescribed_n_d1(0.5, 1.0, 1.0) == 16
    assert prescribed_n_d1(0.0, 1.0, 1.0) == math.inf
    assert prescribed_n_d2(1.0, math.log(50.0)) == 64
    assert prescribed_n_d2(0.1, 1.0) == math.inf


def test_spec_defaults_and_validation():
    s = CoarseGrainSpec(1, 16, 2, C1=4.0)
    assert s.delta == pytest.approx(4.0 ** -0.5 * 16 ** -0.75)
    assert s.T == 32 and s.sqrt_n == 4.0
    assert CoarseGrainSpec.with_requested_n(1, 10, 1).n == 16
    for bad in [dict(theta=1.0), dict(theta=0.0), dict(C4=0.0), dict(R=-1), dict(norm="l1")]:
        with pytest.raises(ConfigurationError):
            CoarseGrainSpec(1, 16, 2, **bad)
    with pytest.raises(ConfigurationError):
        CoarseGrainSpec(3, 16, 2)


@pytest.mark.parametrize("d, m, R", [(1, 2, 2), (1, 3, 1), (2, 2, 1)])
def test_enumerate_corridors(d, m, R):
    spec = CoarseGrainSpec(d, 16, m, R=R)
    seqs = enumerate_corridors(spec)
    assert len(seqs) == (2 * R + 1) ** (d * m)
    assert len({s.entries for s in seqs}) == len(seqs)
    assert all(s.max_step() <= R and s.m == m and s.d == d for s in seqs)


def test_corridor_cap():
    with pytest.raises(CapExceededError):
        enumerate_corridors(CoarseGrainSpec(2, 16, 4, R=2, cap=1000))


def test_corridor_sequence():
    z = CorridorSequence((2, -1))
    assert z.with_origin() == ((0,), (2,), (-1,))
    assert z.increments() == [(2,), (-3,)]
    with pytest.raises(ConfigurationError):
        CorridorSequence(((1,), (1, 2)))


def test_blocks_d1():
    spec = CoarseGrainSpec(1, 16, 3, C1=1.5)
    blocks = blocks_for(CorridorSequence((1, -1, 0)), spec)
    assert [b.center for b in blocks] == [(0.0,), (4.0,), (-4.0,)]
    assert [(b.t0, b.t1) for b in blocks] == [(0, 16), (16, 32), (32, 48)]
    # |y - 4| < 6
    assert blocks[1].sites().ravel().tolist() == list(range(-1, 10))
    assert blocks[0].volume() == 16 * 11


def test_blocks_d2_norms():
    e = blocks_for(CorridorSequence(((0, 0),)), CoarseGrainSpec(2, 9, 1, C3=1.0))[0]
    s = blocks_for(CorridorSequence(((0, 0),)), CoarseGrainSpec(2, 9, 1, C3=1.0, norm="sup"))[0]
    # radius 3: lattice points strictly inside the disk and the square
    disk = sum(1 for x in range(-3, 4) for y in range(-3, 4) if x * x + y * y < 9)
    assert e.n_sites() == disk and s.n_sites() == 25
    assert e.contains((2, 2)) and not e.contains((3, 0))


def test_block_volume_clipped_and_tilt():
    spec = CoarseGrainSpec(1, 16, 2, C1=2.0)
    lat = LatticeSpec(1, 6)
    z = CorridorSequence((1, 0))
    assert block_volume(z, spec) == 16 * 15 * 2
    clipped = block_volume(z, spec, lat)
    assert clipped == 16 * (13 + 10)
    tilt = tilt_for(z, spec, lat)
    assert sum(r.volume for r in tilt.regions) == pytest.approx(clipped)
    assert all(r.drift == -spec.delta for r in tilt.regions)
    assert tilt_for(z, spec, lat, sign=1.0).regions[0].drift == spec.delta
    with pytest.raises(ConfigurationError):
        tilt_for(CorridorSequence(((0, 0),)), CoarseGrainSpec(2, 16, 1))
