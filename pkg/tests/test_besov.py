import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import smooth_vector
from nsinflation.besov import (
    BesovIndex,
    ChLIndex,
    LPPartition,
    NormRow,
    Trajectory,
    UnresolvedSupportError,
    besov_norm,
    block_norms,
    chemin_lerner_norm,
    check_resolved,
    cutoff_profile,
    format_exponent,
    lp_block,
    lp_norm,
    parse_descriptor,
    parse_exponent,
    read_norm_csv,
    time_lr_norm,
    write_norm_csv,
)
from nsinflation.lab import make_rng, random_field
from nsinflation.spectral import GridSpec, SpectralField, heat_propagate


def test_cutoff_profile_shape():
    r = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    h = cutoff_profile(r)
    assert h[0] == h[1] == h[2] == 1.0
    assert 0.0 < h[3] < 1.0
    assert h[4] == h[5] == 0.0
    assert np.all(np.diff(cutoff_profile(np.linspace(0, 3, 301))) <= 0)


@settings(max_examples=200, deadline=None)
@given(radius=st.floats(2.0**-6, 2.0**5))
def test_partition_of_unity(radius):
    part = LPPartition(-6, 5)
    assert abs(float(part.partition_sum(radius)) - 1.0) <= 1e-14
    total = sum(float(LPPartition.block_symbol(j, radius)) for j in part.blocks)
    assert abs(total - 1.0) <= 1e-14


@pytest.mark.parametrize("text,value", [("inf", math.inf), ("2", 2.0), (1.5, 1.5), ("Infinity", math.inf)])
def test_parse_exponent(text, value):
    assert parse_exponent(text) == value


def test_parse_exponent_rejects_small():
    with pytest.raises(ValueError):
        parse_exponent(0.5)


@settings(max_examples=50, deadline=None)
@given(
    p=st.sampled_from([1.0, 1.5, 2.0, math.inf]),
    q=st.sampled_from([1.0, 2.0, math.inf]),
    s=st.floats(-3, 3, allow_nan=False).map(lambda x: round(x, 6)),
    r=st.sampled_from([1.0, 4.0, math.inf]),
    T=st.floats(0.5, 1e6),
)
def test_descriptor_round_trip(p, q, s, r, T):
    idx = ChLIndex(r, BesovIndex(p, q, s), 0.0, T)
    d = parse_descriptor(idx.descriptor())
    assert (d["p"], d["q"], d["r"]) == (p, q, r)
    assert d["s"] == pytest.approx(s, abs=1e-12)
    assert d["t_end"] == pytest.approx(T, rel=1e-12)
    assert parse_descriptor(BesovIndex(p, q, s).descriptor() + "@t=4")["t"] == 4.0


def test_partition_for_grid_covers_all_modes():
    grid = GridSpec(4 * math.pi, 64)
    part = LPPartition.for_grid(grid)
    r = grid.kabs[grid.kabs > 0]
    assert np.all(part.covers(r))


def test_single_block_norm_equals_l2():
    grid = GridSpec(16 * math.pi, 128)
    part = LPPartition.for_grid(grid)
    f = random_field(grid, make_rng(0), (0,), "single-block")
    b = block_norms(f, 2, part)
    k = int(np.argmax(b))
    assert part.blocks[k] == 0
    # the block symbol is within 1e-4 of one on the core shell
    assert b[k] == pytest.approx(f.l2_norm(), rel=1e-4)
    others = np.delete(b, k)
    assert float(np.sum(others**2)) < 1e-6 * f.l2_norm() ** 2
    assert besov_norm(f, BesovIndex(2, 1, 1.0), part) == pytest.approx(f.l2_norm(), rel=1e-3)


def test_lp_norm_p2_matches_quadrature(plain_grid, rng):
    f = smooth_vector(plain_grid, rng)
    quad = lp_norm(f, 2.000000001)
    assert quad == pytest.approx(lp_norm(f, 2), rel=1e-6)
    assert lp_norm(f, math.inf) > 0


def test_block_norms_l2_match_explicit_blocks(plain_grid, rng):
    part = LPPartition.for_grid(plain_grid)
    f = smooth_vector(plain_grid, rng)
    b = block_norms(f, 2, part)
    explicit = [lp_block(f, int(j), part).l2_norm() for j in part.blocks]
    assert np.allclose(b, explicit, rtol=1e-12, atol=1e-14 * max(explicit))


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(1e-3, 1e3), s=st.floats(-2, 2))
def test_besov_homogeneity(scale, s):
    grid = GridSpec(4 * math.pi, 32)
    part = LPPartition.for_grid(grid)
    f = smooth_vector(grid, np.random.default_rng(3))
    idx = BesovIndex(2, 1, s)
    assert besov_norm(f * scale, idx, part) == pytest.approx(scale * besov_norm(f, idx, part), rel=1e-12)


def test_unresolved_support_is_rejected():
    grid = GridSpec(4 * math.pi, 64)
    part = LPPartition(-1, 1)
    c = np.zeros(grid.vector_shape(), np.complex128)
    c[0, 0, 40 % 64, 0] = 1.0  # |xi| = 10 lies above block 1
    f = SpectralField(grid, c)
    with pytest.raises(UnresolvedSupportError):
        check_resolved(f, part)
    with pytest.raises(UnresolvedSupportError):
        block_norms(f, 2, part)


def test_time_lr_norm_constant_series():
    t = np.linspace(0, 4, 9)
    v = np.full((9, 2), 3.0)
    assert np.allclose(time_lr_norm(t, v, 2, 0, 4), 3.0 * 2.0)
    assert np.allclose(time_lr_norm(t, v, math.inf, 0, 4), 3.0)
    assert np.allclose(time_lr_norm(t, v, 1, 1.25, 3.0), 3.0 * 1.75)
    with pytest.raises(ValueError):
        time_lr_norm(t, v, 2, 0, 5)


def test_chemin_lerner_of_heat_flow_is_initial_norm():
    grid = GridSpec(8 * math.pi, 64)
    part = LPPartition.for_grid(grid)
    f = random_field(grid, make_rng(1), (-1, 0))
    times = np.array([0.0, 0.1, 1.0, 10.0])
    traj = Trajectory(grid, times, tuple(heat_propagate(f, t) for t in times))
    idx = ChLIndex(math.inf, BesovIndex(2, 1, 0.0), 0.0, 10.0)
    assert chemin_lerner_norm(traj, idx, part) == pytest.approx(besov_norm(f, idx.besov, part), rel=1e-14)


def test_trajectory_validation(plain_grid):
    z = SpectralField.zeros(plain_grid)
    with pytest.raises(ValueError):
        Trajectory(plain_grid, np.array([0.1, 1.0]), (z, z))
    with pytest.raises(ValueError):
        Trajectory(plain_grid, np.array([0.0, 1.0]), (z,))
    traj = Trajectory(plain_grid, np.array([0.0, 1.0, 2.0]), (z, z, z))
    assert len(traj.restrict(1.0)) == 2
    with pytest.raises(ValueError):
        traj.at(0.5)


def test_norm_csv_round_trip():
    rows = [
        NormRow("a", "besov", 2.0, 1.0, 0.0, None, None, None, 0.25),
        NormRow("b", "chemin-lerner", 1.5, math.inf, -0.5, math.inf, 0.0, 64.0, 1e-3),
    ]
    text = write_norm_csv(rows)
    assert read_norm_csv(text) == rows
    assert "inf" in text
    assert format_exponent(math.inf) == "inf"
