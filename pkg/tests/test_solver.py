import math

import numpy as np
import pytest

from conftest import smooth_scalar, smooth_vector
from nsinflation.besov import Trajectory
from nsinflation.construction import ForceParams
from nsinflation.duhamel import TimeGrid
from nsinflation.solver import (
    GridPolicy,
    InflationCase,
    StationaryCandidate,
    TimePolicy,
    _assess,
    coincidence_check,
    inflation_experiment,
    remainder_map,
    remainder_map_terms,
    run_inflation_case,
    sample_on,
    solve_mild_ns,
    solve_perturbation,
)
from nsinflation.spectral import GridSpec, SpectralField, gradient, heat_propagate, helmholtz_project
from nsinflation.report import VOCABULARY


@pytest.fixture(scope="module")
def case3() -> InflationCase:
    params = ForceParams(2.0, 0.1, 3, 10.0)
    grid, reduced = GridPolicy(box_offset=0).grid_for(3, 10.0)
    return run_inflation_case(params, grid, TimePolicy().grid_for(3, params.T), reduced=reduced)


def test_grid_policy_sizes():
    grid, reduced = GridPolicy().grid_for(4, 10.0)
    assert grid.points_per_dim == 512 and grid.box_half_length == pytest.approx(64 * math.pi)
    assert not reduced
    grid, reduced = GridPolicy().grid_for(6, 10.0)
    assert grid.points_per_dim == 1024 and reduced
    fixed, _ = GridPolicy(points=64, box_half_length=8 * math.pi).grid_for(5, 10.0)
    assert fixed.points_per_dim == 64
    with pytest.raises(ValueError):
        GridPolicy(points=64).grid_for(3, 10.0)


def test_time_policy():
    tg = TimePolicy(0.5, 4, 16).grid_for(3, 64.0)
    assert tg.K == 28 and tg.horizon == 64.0


def test_zero_force_gives_zero_solution():
    grid = GridSpec(4 * math.pi, 32)
    F = SpectralField.zeros(grid)
    st = solve_mild_ns(F, grid, TimeGrid.geometric(16.0, 0.5, 8))
    assert st.converged and not st.diverged
    assert st.terminal.norm_coeffs() == 0.0


def test_inflation_case_reports_vocabulary(case3):
    q = case3.quantities()
    assert tuple(q) == VOCABULARY
    assert all(math.isfinite(v) for _, v in q.values())
    st = case3.state
    assert st.converged and not st.diverged
    assert st.contraction_ratio_estimate < 0.5
    assert q["u_terminal"][0].endswith("@t=64")


def test_decomposition_is_consistent(case3):
    d = case3.decomposition()
    # u2 = u21 + u22 and final = u1 + u2 + w; the triangle inequality must hold
    assert d["final_terminal"][1] <= d["u1_terminal"][1] + d["u2_terminal"][1] + d["w_terminal"][1] + 1e-15
    assert d["u2_terminal"][1] <= d["u21_terminal"][1] + d["u22_terminal"][1] + 1e-15
    # the principal part carries the second iterate at the horizon
    assert d["u211_terminal"][1] == pytest.approx(d["u2_terminal"][1], rel=0.05)
    assert d["w_linfty"][1] < 1e-3 * d["u2_linfty"][1]


def test_remainder_map_terms_sum(plain_grid, rng):
    u1, u2, w = (helmholtz_project(smooth_vector(plain_grid, rng)) * 0.1 for _ in range(3))
    total = sum(remainder_map_terms(u1, u2, w))
    assert np.max(np.abs(total - remainder_map(u1, u2, w))) <= 1e-13 * np.max(np.abs(total))


def test_stationary_candidate_requires_divergence_free(plain_grid, rng):
    U = helmholtz_project(smooth_vector(plain_grid, rng))
    StationaryCandidate(U, "synthetic")
    g = gradient(smooth_scalar(plain_grid, rng))
    with pytest.raises(ValueError):
        StationaryCandidate(g, "synthetic")
    with pytest.raises(ValueError):
        StationaryCandidate(U, "unknown-source")


def test_perturbation_initial_value_is_exact():
    grid = GridSpec(8 * math.pi, 32)
    U = helmholtz_project(smooth_vector(grid, np.random.default_rng(2), 0.5)) * 1e-3
    tg = TimeGrid.geometric(256.0, 0.5, 16)
    st = solve_perturbation(StationaryCandidate(U, "synthetic"), grid, tg, keep_fields=True)
    assert st.converged
    assert np.max(np.abs(st.iterate.fields[0].coeffs + U.coeffs)) == 0.0
    # for tiny U the perturbation follows the heat flow of -U up to quadratic terms
    linear = heat_propagate(U, tg.horizon)
    assert np.max(np.abs(st.iterate.fields[-1].coeffs + linear.coeffs)) < 1e-2 * U.norm_coeffs()


def test_coincidence_and_sampling(plain_grid, rng):
    f = helmholtz_project(smooth_vector(plain_grid, rng))
    times = np.array([0.0, 1.0, 2.0])
    a = Trajectory(plain_grid, times, (f, f, f))
    assert coincidence_check(a, a) == 0.0
    sub = sample_on(a, np.array([0.0, 2.0]))
    assert len(sub) == 2
    b = Trajectory(plain_grid, times, (f, f * 2.0, f))
    assert coincidence_check(a, b) > 0


def test_assess_flags():
    conv, div, iters, ratio = _assess(np.array([1e-2, 1e-4, 1e-6, 1e-8, 1e-11]), 1e-10, 1.0, False)
    assert conv and not div and iters == 5 and ratio == pytest.approx(1e-2, rel=0.5)
    conv, div, _, ratio = _assess(np.array([1e-1, 2e-1, 4e-1]), 1e-10, 1.0, False)
    assert not conv and div and ratio == pytest.approx(2.0)
    conv, div, _, _ = _assess(np.array([1e-1, 1e-2, 1e-3]), 1e-10, 1.0, False)
    assert (conv, div) == (False, False)
    conv, div, _, _ = _assess(np.array([1e-1, np.inf]), 1e-10, 1.0, True)
    assert not conv and div


def test_divergence_is_flagged_for_large_forcing():
    params = ForceParams(2.0, 20.0, 3, 10.0)
    grid, _ = GridPolicy(box_offset=0).grid_for(3, 10.0)
    case = run_inflation_case(params, grid, TimePolicy().grid_for(3, params.T), max_iter=6)
    assert case.state.diverged and not case.state.converged


def test_inflation_experiment_rejects_bad_n():
    with pytest.raises(ValueError):
        inflation_experiment(2.0, 0.1, [2])


def test_find_delta_star_brackets_half_ratio():
    from nsinflation.solver import find_delta_star

    scan = find_delta_star(2.0, 3, lo=0.5, hi=10.0, rtol=0.2, grid_policy=GridPolicy(box_offset=0), max_iter=4)
    assert scan.ratio_at_star <= 0.5
    assert any(r > 0.5 and d <= scan.delta_star * 1.2 + 1e-12 for d, r, _ in scan.samples)
    with pytest.raises(ValueError):
        find_delta_star(2.0, 3, lo=10.0, hi=20.0, grid_policy=GridPolicy(box_offset=0), max_iter=4)
