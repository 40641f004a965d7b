"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Tolerances are pinned as module constants.  The expensive inflation runs are
shared through session fixtures, so the whole file takes roughly a quarter of
an hour on one core.
"""

import math
import time

import numpy as np
import pytest

from nsinflation.besov import BesovIndex, ChLIndex, LPPartition, Trajectory, besov_norm, chemin_lerner_norm
from nsinflation.checks import (
    constant_duhamel_error,
    heat_semigroup_error,
    helmholtz_errors,
    lower_bound_formula_error,
    paraproduct_errors,
    partition_of_unity_error,
    profile_convolution_floor,
    split_identity_errors,
)
from nsinflation.construction import ForceParams, make_force
from nsinflation.lab import measure_bilinear_duhamel_variants, measure_perturbation_ensemble
from nsinflation.solver import (
    GridPolicy,
    TimePolicy,
    find_delta_star,
    inflation_experiment,
    ln_index,
    run_inflation_case,
)
from nsinflation.spectral import GridSpec

pytestmark = pytest.mark.acceptance

P, DELTA, M = 2.0, 0.1, 10.0

TOL_PARTITION = 1e-14
TOL_HELMHOLTZ = 1e-12
TOL_HEAT = 1e-13
TOL_CONSTANT_DUHAMEL = 1e-8
RUNTIME_IDENTITIES = 30.0
TOL_SPLIT = 1e-8
RUNTIME_SPLIT = 120.0
TOL_LOWER_BOUND = 1e-10
CONVOLUTION_FLOOR = math.pi / 4 * (1 - 0.01)
TOL_FORCE_SCALING = 0.01
TOL_HORIZON_ROOT = 1e-12
INFLATION_BAND = 2.0
TOL_FORCE_DECAY = 0.01
RUNTIME_INFLATION = 20 * 60.0
QUADRATIC_SLOPE, QUADRATIC_SLACK = 2.0, 0.2
CUBIC_SLOPE, CUBIC_SLACK = 3.0, 0.3
REMAINDER_RATIO_BAND = 2.0
CONTRACTION_TARGET = 0.5
DIVERGENCE_FACTOR = 10.0
PERTURBATION_SPREAD = 0.15
LEMMA_BAND = 2.0
TOL_PARAPRODUCT = 1e-10
TOL_DISCRETIZATION = 0.02


def verdict(capsys, criterion: int, name: str, passed: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\n{'PASS' if passed else 'FAIL'} criterion {criterion} {name}: {detail}")


def quantities(case) -> dict[str, float]:
    return {k: v for k, (_, v) in case.quantities().items()}


def log_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@pytest.fixture(scope="session")
def inflation_runs():
    """Default-policy runs at ``delta = 0.1`` for ``N = 3..6`` with their wall time."""
    start = time.perf_counter()
    cases = inflation_experiment(P, DELTA, [3, 4, 5, 6])
    return {c.N: c for c in cases}, time.perf_counter() - start


@pytest.fixture(scope="session")
def delta_runs(inflation_runs):
    """``N = 4`` runs at three amplitudes, the largest shared with the inflation runs."""
    cases = {DELTA: inflation_runs[0][4]}
    for d in (0.025, 0.05):
        (cases[d],) = inflation_experiment(P, d, [4])
    return cases


def test_spectral_identities(capsys):
    start = time.perf_counter()
    grid = GridSpec(8 * math.pi, 512)
    part = partition_of_unity_error(grid)
    idem, annih, _ = helmholtz_errors(grid)
    heat = heat_semigroup_error(grid)
    const = constant_duhamel_error(grid)
    elapsed = time.perf_counter() - start
    passed = (
        part <= TOL_PARTITION
        and max(idem, annih) <= TOL_HELMHOLTZ
        and heat <= TOL_HEAT
        and const <= TOL_CONSTANT_DUHAMEL
        and elapsed < RUNTIME_IDENTITIES
    )
    verdict(
        capsys, 1, "spectral identities", passed,
        f"partition {part:.1e}, helmholtz {idem:.1e}/{annih:.1e}, heat {heat:.1e}, "
        f"constant duhamel {const:.1e}, {elapsed:.1f} s",
    )
    assert passed


def test_second_iterate_split(capsys):
    start = time.perf_counter()
    grid, _ = GridPolicy().grid_for(4, M)
    errs = split_identity_errors(ForceParams(P, DELTA, 4, M), grid)
    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    passed = worst <= TOL_SPLIT and elapsed < RUNTIME_SPLIT and min(errs) <= -4
    verdict(
        capsys, 2, "second-iterate split", passed,
        f"max block error {worst:.1e} over j={min(errs)}..{max(errs)}, grid {grid.points_per_dim} points, {elapsed:.1f} s",
    )
    assert passed


def test_lower_bound_formula(capsys):
    params = ForceParams(P, DELTA, 4, M)
    grid, _ = GridPolicy().grid_for(4, M)
    err = lower_bound_formula_error(params, grid, (-4, -3, -2), (1.0, params.T))
    floor = profile_convolution_floor(grid, 2.0**-2)
    passed = err <= TOL_LOWER_BOUND and floor >= CONVOLUTION_FLOOR
    verdict(capsys, 3, "lower-bound formula", passed, f"max error {err:.1e}, convolution floor {floor:.4f}")
    assert passed


def constant_trajectory_root(N: int) -> float:
    """Chemin-Lerner ``L~^N`` norm of a constant trajectory over ``[0, T_N]`` divided by its Besov norm."""
    from nsinflation.spectral import SpectralField, helmholtz_project

    grid = GridSpec(4 * math.pi, 32)
    rng = np.random.default_rng(7)
    c = rng.standard_normal(grid.vector_shape()) + 1j * rng.standard_normal(grid.vector_shape())
    c *= np.exp(-grid.ksq / 2)[:, None]
    f = helmholtz_project(SpectralField(grid, c))
    T = ForceParams(N=N).T
    idx = BesovIndex(P, 1, 0.0)
    partition = LPPartition.for_grid(grid)
    traj = Trajectory(grid, np.array([0.0, T]), (f, f))
    return chemin_lerner_norm(traj, ChLIndex(N, idx, 0.0, T), partition) / besov_norm(f, idx, partition)


def test_force_scaling(capsys):
    scaled = []
    for N in range(3, 9):
        grid, _ = GridPolicy().grid_for(N, M)
        F, _ = make_force(ForceParams(P, DELTA, N, M), grid)
        scaled.append(besov_norm(F, BesovIndex(P, 1, 2 / P - 3), LPPartition.for_grid(grid)) * math.sqrt(N))
    spread = max(scaled) / min(scaled) - 1
    root_err = max(abs(constant_trajectory_root(N) - 4.0) for N in range(3, 11))
    passed = spread <= TOL_FORCE_SCALING and root_err <= TOL_HORIZON_ROOT
    verdict(
        capsys, 4, "force scaling", passed,
        f"sqrt(N) force spread {spread:.1e} over N=3..8, horizon root error {root_err:.1e}",
    )
    assert passed


def test_inflation_signature(capsys, inflation_runs):
    cases, elapsed = inflation_runs
    Ns = sorted(cases)
    q = {N: quantities(cases[N]) for N in Ns}
    force = [q[N]["force_norm"] for N in Ns]
    terminal = [q[N]["u_terminal"] for N in Ns]
    ratio = [t / f for t, f in zip(terminal, force)]
    band = max(terminal) / min(terminal)
    decay = force[0] / force[-1]
    passed = (
        band <= INFLATION_BAND
        and all(a > b for a, b in zip(force, force[1:]))
        and abs(decay / math.sqrt(Ns[-1] / Ns[0]) - 1) <= TOL_FORCE_DECAY
        and all(a < b for a, b in zip(ratio, ratio[1:]))
        and not any(c.state.diverged for c in cases.values())
        and elapsed < RUNTIME_INFLATION
    )
    reduced = [N for N in Ns if cases[N].reduced]
    verdict(
        capsys, 5, "inflation signature", passed,
        f"terminal {', '.join(f'{t:.4f}' for t in terminal)} (band {band:.3f}), force decay {decay:.4f}, "
        f"ratio {', '.join(f'{r:.3f}' for r in ratio)}, reduced N {reduced}, {elapsed:.0f} s",
    )
    assert passed


def test_quadratic_law(capsys, delta_runs):
    deltas = sorted(delta_runs)
    principal = [quantities(delta_runs[d])["u2_terminal"] for d in deltas]
    slope = log_slope(deltas, principal)
    passed = abs(slope - QUADRATIC_SLOPE) <= QUADRATIC_SLACK
    verdict(capsys, 6, "quadratic law", passed, f"second-iterate terminal slope {slope:.4f} over delta {deltas}")
    assert passed


def test_remainder_smallness(capsys, delta_runs, inflation_runs):
    deltas = sorted(delta_runs)
    w = [quantities(delta_runs[d])["w_linfty"] for d in deltas]
    slope = log_slope(deltas, w)
    cases = dict(inflation_runs[0])
    (cases[8],) = inflation_experiment(P, DELTA, [8])
    ratios = {}
    for N in (4, 6, 8):
        st = cases[N].state
        ratios[N] = math.sqrt(N) * st.chemin_lerner("w", ln_index(P, N, cases[N].params.T)) / st.linfty("w")
    band = max(ratios.values()) / min(ratios.values())
    passed = abs(slope - CUBIC_SLOPE) <= CUBIC_SLACK and band <= REMAINDER_RATIO_BAND
    verdict(
        capsys, 7, "remainder smallness", passed,
        f"remainder slope {slope:.4f}, scaled L~^N / L~^inf ratio "
        f"{', '.join(f'N={N}: {r:.2f}' for N, r in ratios.items())} (band {band:.3f})",
    )
    assert passed


def test_contraction_diagnostics(capsys):
    policy = GridPolicy(box_offset=0)
    scan = find_delta_star(P, 3, grid_policy=policy)
    grid, _ = policy.grid_for(3, M)
    params = ForceParams(P, DIVERGENCE_FACTOR * scan.delta_star, 3, M)
    blown = run_inflation_case(params, grid, TimePolicy().grid_for(3, params.T)).state
    below = [r for d, r, _ in scan.samples if d <= scan.delta_star]
    passed = max(below) <= CONTRACTION_TARGET and blown.diverged and not blown.converged
    verdict(
        capsys, 8, "contraction diagnostics", passed,
        f"delta* = {scan.delta_star:.4f} (ratio {scan.ratio_at_star:.3f}, {len(scan.samples)} probes), "
        f"at {DIVERGENCE_FACTOR:g} delta* ratio {blown.contraction_ratio_estimate:.2e}, diverged {blown.diverged}",
    )
    assert passed


def test_perturbation_solver(capsys):
    ens = measure_perturbation_ensemble(samples=20)
    passed = (
        ens.spread <= PERTURBATION_SPREAD
        and bool(np.all(ens.initial_errors == 0.0))
        and bool(np.all(ens.converged))
        and not np.any(ens.diverged)
    )
    verdict(
        capsys, 9, "perturbation solver", passed,
        f"K2 {ens.constant:.6f}, spread {ens.spread:.1e} over {ens.ratios.size} samples, "
        f"max v(0)+U error {float(np.max(ens.initial_errors)):.1e}",
    )
    assert passed


def test_lemma_constant_stability(capsys):
    maxima = {}
    for N in range(4, 11):
        maxima[N] = measure_bilinear_duhamel_variants(P, N, ("Linfty-target",))["Linfty-target"].max_ratio
    band = max(maxima.values()) / min(maxima.values())
    para = float(paraproduct_errors(GridSpec(8 * math.pi, 128), pairs=100).max())
    passed = band <= LEMMA_BAND and para <= TOL_PARAPRODUCT
    verdict(
        capsys, 10, "lemma constant stability", passed,
        f"bilinear max ratio {', '.join(f'N={N}: {v:.5f}' for N, v in maxima.items())} (band {band:.3f}), "
        f"paraproduct {para:.1e} on 100 pairs",
    )
    assert passed


def test_discretization_robustness(capsys, inflation_runs):
    base = quantities(inflation_runs[0][4])
    variants = {"box": GridPolicy(box_offset=3), "resolution": GridPolicy(harmonics=5)}
    worst = {}
    for name, policy in variants.items():
        (case,) = inflation_experiment(P, DELTA, [4], grid_policy=policy)
        q = quantities(case)
        worst[name] = max(abs(q[k] / base[k] - 1) for k in base)
    passed = max(worst.values()) < TOL_DISCRETIZATION
    verdict(
        capsys, 11, "discretization robustness", passed,
        ", ".join(f"doubled {k}: max relative change {v:.1e}" for k, v in worst.items()),
    )
    assert passed
