"""Exact identities of the toolkit, each measured as an error against a tolerance."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .besov import LPPartition, block_norms
from .construction import (
    ForceParams,
    lower_bound_profile,
    make_force,
    principal_parts,
    profile_self_convolution,
)
from .duhamel import TimeGrid, constant_duhamel, duhamel_of
from .lab import make_rng, measure_paraproduct_pieces, paraproduct_reconstruction_error, random_scalar_field
from .report import atomic_write_text
from .solver import GridPolicy
from .spectral import (
    GridSpec,
    ScalarSpectralField,
    SpectralField,
    advection_coeffs,
    divergence,
    gradient,
    heat_propagate,
    helmholtz_project,
)

__all__ = [
    "CheckResult",
    "partition_of_unity_error",
    "helmholtz_errors",
    "heat_semigroup_error",
    "constant_duhamel_error",
    "split_identity_errors",
    "lower_bound_formula_error",
    "profile_convolution_floor",
    "paraproduct_errors",
    "horizon_root",
    "run_identity_checks",
    "CHECK_CSV_COLUMNS",
    "write_check_csv",
]

CHECK_CSV_COLUMNS = ("check", "value", "tolerance", "relation", "passed")


@dataclass(frozen=True)
class CheckResult:
    """One measured identity.

    ``relation`` is ``"<="`` for error checks and ``">="`` for floors.
    """

    name: str
    value: float
    tolerance: float
    relation: str = "<="

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        if self.relation == "<=":
            return self.value <= self.tolerance
        return self.value >= self.tolerance

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {self.value:.3e} {self.relation} {self.tolerance:.3e}"


def _random_vector(grid: GridSpec, rng: np.random.Generator, width: float = 1.0) -> SpectralField:
    """Smooth random vector field, not divergence free, Gaussian envelope of ``width``."""
    shape = grid.vector_shape()
    c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    c *= np.exp(-grid.ksq / (2 * width**2))[:, None]
    return SpectralField(grid, c)


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.linalg.norm(b))
    err = float(np.linalg.norm(a - b))
    return err / scale if scale > 0 else err


def partition_of_unity_error(grid: GridSpec, partition: LPPartition | None = None) -> float:
    """``max |sum_j phi_j(xi) - 1|`` over stored frequencies inside the cover range."""
    partition = partition or LPPartition.for_grid(grid)
    r = grid.kabs
    inside = partition.covers(r)
    total = partition.partition_sum(r)
    return float(np.max(np.abs(total[inside] - 1.0))) if inside.any() else 0.0


def helmholtz_errors(grid: GridSpec, seed: int = 0) -> tuple[float, float, float]:
    """Relative errors of ``P P f = P f``, ``P grad g = 0`` and ``div P f = 0``."""
    rng = make_rng(seed, 10)
    width = 0.25 * grid.envelope_bandwidth
    f = _random_vector(grid, rng, width)
    pf = helmholtz_project(f)
    idem = _rel(helmholtz_project(pf).coeffs, pf.coeffs)
    c = rng.standard_normal(grid.scalar_shape()) + 1j * rng.standard_normal(grid.scalar_shape())
    c *= np.exp(-grid.ksq / (2 * width**2))
    grad = gradient(ScalarSpectralField(grid, c))
    annih = float(np.linalg.norm(helmholtz_project(grad).coeffs)) / float(np.linalg.norm(grad.coeffs))
    div = float(np.linalg.norm(divergence(pf).coeffs)) / (float(np.linalg.norm(pf.coeffs)) * grid.max_frequency)
    return idem, annih, div


def heat_semigroup_error(grid: GridSpec, t: float = 0.3, s: float = 0.7, seed: int = 0) -> float:
    """Relative error of ``e^{(t+s) Delta} f = e^{t Delta} e^{s Delta} f``."""
    f = _random_vector(grid, make_rng(seed, 11), 0.25 * grid.envelope_bandwidth)
    a = heat_propagate(f, t + s)
    b = heat_propagate(heat_propagate(f, s), t)
    return _rel(b.coeffs, a.coeffs)


def constant_duhamel_error(grid: GridSpec, t: float = 5.0, seed: int = 0, K: int = 24) -> float:
    """Quadrature of a constant forcing against ``(-Delta)^{-1}(1 - e^{t Delta}) P F``."""
    f = helmholtz_project(_random_vector(grid, make_rng(seed, 12), 0.25 * grid.envelope_bandwidth))
    g = np.array(f.coeffs)
    tg = TimeGrid.geometric(t, 0.5, K)
    quad = duhamel_of(grid, tg.nodes, lambda i: g)
    return _rel(quad, constant_duhamel(grid, g, t))


def split_identity_errors(
    params: ForceParams, grid: GridSpec, t: float | None = None, time_grid: TimeGrid | None = None
) -> dict[int, float]:
    """Per-block relative ``L2`` error between the quadrature self-interaction and ``u211 + u212``.

    The self-interaction ``D[Ft, Ft](t)`` is integrated on ``time_grid``
    (geometric by default); every block ``j <= 0`` carrying energy is compared.
    """
    t = params.T if t is None else t
    time_grid = time_grid or TimeGrid.geometric(t, 0.5, 4 * params.N + 16)
    _, ft = make_force(params, grid)
    g = -advection_coeffs(grid, ft.coeffs)
    quad = SpectralField(grid, duhamel_of(grid, time_grid.nodes, lambda i: g, t), _checked=True)
    u211, u212 = principal_parts(params, grid, t)
    closed = u211 + u212
    partition = LPPartition.for_grid(grid)
    bq = block_norms(quad - closed, 2.0, partition, check=False)
    bc = block_norms(closed, 2.0, partition, check=False)
    floor = 1e-14 * float(bc.max())
    out = {}
    for k, j in enumerate(partition.blocks):
        if j <= 0 and bc[k] > floor:
            out[int(j)] = float(bq[k] / bc[k])
    return out


def lower_bound_formula_error(
    params: ForceParams, grid: GridSpec, blocks: Sequence[int] = (-4, -3, -2), times: Sequence[float] | None = None
) -> float:
    """Worst pointwise relative mismatch of the sector formula over ``blocks x times``."""
    times = (1.0, params.T) if times is None else times
    worst = 0.0
    for j in blocks:
        for t in times:
            worst = max(worst, lower_bound_profile(params, grid, j, t, check=False).max_rel_error)
    return worst


def profile_convolution_floor(grid: GridSpec, radius: float = 0.25) -> float:
    """``min (Psi^ * Psi^)(xi)`` over stored frequencies with ``|xi| <= radius``."""
    conv = profile_self_convolution(grid)
    mask = grid.kabs[0] <= radius
    return float(conv[mask].min())


def paraproduct_errors(grid: GridSpec, pairs: int = 100, seed: int = 0, blocks=(-2, -1, 0, 1)) -> np.ndarray:
    """Reconstruction errors of the paraproduct split on random scalar pairs."""
    rng = make_rng(seed, 13)
    partition = LPPartition.for_grid(grid)
    out = np.empty(pairs)
    for k in range(pairs):
        f = random_scalar_field(grid, rng, blocks)
        g = random_scalar_field(grid, rng, blocks)
        pieces = measure_paraproduct_pieces(f, g, partition, rtol=math.inf)
        out[k] = paraproduct_reconstruction_error(f, g, pieces)
    return out


def horizon_root(N: int) -> float:
    """``T_N^(1/N)`` for the horizon ``T_N = 4^N``."""
    return ForceParams(N=N).T ** (1.0 / N)


def run_identity_checks(
    p: float = 2.0,
    delta: float = 0.1,
    N: int = 3,
    M: float = 10.0,
    plain_points: int = 128,
    pairs: int = 30,
    seed: int = 0,
    grid: GridSpec | None = None,
) -> list[CheckResult]:
    """The identity suite at a configurable (small by default) scale.

    ``grid`` is the carrier-harmonic grid used for the construction checks;
    it defaults to :class:`~nsinflation.solver.GridPolicy` at ``N``.
    """
    plain = GridSpec(8 * math.pi, plain_points)
    params = ForceParams(p, delta, N, M)
    hgrid = grid or GridPolicy().grid_for(N, M)[0]
    idem, annih, div = helmholtz_errors(plain, seed)
    split = split_identity_errors(params, hgrid)
    blocks = [j for j in (-4, -3, -2) if j >= -N]
    out = [
        CheckResult("partition_of_unity", partition_of_unity_error(plain), 1e-14),
        CheckResult("helmholtz_idempotence", idem, 1e-12),
        CheckResult("helmholtz_annihilates_gradients", annih, 1e-12),
        CheckResult("helmholtz_divergence_free", div, 1e-12),
        CheckResult("heat_semigroup", heat_semigroup_error(plain, seed=seed), 1e-13),
        CheckResult("constant_force_duhamel", constant_duhamel_error(plain, seed=seed), 1e-8),
        CheckResult("second_iterate_split", max(split.values()), 1e-8),
        CheckResult("lower_bound_formula", lower_bound_formula_error(params, hgrid, blocks), 1e-10),
        CheckResult("profile_convolution_floor", profile_convolution_floor(hgrid), math.pi / 4 * 0.99, ">="),
        CheckResult("paraproduct_reconstruction", float(paraproduct_errors(plain, pairs, seed).max()), 1e-10),
        CheckResult("horizon_root", abs(horizon_root(N) - 4.0), 1e-12),
    ]
    return out


def write_check_csv(results: Sequence[CheckResult], path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CHECK_CSV_COLUMNS)
    for r in results:
        w.writerow([r.name, repr(float(r.value)), repr(float(r.tolerance)), r.relation, "1" if r.passed else "0"])
    text = buf.getvalue()
    if path is not None:
        atomic_write_text(path, text)
    return text
