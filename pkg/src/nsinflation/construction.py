"""Oscillating forcing sequence, its first two Picard iterates and the lower-bound data.

The force is ``F = -Delta Ft`` with

    Ft = (delta / sqrt(N)) * perp_grad(Psi(x) cos(M x1)),

where ``Psi`` has Fourier transform ``h(|xi|)`` (the Littlewood-Paley cutoff).
The horizon for parameter ``N`` is ``T_N = 2^(2N)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .besov import LPPartition, cutoff_profile, lp_block, lp_norm
from .duhamel import TimeGrid, constant_duhamel, duhamel_of
from .spectral import (
    GridSpec,
    ScalarSpectralField,
    SpectralField,
    advection_coeffs,
    cos_modulate,
    helmholtz_project,
    inverse_laplacian,
    laplacian,
    perp_gradient,
    pointwise_product,
)

__all__ = [
    "ForceParams",
    "SecondIterateSplit",
    "LowerBoundProfile",
    "ConsistencyError",
    "make_profile",
    "make_force",
    "first_iterate",
    "second_iterate",
    "second_iterate_principal",
    "self_interaction",
    "profile_self_convolution",
    "sector_mask",
    "lower_bound_profile",
    "principal_lower_sum",
    "default_time_grid",
]


class ConsistencyError(AssertionError):
    """Two routes to the same quantity disagree beyond tolerance."""


@dataclass(frozen=True)
class ForceParams:
    """Parameters of the forcing sequence.

    ``delta = 0`` is accepted and gives the zero force.
    """

    p: float = 2.0
    delta: float = 0.1
    N: int = 3
    M: float = 10.0

    def __post_init__(self) -> None:
        if not 1.0 <= float(self.p) <= 2.0:
            raise ValueError(f"p must lie in [1, 2], got {self.p}")
        if not float(self.delta) >= 0.0:
            raise ValueError(f"delta must be nonnegative, got {self.delta}")
        if int(self.N) != self.N or self.N < 3:
            raise ValueError(f"N must be an integer >= 3, got {self.N}")
        if not float(self.M) >= 10.0:
            raise ValueError(f"M must be >= 10, got {self.M}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def T(self) -> float:
        """Horizon ``2^(2N)``."""
        return float(4**self.N)

    @property
    def amplitude(self) -> float:
        return self.delta / math.sqrt(self.N)

    @property
    def critical_s(self) -> float:
        """Regularity ``2/p - 1`` of the solution space."""
        return 2.0 / self.p - 1.0


def make_profile(grid: GridSpec) -> ScalarSpectralField:
    """``Psi`` with ``Psi^(xi) = h(|xi|)``: coefficients ``h(|xi|) / (2L)^2`` in harmonic 0."""
    if not grid.resolves(2.0):
        raise ValueError("grid does not resolve the profile support |xi| <= 2")
    c = np.zeros(grid.scalar_shape(), np.complex128)
    c[0] = cutoff_profile(grid.kabs[0]) / (2 * grid.box_half_length) ** 2
    return ScalarSpectralField(grid, c)


def _check_force_grid(params: ForceParams, grid: GridSpec) -> None:
    if grid.is_plain:
        if not grid.resolves(params.M + 2.0):
            raise ValueError(f"grid does not resolve the force support |xi| <= {params.M + 2}")
    else:
        if not math.isclose(grid.carrier, params.M, rel_tol=1e-12):
            raise ValueError("harmonic grid carrier must equal M")
        if grid.harmonics < 1 or not grid.resolves(2.0):
            raise ValueError("harmonic grid must store harmonic 1 with envelope radius 2")


def make_force(params: ForceParams, grid: GridSpec) -> tuple[SpectralField, SpectralField]:
    """Return ``(F, Ft)`` with ``F = -Delta Ft``."""
    _check_force_grid(params, grid)
    g = cos_modulate(make_profile(grid), params.M)
    ft = perp_gradient(g) * params.amplitude
    return -laplacian(ft), ft


def first_iterate(params: ForceParams, grid: GridSpec, t: float, check: bool = True) -> SpectralField:
    """``(1 - e^{t Delta}) Ft``.

    With ``check`` the result is compared with ``(-Delta)^{-1}(1 - e^{t Delta}) P F``
    and :class:`ConsistencyError` is raised beyond ``1e-12`` relative.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    F, ft = make_force(params, grid)
    mult = -np.expm1(-t * grid.ksq)[:, None]
    u1 = SpectralField(grid, ft.coeffs * mult, _checked=True)
    if check:
        other = inverse_laplacian(SpectralField(grid, helmholtz_project(F).coeffs * mult, _checked=True))
        scale = max(u1.norm_coeffs(), 1e-300)
        err = np.abs(other.coeffs - u1.coeffs).max()
        if err > 1e-12 * scale and err > 0:
            raise ConsistencyError(f"first iterate routes differ by {err / scale:.2e}")
    return u1


def default_time_grid(T: float, N: int, rho: float = 0.5) -> TimeGrid:
    """Geometric grid with ``K = 4N + 16`` intervals."""
    return TimeGrid.geometric(T, rho, 4 * N + 16)


def _time_grid_to(t: float, params: ForceParams, time_grid: TimeGrid | None) -> TimeGrid:
    if time_grid is None:
        time_grid = default_time_grid(t, params.N)
    return time_grid.restrict(t) if t < time_grid.horizon else time_grid


def second_iterate(
    params: ForceParams, grid: GridSpec, t: float, time_grid: TimeGrid | None = None
) -> SpectralField:
    """``D[u1, u1](t)`` by exponential-trapezoid quadrature on ``time_grid``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return SpectralField.zeros(grid)
    tg = _time_grid_to(t, params, time_grid)
    _, ft = make_force(params, grid)

    def g(i: int) -> np.ndarray:
        s = tg.nodes[i]
        c = ft.coeffs * (-np.expm1(-s * grid.ksq))[:, None]
        return -advection_coeffs(grid, c)

    return SpectralField(grid, duhamel_of(grid, tg.nodes, g, t), _checked=True)


def self_interaction(params: ForceParams, grid: GridSpec, t: float) -> SpectralField:
    """``D[Ft, Ft](t) = -(-Delta)^{-1}(1 - e^{t Delta}) P div(Ft (x) Ft)`` in closed form."""
    _, ft = make_force(params, grid)
    g = -advection_coeffs(grid, ft.coeffs)
    return SpectralField(grid, constant_duhamel(grid, g, t), _checked=True)


@dataclass(frozen=True, eq=False)
class SecondIterateSplit:
    """Pieces of the second iterate at time ``t``.

    ``u211`` and ``u212`` are the closed-form low-frequency parts of
    ``D[Ft, Ft]``; ``u22`` collects the heat-smoothed cross terms.
    """

    t: float
    u211: SpectralField
    u212: SpectralField
    u22: SpectralField


def _low_frequency_operator(grid: GridSpec, t: float, c: np.ndarray) -> np.ndarray:
    """``(-Delta)^{-1}(1 - e^{t Delta}) P`` applied to vector coefficients."""
    field = helmholtz_project(SpectralField(grid, c, _checked=True))
    return constant_duhamel(grid, np.array(field.coeffs), t)


def principal_parts(params: ForceParams, grid: GridSpec, t: float) -> tuple[SpectralField, SpectralField]:
    """Closed forms of ``u211(t)`` and ``u212(t)``."""
    psi = make_profile(grid)
    pref = params.delta**2 / (2 * params.N)
    sq = pointwise_product(psi, psi)
    c = np.zeros(grid.vector_shape(), np.complex128)
    c[:, 1] = 1j * grid.xi2 * sq.coeffs
    u211 = -(params.M**2) * pref * _low_frequency_operator(grid, t, c)
    gp = perp_gradient(psi)
    div_t = advection_coeffs(grid, gp.coeffs)  # P div(grad^perp Psi (x) grad^perp Psi)
    u212 = -pref * constant_duhamel(grid, div_t, t)
    return SpectralField(grid, u211, _checked=True), SpectralField(grid, u212, _checked=True)


def second_iterate_principal(
    params: ForceParams, grid: GridSpec, t: float, time_grid: TimeGrid | None = None
) -> SecondIterateSplit:
    """Split of the second iterate into ``u211``, ``u212`` (closed form) and ``u22``.

    ``u22 = -D[e^{s Delta} Ft, Ft] - D[Ft, e^{s Delta} Ft] + D[e^{s Delta} Ft, e^{s Delta} Ft]``
    is evaluated by quadrature on ``time_grid``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    u211, u212 = principal_parts(params, grid, t)
    if t == 0:
        return SecondIterateSplit(t, u211, u212, SpectralField.zeros(grid))
    tg = _time_grid_to(t, params, time_grid)
    _, ft = make_force(params, grid)
    f = ft.coeffs

    def g(i: int) -> np.ndarray:
        s = tg.nodes[i]
        a = f * np.exp(-s * grid.ksq)[:, None]
        # -P div(-a(x)f - f(x)a + a(x)a)
        cross = advection_coeffs(grid, a, f) + advection_coeffs(grid, f, a)
        return cross - advection_coeffs(grid, a)

    u22 = SpectralField(grid, duhamel_of(grid, tg.nodes, g, t), _checked=True)
    return SecondIterateSplit(t, u211, u212, u22)


def profile_self_convolution(grid: GridSpec) -> np.ndarray:
    """``(Psi^ * Psi^)(xi)`` on harmonic 0, computed as ``(2 pi)^2`` times the transform of ``Psi^2``."""
    psi = make_profile(grid)
    sq = pointwise_product(psi, psi)
    return ((2 * math.pi) ** 2 * (2 * grid.box_half_length) ** 2 * sq.coeffs[0]).real


def sector_mask(grid: GridSpec, j: int) -> np.ndarray:
    """Harmonic-0 modes in ``2^(j-1) <= |xi| <= 2^(j+1)``, ``|xi|/2 <= |xi2| <= |xi|/sqrt 2``."""
    r = grid.kabs[0]
    a2 = np.abs(np.broadcast_to(grid.xi2[0], r.shape))
    lo, hi = 2.0 ** (j - 1), 2.0 ** (j + 1)
    return (r >= lo) & (r <= hi) & (a2 >= r / 2) & (a2 <= r / math.sqrt(2))


class LowerBoundProfile(NamedTuple):
    """Sector minima of the measured and the exact Fourier-side expressions."""

    lhs_min: float
    rhs_min: float
    max_rel_error: float
    points: int


def lower_bound_profile(
    params: ForceParams, grid: GridSpec, j: int, t: float, min_points: int = 8, check: bool = True
) -> LowerBoundProfile:
    """Compare ``|F[Delta_j u211(t)]_2|`` with its exact multiplier formula on the sector.

    The measured side is ``|F[Delta_j u211]_2(xi)| / W(xi)`` with weight
    ``W = Phi0^(2^-j xi) (Psi^ * Psi^)(xi)``; points with ``W < 1e-6`` are
    skipped.  The formula side is

        (M^2 delta^2 / 2N) (1 - e^{-t|xi|^2}) / |xi|^2 (1 - xi2^2/|xi|^2) |xi2| / (2 pi)^2,

    the factor ``(2 pi)^-2`` coming from ``F[Psi^2] = (2 pi)^-2 Psi^ * Psi^``.
    With ``check`` a pointwise mismatch above ``1e-10`` relative raises
    :class:`ConsistencyError`.
    """
    if not -params.N <= j <= -2:
        raise ValueError(f"block {j} outside -N..-2")
    mask = sector_mask(grid, j)
    if int(mask.sum()) < min_points:
        raise ValueError(f"sector of block {j} holds fewer than {min_points} grid frequencies")
    partition = LPPartition(min(j, -params.N), max(j, 0))
    u211, _ = principal_parts(params, grid, t)
    blk = lp_block(u211, j, partition)
    area = (2 * grid.box_half_length) ** 2
    ft2 = np.abs(blk.coeffs[0, 1]) * area
    conv = profile_self_convolution(grid)
    weight = LPPartition.block_symbol(0, grid.kabs[0] * 2.0**-j) * conv
    use = mask & (weight >= 1e-6)
    if not use.any():
        return LowerBoundProfile(0.0, 0.0, 0.0, 0)
    r2 = grid.ksq[0][use]
    x2 = np.abs(np.broadcast_to(grid.xi2[0], grid.ksq[0].shape)[use])
    pref = params.M**2 * params.delta**2 / (2 * params.N)
    rhs = pref * (-np.expm1(-t * r2)) / r2 * (1 - x2**2 / r2) * x2 / (2 * math.pi) ** 2
    lhs = ft2[use] / weight[use]
    scale = max(float(np.max(np.abs(rhs))), 1e-300)
    err = float(np.max(np.abs(lhs - rhs))) / scale if rhs.size else 0.0
    if check and err > 1e-10:
        raise ConsistencyError(f"sector formula mismatch {err:.2e} at block {j}")
    return LowerBoundProfile(float(lhs.min()), float(rhs.min()), err, int(use.sum()))


def principal_lower_sum(params: ForceParams, grid: GridSpec, t: float | None = None) -> float:
    """``sum_{-N <= j <= -2} 2^((2/p - 1) j) ||Delta_j u211(t)||_{L^p}`` (default ``t = T_N``)."""
    t = params.T if t is None else t
    u211, _ = principal_parts(params, grid, t)
    partition = LPPartition(-params.N, 0)
    s = params.critical_s
    total = 0.0
    for j in range(-params.N, -1):
        total += 2.0 ** (s * j) * lp_norm(lp_block(u211, j, partition), params.p)
    return total
