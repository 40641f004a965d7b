"""Empirical constants of the heat-flow and bilinear Duhamel estimates.

Both sides of an inequality are evaluated on random, frequency-localized
fields and the ratio is recorded.  Random fields draw complex Gaussian
coefficients per Littlewood-Paley block with a prescribed block-norm profile,
then are Helmholtz-projected and made Hermitian.  Trajectories are
``u(t) = a(t) U`` with amplitude ``a(t) = 1 - b exp(-t / tau)``, for which the
Duhamel term is an exact combination of exponentials: no time quadrature
enters the left-hand sides.

All randomness flows from one integer seed through the counter-based Philox
generator (numpy's implementation, identical streams on every platform).
"""

from __future__ import annotations

import csv
import io
import math
import os
from functools import lru_cache
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .besov import (
    BesovIndex,
    ChLIndex,
    LPPartition,
    _block_table,
    besov_from_blocks,
    block_norms,
    chemin_lerner_from_blocks,
    check_resolved,
    cutoff_profile,
    format_exponent,
    parse_exponent,
)
from .construction import ConsistencyError
from .duhamel import TimeGrid
from .spectral import (
    GridSpec,
    ScalarSpectralField,
    SpectralField,
    _clean,
    _forward_harmonics,
    _padded_physical,
    _product_harmonics,
    _project_inplace,
    advection_coeffs,
    from_physical,
    pointwise_product,
    to_physical,
)

__all__ = [
    "EmpiricalConstantReport",
    "make_rng",
    "random_field",
    "random_scalar_field",
    "AmplitudeProfile",
    "BilinearSample",
    "measure_max_regularity",
    "measure_paraproduct_pieces",
    "paraproduct_reconstruction_error",
    "measure_bilinear_duhamel",
    "measure_bilinear_duhamel_variants",
    "bilinear_grid",
    "bilinear_duhamel_ratio",
    "measure_duhamel_product",
    "measure_weak_product",
    "write_constant_csv",
    "CONSTANT_CSV_COLUMNS",
    "PerturbationEnsemble",
    "measure_perturbation_ensemble",
]

QUANTILES = (0.5, 0.9, 0.99)
MIN_SAMPLES = 30


@dataclass(frozen=True, eq=False)
class EmpiricalConstantReport:
    """Sampled ratios LHS / RHS of one estimate at fixed parameters.

    ``parameters`` is an ordered tuple of ``(name, value)`` pairs; ``ratios``
    holds every evaluated sample in draw order (skipped samples excluded).
    """

    lemma_id: str
    parameters: tuple
    ratios: np.ndarray
    skipped: int = 0
    samples: int = field(init=False)
    max_ratio: float = field(init=False)
    ratio_quantiles: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        r = np.asarray(self.ratios, dtype=float)
        if r.size < MIN_SAMPLES:
            raise ValueError(f"need at least {MIN_SAMPLES} evaluated samples, got {r.size}")
        if not np.all(np.isfinite(r)):
            raise ValueError("non-finite ratio sampled")
        r.flags.writeable = False
        q = np.quantile(r, QUANTILES)
        q.flags.writeable = False
        object.__setattr__(self, "ratios", r)
        object.__setattr__(self, "samples", int(r.size))
        object.__setattr__(self, "max_ratio", float(r.max()))
        object.__setattr__(self, "ratio_quantiles", q)

    @property
    def running_median_excess(self) -> float:
        """Largest ``ratio_k / median(ratio_0..ratio_k)``; above 10 flags a numerical bug."""
        r = self.ratios
        worst = 0.0
        for k in range(r.size):
            med = float(np.median(r[: k + 1]))
            if med > 0:
                worst = max(worst, float(r[k]) / med)
        return worst

    def parameter(self, name: str):
        return dict(self.parameters)[name]


CONSTANT_CSV_COLUMNS = ("lemma_id", "params", "samples", "max_ratio", "q50", "q90", "q99")


def _format_param(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return format_exponent(v) if math.isinf(v) else repr(float(v))
    return str(v)


def write_constant_csv(reports: Iterable[EmpiricalConstantReport], path: str | Path | None = None) -> str:
    """CSV text (and optionally an atomic file write) for constant reports."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONSTANT_CSV_COLUMNS)
    for rep in reports:
        params = ";".join(f"{k}={_format_param(v)}" for k, v in rep.parameters)
        w.writerow(
            [rep.lemma_id, params, rep.samples, repr(rep.max_ratio)]
            + [repr(float(x)) for x in rep.ratio_quantiles]
        )
    text = buf.getvalue()
    if path is not None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, path)
    return text


# ---------------------------------------------------------------------------
# random ensembles
# ---------------------------------------------------------------------------


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``; streams are independent."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream,))))


@lru_cache(maxsize=8)
def _symbol(grid: GridSpec, j: int) -> np.ndarray:
    out = LPPartition.block_symbol(j, grid.kabs)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=8)
def _core_shell(grid: GridSpec, j: int) -> np.ndarray:
    """Smooth bump on ``|log2|xi| - j| < 1/8``, where the neighbouring block symbols stay below 2e-4."""
    r = grid.kabs
    with np.errstate(divide="ignore"):
        dist = np.abs(np.log2(np.where(r > 0, r, 1e-300)) - j)
    out = cutoff_profile(16.0 * dist)
    out.flags.writeable = False
    return out


def _block_amplitudes(blocks: Sequence[int], profile: str, decay: float) -> np.ndarray:
    if profile == "flat":
        return np.ones(len(blocks))
    if profile == "geometric":
        return decay ** np.arange(len(blocks), dtype=float)
    if profile == "single-block":
        if len(blocks) != 1:
            raise ValueError("single-block profile takes exactly one block")
        return np.ones(1)
    raise ValueError(f"unknown profile {profile!r}")


def _random_coeffs(grid: GridSpec, rng: np.random.Generator, shape: tuple, blocks, profile, decay, vector) -> np.ndarray:
    amps = _block_amplitudes(blocks, profile, decay)
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    out = np.zeros(shape, np.complex128)
    for j, a in zip(blocks, amps):
        sym = _core_shell(grid, int(j)) if profile == "single-block" else _symbol(grid, int(j))
        piece = z * (sym[:, None] if vector else sym)
        if vector:
            _project_inplace(piece, grid)
        _clean(piece, grid, zero_mean=True)
        norm = float(np.sqrt(np.sum(np.abs(piece) ** 2)))
        if norm > 0:
            out += piece * (a / norm)
    return _clean(out, grid, zero_mean=True)


def _localize(grid: GridSpec, c: np.ndarray, blocks: Sequence[int], width: float) -> np.ndarray:
    """Multiply by a Gaussian window of the given width and re-filter to the blocks."""
    if not grid.is_plain:
        raise ValueError("localized ensembles need a plain grid")
    x1, x2 = grid.physical_coordinates()
    window = np.exp(-(x1**2 + x2**2) / (2.0 * width**2))
    f = SpectralField(grid, c, _checked=True)
    out = np.array(from_physical(grid, to_physical(f) * window).coeffs)
    band = sum(_symbol(grid, int(j)) for j in blocks)
    out *= band[:, None]
    _project_inplace(out, grid)
    return _clean(out, grid, zero_mean=True)


def random_field(
    grid: GridSpec,
    rng: np.random.Generator,
    blocks: Sequence[int],
    profile: str = "flat",
    decay: float = 0.5,
    amplitude: float = 1.0,
    localized: bool = False,
) -> SpectralField:
    """Divergence-free random field carried by the given blocks.

    Profiles: ``flat`` (equal block weights), ``geometric`` (weights
    ``decay^k`` along ``blocks``) and ``single-block`` (one block, confined
    to the core shell of its annulus so that the neighbouring blocks carry
    under 1e-6 of the energy).  With ``localized``
    the field is confined to a Gaussian window whose width is the longest
    wavelength scale ``2^-min(blocks)`` and filtered back to the blocks: a
    random wave packet rather than a field spread over the whole box.  The
    result is scaled to unit ``L^2`` norm times ``amplitude``.
    """
    c = _random_coeffs(grid, rng, grid.vector_shape(), blocks, profile, decay, True)
    if localized:
        c = _localize(grid, c, blocks, 2.0 ** (-min(blocks)))
    f = SpectralField(grid, c, _checked=True)
    norm = f.l2_norm()
    return f * (amplitude / norm) if norm > 0 else f


def random_scalar_field(
    grid: GridSpec,
    rng: np.random.Generator,
    blocks: Sequence[int],
    profile: str = "flat",
    decay: float = 0.5,
) -> ScalarSpectralField:
    """Real scalar analogue of :func:`random_field` (unit ``L^2`` norm)."""
    c = _random_coeffs(grid, rng, grid.scalar_shape(), blocks, profile, decay, False)
    f = ScalarSpectralField(grid, c, _checked=True)
    norm = f.l2_norm()
    return f * (1.0 / norm) if norm > 0 else f


def _geometric_nodes(t_min: float, T: float, rho: float = 0.7) -> TimeGrid:
    K = max(2, int(math.ceil(math.log(T / t_min) / math.log(1.0 / rho))))
    return TimeGrid.geometric(T, rho, K)


# ---------------------------------------------------------------------------
# maximal regularity
# ---------------------------------------------------------------------------


def _default_lab_grid() -> GridSpec:
    return GridSpec(16 * math.pi, 128)


def measure_max_regularity(
    p,
    q,
    r,
    s: float,
    samples: int = MIN_SAMPLES,
    seed: int = 0,
    grid: GridSpec | None = None,
    blocks: Sequence[int] = (-2, -1, 0, 1),
    profile: str = "flat",
    T: float | None = None,
) -> EmpiricalConstantReport:
    """Ratio ``||e^{t Delta} F||_{L~^r(0,T; B^{s+2/r}_{p,q})} / ||F||_{B^s_{p,q}}``.

    ``T`` defaults to a horizon long enough for the lowest block to decay.
    """
    p, q, r = parse_exponent(p), parse_exponent(q), parse_exponent(r)
    if r < 1:
        raise ValueError("r must lie in [1, inf]")
    grid = grid or _default_lab_grid()
    partition = LPPartition.for_grid(grid)
    jlo, jhi = min(blocks), max(blocks)
    if T is None:
        T = 64.0 * 4.0 ** (-jlo)
    tg = _geometric_nodes(1e-3 * 4.0 ** (-jhi - 1), T)
    rng = make_rng(seed, 1)
    idx_in = BesovIndex(p, q, s)
    idx_out = ChLIndex(r, BesovIndex(p, q, s + (0.0 if math.isinf(r) else 2.0 / r)), 0.0, T)
    ratios = []
    for _ in range(samples):
        F = random_field(grid, rng, blocks, profile)
        den = besov_from_blocks(block_norms(F, p, partition), idx_in, partition)
        series = np.stack([
            block_norms(F._new(F.coeffs * np.exp(-t * grid.ksq)[:, None]), p, partition, check=False)
            for t in tg.nodes
        ])
        ratios.append(chemin_lerner_from_blocks(tg.nodes, series, idx_out, partition) / den)
    params = (("p", p), ("q", q), ("r", r), ("s", float(s)), ("profile", profile),
              ("n", grid.points_per_dim), ("T", float(T)))
    return EmpiricalConstantReport("max-regularity", params, np.array(ratios))


# ---------------------------------------------------------------------------
# paraproducts
# ---------------------------------------------------------------------------


def measure_paraproduct_pieces(
    f: ScalarSpectralField, g: ScalarSpectralField, partition: LPPartition | None = None, rtol: float = 1e-10
) -> tuple[ScalarSpectralField, ScalarSpectralField, ScalarSpectralField]:
    """Paraproduct split ``fg = I1 + I2 + I3``.

    ``I1 = sum_j sum_{|i-j|<=2} D_i f D_j g`` (comparable frequencies),
    ``I2 = sum_j sum_{i<=j-3} D_i f D_j g`` (low ``f``, high ``g``) and
    ``I3 = sum_j sum_{i>=j+3} D_i f D_j g``.  The low-frequency sums are
    prefix sums over the block decomposition.  The reconstruction
    ``I1 + I2 + I3 = fg`` is checked at ``rtol`` and a
    :class:`ConsistencyError` raised on failure.
    """
    f._check_same_grid(g)
    grid = f.grid
    partition = partition or LPPartition.for_grid(grid)
    check_resolved(f, partition)
    check_resolved(g, partition)
    H = grid.harmonics
    blocks = partition.blocks
    syms = [LPPartition.block_symbol(int(j), grid.kabs) for j in blocks]
    pf = [_padded_physical(f.coeffs * s, grid) for s in syms]
    pg = [_padded_physical(g.coeffs * s, grid) for s in syms]
    nb = len(blocks)

    def prefix(parts: list, upto: int) -> list | None:
        if upto < 0:
            return None
        return [sum(parts[i][k] for i in range(upto + 1)) for k in range(grid.nh)]

    def accumulate(acc, term):
        if term is None:
            return acc
        return term if acc is None else [a + b for a, b in zip(acc, term)]

    i1 = i2 = i3 = None
    for j in range(nb):
        low_f = prefix(pf, j - 3)
        if low_f is not None:
            i2 = accumulate(i2, _product_harmonics(low_f, pg[j], H))
        low_g = prefix(pg, j - 3)
        if low_g is not None:
            i3 = accumulate(i3, _product_harmonics(pf[j], low_g, H))
        near = [sum(pf[i][k] for i in range(max(0, j - 2), min(nb, j + 3))) for k in range(grid.nh)]
        i1 = accumulate(i1, _product_harmonics(near, pg[j], H))

    def finish(ph) -> ScalarSpectralField:
        if ph is None:
            return ScalarSpectralField.zeros(grid)
        return ScalarSpectralField(grid, _clean(_forward_harmonics(ph, grid), grid, zero_mean=False), _checked=True)

    pieces = finish(i1), finish(i2), finish(i3)
    err = paraproduct_reconstruction_error(f, g, pieces)
    if err > rtol:
        raise ConsistencyError(f"paraproduct reconstruction error {err:.3e} exceeds {rtol:.1e}")
    return pieces


def paraproduct_reconstruction_error(f, g, pieces) -> float:
    """Relative ``l2`` coefficient error of ``I1 + I2 + I3`` against ``fg``."""
    fg = pointwise_product(f, g)
    total = pieces[0].coeffs + pieces[1].coeffs + pieces[2].coeffs
    scale = float(np.linalg.norm(fg.coeffs))
    err = float(np.linalg.norm(total - fg.coeffs))
    return err / scale if scale > 0 else err


# ---------------------------------------------------------------------------
# bilinear Duhamel samples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AmplitudeProfile:
    """``a(t) = 1 - b exp(-t / tau)`` (``b = 0`` is constant in time)."""

    b: float = 0.0
    tau: float = 1.0

    def __call__(self, t: np.ndarray) -> np.ndarray:
        return 1.0 - self.b * np.exp(-np.asarray(t, dtype=float) / self.tau)

    def exponentials(self) -> list[tuple[float, float]]:
        """``a`` as ``[(coefficient, rate)]`` with ``a(t) = sum c e^{-rate t}``."""
        if self.b == 0:
            return [(1.0, 0.0)]
        return [(1.0, 0.0), (-self.b, 1.0 / self.tau)]

    @classmethod
    def draw(cls, rng: np.random.Generator, T: float) -> "AmplitudeProfile":
        b = float(rng.uniform(0.0, 1.0))
        tau = float(T * 10.0 ** rng.uniform(-3.0, 0.0))
        return cls(b, tau)


def _heat_response(t: float, lam: np.ndarray, mu: float) -> np.ndarray:
    """``int_0^t e^{-(t-s) lam} e^{-mu s} ds``, evaluated without overflow."""
    gap = np.abs(lam - mu)
    z = gap * t
    phi = np.ones_like(z)
    nz = z > 0
    phi[nz] = -np.expm1(-z[nz]) / z[nz]
    return np.exp(-np.minimum(lam, mu) * t) * t * phi


class _RadialBlocks:
    """Block energies of ``m(|xi|^2) g`` for many radial multipliers ``m``.

    Modes are grouped into thin logarithmic shells (``bins_per_octave`` per
    factor 2 in ``|xi|``); within a shell the multiplier is evaluated at the
    energy-weighted mean of ``|xi|^2``.  With 256 shells per octave ``|xi|^2``
    varies by under 0.6% inside a shell.
    """

    def __init__(self, grid: GridSpec, coeffs: np.ndarray, partition: LPPartition, bins_per_octave: int = 256):
        tab = _block_table(grid, partition)
        e = np.abs(coeffs) ** 2
        if coeffs.ndim == 4:
            e = e.sum(axis=1)
        e = e.copy()
        e[1:] *= 2.0
        e *= (2 * grid.box_half_length) ** 2
        r = grid.kabs
        pos = (r > 0) & (e > 0)
        r, e = r[pos], e[pos]
        rel = tab.lower[pos].astype(np.int64)
        w_lo, w_hi = tab.w_lower[pos], tab.w_upper[pos]
        shell = np.floor((np.log2(r) - (partition.j_min - 1)) * bins_per_octave).astype(np.int64)
        nbins = int(shell.max()) + 1 if shell.size else 1
        nb = partition.count
        hist = np.zeros(nbins * (nb + 2))
        # columns shifted by one so that out-of-range blocks land in the padding
        hist += np.bincount(shell * (nb + 2) + rel + 1, w_lo**2 * e, hist.size)
        hist += np.bincount(shell * (nb + 2) + rel + 2, w_hi**2 * e, hist.size)
        self.hist = hist.reshape(nbins, nb + 2)[:, 1 : nb + 1]
        mass = np.bincount(shell, e, nbins)
        ksq = np.bincount(shell, e * r**2, nbins)
        self.ksq = np.divide(ksq, mass, out=np.zeros(nbins), where=mass > 0)

    def norms(self, multiplier: np.ndarray) -> np.ndarray:
        return np.sqrt(np.maximum((multiplier**2) @ self.hist, 0.0))


@dataclass(eq=False)
class BilinearSample:
    """Trajectories ``u = a_u(t) U``, ``v = a_v(t) V`` and their Duhamel term.

    ``D[u, v](t) = -Phi(t, |xi|^2) P div(U (x) V)`` with
    ``Phi(t, lam) = int_0^t e^{-(t-s) lam} a_u(s) a_v(s) ds`` in closed form.
    """

    U: SpectralField
    V: SpectralField
    a_u: AmplitudeProfile
    a_v: AmplitudeProfile
    times: np.ndarray
    partition: LPPartition

    def __post_init__(self) -> None:
        self.grid = self.U.grid
        self.g = -advection_coeffs(self.grid, self.U.coeffs, self.V.coeffs)
        self._radial = None

    def phi(self, t: float, lam: np.ndarray) -> np.ndarray:
        out = np.zeros_like(lam, dtype=float)
        for cu, mu_u in self.a_u.exponentials():
            for cv, mu_v in self.a_v.exponentials():
                out += cu * cv * _heat_response(t, lam, mu_u + mu_v)
        return out

    def duhamel_at(self, t: float) -> SpectralField:
        mult = self.phi(t, self.grid.ksq)
        return SpectralField(self.grid, self.g * mult[:, None], _checked=True)

    def duhamel_series(self, p: float) -> np.ndarray:
        """Block norms of ``D[u, v]`` at every node, shape ``(nt, nblocks)``."""
        if p == 2.0:
            if self._radial is None:
                self._radial = _RadialBlocks(self.grid, self.g, self.partition)
            rb = self._radial
            return np.stack([rb.norms(self.phi(float(t), rb.ksq)) for t in self.times])
        return np.stack([block_norms(self.duhamel_at(float(t)), p, self.partition, check=False) for t in self.times])

    def factor_series(self, which: str, p: float) -> np.ndarray:
        f, a = (self.U, self.a_u) if which == "u" else (self.V, self.a_v)
        b = block_norms(f, p, self.partition)
        return np.abs(a(self.times))[:, None] * b[None, :]


def _linfty(p: float, T: float) -> ChLIndex:
    return ChLIndex(math.inf, BesovIndex(p, 1, 2.0 / p - 1.0), 0.0, T)


def _ln(p: float, N: float, T: float) -> ChLIndex:
    return ChLIndex(N, BesovIndex(p, 2, 2.0 / p - 1.0 + 2.0 / N), 0.0, T)


def bilinear_duhamel_ratio(sample: BilinearSample, p: float, variant: str, N: int) -> float | None:
    """LHS / RHS of the ``N``-dependent bilinear estimate; ``None`` if RHS vanishes.

    ``Linfty-target``: ``||D||_{L~^inf B^{2/p-1}_{p,1}}`` over
    ``N ||u||_{L~^N} ||v||_{L~^N} + ||u||_{L~^inf} ||v||_{L~^inf}``, with
    ``L~^N`` short for ``L~^N(0,T; B^{2/p-1+2/N}_{p,2})``.
    ``LN-target``: ``||D||_{L~^N}`` over ``sqrt(N) ||u||_{L~^N} ||v||_{L~^N}``.
    """
    t, part = sample.times, sample.partition
    T = float(t[-1])
    su, sv = sample.factor_series("u", p), sample.factor_series("v", p)
    ln = _ln(p, N, T)
    an_u = chemin_lerner_from_blocks(t, su, ln, part)
    an_v = chemin_lerner_from_blocks(t, sv, ln, part)
    sd = sample.duhamel_series(p)
    if variant == "Linfty-target":
        li = _linfty(p, T)
        rhs = N * an_u * an_v + chemin_lerner_from_blocks(t, su, li, part) * chemin_lerner_from_blocks(t, sv, li, part)
        lhs = chemin_lerner_from_blocks(t, sd, li, part)
    elif variant == "LN-target":
        rhs = math.sqrt(N) * an_u * an_v
        lhs = chemin_lerner_from_blocks(t, sd, ln, part)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if rhs == 0.0:
        return None
    return lhs / rhs


def bilinear_grid(N: int) -> GridSpec:
    """Plain grid for the ``N``-dependent estimate.

    The horizon is ``4^N``, so the Duhamel term reaches frequencies
    ``2^-N``: the box is ``L = 2^N pi`` (step ``2^-N``) and the band
    ``|xi_i| < 1`` holds products of inputs supported in ``|xi| <= 1/2``.
    """
    return GridSpec(2.0**N * math.pi, 2 ** (N + 1))


def measure_bilinear_duhamel(
    p,
    variant: str,
    N: int,
    samples: int = MIN_SAMPLES,
    seed: int = 0,
    blocks: Sequence[int] = (-3, -2),
    profile: str = "flat",
    localized: bool = True,
    grid: GridSpec | None = None,
    T: float | None = None,
) -> EmpiricalConstantReport:
    """Empirical constant of the ``N``-dependent bilinear Duhamel estimate.

    Inputs carry the given blocks; the horizon defaults to ``T = 4^N`` so that
    the interaction of comparable high frequencies feeds every block down to
    ``2^-N``, which is the regime where the explicit ``N`` factors matter.
    """
    return measure_bilinear_duhamel_variants(
        p, N, (variant,), samples, seed, blocks, profile, localized, grid, T
    )[variant]


def measure_bilinear_duhamel_variants(
    p,
    N: int,
    variants: Sequence[str] = ("Linfty-target", "LN-target"),
    samples: int = MIN_SAMPLES,
    seed: int = 0,
    blocks: Sequence[int] = (-3, -2),
    profile: str = "flat",
    localized: bool = True,
    grid: GridSpec | None = None,
    T: float | None = None,
) -> dict[str, EmpiricalConstantReport]:
    """:func:`measure_bilinear_duhamel` for several variants on shared samples."""
    p = parse_exponent(p)
    for variant in variants:
        if variant not in ("Linfty-target", "LN-target"):
            raise ValueError(f"unknown variant {variant!r}")
    if not 3 <= N <= 12:
        raise ValueError("N must lie in 3..12")
    grid = grid or bilinear_grid(N)
    T = 4.0**N if T is None else T
    partition = LPPartition.for_grid(grid)
    times = _geometric_nodes(1e-2, T).nodes
    rng = make_rng(seed, 2)
    ratios: dict[str, list] = {v: [] for v in variants}
    skipped = dict.fromkeys(variants, 0)
    for _ in range(samples):
        U = random_field(grid, rng, blocks, profile, localized=localized)
        V = random_field(grid, rng, blocks, profile, localized=localized)
        s = BilinearSample(U, V, AmplitudeProfile.draw(rng, T), AmplitudeProfile.draw(rng, T), times, partition)
        for variant in variants:
            ratio = bilinear_duhamel_ratio(s, p, variant, N)
            if ratio is None:
                skipped[variant] += 1
            else:
                ratios[variant].append(ratio)
    out = {}
    for variant in variants:
        params = (("p", p), ("variant", variant), ("N", int(N)), ("profile", profile),
                  ("localized", localized), ("n", grid.points_per_dim), ("T", float(T)))
        out[variant] = EmpiricalConstantReport("bilinear-duhamel", params, np.array(ratios[variant]), skipped[variant])
    return out


def measure_duhamel_product(
    p,
    q,
    r0,
    r1,
    r2,
    samples: int = MIN_SAMPLES,
    seed: int = 0,
    grid: GridSpec | None = None,
    blocks: Sequence[int] = (-2, -1, 0),
    profile: str = "flat",
    localized: bool = True,
    T: float = 64.0,
) -> EmpiricalConstantReport:
    """Empirical constant of the general bilinear Duhamel estimate.

    Ratio ``||D[u,v]||_{L~^{r0} B^{2/p-1+2/r0}_{p,q}}`` over
    ``||u||_{L~^{r1} B^{2/p-1+2/r1}_{p,q}} ||v||_{L~^{r2} B^{2/p-1+2/r2}_{p,q}}``.
    Requires ``2 < r1, r2``, ``r <= r0`` and
    ``max(0, 1 - 2/p) < 1/r = 1/r1 + 1/r2``.
    """
    p, q, r0, r1, r2 = (parse_exponent(x) for x in (p, q, r0, r1, r2))
    inv_r = 1.0 / r1 + 1.0 / r2
    if not (r1 > 2 and r2 > 2 and inv_r > max(0.0, 1.0 - 2.0 / p) and r0 >= 1.0 / inv_r):
        raise ValueError("exponents outside the admissible range of the estimate")
    grid = grid or _default_lab_grid()
    partition = LPPartition.for_grid(grid)
    times = _geometric_nodes(1e-3, T).nodes
    rng = make_rng(seed, 3)

    def idx(r: float) -> ChLIndex:
        return ChLIndex(r, BesovIndex(p, q, 2.0 / p - 1.0 + (0.0 if math.isinf(r) else 2.0 / r)), 0.0, T)

    ratios = []
    for _ in range(samples):
        U = random_field(grid, rng, blocks, profile, localized=localized)
        V = random_field(grid, rng, blocks, profile, localized=localized)
        s = BilinearSample(U, V, AmplitudeProfile.draw(rng, T), AmplitudeProfile.draw(rng, T), times, partition)
        lhs = chemin_lerner_from_blocks(times, s.duhamel_series(p), idx(r0), partition)
        rhs = (chemin_lerner_from_blocks(times, s.factor_series("u", p), idx(r1), partition)
               * chemin_lerner_from_blocks(times, s.factor_series("v", p), idx(r2), partition))
        ratios.append(lhs / rhs)
    params = (("p", p), ("q", q), ("r0", r0), ("r1", r1), ("r2", r2), ("profile", profile),
              ("localized", localized), ("n", grid.points_per_dim), ("T", float(T)))
    return EmpiricalConstantReport("duhamel-product", params, np.array(ratios))


def measure_weak_product(
    p,
    samples: int = MIN_SAMPLES,
    seed: int = 0,
    grid: GridSpec | None = None,
    blocks: Sequence[int] = (-2, -1, 0),
    profile: str = "flat",
    localized: bool = True,
    T: float = 64.0,
    zero_every: int = 0,
) -> EmpiricalConstantReport:
    """Empirical ``K0(p)`` of the weak-norm product estimate.

    Ratio ``sup_t ||D[u,v](t)||_{B^{2/p-1}_{p,inf}}`` over
    ``||u||_{L~^inf B^{2/p-1}_{p,1}} sup_t ||v(t)||_{B^{2/p-1}_{p,inf}}``.
    ``zero_every > 0`` replaces every such-numbered ``v`` by zero; those
    samples have an undefined ratio and are skipped.
    """
    p = parse_exponent(p)
    if not 1.0 <= p <= 2.0:
        raise ValueError("p must lie in [1, 2]")
    grid = grid or _default_lab_grid()
    partition = LPPartition.for_grid(grid)
    times = _geometric_nodes(1e-3, T).nodes
    rng = make_rng(seed, 4)
    s0 = 2.0 / p - 1.0
    weak = BesovIndex(p, math.inf, s0)
    ratios, skipped, drawn = [], 0, 0
    while len(ratios) < samples:
        drawn += 1
        U = random_field(grid, rng, blocks, profile, localized=localized)
        V = random_field(grid, rng, blocks, profile, localized=localized)
        if zero_every and drawn % zero_every == 0:
            V = V * 0.0
        s = BilinearSample(U, V, AmplitudeProfile.draw(rng, T), AmplitudeProfile.draw(rng, T), times, partition)
        sv = s.factor_series("v", p)
        v_sup = max(besov_from_blocks(row, weak, partition) for row in sv)
        if v_sup == 0.0:
            skipped += 1
            continue
        u_norm = chemin_lerner_from_blocks(times, s.factor_series("u", p), _linfty(p, T), partition)
        lhs = max(besov_from_blocks(row, weak, partition) for row in s.duhamel_series(p))
        ratios.append(lhs / (u_norm * v_sup))
    params = (("p", p), ("profile", profile), ("localized", localized), ("n", grid.points_per_dim),
              ("T", float(T)))
    return EmpiricalConstantReport("weak-product", params, np.array(ratios), skipped)


# ---------------------------------------------------------------------------
# perturbation ensemble
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PerturbationEnsemble:
    """Perturbation solves around random small stationary fields.

    ``ratios[k] = sup_t ||u_k(t)|| / ||U_k||`` in ``B^{2/p-1}_{p,q}`` with
    ``u = U + v``; ``initial_errors[k]`` is the largest coefficient of
    ``v_k(0) + U_k``.
    """

    amplitude: float
    U_norms: np.ndarray
    sup_norms: np.ndarray
    initial_errors: np.ndarray
    converged: np.ndarray
    diverged: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return self.sup_norms / self.U_norms

    @property
    def constant(self) -> float:
        """Empirical constant: the largest ratio."""
        return float(self.ratios.max())

    @property
    def spread(self) -> float:
        """``max |ratio / median - 1|``."""
        r = self.ratios
        return float(np.max(np.abs(r / np.median(r) - 1.0)))


def measure_perturbation_ensemble(
    samples: int = 20,
    seed: int = 0,
    amplitude: float = 0.05,
    p=2.0,
    q=1.0,
    grid: GridSpec | None = None,
    blocks: Sequence[int] = (-2, -1, 0, 1),
    T: float = 1024.0,
    tol: float = 1e-10,
    max_iter: int = 10,
) -> PerturbationEnsemble:
    """Solve the perturbation problem for ``samples`` random localized ``U`` of ``L^2`` size ``amplitude``."""
    from .solver import StationaryCandidate, solve_perturbation

    p, q = parse_exponent(p), parse_exponent(q)
    grid = grid or GridSpec(8 * math.pi, 64)
    partition = LPPartition.for_grid(grid)
    tg = _geometric_nodes(1e-3, T, 0.6)
    idx = BesovIndex(p, q, 2.0 / p - 1.0)
    rng = make_rng(seed, 5)
    un, sup, err, conv, div = [], [], [], [], []
    for _ in range(samples):
        U = random_field(grid, rng, blocks, amplitude=amplitude, localized=True)
        state = solve_perturbation(StationaryCandidate(U, "synthetic"), grid, tg, tol, max_iter, p, q, partition,
                                   keep_fields=True)
        un.append(besov_from_blocks(block_norms(U, p, partition), idx, partition))
        sup.append(max(besov_from_blocks(row, idx, partition) for row in state.series["u"]))
        v0 = state.iterate.fields[0] if state.iterate is not None else None
        err.append(float(np.max(np.abs(v0.coeffs + U.coeffs))) if v0 is not None else math.inf)
        conv.append(state.converged)
        div.append(state.diverged)
    return PerturbationEnsemble(float(amplitude), np.array(un), np.array(sup), np.array(err),
                                np.array(conv), np.array(div))
