"""Picard solvers for the mild forced problem, the remainder and the perturbation equations.

All solvers march every Picard level through the time grid at once (see
:func:`nsinflation.duhamel.sweep`) and record, per level and node, the
Littlewood-Paley block norms of the increments.  Chemin-Lerner distances
between iterates are assembled from those series afterwards, so full
trajectories need not be stored unless requested.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .besov import (
    BesovIndex,
    ChLIndex,
    LPPartition,
    Trajectory,
    besov_from_blocks,
    besov_norm,
    block_norms,
    chemin_lerner_from_blocks,
)
from .construction import ForceParams, make_force, principal_parts
from .duhamel import SweepObserver, TimeGrid, constant_duhamel, duhamel, sweep
from .duhamel import etd_weights
from .spectral import GridSpec, SpectralField, _project_inplace, advection_coeffs, divergence

__all__ = [
    "TimeGrid",
    "duhamel",
    "PicardState",
    "StationaryCandidate",
    "GridPolicy",
    "TimePolicy",
    "solve_mild_ns",
    "solve_remainder",
    "solve_perturbation",
    "remainder_map",
    "remainder_map_terms",
    "coincidence_check",
    "sample_on",
    "InflationCase",
    "run_inflation_case",
    "inflation_experiment",
    "linfty_index",
    "ln_index",
    "ContractionScan",
    "find_delta_star",
]


def linfty_index(p: float, T: float, s: float | None = None) -> ChLIndex:
    """``L~^inf(0, T; B^{2/p - 1}_{p,1})``."""
    s = 2.0 / p - 1.0 if s is None else s
    return ChLIndex(math.inf, BesovIndex(p, 1, s), 0.0, T)


def ln_index(p: float, N: int, T: float) -> ChLIndex:
    """``L~^N(0, T; B^{2/p - 1 + 2/N}_{p,2})``."""
    return ChLIndex(N, BesovIndex(p, 2, 2.0 / p - 1.0 + 2.0 / N), 0.0, T)


def _divergence_defect(f: SpectralField) -> float:
    d = np.abs(divergence(f).coeffs).max()
    scale = max(float(np.max(np.abs(f.coeffs)) * np.sqrt(f.grid.ksq.max())), 1e-300)
    return float(d) / scale


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class PicardState:
    """Outcome of a Picard solve.

    Attributes
    ----------
    iterate : Trajectory or None
        Deepest computed iterate at every node (``None`` unless fields were kept).
    terminal : SpectralField
        Deepest iterate at the last processed node.
    increment_norms : ndarray
        Distances between successive iterates, level 1 first.
    contraction_ratio_estimate : float
        Largest ratio of consecutive increments above the rounding floor.
    converged, diverged : bool
    iterations : int
        First level whose increment fell below ``tol`` (or the level count).
    series : dict
        Block-norm series ``(nt, nblocks)`` keyed by quantity name.
    """

    times: np.ndarray
    partition: LPPartition
    p: float
    terminal: SpectralField
    increment_norms: np.ndarray
    contraction_ratio_estimate: float
    converged: bool
    diverged: bool
    iterations: int
    series: dict = field(default_factory=dict)
    iterate: Trajectory | None = None
    runtime_seconds: float = 0.0
    nodes_done: int = 0

    def linfty(self, name: str, s: float | None = None, q: float = 1) -> float:
        """``L~^inf(0, T; B^s_{p,q})`` of a recorded quantity (default ``s = 2/p - 1``)."""
        s = 2.0 / self.p - 1.0 if s is None else s
        idx = ChLIndex(math.inf, BesovIndex(self.p, q, s), 0.0, float(self.times[-1]))
        return chemin_lerner_from_blocks(self.times, self.series[name], idx, self.partition)

    def chemin_lerner(self, name: str, idx: ChLIndex) -> float:
        """Chemin-Lerner norm over ``idx``'s interval, clipped to the processed nodes."""
        end = min(idx.t_end, float(self.times[-1]))
        if end <= idx.t_start:
            return math.nan
        if end != idx.t_end:
            idx = ChLIndex(idx.r, idx.besov, idx.t_start, end)
        return chemin_lerner_from_blocks(self.times, self.series[name], idx, self.partition)

    def terminal_norm(self, name: str, s: float | None = None, q: float = 1) -> float:
        s = 2.0 / self.p - 1.0 if s is None else s
        return besov_from_blocks(self.series[name][-1], BesovIndex(self.p, q, s), self.partition)


@dataclass(frozen=True, eq=False)
class StationaryCandidate:
    """Divergence-free stationary field used as the base of a perturbation solve."""

    U: SpectralField
    source: str = "zero"

    def __post_init__(self) -> None:
        if self.source not in ("external-file", "symmetric-constructor", "zero", "synthetic"):
            raise ValueError(f"unknown source tag {self.source!r}")
        if _divergence_defect(self.U) > 1e-12:
            raise ValueError("stationary candidate is not divergence-free")


# ---------------------------------------------------------------------------
# recording
# ---------------------------------------------------------------------------


Extra = Callable[[int, float, dict], np.ndarray | None]

# relative change below which a Picard level counts as settled at a node
SETTLE_RTOL = 1e-14


class _Recorder(SweepObserver):
    """Block norms of increments per level plus named extra quantities."""

    def __init__(
        self,
        grid: GridSpec,
        nt: int,
        levels: int,
        p: float,
        partition: LPPartition,
        extras: dict[str, Extra] | None = None,
        keep_fields: bool = False,
        blowup: float = 1e8,
    ) -> None:
        self.grid = grid
        self.p = p
        self.partition = partition
        self.levels = levels
        nb = partition.count
        self.inc = np.zeros((levels, nt, nb))
        self.final = np.zeros((nt, nb))
        self.extras = extras or {}
        self.extra_series = {k: np.zeros((nt, nb)) for k in self.extras}
        self.keep = keep_fields
        self.fields: list[SpectralField] = []
        self.prev: np.ndarray | None = None
        self.snap: dict[int, np.ndarray] = {}
        self.terminal: np.ndarray | None = None
        self.blowup = blowup
        self.bad = False
        self.base_scale = 0.0

    def _norms(self, c: np.ndarray, grid: GridSpec) -> np.ndarray:
        return block_norms(SpectralField(grid, c, _checked=True), self.p, self.partition, check=False)

    def level(self, index: int, time: float, level: int, value: np.ndarray) -> None:
        grid = self.grid
        if level in (0, 1):
            self.snap[level] = value
        if level > 0:
            self.inc[level - 1, index] = self._norms(value - self.prev, grid)
        self.prev = value
        if level == self.levels:
            self.snap[-1] = value
            self.final[index] = self._norms(value, grid)
            self.terminal = value
            if self.keep:
                self.fields.append(SpectralField(grid, np.array(value), _checked=True))

    def node_done(self, index: int, time: float) -> bool:
        for name, fn in self.extras.items():
            c = fn(index, time, self.snap)
            if c is not None:
                self.extra_series[name][index] = self._norms(c, self.grid)
        self.snap = {}
        top = float(np.max(self.final[index])) if self.final.shape[1] else 0.0
        self.base_scale = max(self.base_scale, top)
        if not np.all(np.isfinite(self.inc[:, index])) or not math.isfinite(top) or top > self.blowup:
            self.bad = True
            return True
        return False


def _increment_distances(
    rec: _Recorder, times: np.ndarray, metric: Callable[[np.ndarray, np.ndarray], float], nodes: int
) -> np.ndarray:
    t = times[:nodes]
    return np.array([metric(t, rec.inc[k, :nodes]) if nodes > 1 else np.inf for k in range(rec.levels)])


def _assess(d: np.ndarray, tol: float, scale: float, bad: bool) -> tuple[bool, bool, int, float]:
    """Convergence flags, iteration count and contraction estimate from increments."""
    L = d.size
    if bad or not np.all(np.isfinite(d)):
        ratios = [d[k + 1] / d[k] for k in range(L - 1) if np.isfinite(d[k + 1]) and d[k] > 0]
        return False, True, L, float(max(ratios)) if ratios else math.inf
    floor = 1e-12 * max(scale, 1e-300)
    ratios = [d[k + 1] / d[k] for k in range(L - 1) if d[k + 1] > floor and d[k] > 0]
    ratio = float(max(ratios)) if ratios else 0.0
    below = np.nonzero(d < tol)[0]
    converged = below.size > 0
    iterations = int(below[0]) + 1 if converged else L
    # unconverged but contracting runs only lack levels; growth is divergence
    diverged = not converged and ratio >= 1.0
    # once within 10 tol, increments must shrink by 0.9 per level until tol
    near = np.nonzero(d < 10 * tol)[0]
    if near.size:
        for k in range(int(near[0]), iterations - 1):
            if d[k + 1] > 0.9 * d[k] and d[k + 1] > floor:
                diverged = True
    return converged, diverged, iterations, ratio


def _picard(
    grid: GridSpec,
    time_grid: TimeGrid,
    levels: int,
    base: Callable[[int], np.ndarray | None],
    integrand: Callable[[np.ndarray, int], np.ndarray],
    metric: Callable[[np.ndarray, np.ndarray], float],
    tol: float,
    p: float,
    partition: LPPartition,
    extras: dict[str, Extra] | None = None,
    keep_fields: bool = False,
) -> PicardState:
    if tol <= 0:
        raise ValueError("tol must be positive")
    if levels < 1:
        raise ValueError("max_iter must be >= 1")
    start = time.perf_counter()
    times = time_grid.nodes
    rec = _Recorder(grid, times.size, levels, p, partition, extras, keep_fields)
    nodes = sweep(grid, times, levels, base, integrand, rec, SETTLE_RTOL)
    d = _increment_distances(rec, times, metric, nodes)
    conv, div, iters, ratio = _assess(d, tol, metric(times[:nodes], rec.final[:nodes]) if nodes > 1 else 0.0, rec.bad)
    series = {"final": rec.final[:nodes]}
    for k in range(levels):
        series[f"increment_{k + 1}"] = rec.inc[k, :nodes]
    for name, s in rec.extra_series.items():
        series[name] = s[:nodes]
    traj = None
    if keep_fields and nodes == times.size:
        traj = Trajectory(grid, times, tuple(rec.fields))
    terminal = SpectralField(grid, np.array(rec.terminal), _checked=True)
    return PicardState(
        times=times[:nodes],
        partition=partition,
        p=p,
        terminal=terminal,
        increment_norms=d,
        contraction_ratio_estimate=ratio,
        converged=conv,
        diverged=div,
        iterations=iters,
        series=series,
        iterate=traj,
        runtime_seconds=time.perf_counter() - start,
        nodes_done=nodes,
    )


def _linfty_metric(p: float, partition: LPPartition) -> Callable[[np.ndarray, np.ndarray], float]:
    def metric(times: np.ndarray, series: np.ndarray) -> float:
        return chemin_lerner_from_blocks(times, series, linfty_index(p, float(times[-1])), partition)

    return metric


def _xn_metric(p: float, N: int, partition: LPPartition) -> Callable[[np.ndarray, np.ndarray], float]:
    """``L~^inf B^{2/p-1}_{p,1} + sqrt(N) L~^N B^{2/p-1+2/N}_{p,2}``."""

    def metric(times: np.ndarray, series: np.ndarray) -> float:
        T = float(times[-1])
        a = chemin_lerner_from_blocks(times, series, linfty_index(p, T), partition)
        b = chemin_lerner_from_blocks(times, series, ln_index(p, N, T), partition)
        return a + math.sqrt(N) * b

    return metric


def _default_partition(grid: GridSpec, partition: LPPartition | None) -> LPPartition:
    return LPPartition.for_grid(grid) if partition is None else partition


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


def _forced_term(grid: GridSpec, F: SpectralField) -> Callable[[float], np.ndarray]:
    """``t -> (-Delta)^{-1}(1 - e^{t Delta}) P F``."""
    pf = np.array(F.coeffs)
    _project_inplace(pf, grid)
    return lambda t: constant_duhamel(grid, pf, t)


def solve_mild_ns(
    F: SpectralField,
    grid: GridSpec,
    time_grid: TimeGrid,
    tol: float = 1e-10,
    max_iter: int = 8,
    p: float = 2.0,
    partition: LPPartition | None = None,
    keep_fields: bool = False,
    extras: dict[str, Extra] | None = None,
) -> PicardState:
    """Picard iteration for ``u = (-Delta)^{-1}(1 - e^{t Delta}) P F + D[u, u]``.

    Iterates are ``u^0`` = forced term and ``u^{k+1} = u^0 + D[u^k, u^k]``.
    Increments are measured in ``L~^inf(0, T; B^{2/p-1}_{p,1})``.  Increments
    that grow, overflow, or stall near ``tol`` set ``diverged``; a contracting
    run that runs out of levels is only unconverged.
    """
    if _divergence_defect(F) > 1e-10:
        raise ValueError("force is not divergence-free")
    partition = _default_partition(grid, partition)
    forced = _forced_term(grid, F)
    times = time_grid.nodes
    return _picard(
        grid, time_grid, max_iter,
        base=lambda i: forced(times[i]),
        integrand=lambda x, i: -advection_coeffs(grid, x),
        metric=_linfty_metric(p, partition),
        tol=tol, p=p, partition=partition, extras=extras, keep_fields=keep_fields,
    )


def remainder_map_terms(
    u1: SpectralField, u2: SpectralField, w: SpectralField
) -> list[np.ndarray]:
    """Integrands ``-P div(a (x) b)`` of the eight bilinear terms of the remainder map.

    Order: ``(u1,u2), (u2,u1), (u2,u2), (u1,w), (w,u1), (u2,w), (w,u2), (w,w)``.
    Their sum equals the integrand of ``D[U, U] - D[u1, u1]`` with
    ``U = u1 + u2 + w``.
    """
    grid = u1.grid
    pairs = [(u1, u2), (u2, u1), (u2, u2), (u1, w), (w, u1), (u2, w), (w, u2), (w, w)]
    return [-advection_coeffs(grid, a.coeffs, b.coeffs) for a, b in pairs]


def remainder_map(u1: SpectralField, u2: SpectralField, w: SpectralField) -> np.ndarray:
    """Integrand ``-P div(U (x) U - u1 (x) u1)`` with ``U = u1 + u2 + w``."""
    grid = u1.grid
    U = u1.coeffs + u2.coeffs + w.coeffs
    return -(advection_coeffs(grid, U) - advection_coeffs(grid, u1.coeffs))


def solve_remainder(
    params: ForceParams,
    grid: GridSpec,
    time_grid: TimeGrid,
    tol: float = 1e-10,
    max_iter: int = 8,
    partition: LPPartition | None = None,
    keep_fields: bool = False,
    extras: dict[str, Extra] | None = None,
) -> PicardState:
    """Picard iteration for the remainder ``w = u - u1 - u2`` from ``w^0 = 0``.

    ``w^{k+1} = D[U^k, U^k] - D[u1, u1]`` with ``U^k = u1 + u2 + w^k``, which is
    the sum of the eight bilinear terms of :func:`remainder_map_terms`.
    Increments are measured in the ball metric
    ``L~^inf B^{2/p-1}_{p,1} + sqrt(N) L~^N B^{2/p-1+2/N}_{p,2}``.
    The second iterate is carried along as an extra accumulator, so level
    ``k`` of this solve equals level ``k + 1`` of :func:`solve_mild_ns`
    minus ``u1 + u2``.
    """
    p = params.p
    partition = _default_partition(grid, partition)
    _, ft = make_force(params, grid)
    f = np.array(ft.coeffs)
    times = time_grid.nodes
    state: dict = {}

    def u1_at(i: int) -> np.ndarray:
        return f * (-np.expm1(-times[i] * grid.ksq))[:, None]

    # u2 is advanced by hand with the sweep's weights so every level sees u2(t_i)
    def u2_at(i: int) -> tuple[np.ndarray, np.ndarray]:
        if state.get("i") == i:
            return state["u1"], state["u2"]
        c1 = u1_at(i)
        g = -advection_coeffs(grid, c1)
        if i == 0:
            acc = np.zeros_like(g)
        else:
            d, wl, wr = etd_weights(grid.ksq, times[i] - times[i - 1])
            acc = d[:, None] * state["u2"] + wl[:, None] * state["g"] + wr[:, None] * g
        state.update(i=i, u1=c1, u2=acc, g=g, g11=g)
        return c1, acc

    def integrand(w: np.ndarray, i: int) -> np.ndarray:
        c1, c2 = u2_at(i)
        return -advection_coeffs(grid, c1 + c2 + w) - state["g11"]

    return _picard(
        grid, time_grid, max_iter,
        base=lambda i: None,
        integrand=integrand,
        metric=_xn_metric(p, params.N, partition),
        tol=tol, p=p, partition=partition, extras=extras, keep_fields=keep_fields,
    )


def solve_perturbation(
    U: StationaryCandidate,
    grid: GridSpec,
    time_grid: TimeGrid,
    tol: float = 1e-10,
    max_iter: int = 8,
    p: float = 2.0,
    q: float = 1.0,
    partition: LPPartition | None = None,
    keep_fields: bool = False,
) -> PicardState:
    """Picard iteration for ``v = -e^{t Delta} U + D[U, v] + D[v, U] + D[v, v]``.

    The reconstructed solution ``u = v + U`` is recorded as the extra series
    ``"u"``; ``v(0) = -U`` holds exactly because every Duhamel term vanishes
    at ``t = 0``.  Increments use ``L~^inf(0, T; B^{2/p-1}_{p,q})``.
    """
    if not U.U.grid.same_as(grid):
        raise ValueError("grid mismatch")
    partition = _default_partition(grid, partition)
    cu = np.array(U.U.coeffs)
    times = time_grid.nodes
    uu = -advection_coeffs(grid, cu)

    def base(i: int) -> np.ndarray:
        return -cu * np.exp(-times[i] * grid.ksq)[:, None]

    def integrand(v: np.ndarray, i: int) -> np.ndarray:
        return -advection_coeffs(grid, cu + v) - uu

    def metric(t: np.ndarray, series: np.ndarray) -> float:
        idx = ChLIndex(math.inf, BesovIndex(p, q, 2.0 / p - 1.0), 0.0, float(t[-1]))
        return chemin_lerner_from_blocks(t, series, idx, partition)

    extras = {"u": lambda i, t, snap: snap[-1] + cu, "linear": lambda i, t, snap: snap[0]}
    return _picard(
        grid, time_grid, max_iter, base, integrand, metric, tol, p, partition,
        extras=extras, keep_fields=keep_fields,
    )


def coincidence_check(u_a: Trajectory, u_b: Trajectory, p: float = 2.0, partition: LPPartition | None = None) -> float:
    """``sup_t ||u_a(t) - u_b(t)||_{B^{2/p-1}_{p,inf}}`` over shared nodes."""
    if not u_a.grid.same_as(u_b.grid):
        raise ValueError("grid mismatch")
    if u_a.times.shape != u_b.times.shape or not np.allclose(u_a.times, u_b.times, rtol=1e-12, atol=0):
        raise ValueError("time range mismatch")
    partition = _default_partition(u_a.grid, partition)
    idx = BesovIndex(p, math.inf, 2.0 / p - 1.0)
    return max(besov_norm(a - b, idx, partition) for a, b in zip(u_a.fields, u_b.fields))


def sample_on(traj: Trajectory, times: np.ndarray) -> Trajectory:
    """Sub-trajectory at the given node times (which must be nodes of ``traj``)."""
    return Trajectory(traj.grid, np.asarray(times), tuple(traj.at(float(t)) for t in times))


# ---------------------------------------------------------------------------
# grid policies and the inflation experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridPolicy:
    """Per-``N`` grid rule.

    The frequency step is ``2^-(N + box_offset)`` (box ``L = 2^(N + box_offset) pi``)
    and the envelope window has half-width ``envelope_bandwidth``, so
    ``n = 2 envelope_bandwidth 2^(N + box_offset)``.  When ``n`` would exceed
    ``max_points`` the offset is lowered (a coarser box: fewer low blocks
    resolved) and the grid is flagged as reduced.  ``points``/``box_half_length``
    pin the grid for every ``N``.
    """

    box_offset: int = 2
    envelope_bandwidth: float = 4.0
    harmonics: int = 2
    max_points: int = 1024
    points: int | None = None
    box_half_length: float | None = None

    def grid_for(self, N: int, M: float) -> tuple[GridSpec, bool]:
        if self.points is not None or self.box_half_length is not None:
            if self.points is None or self.box_half_length is None:
                raise ValueError("points and box_half_length must be given together")
            return GridSpec(self.box_half_length, self.points, M, self.harmonics), False
        offset = self.box_offset
        while True:
            n = int(round(2 * self.envelope_bandwidth * 2 ** (N + offset)))
            if n <= self.max_points or N + offset <= 0:
                break
            offset -= 1
        L = 2.0 ** (N + offset) * math.pi
        return GridSpec(L, n, M, self.harmonics), offset < self.box_offset


@dataclass(frozen=True)
class TimePolicy:
    """Geometric time grid ``rho``, ``K = K_slope N + K_intercept``."""

    rho: float = 0.5
    K_slope: int = 4
    K_intercept: int = 16

    def grid_for(self, N: int, T: float) -> TimeGrid:
        return TimeGrid.geometric(T, self.rho, self.K_slope * N + self.K_intercept)


@dataclass(eq=False)
class InflationCase:
    """Everything measured for one ``N``."""

    params: ForceParams
    grid: GridSpec
    reduced: bool
    state: PicardState
    force_norm: float
    force_tilde_norm: float
    principal_lower_sum: float
    runtime_seconds: float

    @property
    def N(self) -> int:
        return self.params.N

    def quantities(self) -> dict[str, tuple[str, float]]:
        """Report quantities as ``name -> (norm descriptor, value)``."""
        p, T, N = self.params.p, self.params.T, self.params.N
        s = 2.0 / p - 1.0
        st = self.state
        term = BesovIndex(p, 1, s).descriptor() + f"@t={T:g}"
        linf = linfty_index(p, T).descriptor()
        force = BesovIndex(p, 1, 2.0 / p - 3.0).descriptor()
        return {
            "force_norm": (force, self.force_norm),
            "u1_linfty": (linf, st.linfty("u1")),
            "u2_terminal": (term, st.terminal_norm("u2")),
            "u211_terminal": (term, st.terminal_norm("u211")),
            "w_linfty": (linf, st.linfty("w")),
            "u_terminal": (term, st.terminal_norm("final")),
            "u_linfty": (linf, st.linfty("final")),
            "contraction_ratio": ("ratio[" + linf + "]", st.contraction_ratio_estimate),
        }

    def decomposition(self) -> dict[str, tuple[ChLIndex | BesovIndex, float]]:
        """Extra norms of the pieces ``u1, u211, u212, u22, w``."""
        p, T, N = self.params.p, self.params.T, self.params.N
        st = self.state
        s = 2.0 / p - 1.0
        li = linfty_index(p, T)
        lN = ln_index(p, N, T)
        b = BesovIndex(p, 1, s)
        out: dict[str, tuple] = {}
        for name in ("u1", "u2", "u211", "u212", "u21", "u22", "w", "final"):
            out[f"{name}_linfty"] = (li, st.linfty(name))
            out[f"{name}_terminal"] = (b, st.terminal_norm(name))
        out["w_lN"] = (lN, st.chemin_lerner("w", lN))
        out["force_tilde"] = (b, self.force_tilde_norm)
        out["u211_lower_sum"] = (BesovIndex(p, 1, s), self.principal_lower_sum)
        return out


def run_inflation_case(
    params: ForceParams,
    grid: GridSpec,
    time_grid: TimeGrid,
    tol: float = 1e-10,
    max_iter: int = 8,
    reduced: bool = False,
) -> InflationCase:
    """Solve the mild problem for one ``N`` and record the decomposition series.

    Series recorded at every node: ``u1`` (level 0), ``u2`` (level 1 minus
    level 0), ``w`` (deepest level minus level 1), the closed forms ``u211``,
    ``u212``, ``u21 = D[Ft, Ft]`` and ``u22 = u2 - u21``.
    """
    start = time.perf_counter()
    p = params.p
    F, ft = make_force(params, grid)
    partition = LPPartition.for_grid(grid)
    s = 2.0 / p - 1.0
    force_norm = besov_norm(F, BesovIndex(p, 1, s - 2.0), partition)
    force_tilde_norm = besov_norm(ft, BesovIndex(p, 1, s), partition)
    lim211, lim212 = principal_parts(params, grid, math.inf)
    lim21 = constant_duhamel(grid, -advection_coeffs(grid, ft.coeffs), math.inf)
    c211, c212 = np.array(lim211.coeffs), np.array(lim212.coeffs)

    def fill(t: float) -> np.ndarray:
        return (-np.expm1(-t * grid.ksq))[:, None]

    extras: dict[str, Extra] = {
        "u1": lambda i, t, snap: snap[0],
        "u2": lambda i, t, snap: snap[1] - snap[0],
        "w": lambda i, t, snap: snap[-1] - snap[1],
        "u211": lambda i, t, snap: c211 * fill(t),
        "u212": lambda i, t, snap: c212 * fill(t),
        "u21": lambda i, t, snap: lim21 * fill(t),
        "u22": lambda i, t, snap: snap[1] - snap[0] - lim21 * fill(t),
    }
    state = solve_mild_ns(F, grid, time_grid, tol, max_iter, p, partition, extras=extras)
    lower = 0.0
    for j in range(max(-params.N, partition.j_min), -1):
        lower += 2.0 ** (s * j) * state.series["u211"][-1][j - partition.j_min]
    return InflationCase(
        params, grid, reduced, state, force_norm, force_tilde_norm, lower,
        time.perf_counter() - start,
    )


def inflation_experiment(
    p: float,
    delta: float,
    N_list: Sequence[int],
    grid_policy: GridPolicy | None = None,
    time_policy: TimePolicy | None = None,
    tol: float = 1e-10,
    max_iter: int = 8,
    M: float = 10.0,
) -> list[InflationCase]:
    """Run :func:`run_inflation_case` for every ``N`` in ``N_list``."""
    grid_policy = grid_policy or GridPolicy()
    time_policy = time_policy or TimePolicy()
    out = []
    for N in N_list:
        if not 3 <= N <= 10:
            raise ValueError(f"N={N} outside 3..10")
        params = ForceParams(p, delta, N, M)
        grid, reduced = grid_policy.grid_for(N, M)
        tg = time_policy.grid_for(N, params.T)
        out.append(run_inflation_case(params, grid, tg, tol, max_iter, reduced))
    return out




@dataclass(frozen=True)
class ContractionScan:
    """Bisection record for the largest contracting amplitude.

    Attributes
    ----------
    delta_star : float
        Largest probed ``delta`` whose increment ratio stayed ``<= target``.
    ratio_at_star : float
    samples : tuple
        ``(delta, ratio, diverged)`` for every probe, in probing order.
    """

    delta_star: float
    ratio_at_star: float
    target: float
    samples: tuple[tuple[float, float, bool], ...]


def find_delta_star(
    p: float,
    N: int,
    lo: float = 0.1,
    hi: float = 20.0,
    target: float = 0.5,
    rtol: float = 0.02,
    grid_policy: GridPolicy | None = None,
    time_policy: TimePolicy | None = None,
    tol: float = 1e-10,
    max_iter: int = 8,
    M: float = 10.0,
) -> ContractionScan:
    """Geometric bisection on ``delta`` for the Picard increment ratio ``<= target``.

    ``lo`` must contract and ``hi`` must not; the bracket is halved in
    ``log delta`` until ``hi / lo <= 1 + rtol``.
    """
    grid_policy = grid_policy or GridPolicy()
    time_policy = time_policy or TimePolicy()
    grid, reduced = grid_policy.grid_for(N, M)
    samples = []

    def probe(delta: float) -> tuple[bool, float]:
        params = ForceParams(p, delta, N, M)
        case = run_inflation_case(params, grid, time_policy.grid_for(N, params.T), tol, max_iter, reduced)
        r = case.state.contraction_ratio_estimate
        samples.append((delta, r, case.state.diverged))
        return math.isfinite(r) and r <= target, r

    ok_lo, r_lo = probe(lo)
    ok_hi, _ = probe(hi)
    if not ok_lo or ok_hi:
        raise ValueError(f"[{lo}, {hi}] does not bracket the ratio {target}")
    while hi / lo > 1.0 + rtol:
        mid = math.sqrt(lo * hi)
        ok, r = probe(mid)
        if ok:
            lo, r_lo = mid, r
        else:
            hi = mid
    return ContractionScan(lo, r_lo, target, tuple(samples))
