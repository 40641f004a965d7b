"""Time grids and exponential-trapezoid quadrature of Duhamel integrals.

For an integrand ``g`` the Duhamel term ``D(t) = int_0^t e^{(t - s) Delta} g(s) ds``
is advanced over ``[t_i, t_i + h]`` with the heat factor kept exact and ``g``
interpolated linearly::

    D_{i+1} = e^{-z} D_i + h (phi1(z) - phi2(z)) g_i + h phi2(z) g_{i+1},
    z = h |xi|^2,  phi1 = (1 - e^{-z}) / z,  phi2 = (z - 1 + e^{-z}) / z^2.

The rule is exact for integrands constant in time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .besov import Trajectory
from .spectral import GridSpec, SpectralField, advection_coeffs

__all__ = [
    "TimeGrid",
    "etd_weights",
    "duhamel",
    "duhamel_of",
    "constant_duhamel",
    "sweep",
    "SweepObserver",
]


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing nodes starting at 0.

    Build with :meth:`geometric` (nodes ``{0} U {T rho^(K-k)}_{k=0..K}``) or
    :meth:`from_nodes`.
    """

    nodes: np.ndarray
    rho: float | None = None
    K: int | None = None

    def __post_init__(self) -> None:
        t = np.array(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0:
            raise ValueError("time grid must start at 0 and have at least two nodes")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        t.flags.writeable = False
        object.__setattr__(self, "nodes", t)

    @classmethod
    def geometric(cls, T: float, rho: float = 0.5, K: int = 20) -> "TimeGrid":
        if not 0.3 < rho < 0.9:
            raise ValueError(f"ratio rho must lie in (0.3, 0.9), got {rho}")
        if K < 1 or T <= 0:
            raise ValueError("need K >= 1 and T > 0")
        k = np.arange(K + 1)
        nodes = np.concatenate([[0.0], T * rho ** (K - k).astype(float)])
        nodes[-1] = T
        return cls(nodes, rho, int(K))

    @classmethod
    def from_nodes(cls, nodes: Sequence[float]) -> "TimeGrid":
        return cls(np.asarray(nodes, dtype=float))

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def weights(self) -> np.ndarray:
        """Interval lengths."""
        return np.diff(self.nodes)

    def __len__(self) -> int:
        return self.nodes.size

    def halved(self) -> "TimeGrid":
        """Insert every interval midpoint (all steps halved)."""
        t = self.nodes
        mid = 0.5 * (t[1:] + t[:-1])
        out = np.empty(2 * t.size - 1)
        out[0::2] = t
        out[1::2] = mid
        return TimeGrid(out)

    def refined(self) -> "TimeGrid":
        """Geometric refinement ``rho -> sqrt(rho)``, ``K -> 2K`` on the same span."""
        if self.rho is None or self.K is None:
            return self.halved()
        return TimeGrid.geometric(self.horizon, math.sqrt(self.rho), 2 * self.K)

    def restrict(self, t_end: float) -> "TimeGrid":
        """Nodes up to ``t_end``; ``t_end`` is appended if it is not a node."""
        t = self.nodes
        if not 0 < t_end <= t[-1] * (1 + 1e-12):
            raise ValueError(f"t_end={t_end} outside (0, {t[-1]}]")
        keep = t[t < t_end * (1 - 1e-13)]
        return TimeGrid(np.concatenate([keep, [t_end]]))


def _phi2(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    small = z < 1e-2
    zs = z[small]
    # (z - 1 + e^-z) / z^2 = sum_m (-z)^m / (m + 2)!
    acc = np.zeros_like(zs)
    term = np.full_like(zs, 0.5)
    for m in range(7):
        acc += term
        term = term * (-zs) / (m + 3)
    out[small] = acc
    zl = z[~small]
    out[~small] = (zl + np.expm1(-zl)) / zl**2
    return out


def _phi1(z: np.ndarray) -> np.ndarray:
    out = np.ones_like(z)
    nz = z > 0
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


def etd_weights(ksq: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(decay, w_left, w_right)`` for one interval of length ``h``."""
    z = ksq * h
    decay = np.exp(-z)
    p1 = _phi1(z)
    p2 = _phi2(z)
    return decay, h * (p1 - p2), h * p2


def _vec(a: np.ndarray) -> np.ndarray:
    return a[:, None]


def constant_duhamel(grid: GridSpec, g: np.ndarray, t: float) -> np.ndarray:
    """``int_0^t e^{(t-s) Delta} g ds = (-Delta)^{-1} (1 - e^{t Delta}) g`` for constant ``g``.

    ``t = inf`` gives the stationary limit ``(-Delta)^{-1} g`` (zero mode dropped).
    """
    if math.isinf(t):
        mult = grid.inv_ksq
    else:
        mult = t * _phi1(grid.ksq * t)
    return g * (_vec(mult) if g.ndim == 4 else mult)


def duhamel_of(
    grid: GridSpec,
    times: np.ndarray,
    integrand: Callable[[int], np.ndarray],
    t_eval: float | None = None,
) -> np.ndarray:
    """Quadrature of ``int_0^t e^{(t-s) Delta} g(s) ds`` from samples ``g(times[i])``.

    ``integrand(i)`` returns the vector coefficients of ``g`` at node ``i``.
    ``t_eval`` defaults to the last node; between nodes, ``g`` is
    interpolated linearly.
    """
    times = np.asarray(times, dtype=float)
    if t_eval is None:
        t_eval = float(times[-1])
    if not 0 <= t_eval <= times[-1] * (1 + 1e-12):
        raise ValueError(f"t_eval={t_eval} outside [0, {times[-1]}]")
    g_prev = integrand(0)
    acc = np.zeros_like(g_prev)
    if t_eval == 0:
        return acc
    i = 0
    while i + 1 < times.size and times[i + 1] <= t_eval * (1 + 1e-13):
        g_next = integrand(i + 1)
        d, wl, wr = etd_weights(grid.ksq, times[i + 1] - times[i])
        acc = _vec(d) * acc + _vec(wl) * g_prev + _vec(wr) * g_next
        g_prev = g_next
        i += 1
    if times[i] < t_eval * (1 - 1e-13):
        g_next = integrand(i + 1)
        a = (t_eval - times[i]) / (times[i + 1] - times[i])
        g_end = (1 - a) * g_prev + a * g_next
        d, wl, wr = etd_weights(grid.ksq, t_eval - times[i])
        acc = _vec(d) * acc + _vec(wl) * g_prev + _vec(wr) * g_end
    return acc


def duhamel(u: Trajectory, v: Trajectory, t_eval: float) -> SpectralField:
    """``D[u, v](t) = - int_0^t e^{(t - s) Delta} P div(u(s) (x) v(s)) ds``.

    Both trajectories must share grid and times.  The heat factor is exact on
    each interval and the tensor term is interpolated linearly.
    """
    if not u.grid.same_as(v.grid):
        raise ValueError("grid mismatch")
    if u.times.shape != v.times.shape or np.any(u.times != v.times):
        raise ValueError("trajectories must share their time nodes")
    grid = u.grid
    same = u is v

    def g(i: int) -> np.ndarray:
        cu = u.fields[i].coeffs
        cv = cu if same else v.fields[i].coeffs
        return -advection_coeffs(grid, cu, cv)

    c = duhamel_of(grid, u.times, g, t_eval)
    return SpectralField(grid, c, _checked=True)


# ---------------------------------------------------------------------------
# streaming Picard sweep
# ---------------------------------------------------------------------------


class SweepObserver:
    """Receives Picard level values node by node during :func:`sweep`."""

    def level(self, index: int, time: float, level: int, value: np.ndarray) -> None:
        """Level ``level`` (0 is the base term) at node ``index``."""

    def node_done(self, index: int, time: float) -> bool:
        """Called after all levels of a node; return ``True`` to abort."""
        return False


def sweep(
    grid: GridSpec,
    times: np.ndarray,
    levels: int,
    base: Callable[[int], np.ndarray | None],
    integrand: Callable[[np.ndarray, int], np.ndarray],
    observer: SweepObserver,
    settle_rtol: float = 0.0,
) -> int:
    """March all Picard levels through the time grid together.

    Level ``l`` is ``X_l(t) = base(t) + int_0^t e^{(t-s) Delta} g(X_{l-1}(s), s) ds``
    with ``X_0 = base``.  Since level ``l`` at a node only needs level
    ``l - 1`` at that node, each level keeps one accumulator and one previous
    integrand sample; memory does not grow with the number of nodes.

    With ``settle_rtol > 0``, once a level differs from the one below it by
    less than ``settle_rtol`` (relative, coefficient l2) at a node, the deeper
    levels at that node copy its state instead of re-evaluating the
    integrand.  They resume from that state at later nodes, so the result
    differs from the full sweep only at the ``settle_rtol`` level.

    Returns the number of nodes processed (fewer when the observer aborts).
    """
    times = np.asarray(times, dtype=float)
    shape = grid.vector_shape()
    acc = [np.zeros(shape, np.complex128) for _ in range(levels)]
    g_prev: list[np.ndarray | None] = [None] * levels
    for i, t in enumerate(times):
        b = base(i)
        if b is None:
            b = np.zeros(shape, np.complex128)
        if i > 0:
            d, wl, wr = etd_weights(grid.ksq, t - times[i - 1])
            d, wl, wr = _vec(d), _vec(wl), _vec(wr)
        value = b
        observer.level(i, float(t), 0, value)
        lev = 0
        while lev < levels:
            g = integrand(value, i)
            if i > 0:
                a = acc[lev]
                a *= d
                a += wl * g_prev[lev]
                a += wr * g
            g_prev[lev] = g
            new = b + acc[lev]
            observer.level(i, float(t), lev + 1, new)
            settled = False
            if settle_rtol > 0 and lev > 0:
                scale = np.linalg.norm(new)
                settled = scale == 0 or np.linalg.norm(new - value) <= settle_rtol * scale
            value = new
            lev += 1
            if settled:
                for deeper in range(lev, levels):
                    acc[deeper][...] = acc[lev - 1]
                    g_prev[deeper] = g
                    observer.level(i, float(t), deeper + 1, value)
                break
        if observer.node_done(i, float(t)):
            return i + 1
    return times.size
