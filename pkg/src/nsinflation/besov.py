"""Dyadic Littlewood-Paley blocks and homogeneous Besov / Chemin-Lerner norms.

Blocks use the symbol ``phi_j(xi) = h(2^-j |xi|) - h(2^(1-j) |xi|)`` built from a
smooth cutoff ``h`` equal to 1 on ``[0, 1]`` and 0 on ``[2, inf)``.  Because
consecutive symbols telescope, every nonzero frequency touches at most two
blocks, which the fast L2 path exploits.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable

import numpy as np

from .spectral import GridSpec, SpectralField, physical_chunks

__all__ = [
    "cutoff_profile",
    "parse_exponent",
    "format_exponent",
    "LPPartition",
    "BesovIndex",
    "ChLIndex",
    "Trajectory",
    "UnresolvedSupportError",
    "lp_block",
    "lp_norm",
    "block_norms",
    "besov_norm",
    "besov_from_blocks",
    "time_lr_norm",
    "chemin_lerner_norm",
    "chemin_lerner_from_blocks",
    "NormRow",
    "write_norm_csv",
    "read_norm_csv",
]

INF = math.inf


def cutoff_profile(r) -> np.ndarray:
    """``h(r) = g(2 - r) / (g(2 - r) + g(r - 1))`` with ``g(x) = exp(-1/x)`` for ``x > 0``."""
    r = np.asarray(r, dtype=float)
    a = 2.0 - r
    b = r - 1.0
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        ga = np.where(a > 0, np.exp(-1.0 / np.where(a > 0, a, 1.0)), 0.0)
        gb = np.where(b > 0, np.exp(-1.0 / np.where(b > 0, b, 1.0)), 0.0)
        out = ga / (ga + gb)
    return np.where(r <= 1.0, 1.0, np.where(r >= 2.0, 0.0, out))


def parse_exponent(x) -> float:
    """Exponent in ``[1, inf]``; accepts numbers and the strings ``inf`` / ``infinity``."""
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "infinity", "oo"):
            return INF
        x = float(x)
    x = float(x)
    if not (x >= 1.0):
        raise ValueError(f"exponent must lie in [1, inf], got {x}")
    return x


def format_exponent(x: float) -> str:
    if math.isinf(x):
        return "inf"
    return repr(float(x)) if x != int(x) else str(int(x))


def _format_real(x: float) -> str:
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


@dataclass(frozen=True)
class LPPartition:
    """Active dyadic block range ``j_min..j_max`` (inclusive)."""

    j_min: int
    j_max: int

    def __post_init__(self) -> None:
        if self.j_max < self.j_min:
            raise ValueError("j_max must be >= j_min")

    @property
    def blocks(self) -> np.ndarray:
        return np.arange(self.j_min, self.j_max + 1)

    @property
    def count(self) -> int:
        return self.j_max - self.j_min + 1

    @staticmethod
    def block_symbol(j: int, radius) -> np.ndarray:
        r = np.asarray(radius, dtype=float)
        return cutoff_profile(r * 2.0**-j) - cutoff_profile(r * 2.0 ** (1 - j))

    def partition_sum(self, radius) -> np.ndarray:
        """Telescoped sum of all active symbols."""
        r = np.asarray(radius, dtype=float)
        return cutoff_profile(r * 2.0**-self.j_max) - cutoff_profile(r * 2.0 ** (1 - self.j_min))

    def covers(self, radius) -> np.ndarray:
        """Where the active blocks sum to one: ``2^j_min <= |xi| <= 2^j_max``."""
        r = np.asarray(radius, dtype=float)
        return (r >= 2.0**self.j_min) & (r <= 2.0**self.j_max)

    @classmethod
    def for_grid(cls, grid: GridSpec, j_max: int | None = None) -> "LPPartition":
        """Blocks from the lowest grid frequency up to ``j_max``.

        The default ``j_max`` is the smallest one for which the active blocks
        still sum to one at every stored frequency.
        """
        j_min = int(math.floor(math.log2(grid.frequency_step) + 1e-12))
        if j_max is None:
            top = math.hypot(grid.max_frequency, grid.envelope_bandwidth)
            j_max = int(math.ceil(math.log2(top) - 1e-12))
        return cls(j_min, j_max)


@dataclass(frozen=True)
class BesovIndex:
    """``(p, q, s)`` of a homogeneous Besov norm."""

    p: float
    q: float
    s: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", parse_exponent(self.p))
        object.__setattr__(self, "q", parse_exponent(self.q))
        object.__setattr__(self, "s", float(self.s))

    def descriptor(self) -> str:
        return f"B[p={format_exponent(self.p)};q={format_exponent(self.q)};s={_format_real(self.s)}]"


@dataclass(frozen=True)
class ChLIndex:
    """``(r, besov, t_start, t_end)`` of a Chemin-Lerner norm."""

    r: float
    besov: BesovIndex
    t_start: float
    t_end: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "r", parse_exponent(self.r))
        if not self.t_start < self.t_end:
            raise ValueError("t_start must be < t_end")

    def descriptor(self) -> str:
        b = self.besov
        return (
            f"L~[r={format_exponent(self.r)};t={_format_real(self.t_start)}:{_format_real(self.t_end)}]"
            f"{b.descriptor()}"
        )


_DESC_RE = re.compile(
    r"^(?:L~\[r=(?P<r>[^;]+);t=(?P<t0>[^:]+):(?P<t1>[^\]]+)\])?"
    r"B\[p=(?P<p>[^;]+);q=(?P<q>[^;]+);s=(?P<s>[^\]]+)\](?:@t=(?P<at>.+))?$"
)


def parse_descriptor(text: str) -> dict:
    """Inverse of the ``descriptor`` strings (optionally suffixed ``@t=...``)."""
    m = _DESC_RE.match(text)
    if not m:
        raise ValueError(f"not a norm descriptor: {text!r}")
    out = {
        "p": parse_exponent(m["p"]),
        "q": parse_exponent(m["q"]),
        "s": float(m["s"]),
        "r": parse_exponent(m["r"]) if m["r"] else None,
        "t_start": float(m["t0"]) if m["t0"] else None,
        "t_end": float(m["t1"]) if m["t1"] else None,
        "t": float(m["at"]) if m["at"] else None,
    }
    return out


class UnresolvedSupportError(ValueError):
    """A field carries energy outside the active block range."""


# ---------------------------------------------------------------------------
# block evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _BlockTable:
    """For every stored mode: its lower block (relative index) and two symbol values."""

    lower: np.ndarray  # int16, -1 for modes below the range, count for above
    w_lower: np.ndarray
    w_upper: np.ndarray
    multiplicity: np.ndarray  # 1 for harmonic 0, 2 for harmonics with a conjugate twin
    uncovered: np.ndarray  # bool, modes where active symbols do not sum to one


@lru_cache(maxsize=6)
def _block_table(grid: GridSpec, partition: LPPartition) -> _BlockTable:
    r = grid.kabs
    with np.errstate(divide="ignore"):
        j0 = np.floor(np.log2(np.where(r > 0, r, 1.0))).astype(np.int64)
    w_lo = LPPartition.block_symbol(0, r * 2.0**-j0)
    w_hi = LPPartition.block_symbol(1, r * 2.0**-j0)
    rel = j0 - partition.j_min
    zero = r == 0
    w_lo[zero] = 0.0
    w_hi[zero] = 0.0
    # contributions landing outside the active range are dropped
    w_lo = np.where((rel >= 0) & (rel < partition.count), w_lo, 0.0)
    w_hi = np.where((rel + 1 >= 0) & (rel + 1 < partition.count), w_hi, 0.0)
    rel = np.clip(rel, -1, partition.count).astype(np.int16)
    mult = np.ones(grid.nh)
    mult[1:] = 2.0
    uncovered = ~partition.covers(r) & ~zero
    return _BlockTable(rel, w_lo, w_hi, mult, uncovered)


def _mode_energy(field) -> np.ndarray:
    """Per-mode physical energy density ``(2L)^2 * mult * |c|^2`` summed over components."""
    grid = field.grid
    e = np.abs(field.coeffs) ** 2
    if isinstance(field, SpectralField):
        e = e.sum(axis=1)
    e[1:] *= 2.0
    return e * (2 * grid.box_half_length) ** 2


def _l2_block_norms(field, partition: LPPartition) -> np.ndarray:
    tab = _block_table(field.grid, partition)
    e = _mode_energy(field)
    nb = partition.count
    idx = tab.lower.ravel().astype(np.int64) + 1  # shift so that -1 -> 0
    e = e.ravel()
    acc = np.bincount(idx, weights=e * tab.w_lower.ravel() ** 2, minlength=nb + 3)
    acc += np.bincount(idx + 1, weights=e * tab.w_upper.ravel() ** 2, minlength=nb + 3)[: acc.size]
    return np.sqrt(np.maximum(acc[1 : nb + 1], 0.0))


def check_resolved(field, partition: LPPartition, rel_tol: float = 1e-8) -> float:
    """Fraction of energy outside the covered annulus; raise if above ``rel_tol``."""
    tab = _block_table(field.grid, partition)
    e = _mode_energy(field)
    total = float(e.sum())
    if total == 0.0:
        return 0.0
    frac = float(e[tab.uncovered].sum()) / total
    if frac > rel_tol:
        raise UnresolvedSupportError(
            f"{frac:.3e} of the energy lies outside blocks {partition.j_min}..{partition.j_max}"
        )
    return frac


def _symbol_array(grid: GridSpec, j: int) -> np.ndarray:
    return LPPartition.block_symbol(j, grid.kabs)


def lp_block(field, j: int, partition: LPPartition):
    """``Delta_j field``: multiply coefficients by the block symbol."""
    if not partition.j_min <= j <= partition.j_max:
        raise ValueError(f"block {j} outside active range {partition.j_min}..{partition.j_max}")
    sym = _symbol_array(field.grid, j)
    if isinstance(field, SpectralField):
        sym = sym[:, None]
    return field._new(field.coeffs * sym)


def lp_norm(field, p) -> float:
    """Discrete L^p norm by box quadrature; ``p = inf`` is the max Euclidean magnitude.

    For ``p = 2`` the quadrature coincides with Parseval and is evaluated from
    the coefficients.
    """
    p = parse_exponent(p)
    if p == 2.0:
        return field.l2_norm()
    acc = 0.0
    for vals, area in physical_chunks(field):
        mag = np.abs(vals) if vals.ndim == 2 else np.sqrt(vals[0] ** 2 + vals[1] ** 2)
        if math.isinf(p):
            acc = max(acc, float(mag.max()) if mag.size else 0.0)
        else:
            acc += float(np.sum(mag**p)) * area
    return acc if math.isinf(p) else acc ** (1.0 / p)


def block_norms(field, p, partition: LPPartition, check: bool = True) -> np.ndarray:
    """``||Delta_j field||_{L^p}`` for every active block."""
    p = parse_exponent(p)
    if check:
        check_resolved(field, partition)
    if p == 2.0:
        return _l2_block_norms(field, partition)
    out = np.zeros(partition.count)
    energy = _l2_block_norms(field, partition)
    for i, j in enumerate(partition.blocks):
        if energy[i] == 0.0:
            continue
        out[i] = lp_norm(lp_block(field, int(j), partition), p)
    return out


def _lq(values: np.ndarray, q: float, axis: int = -1) -> np.ndarray:
    values = np.abs(values)
    if math.isinf(q):
        return values.max(axis=axis) if values.shape[axis] else np.zeros(values.shape[:axis])
    top = values.max(axis=axis, keepdims=True)
    safe = np.where(top > 0, top, 1.0)
    return np.squeeze(safe, axis=axis) * np.sum((values / safe) ** q, axis=axis) ** (1.0 / q)


def besov_from_blocks(blocks: np.ndarray, idx: BesovIndex, partition: LPPartition) -> float:
    """ℓ^q over j of ``2^(s j) b_j`` for precomputed block norms ``b_j``."""
    weights = 2.0 ** (idx.s * partition.blocks.astype(float))
    return float(_lq(weights * np.asarray(blocks), idx.q))


def besov_norm(field, idx: BesovIndex, partition: LPPartition) -> float:
    """Homogeneous Besov norm restricted to the active blocks.

    Raises
    ------
    UnresolvedSupportError
        If more than ``1e-8`` of the energy sits outside the covered annulus.
    """
    return besov_from_blocks(block_norms(field, idx.p, partition), idx, partition)


# ---------------------------------------------------------------------------
# trajectories and Chemin-Lerner norms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Fields sampled at increasing times starting from 0.

    ``quadrature_weights`` are the interval lengths used by the trapezoid rule.
    """

    grid: GridSpec
    times: np.ndarray
    fields: tuple
    quadrature_weights: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or t.size == 0 or t[0] != 0.0:
            raise ValueError("trajectory times must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        fields = tuple(self.fields)
        if len(fields) != t.size:
            raise ValueError("one field per time is required")
        for f in fields:
            if not f.grid.same_as(self.grid):
                raise ValueError("all trajectory fields must share the grid")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "fields", fields)
        w = np.diff(t)
        w.flags.writeable = False
        object.__setattr__(self, "quadrature_weights", w)

    def __len__(self) -> int:
        return self.times.size

    def at(self, t: float):
        """Field at a node time (exact match required)."""
        i = int(np.searchsorted(self.times, t))
        if i < self.times.size and math.isclose(self.times[i], t, rel_tol=1e-12, abs_tol=1e-300):
            return self.fields[i]
        raise ValueError(f"time {t} is not a trajectory node")

    def restrict(self, t_end: float) -> "Trajectory":
        k = int(np.searchsorted(self.times, t_end * (1 + 1e-12), side="right"))
        return Trajectory(self.grid, self.times[:k], self.fields[:k])

    def block_series(self, p, partition: LPPartition, check: bool = True) -> np.ndarray:
        """Block norms at every node, shape ``(nt, nblocks)``."""
        return np.stack([block_norms(f, p, partition, check=check) for f in self.fields])


def time_lr_norm(times: np.ndarray, values: np.ndarray, r: float, t_start: float, t_end: float) -> np.ndarray:
    """L^r norm on ``[t_start, t_end]`` of sampled nonnegative series.

    ``values`` has time on axis 0.  Interior samples are used as given; the
    interval ends are linearly interpolated when they fall between nodes.
    The trapezoid rule is applied to ``|g|^r``; ``r = inf`` takes the max.
    """
    times = np.asarray(times, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    lo_ok = t_start >= times[0] - 1e-12 * max(1.0, abs(times[0]))
    hi_ok = t_end <= times[-1] * (1 + 1e-12)
    if not (lo_ok and hi_ok) or not t_start < t_end:
        raise ValueError(
            f"interval [{t_start}, {t_end}] outside trajectory range [{times[0]}, {times[-1]}]"
        )
    t_end = min(t_end, times[-1])
    inner = (times > t_start) & (times < t_end)
    ts = np.concatenate([[t_start], times[inner], [t_end]])

    def interp(t: float) -> np.ndarray:
        k = int(np.searchsorted(times, t))
        if k < times.size and math.isclose(times[k], t, rel_tol=1e-12, abs_tol=0.0):
            return values[k]
        k = min(max(k, 1), times.size - 1)
        a = (t - times[k - 1]) / (times[k] - times[k - 1])
        return (1 - a) * values[k - 1] + a * values[k]

    vs = np.concatenate([interp(t_start)[None], values[inner], interp(t_end)[None]], axis=0)
    if math.isinf(r):
        return vs.max(axis=0)
    top = vs.max(axis=0)
    safe = np.where(top > 0, top, 1.0)
    g = (vs / safe) ** r
    dt = np.diff(ts).reshape((-1,) + (1,) * (vs.ndim - 1))
    integral = np.sum(dt * 0.5 * (g[1:] + g[:-1]), axis=0)
    return safe * integral ** (1.0 / r)


def chemin_lerner_from_blocks(
    times: np.ndarray, series: np.ndarray, idx: ChLIndex, partition: LPPartition
) -> float:
    """Chemin-Lerner norm from a ``(nt, nblocks)`` series of block norms."""
    per_block = time_lr_norm(times, series, idx.r, idx.t_start, idx.t_end)
    return besov_from_blocks(per_block, idx.besov, partition)


def chemin_lerner_norm(traj: Trajectory, idx: ChLIndex, partition: LPPartition) -> float:
    """``|| 2^(s j) ||Delta_j f||_{L^r(I; L^p)} ||_{l^q}`` over the active blocks."""
    series = traj.block_series(idx.besov.p, partition)
    return chemin_lerner_from_blocks(traj.times, series, idx, partition)


# ---------------------------------------------------------------------------
# CSV rows
# ---------------------------------------------------------------------------

NORM_CSV_COLUMNS = ("experiment_id", "norm_kind", "p", "q", "s", "r", "t_start", "t_end", "value")


@dataclass(frozen=True)
class NormRow:
    """One measured norm; ``r``/``t_start``/``t_end`` are empty for fixed-time norms."""

    experiment_id: str
    norm_kind: str
    p: float
    q: float
    s: float
    r: float | None
    t_start: float | None
    t_end: float | None
    value: float

    def as_strings(self) -> list[str]:
        def opt(x, fmt):
            return "" if x is None else fmt(x)

        return [
            self.experiment_id,
            self.norm_kind,
            format_exponent(self.p),
            format_exponent(self.q),
            repr(float(self.s)),
            opt(self.r, format_exponent),
            opt(self.t_start, lambda v: repr(float(v))),
            opt(self.t_end, lambda v: repr(float(v))),
            repr(float(self.value)),
        ]


def write_norm_csv(rows: Iterable[NormRow], path: str | Path | None = None) -> str:
    """Serialize rows (with header); write atomically when ``path`` is given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(NORM_CSV_COLUMNS)
    for row in rows:
        w.writerow(row.as_strings())
    text = buf.getvalue()
    if path is not None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        tmp.replace(path)
    return text


def read_norm_csv(text: str) -> list[NormRow]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for rec in reader:
        def opt(key, conv):
            return None if rec[key] == "" else conv(rec[key])

        out.append(
            NormRow(
                rec["experiment_id"], rec["norm_kind"], parse_exponent(rec["p"]),
                parse_exponent(rec["q"]), float(rec["s"]), opt("r", parse_exponent),
                opt("t_start", float), opt("t_end", float), float(rec["value"]),
            )
        )
    return out
