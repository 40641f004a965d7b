"""Fourier representation of real fields on a periodic box approximating the plane.

A field is stored as Fourier coefficients ``c`` with

    f(x) = sum_k exp(i k M x1) * sum_xi c_k(xi) exp(i xi . x),

where ``k`` runs over carrier harmonics ``-H..H`` and ``xi`` over the envelope
lattice ``(pi / L) Z^2`` truncated to ``[-kmax, kmax)^2``.  Only ``k >= 0`` is
stored; the field is real, so ``A_{-k} = conj(A_k)``.  With ``H = 0`` this is
the ordinary periodic spectral representation.  With ``H > 0`` the carrier
``M`` must be a multiple of the frequency step, so a harmonic band is an exact
window of a much larger periodic grid: the representation is exact for every
field whose spectrum lies inside the retained bands.

Physical samples sit at ``x = (i h, j h)``, ``h = 2L / n``, i.e. the origin is
at index ``(0, 0)`` and the box ``[-L, L)^2`` is traversed periodically.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "ScalarSpectralField",
    "SpectralField",
    "make_grid",
    "derivative",
    "perp_gradient",
    "gradient",
    "divergence",
    "helmholtz_project",
    "heat_propagate",
    "inverse_laplacian",
    "laplacian",
    "cos_modulate",
    "pointwise_product",
    "tensor_product",
    "tensor_divergence",
    "advection",
    "advection_coeffs",
    "to_physical",
    "from_physical",
    "physical_chunks",
    "inner_product",
    "set_fft_workers",
    "save_snapshot",
    "load_snapshot",
]

_FFT_WORKERS = 1


def set_fft_workers(workers: int) -> None:
    """Set the thread count handed to the FFT backend."""
    global _FFT_WORKERS
    if workers < 1:
        raise ValueError("workers must be >= 1")
    _FFT_WORKERS = int(workers)


def _is_pow2(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Periodic box ``[-L, L)^2`` with ``n`` points per dimension.

    Parameters
    ----------
    box_half_length : float
        ``L``; the frequency step is ``pi / L``.
    points_per_dim : int
        Power of two, at least 16.
    carrier : float
        Carrier frequency ``M`` along ``x1`` for harmonic storage.  Ignored
        when ``harmonics == 0``.
    harmonics : int
        Highest stored carrier harmonic ``H``.
    """

    box_half_length: float
    points_per_dim: int
    carrier: float = 0.0
    harmonics: int = 0

    def __post_init__(self) -> None:
        n = self.points_per_dim
        if not isinstance(n, (int, np.integer)) or not _is_pow2(int(n)) or n < 16:
            raise ValueError(f"points_per_dim must be a power of two >= 16, got {n!r}")
        if not self.box_half_length > 0 or not math.isfinite(self.box_half_length):
            raise ValueError(f"box_half_length must be positive, got {self.box_half_length!r}")
        if self.harmonics < 0:
            raise ValueError("harmonics must be >= 0")
        object.__setattr__(self, "points_per_dim", int(n))
        if self.harmonics == 0:
            object.__setattr__(self, "carrier", 0.0)
            return
        ratio = self.carrier / self.frequency_step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, abs(ratio)):
            raise ValueError("carrier must be an integer multiple of the frequency step")
        if round(ratio) < n:
            raise ValueError(
                "carrier bands overlap: carrier must be >= 2 * envelope bandwidth "
                f"({2 * self.envelope_bandwidth:g})"
            )

    # -- scalars -----------------------------------------------------------
    @property
    def frequency_step(self) -> float:
        return math.pi / self.box_half_length

    @property
    def envelope_bandwidth(self) -> float:
        """Half-width of the stored envelope window, ``step * n / 2``."""
        return self.frequency_step * self.points_per_dim / 2

    @property
    def max_frequency(self) -> float:
        """Largest real frequency magnitude along an axis that can be stored."""
        return self.harmonics * self.carrier + self.envelope_bandwidth

    @property
    def carrier_index(self) -> int:
        return int(round(self.carrier / self.frequency_step)) if self.harmonics else 0

    @property
    def spacing(self) -> float:
        return 2 * self.box_half_length / self.points_per_dim

    @property
    def nh(self) -> int:
        """Number of stored harmonics ``H + 1``."""
        return self.harmonics + 1

    @property
    def is_plain(self) -> bool:
        return self.harmonics == 0

    def scalar_shape(self) -> tuple[int, int, int]:
        n = self.points_per_dim
        return (self.nh, n, n)

    def vector_shape(self) -> tuple[int, int, int, int]:
        n = self.points_per_dim
        return (self.nh, 2, n, n)

    def resolves(self, radius: float) -> bool:
        """Whether every frequency with ``|xi| <= radius`` has a slot in harmonic 0."""
        return radius < self.envelope_bandwidth

    # -- frequency arrays ----------------------------------------------------
    @cached_property
    def envelope_frequencies(self) -> np.ndarray:
        n = self.points_per_dim
        return np.fft.fftfreq(n, d=1.0 / n) * self.frequency_step

    @cached_property
    def retained(self) -> np.ndarray:
        """Mask of stored modes per axis: the Nyquist index is always empty."""
        m = np.ones(self.points_per_dim, dtype=bool)
        m[self.points_per_dim // 2] = False
        return m

    @cached_property
    def xi1(self) -> np.ndarray:
        """Real first frequency, shape ``(H+1, n, 1)``."""
        env = self.envelope_frequencies
        shifts = np.arange(self.nh) * self.carrier
        return (env[None, :] + shifts[:, None])[:, :, None]

    @cached_property
    def xi2(self) -> np.ndarray:
        """Second frequency, shape ``(1, 1, n)``."""
        return self.envelope_frequencies[None, None, :]

    @cached_property
    def ksq(self) -> np.ndarray:
        """``|xi|^2`` of every stored mode, shape ``(H+1, n, n)``."""
        return self.xi1**2 + self.xi2**2

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @cached_property
    def inv_ksq(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            out = 1.0 / self.ksq
        out[0, 0, 0] = 0.0
        return out

    def physical_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample coordinates wrapped into ``[-L, L)`` (plain grids)."""
        n, L = self.points_per_dim, self.box_half_length
        x = np.arange(n) * self.spacing
        x = np.where(x >= L, x - 2 * L, x)
        return np.meshgrid(x, x, indexing="ij")

    def same_as(self, other: "GridSpec") -> bool:
        return (
            self.points_per_dim == other.points_per_dim
            and math.isclose(self.box_half_length, other.box_half_length, rel_tol=1e-14)
            and self.harmonics == other.harmonics
            and math.isclose(self.carrier, other.carrier, rel_tol=1e-14, abs_tol=0.0)
        )


def make_grid(
    box_half_length: float, points_per_dim: int, carrier: float = 0.0, harmonics: int = 0
) -> GridSpec:
    """Build a :class:`GridSpec`, validating size and length."""
    return GridSpec(float(box_half_length), points_per_dim, float(carrier), int(harmonics))


# ---------------------------------------------------------------------------
# symmetry helpers
# ---------------------------------------------------------------------------


def _flip(a: np.ndarray) -> np.ndarray:
    """Return ``a`` evaluated at ``-xi`` on the last two (FFT-ordered) axes."""
    return np.roll(a[..., ::-1, ::-1], 1, axis=(-2, -1))


def _clean(coeffs: np.ndarray, grid: GridSpec, zero_mean: bool) -> np.ndarray:
    """Zero Nyquist lines, make harmonic 0 exactly Hermitian, optionally zero the mean."""
    h = grid.points_per_dim // 2
    coeffs[..., h, :] = 0.0
    coeffs[..., :, h] = 0.0
    c0 = coeffs[0]
    c0 *= 0.5
    c0 += np.conj(_flip(c0))
    if zero_mean:
        coeffs[0, ..., 0, 0] = 0.0
    return coeffs


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


class _FieldBase:
    grid: GridSpec
    coeffs: np.ndarray
    _ncomp_axes: int = 0

    def _new(self, coeffs: np.ndarray):
        return type(self)(self.grid, coeffs, _checked=True)

    def _check_same_grid(self, other) -> None:
        if not self.grid.same_as(other.grid):
            raise ValueError("grid mismatch")

    def __add__(self, other):
        if not isinstance(other, type(self)):
            return NotImplemented
        self._check_same_grid(other)
        return self._new(self.coeffs + other.coeffs)

    def __sub__(self, other):
        if not isinstance(other, type(self)):
            return NotImplemented
        self._check_same_grid(other)
        return self._new(self.coeffs - other.coeffs)

    def __mul__(self, alpha):
        if isinstance(alpha, (int, float, np.floating, np.integer)):
            return self._new(self.coeffs * float(alpha))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, alpha):
        return self * (1.0 / alpha)

    def __neg__(self):
        return self._new(-self.coeffs)

    def norm_coeffs(self) -> float:
        """Max coefficient modulus (a cheap size measure for tolerances)."""
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    def l2_norm(self) -> float:
        """Physical L2 norm via Parseval, counting the conjugate harmonics."""
        return math.sqrt(_energy(self.coeffs, self.grid))

    def hermitian_defect(self) -> float:
        c0 = self.coeffs[0]
        return float(np.max(np.abs(c0 - np.conj(_flip(c0)))))


@dataclass(frozen=True, eq=False)
class ScalarSpectralField(_FieldBase):
    """Real scalar field; ``coeffs`` has shape ``(H+1, n, n)``."""

    grid: GridSpec
    coeffs: np.ndarray
    _checked: bool = False

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs)
        if c.ndim == 2 and self.grid.is_plain:
            c = c[None]
        if c.shape != self.grid.scalar_shape():
            raise ValueError(f"coefficient shape {c.shape} != {self.grid.scalar_shape()}")
        if not self._checked:
            c = _clean(np.array(c, dtype=np.complex128), self.grid, zero_mean=False)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarSpectralField":
        return cls(grid, np.zeros(grid.scalar_shape(), np.complex128), _checked=True)

    @property
    def mean(self) -> float:
        return float(self.coeffs[0, 0, 0].real)


@dataclass(frozen=True, eq=False)
class SpectralField(_FieldBase):
    """Real mean-free vector field; ``coeffs`` has shape ``(H+1, 2, n, n)``."""

    grid: GridSpec
    coeffs: np.ndarray
    _checked: bool = False

    def __post_init__(self) -> None:
        c = np.asarray(self.coeffs)
        if c.ndim == 3 and self.grid.is_plain:
            c = c[None]
        if c.shape != self.grid.vector_shape():
            raise ValueError(f"coefficient shape {c.shape} != {self.grid.vector_shape()}")
        if not self._checked:
            c = _clean(np.array(c, dtype=np.complex128), self.grid, zero_mean=True)
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralField":
        return cls(grid, np.zeros(grid.vector_shape(), np.complex128), _checked=True)

    @classmethod
    def from_components(cls, f1: ScalarSpectralField, f2: ScalarSpectralField) -> "SpectralField":
        f1._check_same_grid(f2)
        c = np.stack([f1.coeffs, f2.coeffs], axis=1)
        c[0, :, 0, 0] = 0.0
        return cls(f1.grid, c, _checked=True)

    def component(self, i: int) -> ScalarSpectralField:
        """Component ``i`` in ``{1, 2}``."""
        return ScalarSpectralField(self.grid, np.array(self.coeffs[:, i - 1]), _checked=True)


def _energy(coeffs: np.ndarray, grid: GridSpec) -> float:
    """Squared L2 norm over the box from coefficients."""
    a = np.abs(coeffs) ** 2
    e = a[0].sum() + 2.0 * a[1:].sum()
    return float(e) * (2 * grid.box_half_length) ** 2


def inner_product(f: _FieldBase, g: _FieldBase) -> float:
    """Discrete L2 pairing ``int f . g dx`` computed from coefficients."""
    f._check_same_grid(g)
    prod = f.coeffs * np.conj(g.coeffs)
    s = prod[0].sum().real + 2.0 * prod[1:].sum().real
    return float(s) * (2 * f.grid.box_half_length) ** 2


# ---------------------------------------------------------------------------
# linear operators
# ---------------------------------------------------------------------------


def _axis_symbol(grid: GridSpec, axis: int) -> np.ndarray:
    if axis == 1:
        return grid.xi1
    if axis == 2:
        return grid.xi2
    raise ValueError("axis must be 1 or 2")


def derivative(field, axis: int):
    """Partial derivative along ``axis`` (1 or 2): multiply by ``i xi_axis``."""
    sym = 1j * _axis_symbol(field.grid, axis)
    if isinstance(field, SpectralField):
        sym = sym[:, None]
    return field._new(field.coeffs * sym)


def perp_gradient(g: ScalarSpectralField) -> SpectralField:
    """``(d2 g, -d1 g)``; exactly divergence-free."""
    grid = g.grid
    c = np.empty(grid.vector_shape(), np.complex128)
    c[:, 0] = 1j * grid.xi2 * g.coeffs
    c[:, 1] = -1j * grid.xi1 * g.coeffs
    c[0, :, 0, 0] = 0.0
    return SpectralField(grid, c, _checked=True)


def gradient(g: ScalarSpectralField) -> SpectralField:
    grid = g.grid
    c = np.empty(grid.vector_shape(), np.complex128)
    c[:, 0] = 1j * grid.xi1 * g.coeffs
    c[:, 1] = 1j * grid.xi2 * g.coeffs
    c[0, :, 0, 0] = 0.0
    return SpectralField(grid, c, _checked=True)


def divergence(f: SpectralField) -> ScalarSpectralField:
    grid = f.grid
    c = 1j * (grid.xi1 * f.coeffs[:, 0] + grid.xi2 * f.coeffs[:, 1])
    return ScalarSpectralField(grid, c, _checked=True)


def _project_inplace(c: np.ndarray, grid: GridSpec) -> np.ndarray:
    dot = (grid.xi1 * c[:, 0] + grid.xi2 * c[:, 1]) * grid.inv_ksq
    c[:, 0] -= grid.xi1 * dot
    c[:, 1] -= grid.xi2 * dot
    c[0, :, 0, 0] = 0.0
    return c


def helmholtz_project(f: SpectralField) -> SpectralField:
    """Apply ``I - xi xi^T / |xi|^2``; the zero mode is set to 0."""
    return SpectralField(f.grid, _project_inplace(np.array(f.coeffs), f.grid), _checked=True)


def heat_propagate(f, t: float):
    """Multiply each coefficient by ``exp(-t |xi|^2)``."""
    if t < 0:
        raise ValueError(f"heat time must be nonnegative, got {t}")
    mult = np.exp(-t * f.grid.ksq)
    if isinstance(f, SpectralField):
        mult = mult[:, None]
    return f._new(f.coeffs * mult)


def laplacian(f):
    mult = -f.grid.ksq
    if isinstance(f, SpectralField):
        mult = mult[:, None]
    return f._new(f.coeffs * mult)


def inverse_laplacian(f):
    """Apply ``(-Delta)^{-1}``: divide by ``|xi|^2`` away from the zero mode.

    Raises
    ------
    ValueError
        If the zero mode is nonzero beyond rounding (``1e-13`` relative).
    """
    zero = np.abs(f.coeffs[0, ..., 0, 0]).max()
    scale = f.norm_coeffs()
    if zero > 1e-13 * max(scale, 1e-300) and zero > 0:
        raise ValueError("inverse_laplacian needs a mean-free field (nonzero zero mode)")
    mult = f.grid.inv_ksq
    if isinstance(f, SpectralField):
        mult = mult[:, None]
    c = f.coeffs * mult
    c[0, ..., 0, 0] = 0.0
    return f._new(c)


def _shift_harmonics(c: np.ndarray, grid: GridSpec, shift: int) -> np.ndarray:
    """Multiply by ``exp(i shift M x1)``; harmonics beyond ``H`` are dropped."""
    H = grid.harmonics
    out = np.zeros_like(c)
    # full signed harmonic list: A_{-k} = conj(flip(A_k))
    for k_out in range(0, H + 1):
        k_in = k_out - shift
        if abs(k_in) > H:
            continue
        out[k_out] += c[k_in] if k_in >= 0 else np.conj(_flip(c[-k_in]))
    return out


def cos_modulate(f, frequency: float):
    """Multiply a field by ``cos(frequency * x1)``.

    On a harmonic grid ``frequency`` must equal the carrier; on a plain grid it
    must be a multiple of the frequency step and the result must fit.
    """
    grid = f.grid
    if grid.is_plain:
        m = frequency / grid.frequency_step
        if abs(m - round(m)) > 1e-9 * max(1.0, abs(m)):
            raise ValueError("modulation frequency must be a multiple of the frequency step")
        m = int(round(m))
        c = f.coeffs
        # coefficients within m of the Nyquist line would wrap; refuse them
        n = grid.points_per_dim
        env = np.abs(np.fft.fftfreq(n, 1.0 / n))
        band = env > (n // 2 - 1 - abs(m))
        if np.any(np.abs(c[..., band, :]) > 0):
            raise ValueError("modulated field does not fit on the grid")
        out = 0.5 * (np.roll(c, m, axis=-2) + np.roll(c, -m, axis=-2))
        if isinstance(f, SpectralField):
            out[0, :, 0, 0] = 0.0
        return f._new(_clean(out, grid, zero_mean=isinstance(f, SpectralField)))
    if not math.isclose(frequency, grid.carrier, rel_tol=1e-12):
        raise ValueError("on a harmonic grid only the carrier can modulate")
    c = f.coeffs
    out = 0.5 * (_shift_harmonics(c, grid, 1) + _shift_harmonics(c, grid, -1))
    return f._new(_clean(out, grid, zero_mean=isinstance(f, SpectralField)))


# ---------------------------------------------------------------------------
# padded transforms and products
# ---------------------------------------------------------------------------


def _padded_size(n: int) -> int:
    return 3 * n // 2


def _to_padded_full(c: np.ndarray, n: int, npad: int) -> np.ndarray:
    h = n // 2
    out = np.zeros(c.shape[:-2] + (npad, npad), np.complex128)
    out[..., :h, :h] = c[..., :h, :h]
    out[..., :h, npad - h + 1 :] = c[..., :h, h + 1 :]
    out[..., npad - h + 1 :, :h] = c[..., h + 1 :, :h]
    out[..., npad - h + 1 :, npad - h + 1 :] = c[..., h + 1 :, h + 1 :]
    return out


def _from_padded_full(p: np.ndarray, n: int, npad: int) -> np.ndarray:
    h = n // 2
    out = np.zeros(p.shape[:-2] + (n, n), np.complex128)
    out[..., :h, :h] = p[..., :h, :h]
    out[..., :h, h + 1 :] = p[..., :h, npad - h + 1 :]
    out[..., h + 1 :, :h] = p[..., npad - h + 1 :, :h]
    out[..., h + 1 :, h + 1 :] = p[..., npad - h + 1 :, npad - h + 1 :]
    return out


def _real_inverse_padded(c: np.ndarray, n: int, npad: int) -> np.ndarray:
    """Hermitian coefficients ``(..., n, n)`` to real samples ``(..., npad, npad)``."""
    h = n // 2
    half = np.zeros(c.shape[:-2] + (npad, npad // 2 + 1), np.complex128)
    half[..., :h, :h] = c[..., :h, :h]
    half[..., npad - h + 1 :, :h] = c[..., h + 1 :, :h]
    return sfft.irfft2(half, s=(npad, npad), axes=(-2, -1), norm="forward", workers=_FFT_WORKERS)


def _real_forward_padded(x: np.ndarray, n: int, npad: int) -> np.ndarray:
    """Real samples to Hermitian coefficients truncated to ``(..., n, n)``."""
    h = n // 2
    r = sfft.rfft2(x, axes=(-2, -1), norm="forward", workers=_FFT_WORKERS)
    e = np.zeros(x.shape[:-2] + (n, h), np.complex128)
    e[..., :h, :] = r[..., :h, :h]
    e[..., h + 1 :, :] = r[..., npad - h + 1 :, :h]
    out = np.zeros(x.shape[:-2] + (n, n), np.complex128)
    out[..., :, :h] = e
    ef = np.roll(e[..., ::-1, :], 1, axis=-2)
    out[..., :, h + 1 :] = np.conj(ef[..., :, h - 1 : 0 : -1])
    # column 0 is Hermitian only up to rounding; symmetrize it exactly
    col = out[..., :, 0]
    col_f = np.roll(col[..., ::-1], 1, axis=-1)
    out[..., :, 0] = 0.5 * (col + np.conj(col_f))
    return out


def _complex_inverse_padded(c: np.ndarray, n: int, npad: int) -> np.ndarray:
    return sfft.ifft2(
        _to_padded_full(c, n, npad), axes=(-2, -1), norm="forward", workers=_FFT_WORKERS
    )


def _complex_forward_padded(x: np.ndarray, n: int, npad: int) -> np.ndarray:
    return _from_padded_full(
        sfft.fft2(x, axes=(-2, -1), norm="forward", workers=_FFT_WORKERS), n, npad
    )


def _padded_physical(coeffs: np.ndarray, grid: GridSpec) -> list[np.ndarray]:
    """Per-harmonic padded samples: harmonic 0 real, the rest complex."""
    n = grid.points_per_dim
    npad = _padded_size(n)
    out = [_real_inverse_padded(coeffs[0], n, npad)]
    for k in range(1, grid.nh):
        out.append(_complex_inverse_padded(coeffs[k], n, npad))
    return out


def _harmonic(phys: Sequence[np.ndarray], k: int) -> np.ndarray:
    return phys[k] if k >= 0 else np.conj(phys[-k])


def _product_harmonics(pa: Sequence[np.ndarray], pb: Sequence[np.ndarray], H: int) -> list[np.ndarray]:
    """Samples of the harmonics ``0..H`` of a product, given factor samples."""
    out = []
    for m in range(H + 1):
        if m == 0:
            acc = pa[0] * pb[0]
            for k in range(1, H + 1):
                acc = acc + 2.0 * (pa[k] * np.conj(pb[k])).real
        else:
            acc = None
            for k1 in range(m - H, H + 1):
                term = _harmonic(pa, k1) * _harmonic(pb, m - k1)
                acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _forward_harmonics(phys: Sequence[np.ndarray], grid: GridSpec) -> np.ndarray:
    n = grid.points_per_dim
    npad = _padded_size(n)
    first = _real_forward_padded(phys[0], n, npad)
    out = np.empty((grid.nh,) + first.shape, np.complex128)
    out[0] = first
    for k in range(1, grid.nh):
        out[k] = _complex_forward_padded(phys[k], n, npad)
    return out


def pointwise_product(f: ScalarSpectralField, g: ScalarSpectralField) -> ScalarSpectralField:
    """Dealiased product of two scalar fields.

    Factors are synthesized on a grid padded by 3/2 per axis, multiplied, and
    transformed back; the result is truncated to the stored band, which is
    the same alias-free product the 2/3 rule delivers.
    """
    f._check_same_grid(g)
    grid = f.grid
    pa = _padded_physical(f.coeffs, grid)
    pb = pa if g is f else _padded_physical(g.coeffs, grid)
    c = _forward_harmonics(_product_harmonics(pa, pb, grid.harmonics), grid)
    return ScalarSpectralField(grid, _clean(c, grid, zero_mean=False), _checked=True)


def tensor_product(u: SpectralField, v: SpectralField) -> list[list[ScalarSpectralField]]:
    """``T[i][j] = u_i v_j`` (0-based indices) as dealiased scalar fields."""
    u._check_same_grid(v)
    grid = u.grid
    pu = _padded_physical(u.coeffs, grid)
    pv = pu if v is u else _padded_physical(v.coeffs, grid)
    T = []
    for i in range(2):
        row = []
        for j in range(2):
            ph = _product_harmonics([a[i] for a in pu], [b[j] for b in pv], grid.harmonics)
            c = _clean(_forward_harmonics(ph, grid), grid, zero_mean=False)
            row.append(ScalarSpectralField(grid, c, _checked=True))
        T.append(row)
    return T


def tensor_divergence(T: Sequence[Sequence[ScalarSpectralField]]) -> SpectralField:
    """``(div T)_i = sum_j d_j T[j][i]``, the convention for ``div(u (x) v)``."""
    grid = T[0][0].grid
    c = np.empty(grid.vector_shape(), np.complex128)
    for i in range(2):
        c[:, i] = 1j * (grid.xi1 * T[0][i].coeffs + grid.xi2 * T[1][i].coeffs)
    c[0, :, 0, 0] = 0.0
    return SpectralField(grid, c, _checked=True)


def _advection_coeffs(pu: Sequence[np.ndarray], pv: Sequence[np.ndarray], grid: GridSpec, symmetric: bool) -> np.ndarray:
    """Coefficients of ``P div(u (x) v)`` from padded samples of ``u`` and ``v``."""
    H = grid.harmonics
    out = np.zeros(grid.vector_shape(), np.complex128)

    def prod(i: int, j: int) -> np.ndarray:
        ph = _product_harmonics([a[i] for a in pu], [b[j] for b in pv], H)
        return _forward_harmonics(ph, grid)

    t00 = prod(0, 0)
    out[:, 0] += 1j * grid.xi1 * t00
    del t00
    t11 = prod(1, 1)
    out[:, 1] += 1j * grid.xi2 * t11
    del t11
    t01 = prod(0, 1)  # u_1 v_2
    # (div T)_i = sum_j d_j (u_j v_i):  T[0][1] = u_1 v_2 feeds component 2 via d_1
    out[:, 1] += 1j * grid.xi1 * t01
    if symmetric:
        out[:, 0] += 1j * grid.xi2 * t01
    else:
        del t01
        t10 = prod(1, 0)  # u_2 v_1
        out[:, 0] += 1j * grid.xi2 * t10
    _clean(out, grid, zero_mean=True)
    return _project_inplace(out, grid)


def advection_coeffs(grid: GridSpec, cu: np.ndarray, cv: np.ndarray | None = None) -> np.ndarray:
    """Array-level :func:`advection`: coefficients in, coefficients out."""
    pu = _padded_physical(cu, grid)
    if cv is None or cv is cu:
        return _advection_coeffs(pu, pu, grid, True)
    return _advection_coeffs(pu, _padded_physical(cv, grid), grid, False)


def advection(u: SpectralField, v: SpectralField | None = None) -> SpectralField:
    """``P div(u (x) v)`` with dealiased products; ``v`` defaults to ``u``."""
    grid = u.grid
    if v is None:
        v = u
    u._check_same_grid(v)
    pu = _padded_physical(u.coeffs, grid)
    pv = pu if v is u else _padded_physical(v.coeffs, grid)
    return SpectralField(grid, _advection_coeffs(pu, pv, grid, v is u), _checked=True)


# ---------------------------------------------------------------------------
# physical space
# ---------------------------------------------------------------------------


def to_physical(field) -> np.ndarray:
    """Real samples; shape ``(n, n)`` or ``(2, n, n)`` on plain grids.

    Harmonic grids are synthesized on a refined ``x1`` grid, see
    :func:`physical_chunks`; the full array is returned.
    """
    grid = field.grid
    if grid.is_plain:
        n = grid.points_per_dim
        half = field.coeffs[0][..., : n // 2 + 1]
        return sfft.irfft2(half, s=(n, n), axes=(-2, -1), norm="forward", workers=_FFT_WORKERS)
    parts = [chunk for chunk, _ in physical_chunks(field, max_bytes=1 << 62)]
    return np.concatenate(parts, axis=-1)


def from_physical(grid: GridSpec, values: np.ndarray):
    """Coefficients of real samples on a plain grid (Nyquist lines dropped).

    ``values`` of shape ``(n, n)`` gives a scalar field, ``(2, n, n)`` a
    vector field (whose mean is removed).
    """
    if not grid.is_plain:
        raise ValueError("from_physical needs a plain grid")
    values = np.asarray(values, dtype=float)
    c = sfft.fft2(values, axes=(-2, -1), norm="forward", workers=_FFT_WORKERS)
    if values.ndim == 2:
        return ScalarSpectralField(grid, c[None])
    if values.ndim == 3 and values.shape[0] == 2:
        return SpectralField(grid, c[None])
    raise ValueError(f"unsupported sample shape {values.shape}")


def synthesis_length(grid: GridSpec) -> int:
    """Length of the ``x1`` sampling that resolves every stored harmonic."""
    if grid.is_plain:
        return grid.points_per_dim
    need = 2 * (grid.harmonics * grid.carrier_index + grid.points_per_dim // 2) + 2
    return 1 << (need - 1).bit_length()


def physical_chunks(field, max_bytes: int = 1 << 27) -> Iterator[tuple[np.ndarray, float]]:
    """Yield real samples in column blocks together with the cell area.

    Plain grids yield the whole array at once.  Harmonic grids are sampled on
    ``n_x`` points along ``x1`` (see :func:`synthesis_length`) and the native
    ``n`` points along ``x2``; each block covers a range of ``x2`` columns and
    has shape ``(C, n_x, width)`` (``C`` omitted for scalars).
    """
    grid = field.grid
    L = grid.box_half_length
    n = grid.points_per_dim
    if grid.is_plain:
        yield to_physical(field), (2 * L / n) ** 2
        return
    scalar = isinstance(field, ScalarSpectralField)
    c = field.coeffs[:, None] if scalar else field.coeffs
    ncomp = c.shape[1]
    nx = synthesis_length(grid)
    K = grid.carrier_index
    h = n // 2
    env_idx = np.fft.fftfreq(n, 1.0 / n).astype(int)
    area = (2 * L / nx) * (2 * L / n)
    # partial synthesis along x2 for every harmonic: a_k(xi1, x2)
    a = sfft.ifft(c, axis=-1, norm="forward", workers=_FFT_WORKERS)
    width = max(1, min(n, max_bytes // max(1, 16 * ncomp * (nx // 2 + 1))))
    for start in range(0, n, width):
        stop = min(n, start + width)
        S = np.zeros((ncomp, nx // 2 + 1, stop - start), np.complex128)
        # harmonic 0 keeps xi1 >= 0; the rest is implied by realness
        S[:, :h, :] = a[0, :, :h, start:stop]
        for k in range(1, grid.nh):
            q = env_idx + k * K
            S[:, q, :] += a[k, :, :, start:stop]
        vals = sfft.irfft(S, n=nx, axis=1, norm="forward", workers=_FFT_WORKERS)
        yield (vals[0] if scalar else vals), area


# ---------------------------------------------------------------------------
# binary snapshots
# ---------------------------------------------------------------------------

_MAGIC = b"NSSF"
_VERSION = 1
_HEADER = struct.Struct("<4sHcxdIdII")


def save_snapshot(path: str | Path, field) -> None:
    """Write a field as header + little-endian complex64 coefficients.

    The header records the grid (``L``, ``n``, carrier, harmonics), the
    component count and the endianness tag ``b'<'``.  The write is atomic.
    """
    grid = field.grid
    ncomp = 1 if isinstance(field, ScalarSpectralField) else 2
    header = _HEADER.pack(
        _MAGIC, _VERSION, b"<", grid.box_half_length, grid.points_per_dim,
        grid.carrier, grid.harmonics, ncomp,
    )
    data = np.ascontiguousarray(field.coeffs, dtype="<c8").tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(header + data)
    tmp.replace(path)


def load_snapshot(path: str | Path):
    """Read a field written by :func:`save_snapshot`."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, endian, L, n, carrier, H, ncomp = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a field snapshot")
    if endian != b"<":
        raise ValueError(f"unsupported endianness tag {endian!r}")
    grid = GridSpec(L, n, carrier, H)
    shape = grid.scalar_shape() if ncomp == 1 else grid.vector_shape()
    count = int(np.prod(shape))
    body = raw[_HEADER.size :]
    if len(body) != 8 * count:
        raise ValueError("snapshot payload size does not match header")
    c = np.frombuffer(body, dtype="<c8").reshape(shape).astype(np.complex128)
    cls = ScalarSpectralField if ncomp == 1 else SpectralField
    return cls(grid, c)
