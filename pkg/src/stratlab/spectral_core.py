"""Fourier grids, Littlewood-Paley blocks and the norms built on them.

Spectral coefficients are normalised so that a plane wave exp(i xi.x) has
coefficient 1, i.e. ``c = fftn(f) / N``.  Physical L2 norms on the box are
then ``L**(d/2) * ||c||_l2`` (Parseval).  The zero mode is excluded from every
homogeneous norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import ArgumentError, GridRangeError, NumericError

_WORKERS = 1


def set_workers(n: int) -> None:
    """Number of threads handed to scipy.fft."""
    global _WORKERS
    if int(n) < 1:
        raise ArgumentError("workers must be >= 1")
    _WORKERS = int(n)


def get_workers() -> int:
    return _WORKERS


# ---------------------------------------------------------------- grids


class _GridBase:
    n: int
    box_length: float
    dim: int

    def _validate(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 8 or self.n % 2:
            raise ArgumentError(f"n must be an even integer >= 8, got {self.n!r}")
        if not (math.isfinite(self.box_length) and self.box_length > 0):
            raise ArgumentError(f"box_length must be positive, got {self.box_length!r}")

    @cached_property
    def k_int(self) -> np.ndarray:
        """Centered integer indices, Nyquist index stored as -n/2."""
        return np.fft.fftfreq(self.n, 1.0 / self.n).astype(int)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """1D wavenumber map with the Nyquist entry set to zero."""
        k = 2.0 * math.pi / self.box_length * self.k_int.astype(float)
        k[self.n // 2] = 0.0
        return k

    @property
    def spatial_shape(self):
        return (self.n,) * self.dim

    @property
    def spatial_axes(self):
        return tuple(range(-self.dim, 0))

    @property
    def cell_volume(self) -> float:
        return (self.box_length / self.n) ** self.dim

    @property
    def volume(self) -> float:
        return self.box_length**self.dim

    @property
    def kmin(self) -> float:
        return 2.0 * math.pi / self.box_length


@dataclass(frozen=True)
class Grid1(_GridBase):
    """Periodic 1D grid, used for profiles depending on x3 only."""

    n: int
    box_length: float = 2.0 * math.pi

    def __post_init__(self):
        self._validate()

    dim = 1

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.abs(self.wavenumbers)

    def coordinates(self):
        return np.arange(self.n) * self.box_length / self.n


@dataclass(frozen=True)
class Grid3(_GridBase):
    """Periodic cube with n modes per axis and period box_length."""

    n: int
    box_length: float = 2.0 * math.pi

    def __post_init__(self):
        self._validate()

    dim = 3

    @cached_property
    def xi(self):
        k = self.wavenumbers
        return (k[:, None, None], k[None, :, None], k[None, None, :])

    @cached_property
    def xi_h_sq(self) -> np.ndarray:
        x1, x2, _ = self.xi
        return np.broadcast_to(x1**2 + x2**2, self.spatial_shape).copy()

    @cached_property
    def xi_sq(self) -> np.ndarray:
        return self.xi_h_sq + self.xi[2] ** 2

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.xi_sq)

    @cached_property
    def xi_h_abs(self) -> np.ndarray:
        return np.sqrt(self.xi_h_sq)

    def xi_vectors(self) -> np.ndarray:
        """Array of shape (3, n, n, n) holding xi at every mode."""
        return np.stack(np.broadcast_arrays(*self.xi)).astype(float)

    def coordinates(self):
        x = np.arange(self.n) * self.box_length / self.n
        return np.meshgrid(x, x, x, indexing="ij")

    @cached_property
    def k_int_mag(self) -> np.ndarray:
        """Integer-index radius, independent of box_length."""
        k = self.k_int.astype(float)
        return np.sqrt(k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2)

    def dealias_mask(self) -> np.ndarray:
        """Cubic 2/3-rule mask on integer indices."""
        k = np.abs(self.k_int)
        keep = k < self.n / 3.0
        return keep[:, None, None] & keep[None, :, None] & keep[None, None, :]

    def ball_mask(self, radius: float) -> np.ndarray:
        """Friedrichs truncation J_n on the ball |xi| <= radius."""
        return self.kmag <= radius * (1.0 + 1e-12)

    @property
    def nyquist_wavenumber(self) -> float:
        return math.pi * self.n / self.box_length


def grid_wavenumber(grid: Grid3, index) -> np.ndarray:
    """Wavenumber vector of the mode stored at array position ``index``."""
    idx = tuple(int(i) for i in index)
    if len(idx) != 3:
        raise GridRangeError("index must be a triple")
    for i in idx:
        if not 0 <= i < grid.n:
            raise GridRangeError(f"index {idx} out of range for n={grid.n}")
    k = grid.wavenumbers
    return np.array([k[idx[0]], k[idx[1]], k[idx[2]]])


# --------------------------------------------------------------- fields


def _readonly(a: np.ndarray) -> np.ndarray:
    v = a.view()
    v.flags.writeable = False
    return v


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients with a leading component axis."""

    grid: _GridBase
    coeffs: np.ndarray
    is_dealiased: bool = False

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape[-self.grid.dim :] != self.grid.spatial_shape:
            raise ArgumentError(f"coefficient shape {c.shape} does not match grid {self.grid.spatial_shape}")
        if c.ndim == self.grid.dim:
            c = c[None]
        object.__setattr__(self, "coeffs", _readonly(c))

    @property
    def ncomp(self) -> int:
        return self.coeffs.shape[0]

    def with_coeffs(self, coeffs, is_dealiased=None):
        return type(self)(self.grid, coeffs, self.is_dealiased if is_dealiased is None else is_dealiased)

    def __add__(self, other):
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, lam):
        return self.with_coeffs(self.coeffs * lam)

    __rmul__ = __mul__


class SpectralField4(SpectralField):
    """State vector (v1, v2, v3, theta) in Fourier space."""

    def __post_init__(self):
        super().__post_init__()
        if self.ncomp != 4:
            raise ArgumentError(f"SpectralField4 needs 4 components, got {self.ncomp}")

    def __add__(self, other):
        return SpectralField4(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectralField4(self.grid, self.coeffs - other.coeffs)


@dataclass(frozen=True, eq=False)
class PhysicalField:
    grid: _GridBase
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape[-self.grid.dim :] != self.grid.spatial_shape:
            raise ArgumentError("value shape does not match grid")
        if v.ndim == self.grid.dim:
            v = v[None]
        object.__setattr__(self, "values", _readonly(v))


def hermitian_partner(coeffs: np.ndarray, dim: int) -> np.ndarray:
    """Return c(-k) on the same index layout."""
    axes = tuple(range(-dim, 0))
    return np.roll(np.flip(coeffs, axis=axes), 1, axis=axes)


def hermitian_defect(coeffs: np.ndarray, dim: int = 3) -> float:
    c = np.asarray(coeffs)
    scale = max(np.abs(c).max(), 1e-300)
    return float(np.abs(c - np.conj(hermitian_partner(c, dim))).max() / scale)


def to_spectral(values: np.ndarray, dim: int = 3) -> np.ndarray:
    axes = tuple(range(-dim, 0))
    n = values.shape[-1]
    return sfft.fftn(values, axes=axes, workers=_WORKERS) / n**dim


def to_physical(coeffs: np.ndarray, dim: int = 3) -> np.ndarray:
    axes = tuple(range(-dim, 0))
    n = coeffs.shape[-1]
    return sfft.ifftn(coeffs, axes=axes, workers=_WORKERS) * n**dim


def to_physical_real(coeffs: np.ndarray, dim: int = 3) -> np.ndarray:
    """Inverse transform of Hermitian coefficients, returning real values."""
    axes = tuple(range(-dim, 0))
    n = coeffs.shape[-1]
    half = coeffs[..., : n // 2 + 1]
    return sfft.irfftn(half, s=(n,) * dim, axes=axes, workers=_WORKERS) * n**dim


def to_spectral_real(values: np.ndarray, dim: int = 3) -> np.ndarray:
    """Forward transform of real data, expanded to the full index layout."""
    axes = tuple(range(-dim, 0))
    n = values.shape[-1]
    half = sfft.rfftn(values, axes=axes, workers=_WORKERS) / n**dim
    out = np.empty(values.shape[:-1] + (n,), dtype=complex)
    out[..., : n // 2 + 1] = half
    # c(k1,k2,k3) = conj c(-k1,-k2,-k3) for the missing k3 > n/2
    rest = np.conj(half[..., 1 : n // 2])
    if dim > 1:
        rest = np.roll(np.flip(rest, axis=axes[:-1]), 1, axis=axes[:-1])
    out[..., n // 2 + 1 :] = np.flip(rest, axis=-1)
    return out


def transform(field, direction: str):
    """Map between physical values and spectral coefficients."""
    if direction == "forward":
        if not isinstance(field, PhysicalField):
            raise ArgumentError("forward transform expects a PhysicalField")
        v = np.asarray(field.values)
        if not np.all(np.isfinite(v)):
            raise NumericError("non-finite values in physical field")
        return SpectralField(field.grid, to_spectral(v, field.grid.dim))
    if direction == "inverse":
        if not isinstance(field, SpectralField):
            raise ArgumentError("inverse transform expects a SpectralField")
        c = np.asarray(field.coeffs)
        if not np.all(np.isfinite(c)):
            raise NumericError("non-finite coefficients")
        v = to_physical(c, field.grid.dim)
        if np.abs(v.imag).max(initial=0.0) <= 1e-13 * max(np.abs(v.real).max(initial=0.0), 1e-300):
            v = v.real
        return PhysicalField(field.grid, v)
    raise ArgumentError(f"unknown direction {direction!r}")


# ---------------------------------------------------- Littlewood-Paley


CHI_STEEPNESS = 3.0


def chi(x) -> np.ndarray:
    """C-infinity radial cutoff: 1 on |x| <= 1/2, 0 on |x| >= 1.

    The transition is the smooth step g(1-v)/(g(1-v)+g(v)), g(t) = exp(-1/t),
    with v = 1/2 + CHI_STEEPNESS (2|x| - 3/2) clipped to [0, 1]; the step is
    flat to all orders at both ends so the clipping keeps chi smooth.
    """
    a = np.abs(np.asarray(x, dtype=float))
    v = np.clip(0.5 + CHI_STEEPNESS * (2.0 * a - 1.5), 0.0, 1.0)
    out = np.where(v <= 0.0, 1.0, 0.0)
    mid = (v > 0.0) & (v < 1.0)
    if np.any(mid):
        u = v[mid]
        with np.errstate(over="ignore"):
            out[mid] = 1.0 / (1.0 + np.exp(1.0 / (1.0 - u) - 1.0 / u))
    return out if out.ndim else float(out)


def dyadic_mask(kmag: np.ndarray, j: int) -> np.ndarray:
    """Annular multiplier of block j, equal to 1 at |xi| = 2**j."""
    return chi(kmag / 2.0 ** (j + 1)) - chi(kmag / 2.0**j)


@dataclass(frozen=True)
class DyadicLadder:
    j_min: int
    j_max: int

    @classmethod
    def for_grid(cls, grid) -> "DyadicLadder":
        kmax = float(np.max(grid.kmag))
        return cls(int(math.floor(math.log2(grid.kmin))), int(math.ceil(math.log2(kmax))))

    @property
    def indices(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def masks(self, grid) -> dict:
        return {j: dyadic_mask(grid.kmag, j) for j in self.indices}

    def partition_defect(self, grid) -> float:
        k = grid.kmag
        band = (k >= 2.0**self.j_min) & (k <= 2.0**self.j_max)
        total = sum(self.masks(grid).values())
        return float(np.abs(total - 1.0)[band].max())


def dyadic_project(field: SpectralField, j: int, ladder: DyadicLadder | None = None) -> SpectralField:
    ladder = ladder or DyadicLadder.for_grid(field.grid)
    if j < ladder.j_min or j > ladder.j_max:
        return field.with_coeffs(np.zeros_like(field.coeffs))
    return field.with_coeffs(field.coeffs * dyadic_mask(field.grid.kmag, j))


# ----------------------------------------------------------------- norms


def _lq_from_values(values: np.ndarray, q: float, cell_volume: float, dim: int) -> np.ndarray:
    """L^q norm over the trailing spatial axes of pointwise Euclidean magnitudes."""
    mag = np.sqrt(np.sum(np.abs(values) ** 2, axis=-dim - 1))
    axes = tuple(range(-dim, 0))
    if math.isinf(q):
        return mag.max(axis=axes)
    return (np.sum(mag**q, axis=axes) * cell_volume) ** (1.0 / q)


def lq_norm_coeffs(coeffs: np.ndarray, grid, q: float) -> float:
    vals = to_physical(np.asarray(coeffs), grid.dim)
    return float(_lq_from_values(vals, q, grid.cell_volume, grid.dim))


def _lr_sum(values, r):
    values = np.asarray(values, dtype=float)
    if math.isinf(r):
        return float(values.max(initial=0.0))
    return float(np.sum(values**r) ** (1.0 / r))


def sobolev_weight(grid, s: float) -> np.ndarray:
    k = grid.kmag
    w = np.zeros_like(k)
    nz = k > 0
    with np.errstate(over="ignore", under="ignore", divide="ignore"):
        w[nz] = k[nz] ** (2.0 * s)
    if not np.all(np.isfinite(w)) or (s != 0 and np.any(w[nz] == 0.0)):
        raise NumericError(f"|xi|^(2s) overflows for s={s}")
    return w


def norm(field: SpectralField, kind: str, params: dict | None = None, ladder: DyadicLadder | None = None) -> float:
    """Homogeneous Sobolev, homogeneous Besov or Lebesgue norm of a field."""
    params = dict(params or {})
    grid = field.grid
    c = np.asarray(field.coeffs)
    if not np.all(np.isfinite(c)):
        raise NumericError("non-finite coefficients")
    if kind == "sobolev":
        w = sobolev_weight(grid, float(params.get("s", 0.0)))
        return float(math.sqrt(grid.volume * np.sum(w * np.sum(np.abs(c) ** 2, axis=0))))
    if kind == "lq":
        q = float(params.get("q", 2.0))
        if q < 1:
            raise ArgumentError("q must be >= 1")
        return lq_norm_coeffs(c, grid, q)
    if kind == "besov":
        s = float(params.get("s", 0.0))
        p = float(params.get("p", 2.0))
        r = float(params.get("r", 2.0))
        if p < 1 or r < 1:
            raise ArgumentError("p and r must be >= 1")
        ladder = ladder or DyadicLadder.for_grid(grid)
        terms = []
        for j in ladder.indices:
            blk = c * dyadic_mask(grid.kmag, j)
            terms.append(2.0 ** (j * s) * lq_norm_coeffs(blk, grid, p))
        return _lr_sum(terms, r)
    raise ArgumentError(f"unknown norm kind {kind!r}")


# ------------------------------------------------------------ space-time


@dataclass(frozen=True, eq=False)
class SpaceTimeSeries:
    """Samples of a spectral field at increasing times.

    ``coeffs`` has shape (T, ncomp, *spatial).
    """

    grid: _GridBase
    times: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.coeffs)
        if t.ndim != 1 or t.size == 0:
            raise ArgumentError("series needs at least one sample")
        if np.any(np.diff(t) <= 0):
            raise ArgumentError("series times must be strictly increasing")
        if c.shape[0] != t.size or c.shape[-self.grid.dim :] != self.grid.spatial_shape:
            raise ArgumentError("series coefficients do not match times/grid")
        object.__setattr__(self, "times", _readonly(t))
        object.__setattr__(self, "coeffs", _readonly(c))

    @classmethod
    def from_fields(cls, times, fields):
        if len(fields) == 0:
            raise ArgumentError("empty series")
        return cls(fields[0].grid, np.asarray(times, float), np.stack([f.coeffs for f in fields]))

    def __len__(self):
        return self.times.size

    def field(self, i: int) -> SpectralField:
        return SpectralField(self.grid, self.coeffs[i])


def time_norm(values, times, a: float) -> float:
    """L^a in time of sampled nonnegative values, trapezoid rule."""
    values = np.asarray(values, dtype=float)
    if math.isinf(a):
        return float(values.max())
    if len(values) < 2:
        return 0.0
    return float(np.trapezoid(values**a, np.asarray(times, float)) ** (1.0 / a))


def chemin_lerner_norm(series: SpaceTimeSeries, a: float, b: float, c: float, s: float,
                       ladder: DyadicLadder | None = None) -> float:
    """l^c over j of 2^{js} ||Delta_j f||_{L^a_t L^b_x}; time integral first."""
    if series is None or len(series) == 0:
        raise ArgumentError("empty series")
    grid = series.grid
    ladder = ladder or DyadicLadder.for_grid(grid)
    terms = []
    for j in ladder.indices:
        m = dyadic_mask(grid.kmag, j)
        vals = [lq_norm_coeffs(series.coeffs[i] * m, grid, b) for i in range(len(series))]
        terms.append(2.0 ** (j * s) * time_norm(vals, series.times, a))
    return _lr_sum(terms, c)


def spacetime_norm(series: SpaceTimeSeries, p_time: float, q_space: float) -> float:
    if p_time < 1 or q_space < 1:
        raise ArgumentError("p_time and q_space must be >= 1")
    if series is None or len(series) == 0:
        raise ArgumentError("empty series")
    vals = [lq_norm_coeffs(series.coeffs[i], series.grid, q_space) for i in range(len(series))]
    return time_norm(vals, series.times, p_time)
