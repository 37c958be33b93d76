"""Linear wave operator of the stratified system and the projections built on it.

Per-mode matrix (0-based component order v1, v2, v3, theta)::

    B(xi) = [ -nu (|xi|^2 I - xi xi^T)      | xi1 xi3 / (eps |xi|^2) ]
            [                               | xi2 xi3 / (eps |xi|^2) ]
            [                               | -|xi_h|^2 / (eps |xi|^2)]
            [ 0        0        1/eps       | -nu' |xi|^2            ]

On divergence-free vectors B preserves the orthonormal frame
``V2 = (-xi2, xi1, 0, 0)/|xi_h|``, ``e_a = (xi1 xi3, xi2 xi3, -|xi_h|^2, 0)/(|xi||xi_h|)``,
``e_theta = (0, 0, 0, 1)``.  V2 is an eigenvector with eigenvalue -nu|xi|^2 and on
span(e_a, e_theta) B acts as ``[[-nu|xi|^2, w], [-w, -nu'|xi|^2]]`` with
``w = |xi_h|/(eps|xi|)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    ArgumentError,
    ConditioningError,
    DegenerateLineError,
    NotApplicableError,
    SingularModeError,
)
from .spectral_core import Grid3, SpectralField, SpectralField4, chi

SQRT2 = math.sqrt(2.0)
COND_LIMIT = 1e8


@dataclass(frozen=True)
class PhysicsParams:
    nu: float
    nu_prime: float
    epsilon: float

    def __post_init__(self):
        for name in ("nu", "nu_prime", "epsilon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and v > 0):
                raise ArgumentError(f"{name} must be a positive finite number, got {v!r}")

    @classmethod
    def unchecked(cls, nu: float, nu_prime: float, epsilon: float) -> "PhysicsParams":
        """Bypass positivity checks, e.g. for the inviscid skew-adjoint limit."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "nu", float(nu))
        object.__setattr__(obj, "nu_prime", float(nu_prime))
        object.__setattr__(obj, "epsilon", float(epsilon))
        return obj

    @property
    def nu0(self) -> float:
        return min(self.nu, self.nu_prime)

    @property
    def nu_equal(self) -> bool:
        return self.nu == self.nu_prime

    def with_epsilon(self, epsilon: float) -> "PhysicsParams":
        return PhysicsParams(self.nu, self.nu_prime, epsilon)


# ------------------------------------------------------------- matrices


def _as_xi(xi) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != 3:
        raise ArgumentError("xi must have a trailing axis of length 3")
    return xi


def wave_matrix(xi, params: PhysicsParams) -> np.ndarray:
    """4x4 complex matrix B(xi, eps); accepts a single xi or a stack (..., 3)."""
    xi = _as_xi(xi)
    k2 = np.sum(xi**2, axis=-1)
    if np.any(k2 == 0):
        raise SingularModeError("wave matrix undefined at xi = 0")
    nu, nup, eps = params.nu, params.nu_prime, params.epsilon
    B = np.zeros(xi.shape[:-1] + (4, 4), dtype=complex)
    B[..., :3, :3] = -nu * (k2[..., None, None] * np.eye(3) - xi[..., :, None] * xi[..., None, :])
    kh2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
    B[..., 0, 3] = xi[..., 0] * xi[..., 2] / (eps * k2)
    B[..., 1, 3] = xi[..., 1] * xi[..., 2] / (eps * k2)
    B[..., 2, 3] = -kh2 / (eps * k2)
    B[..., 3, 2] = 1.0 / eps
    B[..., 3, 3] = -nup * k2
    return B


def penalization_matrix(xi, epsilon: float) -> np.ndarray:
    """The skew part -(1/eps) P B of the wave matrix (no diffusion)."""
    return wave_matrix(xi, PhysicsParams.unchecked(0.0, 0.0, epsilon))


# ---------------------------------------------------------- eigensystem


@dataclass(frozen=True)
class Eigensystem:
    lambdas: np.ndarray  # (4,)
    vectors: np.ndarray  # (4, 4); vectors[k] is V_{k+1}
    regime: str
    discriminant: float
    correction: float | None


def discriminant(xi, params: PhysicsParams):
    """(nu - nu')^2 |xi|^4 - 4 |xi_h|^2 / (eps^2 |xi|^2)."""
    xi = _as_xi(xi)
    k2 = np.sum(xi**2, axis=-1)
    kh2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
    return (params.nu - params.nu_prime) ** 2 * k2**2 - 4.0 * kh2 / (params.epsilon**2 * k2)


def x_ratio(k, kh, params: PhysicsParams):
    """x = (nu-nu')^2 eps^2 |xi|^6 / (4 |xi_h|^2); the admissible regime is x < 1."""
    return (params.nu - params.nu_prime) ** 2 * params.epsilon**2 * k**6 / (4.0 * kh**2)


def correction_term(k, kh, params: PhysicsParams):
    """D(eps, xi) with lambda_3 = -(nu+nu')|xi|^2/2 + i|xi_h|/(eps|xi|) - i eps D.

    Recovered algebraically from the square-root eigenvalue:
    D = (nu-nu')^2 |xi|^5 / (4 |xi_h| (1 + sqrt(1 - x))), valid for x <= 1.
    """
    x = x_ratio(k, kh, params)
    return (params.nu - params.nu_prime) ** 2 * k**5 / (4.0 * kh * (1.0 + np.sqrt(1.0 - x)))


def _frame(xi):
    xi = _as_xi(xi)
    k = np.sqrt(np.sum(xi**2, axis=-1))
    kh = np.hypot(xi[..., 0], xi[..., 1])
    return xi, k, kh


def closed_form_batch(xi, params: PhysicsParams):
    """Closed-form eigenvalues and eigenvectors for a stack of xi with xi_h != 0.

    Returns (lambdas (..., 4), vectors (..., 4, 4)) where vectors[..., k, :] is
    V_{k+1}.  Valid whenever x != 1; for x > 1 the square root is taken on the
    principal complex branch.
    """
    xi, k, kh = _frame(xi)
    if np.any(kh == 0):
        raise DegenerateLineError("closed forms undefined on xi_h = 0")
    nu, nup, eps = params.nu, params.nu_prime, params.epsilon
    k2 = np.sum(xi**2, axis=-1)
    x = x_ratio(k, kh, params)
    root = np.sqrt((1.0 - x).astype(complex))
    w = kh / (eps * k)
    lam = np.empty(xi.shape[:-1] + (4,), dtype=complex)
    lam[..., 0] = 0.0
    lam[..., 1] = -nu * k2
    lam[..., 2] = -(nu + nup) * k2 / 2 + 1j * w * root
    lam[..., 3] = -(nu + nup) * k2 / 2 - 1j * w * root

    V = np.zeros(xi.shape[:-1] + (4, 4), dtype=complex)
    a = eps * nu * nup * k2 + 1.0 / (eps * k2)
    V[..., 0, 0] = a * xi[..., 0]
    V[..., 0, 1] = a * xi[..., 1]
    V[..., 0, 2] = eps * nu * nup * k2 * xi[..., 2]
    V[..., 0, 3] = nu * xi[..., 2]
    V[..., 1, 0] = -xi[..., 1] / kh
    V[..., 1, 1] = xi[..., 0] / kh
    base = (nu - nup) * eps * k**3 / (2 * SQRT2 * kh)
    for row, eta in ((2, 1.0), (3, -1.0)):
        V[..., row, 0] = xi[..., 0] * xi[..., 2] / (SQRT2 * k * kh)
        V[..., row, 1] = xi[..., 1] * xi[..., 2] / (SQRT2 * k * kh)
        V[..., row, 2] = -kh / (SQRT2 * k)
        V[..., row, 3] = base + 1j * eta * root / SQRT2
    return lam, V


def eigen_closed_form(xi, params: PhysicsParams) -> Eigensystem:
    """Eigen-decomposition of B(xi, eps) for one wavevector."""
    xi, k, kh = _frame(xi)
    if xi.ndim != 1:
        raise ArgumentError("eigen_closed_form takes a single xi; use closed_form_batch")
    if k == 0:
        raise SingularModeError("xi = 0")
    if kh == 0:
        raise DegenerateLineError("V2 and V3, V4 are undefined on xi_h = 0")
    disc = float(discriminant(xi, params))
    lam, V = closed_form_batch(xi, params)
    if params.nu_equal:
        return Eigensystem(lam, V, "nu_equal", disc, 0.0)
    if disc < 0:
        return Eigensystem(lam, V, "nu_distinct_admissible", disc, float(correction_term(k, kh, params)))
    # generic numerical diagonalisation of the 2x2 block acting on (e_a, e_theta)
    w = kh / (params.epsilon * k)
    A = np.array([[-params.nu * k**2, w], [-w, -params.nu_prime * k**2]], dtype=complex)
    mu, Q = np.linalg.eig(A)
    order = np.lexsort((-mu.real, -mu.imag))
    mu, Q = mu[order], Q[:, order]
    e_a = np.array([xi[0] * xi[2], xi[1] * xi[2], -kh**2, 0.0]) / (k * kh)
    e_t = np.array([0.0, 0.0, 0.0, 1.0])
    lam = lam.copy()
    V = V.copy()
    lam[2:] = mu
    for j in range(2):
        V[2 + j] = Q[0, j] * e_a + Q[1, j] * e_t
    return Eigensystem(lam, V, "fallback", disc, None)


# ------------------------------------------------------------ projections


def leray_coeffs(c: np.ndarray, grid: Grid3) -> np.ndarray:
    """Leray projection of the velocity components (first three) of c."""
    out = np.array(c, dtype=complex, copy=True)
    x1, x2, x3 = grid.xi
    k2 = grid.xi_sq
    safe = np.where(k2 > 0, k2, 1.0)
    div = (x1 * c[0] + x2 * c[1] + x3 * c[2]) / safe
    div = np.where(k2 > 0, div, 0.0)
    out[0] -= x1 * div
    out[1] -= x2 * div
    out[2] -= x3 * div
    return out


def divergence_coeffs(c: np.ndarray, grid: Grid3) -> np.ndarray:
    """xi . v per mode (no factor i)."""
    x1, x2, x3 = grid.xi
    return x1 * c[0] + x2 * c[1] + x3 * c[2]


def leray_project(field: SpectralField) -> SpectralField:
    if field.ncomp < 3:
        raise ArgumentError("Leray projection needs at least three velocity components")
    return field.with_coeffs(leray_coeffs(field.coeffs, field.grid))


def strat_coeffs(c: np.ndarray, grid: Grid3) -> np.ndarray:
    """P2 f = (f . V2) V2, zero on xi_h = 0."""
    x1, x2, _ = grid.xi
    kh2 = grid.xi_h_sq
    safe = np.where(kh2 > 0, kh2, 1.0)
    a = np.where(kh2 > 0, (-x2 * c[0] + x1 * c[1]) / safe, 0.0)
    out = np.zeros((4,) + grid.spatial_shape, dtype=complex)
    out[0] = -x2 * a
    out[1] = x1 * a
    return out


def split_stratified_osc(field: SpectralField) -> tuple[SpectralField4, SpectralField4]:
    """(P2 f, (I - P2) f) for a divergence-free four-component field."""
    c = np.asarray(field.coeffs)
    grid = field.grid
    div = np.abs(divergence_coeffs(c, grid)).max()
    scale = np.abs(c[:3]).max(initial=0.0) * np.max(grid.kmag)
    if div > 1e-10 * max(scale, 1e-300):
        warnings.warn("split_stratified_osc called on a field that is not divergence free", stacklevel=2)
    s = strat_coeffs(c, grid)
    return SpectralField4(grid, s), SpectralField4(grid, c - s)


def _two_by_two(grid: Grid3, params: PhysicsParams):
    k = grid.kmag
    kh = grid.xi_h_abs
    good = kh > 0
    ks = np.where(good, k, 1.0)
    khs = np.where(good, kh, 1.0)
    x = x_ratio(ks, khs, params)
    root = np.sqrt((1.0 - x).astype(complex))
    base = (params.nu - params.nu_prime) * params.epsilon * ks**3 / (2 * SQRT2 * khs)
    cp = base + 1j * root / SQRT2
    cm = base - 1j * root / SQRT2
    return good, ks, khs, x, cp, cm


def _frame_coeffs(c, grid, ks, khs):
    x1, x2, x3 = grid.xi
    fa = (x1 * x3 * c[0] + x2 * x3 * c[1] - khs**2 * c[2]) / (ks * khs)
    return fa, c[3]


def basis_condition(cp, cm) -> np.ndarray:
    """2-norm condition number of [[1/sqrt2, 1/sqrt2], [c+, c-]]."""
    fro = 1.0 + np.abs(cp) ** 2 + np.abs(cm) ** 2
    det = np.abs(cm - cp) / SQRT2
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.sqrt(np.maximum(fro**2 - 4 * det**2, 0.0))
        return np.where(det > 0, (fro + disc) / (2 * det), np.inf)


def wave_coefficients(c: np.ndarray, grid: Grid3, params: PhysicsParams, check: bool = True):
    """Coordinates (a3, a4) of c along V3, V4 (zero on xi_h = 0)."""
    good, ks, khs, x, cp, cm = _two_by_two(grid, params)
    fa, ft = _frame_coeffs(c, grid, ks, khs)
    if check:
        cond = basis_condition(cp, cm)
        live = good & (np.abs(c).sum(axis=0) > 0)
        bad = live & ~(cond <= COND_LIMIT)
        if np.any(bad):
            idx = tuple(int(i) for i in np.argwhere(bad)[0])
            raise ConditioningError(
                f"eigenbasis ill-conditioned at mode {idx} (condition {cond[idx]:.3e})",
                mode=idx, condition=float(cond[idx]))
    det = (cm - cp) / SQRT2
    with np.errstate(divide="ignore", invalid="ignore"):
        a3 = (fa * cm - ft / SQRT2) / det
        a4 = (ft / SQRT2 - cp * fa) / det
    a3 = np.where(good, a3, 0.0)
    a4 = np.where(good, a4, 0.0)
    return a3, a4, (ks, khs, cp, cm)


def _vector_from_frame(grid, coef, ks, khs, cvec):
    x1, x2, x3 = grid.xi
    out = np.zeros((4,) + grid.spatial_shape, dtype=complex)
    s = coef / (SQRT2 * ks * khs)
    out[0] = s * x1 * x3
    out[1] = s * x2 * x3
    out[2] = -s * khs**2
    out[3] = coef * cvec
    return out


def wave_project(field: SpectralField, k: int, params: PhysicsParams) -> SpectralField4:
    """P_k f = a_k V_k for k in {3, 4}, from the per-mode expansion in {V2, V3, V4}."""
    if k not in (3, 4):
        raise ArgumentError("k must be 3 or 4")
    grid = field.grid
    a3, a4, (ks, khs, cp, cm) = wave_coefficients(np.asarray(field.coeffs), grid, params)
    if k == 3:
        out = _vector_from_frame(grid, a3, ks, khs, cp)
    else:
        out = _vector_from_frame(grid, a4, ks, khs, cm)
    out[:, grid.xi_h_sq == 0] = 0.0
    return SpectralField4(grid, out)


# ------------------------------------------------------------ truncation


@dataclass(frozen=True)
class TruncationWindow:
    """Frequency window C_{r,R} = {|xi| <= R, |xi_h| >= r}."""

    r: float
    R: float
    m: float | None = None
    M: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if not (0 < self.r < self.R):
            raise ArgumentError(f"need 0 < r < R, got r={self.r}, R={self.R}")

    @classmethod
    def from_epsilon(cls, epsilon: float, m: float, M: float) -> "TruncationWindow":
        return cls(epsilon**m, epsilon ** (-M), m, M, epsilon)

    def admissible(self, params: PhysicsParams) -> bool:
        if self.m is None or self.M is None:
            raise ArgumentError("admissibility needs the exponents m, M")
        if 3 * self.M + self.m >= 1:
            return False
        if params.nu_equal:
            return True
        eps = self.epsilon if self.epsilon is not None else params.epsilon
        return eps <= epsilon_threshold(params, self.m, self.M).eps1

    def multiplier(self, kmag, kh_abs) -> np.ndarray:
        return chi(np.asarray(kmag) / self.R) * (1.0 - chi(np.asarray(kh_abs) / (2.0 * self.r)))

    def widened(self) -> "TruncationWindow":
        """The window C_{r/2, 2R} on which f_{r/2,2R} equals one over supp f_{r,R}."""
        return TruncationWindow(self.r / 2, 2 * self.R, self.m, self.M, self.epsilon)


def freq_truncate(field: SpectralField, window: TruncationWindow) -> SpectralField:
    g = field.grid
    return field.with_coeffs(field.coeffs * window.multiplier(g.kmag, g.xi_h_abs))


class Threshold(NamedTuple):
    eps1: float
    eps0: float


def epsilon_threshold(params, m: float, M: float) -> Threshold:
    """eps_1 = (sqrt2/|nu-nu'|)^(1/(1-(3M+m))) and the weaker eps_0 with constant 2."""
    nu, nup = (params.nu, params.nu_prime) if isinstance(params, PhysicsParams) else params
    if nu == nup:
        raise NotApplicableError("no threshold is needed when nu = nu'")
    if 3 * M + m >= 1:
        raise ArgumentError(f"admissibility requires 3M + m < 1, got {3 * M + m}")
    p = 1.0 / (1.0 - (3 * M + m))
    d = abs(nu - nup)
    return Threshold((SQRT2 / d) ** p, (2.0 / d) ** p)
