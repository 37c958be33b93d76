"""Solvers for the limit system: 1D heat for theta, stratified Navier-Stokes
for the horizontal velocity (vorticity form) and the forcing term G.

The stratified flow has no vertical velocity and each horizontal slice is
advected by its own velocity, so the vorticity obeys

    d_t w + v_h . grad_h w - nu Lap w = 0,    v_h = grad_h^perp Lap_h^{-1} w,

with the full 3D Laplacian in the viscous term.  Time stepping is Strang:
exact viscous factor for dt/2, Heun on the advection, exact factor for dt/2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _products as P
from .errors import ArgumentError, CFLError, ConsistencyError, DivergenceError
from .spectral_core import Grid1, Grid3, SpaceTimeSeries

# ----------------------------------------------------------------- heat


@dataclass(frozen=True, eq=False)
class Heat1DState:
    """Fourier coefficients of a profile theta(x3) at a given time."""

    grid: Grid1
    coeffs: np.ndarray
    nu_prime: float
    time: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.shape != (self.grid.n,):
            raise ArgumentError(f"expected {self.grid.n} coefficients, got shape {c.shape}")
        if not self.nu_prime > 0:
            raise ArgumentError("nu_prime must be positive")
        object.__setattr__(self, "coeffs", c)


def heat_multiplier(grid: Grid1, nu_prime: float, t: float) -> np.ndarray:
    return np.exp(-nu_prime * grid.wavenumbers**2 * t)


def heat1d_solve(initial: Heat1DState, t: float) -> Heat1DState:
    """Exact solution of d_t theta = nu' d_3^2 theta after time t."""
    if not t >= 0:
        raise ArgumentError(f"t must be >= 0, got {t}")
    c = initial.coeffs * heat_multiplier(initial.grid, initial.nu_prime, t)
    return Heat1DState(initial.grid, c, initial.nu_prime, initial.time + t)


def heat1d_series(initial: Heat1DState, times) -> SpaceTimeSeries:
    times = np.asarray(times, dtype=float)
    if np.any(times < initial.time):
        raise ArgumentError("series times must not precede the initial time")
    g = initial.grid
    coeffs = np.stack([heat1d_solve(initial, t - initial.time).coeffs[None] for t in times])
    return SpaceTimeSeries(g, times, coeffs)


def embed_profile(coeffs1d: np.ndarray, grid: Grid3, grid1: Grid1 | None = None) -> np.ndarray:
    """Place x3-only coefficients on the xi_h = 0 line of a 3D grid."""
    c = np.asarray(coeffs1d)
    if c.shape != (grid.n,):
        raise ArgumentError("profile resolution must match the 3D grid")
    if grid1 is not None and (grid1.n != grid.n or grid1.box_length != grid.box_length):
        raise ArgumentError("profile grid must match the 3D grid")
    out = np.zeros(grid.spatial_shape, dtype=complex)
    out[0, 0, :] = c
    return out


# ------------------------------------------------------------ vorticity


@dataclass(frozen=True, eq=False)
class VorticityState:
    grid: Grid3
    omega: np.ndarray
    nu: float
    time: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.omega, dtype=complex)
        if w.shape != self.grid.spatial_shape:
            raise ArgumentError("omega must be a scalar field on the grid")
        object.__setattr__(self, "omega", w)

    @classmethod
    def from_velocity(cls, v_h: np.ndarray, grid: Grid3, nu: float, time: float = 0.0) -> "VorticityState":
        return cls(grid, horizontal_vorticity(v_h, grid), nu, time)


def horizontal_vorticity(v_h: np.ndarray, grid: Grid3) -> np.ndarray:
    """omega = d_1 v^2 - d_2 v^1."""
    x1, x2, _ = grid.xi
    return 1j * (x1 * v_h[1] - x2 * v_h[0])


def _check_vertical_line(omega: np.ndarray, grid: Grid3):
    line = grid.xi_h_sq == 0
    scale = max(float(np.abs(omega).max(initial=0.0)), 1e-300)
    bad = float(np.abs(omega[line]).max(initial=0.0))
    if bad > 1e-12 * scale:
        raise ConsistencyError(f"vorticity is nonzero on the xi_h = 0 line ({bad:.3e})")


def _biot_savart(omega: np.ndarray, grid: Grid3) -> np.ndarray:
    x1, x2, _ = grid.xi
    kh2 = grid.xi_h_sq
    inv = np.where(kh2 > 0, 1.0 / np.where(kh2 > 0, kh2, 1.0), 0.0)
    psi = omega * inv
    return np.stack([1j * x2 * psi, -1j * x1 * psi])


def biot_savart_h(omega, grid: Grid3 | None = None) -> np.ndarray:
    """Horizontal velocity grad_h^perp Lap_h^{-1} omega, shape (2, n, n, n)."""
    if isinstance(omega, VorticityState):
        grid, w = omega.grid, omega.omega
    else:
        if grid is None:
            raise ArgumentError("grid is required for raw coefficient input")
        w = np.asarray(omega)
    _check_vertical_line(w, grid)
    return _biot_savart(w, grid)


def leray_h(v_h: np.ndarray, grid: Grid3) -> np.ndarray:
    """Slice-wise 2D Leray projection; leaves the xi_h = 0 line alone."""
    x1, x2, _ = grid.xi
    kh2 = grid.xi_h_sq
    d = np.where(kh2 > 0, (x1 * v_h[0] + x2 * v_h[1]) / np.where(kh2 > 0, kh2, 1.0), 0.0)
    return np.stack([v_h[0] - x1 * d, v_h[1] - x2 * d])


# ------------------------------------------------------------------ G


def gtilde_from_q0(q0: np.ndarray, grid: Grid3) -> np.ndarray:
    """G = P(grad_h pi0, 0, 0) with pi0 = -Lap_h^{-1} q0, i.e.

    (-d1 d3^2 Lap^-1 Lap_h^-1 q0, -d2 d3^2 Lap^-1 Lap_h^-1 q0, d3 Lap^-1 q0, 0).
    """
    x1, x2, x3 = grid.xi
    k2, kh2 = grid.xi_sq, grid.xi_h_sq
    live = kh2 > 0
    inv_k2 = np.where(live, 1.0 / np.where(live, k2, 1.0), 0.0)
    inv_kh2 = np.where(live, 1.0 / np.where(live, kh2, 1.0), 0.0)
    g = np.zeros((4,) + grid.spatial_shape, dtype=complex)
    a = 1j * x3**2 * inv_k2 * inv_kh2 * q0
    g[0] = x1 * a
    g[1] = x2 * a
    g[2] = -1j * x3 * inv_k2 * q0
    return g


def limit_rhs(v_h: np.ndarray, grid: Grid3, mask: np.ndarray, v_phys: np.ndarray | None = None):
    """Advection term and G for the velocity form of the limit flow.

    Returns ``(n_lim, gtilde, v_phys)`` where n_lim = -P_h(v.grad_h v) on the
    kept modes and gtilde is built from q0 = sum d_i d_j (v^i v^j).
    """
    if v_phys is None:
        v_phys = P.physical(v_h)
    f11 = P.spectral(v_phys[0] * v_phys[0], mask)
    f12 = P.spectral(v_phys[0] * v_phys[1], mask)
    f22 = P.spectral(v_phys[1] * v_phys[1], mask)
    x1, x2, _ = grid.xi
    adv = np.stack([1j * (x1 * f11 + x2 * f12), 1j * (x1 * f12 + x2 * f22)])
    q0 = -(x1 * x1 * f11 + 2 * x1 * x2 * f12 + x2 * x2 * f22)
    return -leray_h(adv, grid), gtilde_from_q0(q0, grid), v_phys


def compute_gtilde(v_h_series: SpaceTimeSeries, friedrichs_radius: float | None = None) -> SpaceTimeSeries:
    """G at every sample of a horizontal velocity series.

    Accepts two components (v1, v2) or the (omega, v1, v2) layout returned by
    ``solve_sns``.
    """
    grid = v_h_series.grid
    c = np.asarray(v_h_series.coeffs)
    if c.shape[1] not in (2, 3):
        raise ArgumentError("expected a series with 2 or 3 components")
    mask = P.product_mask(grid, friedrichs_radius)
    out = np.empty((len(v_h_series), 4) + grid.spatial_shape, dtype=complex)
    for i in range(len(v_h_series)):
        _, out[i], _ = limit_rhs(c[i, -2:], grid, mask)
    return SpaceTimeSeries(grid, np.array(v_h_series.times), out)


# ------------------------------------------------------------- stepping


def step_count(t_final: float, dt: float) -> tuple[int, float]:
    """Number of steps and the step that lands exactly on t_final."""
    if not dt > 0:
        raise ArgumentError("dt must be positive")
    if not t_final >= 0:
        raise ArgumentError("t_final must be >= 0")
    n = max(int(math.ceil(t_final / dt - 1e-9)), 0)
    return n, (t_final / n if n else dt)


def sample_steps(nsteps: int, stride: int) -> list[int]:
    if stride < 1:
        raise ArgumentError("sample_stride must be >= 1")
    s = list(range(0, nsteps + 1, stride))
    if s[-1] != nsteps:
        s.append(nsteps)
    return s


def check_cfl(speed: float, dt: float, grid: Grid3, limit: float):
    dx = grid.box_length / grid.n
    if speed > 0 and speed * dt / dx > limit:
        raise CFLError(f"CFL number {speed * dt / dx:.3f} exceeds {limit}",
                       suggested_dt=0.9 * limit * dx / speed)


@dataclass
class SNSVelocityStages:
    v_a: np.ndarray
    v_star: np.ndarray
    v_next: np.ndarray
    g_a: np.ndarray
    g_star: np.ndarray
    v_a_phys: np.ndarray
    v_star_phys: np.ndarray


def sns_velocity_step(v_h: np.ndarray, grid: Grid3, nu: float, dt: float, mask: np.ndarray,
                      advection: bool = True) -> SNSVelocityStages:
    """One step of the limit flow in velocity form, keeping the Heun stages.

    Matches the vorticity stepping of ``solve_sns`` up to roundoff because the
    dealiased products are exact on the kept modes.
    """
    half = np.exp(-nu * grid.xi_sq * dt / 2)
    v_a = half * v_h
    if advection:
        n1, g1, pa = limit_rhs(v_a, grid, mask)
        v_star = v_a + dt * n1
        n2, g2, ps = limit_rhs(v_star, grid, mask)
        v_b = v_a + 0.5 * dt * (n1 + n2)
    else:
        zero = np.zeros((4,) + grid.spatial_shape, dtype=complex)
        v_star, v_b, g1, g2 = v_a, v_a, zero, zero
        pa = ps = P.physical(v_a)
    return SNSVelocityStages(v_a, v_star, half * v_b, g1, g2, pa, ps)


def _vorticity_rhs(omega, grid, mask):
    v = _biot_savart(omega, grid)
    vp = P.physical(v)
    wp = P.physical(omega)
    f1 = P.spectral(vp[0] * wp, mask)
    f2 = P.spectral(vp[1] * wp, mask)
    x1, x2, _ = grid.xi
    return -1j * (x1 * f1 + x2 * f2), vp


def solve_sns(omega0, nu: float | None = None, t_final: float = 1.0, dt: float = 1e-2, *,
              sample_stride: int = 1, advection: bool = True, friedrichs_radius: float | None = None,
              cfl_limit: float = 0.5, observer=None) -> SpaceTimeSeries:
    """Integrate the stratified Navier-Stokes limit in vorticity form.

    Returns a series with components (omega, v1, v2).  The initial vorticity
    is restricted to the dealiased (and ball-truncated) modes.
    """
    if isinstance(omega0, VorticityState):
        grid, w, nu, t0 = omega0.grid, omega0.omega, omega0.nu, omega0.time
    else:
        raise ArgumentError("omega0 must be a VorticityState")
    if not nu > 0:
        raise ArgumentError("nu must be positive")
    _check_vertical_line(w, grid)
    mask = P.product_mask(grid, friedrichs_radius)
    w = np.where(mask, w, 0.0)
    nsteps, dt = step_count(t_final, dt)
    keep = set(sample_steps(nsteps, sample_stride))
    half = np.exp(-nu * grid.xi_sq * dt / 2)

    times, samples = [], []

    def record(step, w):
        times.append(t0 + step * dt)
        samples.append(np.concatenate([w[None], _biot_savart(w, grid)]))

    record(0, w)
    for step in range(1, nsteps + 1):
        wa = half * w
        if advection:
            r1, vp = _vorticity_rhs(wa, grid, mask)
            check_cfl(P.max_speed(vp), dt, grid, cfl_limit)
            ws = wa + dt * r1
            r2, _ = _vorticity_rhs(ws, grid, mask)
            wb = wa + 0.5 * dt * (r1 + r2)
        else:
            wb = wa
        w_new = half * wb
        if not np.all(np.isfinite(w_new)):
            raise DivergenceError(f"non-finite vorticity at t={t0 + step * dt:.6g}",
                                  last_stable_time=t0 + (step - 1) * dt)
        w = w_new
        if observer is not None:
            observer(t0 + step * dt, w)
        if step in keep:
            record(step, w)
    return SpaceTimeSeries(grid, np.array(times), np.stack(samples))
