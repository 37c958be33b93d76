"""Friedrichs-truncated pseudo-spectral solver for the stratified Boussinesq
system and for the difference D = U - (v_h, 0, theta) with respect to the
limit flow.

Each step is the Strang composition

    L(dt/2)  o  Heun(N, dt)  o  L(dt/2)

where L is the exact per-mode linear flow (viscosity plus the 1/eps wave
coupling) and N is the Leray-projected, dealiased quadratic term.  The linear
part is never stepped explicitly, so dt does not have to resolve 1/eps.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import _products as P
from .errors import ArgumentError, ConsistencyError, DivergenceError, NumericError
from .limit_solvers import (
    Heat1DState,
    check_cfl,
    heat_multiplier,
    limit_rhs,
    sample_steps,
    sns_velocity_step,
    step_count,
)
from .spectral_core import Grid1, Grid3, SpaceTimeSeries, SpectralField4, to_physical_real
from .wave_algebra import PhysicsParams, divergence_coeffs, leray_coeffs, x_ratio

SQRT2 = math.sqrt(2.0)
# Eigen-expansion is used while 1 - x stays above this; closer to the
# double root the 2x2 block is exponentiated directly.
CLOSED_FORM_MARGIN = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    params: PhysicsParams
    dt: float
    t_final: float
    friedrichs_radius: float | None = None
    dealias: bool = True
    sample_stride: int = 1
    cfl_limit: float = 0.5
    nonlinear: bool = True
    diag_stride: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ArgumentError("dt must be positive")
        if not self.t_final >= 0:
            raise ArgumentError("t_final must be >= 0")
        if self.friedrichs_radius is not None and not self.friedrichs_radius > 0:
            raise ArgumentError("friedrichs_radius must be positive")
        if self.sample_stride < 1 or self.diag_stride < 1:
            raise ArgumentError("strides must be >= 1")

    def check_grid(self, grid: Grid3):
        if self.friedrichs_radius is not None and self.friedrichs_radius > grid.nyquist_wavenumber * (1 + 1e-12):
            raise ArgumentError(
                f"friedrichs_radius {self.friedrichs_radius} exceeds the grid Nyquist {grid.nyquist_wavenumber}")

    def mask(self, grid: Grid3) -> np.ndarray:
        if self.dealias:
            return P.product_mask(grid, self.friedrichs_radius)
        if self.friedrichs_radius is not None:
            return grid.ball_mask(self.friedrichs_radius)
        return np.ones(grid.spatial_shape, dtype=bool)


# ------------------------------------------------------------ linear flow


class LinearPropagator:
    """exp(tau B(xi)) restricted to divergence-free vectors, for every mode.

    Off the vertical line the flow is written in the orthonormal frame
    (V2, e_a, e_theta): V2 decays like exp(-nu|xi|^2 tau) and the 2x2 block
    on (e_a, e_theta) is S diag(exp(lambda3 tau), exp(lambda4 tau)) S^-1 with
    S the coordinates of (V3, V4).  Modes too close to the double root use a
    dense exponential of the 2x2 block.  On xi_h = 0 only viscosity acts.
    """

    def __init__(self, grid: Grid3, params: PhysicsParams, tau: float):
        self.grid, self.params, self.tau = grid, params, tau
        nu, nup, eps = params.nu, params.nu_prime, params.epsilon
        x1, x2, x3 = grid.xi
        k2, kh2 = grid.xi_sq, grid.xi_h_sq
        off = kh2 > 0
        k = np.where(off, np.sqrt(k2), 1.0)
        kh = np.where(off, np.sqrt(kh2), 1.0)
        shape = grid.spatial_shape

        self.off = off
        self.v2 = (np.where(off, -x2 / kh, 0.0), np.where(off, x1 / kh, 0.0))
        self.ea = (np.where(off, x1 * x3 / (k * kh), 0.0),
                   np.where(off, x2 * x3 / (k * kh), 0.0),
                   np.where(off, -kh / k, 0.0))
        self.e2 = np.exp(-nu * k2 * tau)

        x = np.where(off, x_ratio(k, kh, params), 0.0)
        w = kh / (eps * k)
        closed = off & (x < 1.0 - CLOSED_FORM_MARGIN)
        root = np.sqrt(np.where(closed, 1.0 - x, 1.0))
        base = (nu - nup) * eps * k**3 / (2 * SQRT2 * kh)
        cp = base + 1j * root / SQRT2
        cm = base - 1j * root / SQRT2
        decay = np.exp(-(nu + nup) * k2 * tau / 2)
        z3 = decay * np.exp(1j * w * root * tau)
        z4 = decay * np.exp(-1j * w * root * tau)
        det = (cm - cp) / SQRT2
        # S = [[1/sqrt2, 1/sqrt2], [cp, cm]],  S^-1 = [[cm, -1/sqrt2], [-cp, 1/sqrt2]] / det
        m00 = (z3 * cm - z4 * cp) / (SQRT2 * det)
        m01 = (z4 - z3) / (2 * det)
        m10 = cp * cm * (z3 - z4) / det
        m11 = (z4 * cm - z3 * cp) / (SQRT2 * det)
        m = np.zeros((2, 2) + shape, dtype=complex)
        m[0, 0], m[0, 1], m[1, 0], m[1, 1] = m00, m01, m10, m11
        m[:, :, ~closed] = 0.0

        fb = off & ~closed
        self.fallback_count = int(fb.sum())
        if self.fallback_count:
            A = np.zeros((self.fallback_count, 2, 2))
            A[:, 0, 0] = -nu * k2[fb]
            A[:, 0, 1] = w[fb]
            A[:, 1, 0] = -w[fb]
            A[:, 1, 1] = -nup * k2[fb]
            E = scipy.linalg.expm(A * tau)
            for i in range(2):
                for j in range(2):
                    m[i, j][fb] = E[:, i, j]
        self.m = m

        line = ~off
        self.line_v = np.where(line, np.exp(-nu * k2 * tau), 0.0)
        self.line_t = np.where(line, np.exp(-nup * k2 * tau), 0.0)

    def apply(self, c: np.ndarray) -> np.ndarray:
        v2x, v2y = self.v2
        eax, eay, eaz = self.ea
        a2 = self.e2 * (v2x * c[0] + v2y * c[1])
        fa = eax * c[0] + eay * c[1] + eaz * c[2]
        ft = c[3]
        m = self.m
        na = m[0, 0] * fa + m[0, 1] * ft
        nt = m[1, 0] * fa + m[1, 1] * ft
        out = np.empty_like(c, dtype=complex)
        out[0] = v2x * a2 + eax * na + self.line_v * c[0]
        out[1] = v2y * a2 + eay * na + self.line_v * c[1]
        out[2] = eaz * na + self.line_v * c[2]
        out[3] = np.where(self.off, nt, self.line_t * c[3])
        return out


def linear_flow(U: SpectralField4, dt: float, params: PhysicsParams) -> SpectralField4:
    """Exact flow of dt U = (L - B/eps) U over time dt on divergence-free data."""
    if dt == 0:
        return U
    return U.with_coeffs(LinearPropagator(U.grid, params, dt).apply(np.asarray(U.coeffs)))


# ------------------------------------------------------------- nonlinear


def _flux_from_physical(u: np.ndarray, mask: np.ndarray, partner: np.ndarray | None = None) -> dict:
    """Fluxes F_ic = u_i u_c, or u_i w_c + p_i u_c when a partner p is given
    (then w = u + p).  Keys (i, c) with i < 3 and i <= c."""
    flux = {}
    w = u if partner is None else u + partner
    for i in range(3):
        for c in range(i, 4):
            prod = u[i] * w[c]
            if partner is not None:
                prod = prod + partner[i] * u[c]
            flux[(i, c)] = P.spectral(prod, mask)
    return flux


def _project_rhs(div: np.ndarray, grid: Grid3) -> np.ndarray:
    return leray_coeffs(-div, grid)


def nonlinear_coeffs(c: np.ndarray, grid: Grid3, mask: np.ndarray, u_phys: np.ndarray | None = None):
    """-P(v . grad U) on the kept modes, plus the physical values used."""
    if u_phys is None:
        u_phys = P.physical(c)
    flux = _flux_from_physical(u_phys, mask)
    div = P.divergence_of_flux(grid, flux, 4)
    return _project_rhs(div, grid), u_phys


def nonlinear_term(U: SpectralField4, friedrichs_radius: float | None = None) -> SpectralField4:
    """Advection v . grad U (not projected, not negated) with 2/3 dealiasing.

    The product is formed in divergence form div(v (x) U), which equals
    v . grad U for divergence-free v.  A warning is issued otherwise.
    """
    grid = U.grid
    c = np.asarray(U.coeffs)
    div = np.abs(divergence_coeffs(c, grid)).max()
    scale = np.abs(c[:3]).max(initial=0.0) * np.max(grid.kmag)
    if div > 1e-10 * max(scale, 1e-300):
        import warnings

        warnings.warn("nonlinear_term called on a velocity that is not divergence free", stacklevel=2)
        return _advective_form(U, friedrichs_radius)
    mask = P.product_mask(grid, friedrichs_radius)
    flux = _flux_from_physical(P.physical(c), mask)
    return SpectralField4(grid, P.divergence_of_flux(grid, flux, 4), is_dealiased=True)


def _advective_form(U: SpectralField4, friedrichs_radius):
    grid = U.grid
    mask = P.product_mask(grid, friedrichs_radius)
    c = np.asarray(U.coeffs)
    u = P.physical(c)
    out = np.empty_like(c)
    for comp in range(4):
        grad = P.physical(np.stack([1j * xi * c[comp] for xi in np.broadcast_arrays(*grid.xi)]))
        out[comp] = P.spectral(np.sum(u[:3] * grad, axis=0), mask)
    return SpectralField4(grid, out, is_dealiased=True)


# ------------------------------------------------------------ trajectory


@dataclass
class Trajectory:
    grid: Grid3
    config: SolverConfig
    kind: str
    states: SpaceTimeSeries
    diag: dict = field(default_factory=dict)
    limit_samples: SpaceTimeSeries | None = None
    theta_profile: Heat1DState | None = None

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.states.times)


def _energy_terms(c: np.ndarray, grid: Grid3) -> tuple[float, float, float]:
    """(||U||^2, ||grad v||^2, ||grad theta||^2) in L2(box)."""
    vol = grid.volume
    a = np.abs(c) ** 2
    l2 = vol * float(a.sum())
    k2 = grid.xi_sq
    gv = vol * float(np.sum(k2 * a[:3]))
    gt = vol * float(np.sum(k2 * a[3]))
    return l2, gv, gt


def _max_div(c: np.ndarray, grid: Grid3) -> float:
    return float(np.abs(divergence_coeffs(c, grid)).max())


class _Recorder:
    def __init__(self, grid, keep):
        self.grid, self.keep = grid, keep
        self.times, self.states = [], []
        self.diag = {"t": [], "l2_sq": [], "grad_v_sq": [], "grad_theta_sq": [], "max_div": []}

    def state(self, step, t, c):
        if step in self.keep:
            self.times.append(t)
            self.states.append(np.array(c))

    def energy(self, t, c):
        l2, gv, gt = _energy_terms(c, self.grid)
        d = self.diag
        d["t"].append(t)
        d["l2_sq"].append(l2)
        d["grad_v_sq"].append(gv)
        d["grad_theta_sq"].append(gt)
        d["max_div"].append(_max_div(c, self.grid))

    def series(self):
        return SpaceTimeSeries(self.grid, np.array(self.times), np.stack(self.states))

    def diag_arrays(self):
        return {k: np.asarray(v) for k, v in self.diag.items()}


def _check_finite(c, t, dt):
    if not np.all(np.isfinite(c)):
        raise DivergenceError(f"non-finite state at t={t:.6g}", last_stable_time=t - dt)


def _prepare(U0: SpectralField4, mask: np.ndarray) -> np.ndarray:
    grid = U0.grid
    c = np.asarray(U0.coeffs)
    div = np.abs(divergence_coeffs(c, grid)).max()
    scale = np.abs(c[:3]).max(initial=0.0) * np.max(grid.kmag)
    if div > 1e-8 * max(scale, 1e-300):
        raise ArgumentError("initial velocity is not divergence free")
    c = leray_coeffs(c, grid)
    return np.where(mask, c, 0.0)


def simulate_sepsilon(U0: SpectralField4, theta_tilde0_1d=None, config: SolverConfig | None = None,
                      observer=None) -> Trajectory:
    """Integrate the full system from U0 + (0, 0, 0, theta0(x3)).

    ``theta_tilde0_1d`` is None, a coefficient array on the x3 axis or a
    Heat1DState; it is placed on the xi_h = 0 line.
    """
    if config is None:
        raise ArgumentError("a SolverConfig is required")
    grid = U0.grid
    config.check_grid(grid)
    params = config.params
    mask = config.mask(grid)
    c = np.array(U0.coeffs, dtype=complex)
    if theta_tilde0_1d is not None:
        prof = theta_tilde0_1d.coeffs if isinstance(theta_tilde0_1d, Heat1DState) else np.asarray(theta_tilde0_1d)
        if prof.shape != (grid.n,):
            raise ArgumentError("theta profile resolution must match the grid")
        c[3, 0, 0, :] += prof
    c = _prepare(SpectralField4(grid, c), mask)

    nsteps, dt = step_count(config.t_final, config.dt)
    keep = set(sample_steps(nsteps, config.sample_stride))
    half = LinearPropagator(grid, params, dt / 2)
    rec = _Recorder(grid, keep)
    rec.state(0, 0.0, c)
    rec.energy(0.0, c)
    for step in range(1, nsteps + 1):
        t = step * dt
        ca = half.apply(c)
        if config.nonlinear:
            r1, ua = nonlinear_coeffs(ca, grid, mask)
            check_cfl(P.max_speed(ua[:3]), dt, grid, config.cfl_limit)
            cs = ca + dt * r1
            r2, _ = nonlinear_coeffs(cs, grid, mask)
            cb = ca + 0.5 * dt * (r1 + r2)
        else:
            cb = ca
        c = half.apply(cb)
        _check_finite(c, t, dt)
        if observer is not None:
            observer(t, c)
        rec.state(step, t, c)
        if step % config.diag_stride == 0 or step == nsteps:
            rec.energy(t, c)
    return Trajectory(grid, config, "sepsilon", rec.series(), rec.diag_arrays())


# ------------------------------------------------------------ difference


def _aligned_steps(times: np.ndarray, dt: float, nsteps: int) -> dict:
    """Map step index -> sample index; raise if a sample is off the step grid."""
    out = {}
    for i, t in enumerate(times):
        s = t / dt
        r = int(round(s))
        if abs(s - r) > 1e-6 or r < 0:
            raise ArgumentError(f"sample time {t} is not on the solver step grid (dt={dt})")
        if r <= nsteps:
            out[r] = i
    if 0 not in out:
        raise ArgumentError("limit series must start at t = 0")
    if times[-1] < nsteps * dt * (1 - 1e-9):
        raise ArgumentError("limit series ends before t_final")
    return out


def _theta_source(theta_eps, grid: Grid3, nu_prime: float) -> Heat1DState:
    if isinstance(theta_eps, Heat1DState):
        if abs(theta_eps.nu_prime - nu_prime) > 1e-14 * nu_prime:
            raise ConsistencyError("theta profile diffuses with a different nu'")
        if theta_eps.time != 0.0:
            raise ArgumentError("theta profile must be given at t = 0")
        state = theta_eps
    elif isinstance(theta_eps, SpaceTimeSeries):
        if theta_eps.times[0] != 0.0:
            raise ArgumentError("theta series must start at t = 0")
        g1 = theta_eps.grid
        state = Heat1DState(g1, np.asarray(theta_eps.coeffs)[0].reshape(-1), nu_prime)
        for t, cf in zip(theta_eps.times[1:], np.asarray(theta_eps.coeffs)[1:]):
            ref = state.coeffs * heat_multiplier(g1, nu_prime, t)
            scale = max(np.abs(state.coeffs).max(), 1e-300)
            if np.abs(cf.reshape(-1) - ref).max() > 1e-10 * scale:
                raise ConsistencyError(f"theta series at t={t} is not the heat flow with nu'={nu_prime}")
    elif theta_eps is None:
        state = Heat1DState(Grid1(grid.n, grid.box_length), np.zeros(grid.n), nu_prime)
    else:
        raise ArgumentError("theta_eps must be a Heat1DState, a series on Grid1 or None")
    if state.grid.n != grid.n or state.grid.box_length != grid.box_length:
        raise ArgumentError("theta profile grid does not match the 3D grid")
    return state


def _theta_phys(theta: Heat1DState, t: float) -> tuple[np.ndarray, np.ndarray]:
    c = theta.coeffs * heat_multiplier(theta.grid, theta.nu_prime, t)
    return c, to_physical_real(c, dim=1)


class _DiffRHS:
    def __init__(self, grid, mask):
        self.grid, self.mask = grid, mask
        self._zero = np.zeros(grid.spatial_shape)

    def limit_physical(self, v_phys: np.ndarray, th_phys: np.ndarray) -> np.ndarray:
        z = self._zero
        return np.stack([v_phys[0], v_phys[1], z, z + th_phys[None, None, :]])

    def __call__(self, d: np.ndarray, u_lim: np.ndarray, g: np.ndarray):
        dp = P.physical(d)
        flux = _flux_from_physical(dp, self.mask, partner=u_lim)
        div = P.divergence_of_flux(self.grid, flux, 4)
        return _project_rhs(div, self.grid) + g, dp


def _inner(a: np.ndarray, b: np.ndarray, grid: Grid3) -> float:
    return grid.volume * float(np.real(np.sum(np.conj(a) * b)))


def _difference_terms(d, v_h, th_c, g, grid):
    """A, B, C of the energy balance and the ingredient norms of the bound."""
    dp = P.physical(d)
    x = grid.xi
    A = 0.0
    for c in range(2):
        for i in range(3):
            dv = to_physical_real(1j * x[i] * v_h[c])
            A -= float(np.sum(dp[i] * dv * dp[c]))
    A *= grid.cell_volume
    g1 = Grid1(grid.n, grid.box_length)
    dth = to_physical_real(1j * g1.wavenumbers * th_c, dim=1)
    B = -grid.cell_volume * float(np.sum(dp[2] * dp[3] * dth[None, None, :]))
    C = _inner(g, d, grid)
    gnorm = math.sqrt(_inner(g, g, grid))
    # ||grad v||_{H^{1/2}}^2 = sum |xi|^3 |v|^2
    gv = grid.volume * float(np.sum(grid.kmag**3 * np.abs(v_h) ** 2))
    th1 = math.sqrt(g1.box_length * float(np.sum(g1.wavenumbers**2 * np.abs(th_c) ** 2)))
    return A, B, C, gnorm, gv, th1


def simulate_difference(D0: SpectralField4, v_h_series: SpaceTimeSeries, theta_eps_series,
                        gtilde_series: SpaceTimeSeries | None, config: SolverConfig, observer=None) -> Trajectory:
    """Integrate the system for D = U - (v_h, 0, theta_eps).

    The limit flow is re-propagated between samples with the same Strang
    stages (``sns_velocity_step``) and reset to the sample at every sample
    time, so the coupling terms and G are evaluated at the stage values.
    """
    grid = D0.grid
    config.check_grid(grid)
    params = config.params
    mask = config.mask(grid)
    nsteps, dt = step_count(config.t_final, config.dt)
    vc = np.asarray(v_h_series.coeffs)
    if v_h_series.grid != grid:
        raise ArgumentError("limit series grid does not match D0")
    if vc.shape[1] not in (2, 3):
        raise ArgumentError("limit series needs (v1, v2) or (omega, v1, v2) components")
    vc = vc[:, -2:]
    outside = float(np.abs(vc[:, :, ~mask]).max(initial=0.0))
    if outside > 1e-12 * max(float(np.abs(vc).max(initial=0.0)), 1e-300):
        raise ConsistencyError("limit velocity has modes outside the solver truncation")
    sample_of_step = _aligned_steps(np.asarray(v_h_series.times), dt, nsteps)
    theta = _theta_source(theta_eps_series, grid, params.nu_prime)
    if gtilde_series is not None:
        gsteps = _aligned_steps(np.asarray(gtilde_series.times), dt, nsteps)
        gc = np.asarray(gtilde_series.coeffs)
        for step, i in gsteps.items():
            if step not in sample_of_step:
                continue
            _, g_ref, _ = limit_rhs(vc[sample_of_step[step]], grid, mask)
            scale = max(float(np.abs(g_ref).max()), float(np.abs(gc[i]).max()), 1e-300)
            if np.abs(gc[i] - g_ref).max() > 1e-8 * scale:
                raise ConsistencyError(f"G series at t={gtilde_series.times[i]} does not match the limit velocity")

    d = _prepare(D0, mask)
    keep = set(sample_steps(nsteps, config.sample_stride))
    half = LinearPropagator(grid, params, dt / 2)
    rhs = _DiffRHS(grid, mask)
    rec = _Recorder(grid, keep)
    terms = {k: [] for k in ("A", "B", "C", "g_l2", "grad_v_h12_sq", "theta_h1")}

    def diagnose(t, d, v):
        rec.energy(t, d)
        th_c, _ = _theta_phys(theta, t)
        _, g, _ = limit_rhs(v, grid, mask)
        for k, val in zip(terms, _difference_terms(d, v, th_c, g, grid)):
            terms[k].append(val)

    v = vc[0].copy()
    rec.state(0, 0.0, d)
    diagnose(0.0, d, v)
    for step in range(1, nsteps + 1):
        t = step * dt
        st = sns_velocity_step(v, grid, params.nu, dt, mask, advection=config.nonlinear)
        _, th_half = _theta_phys(theta, t - dt / 2)
        da = half.apply(d)
        if config.nonlinear:
            ua = rhs.limit_physical(st.v_a_phys, th_half)
            r1, dpa = rhs(da, ua, st.g_a)
            check_cfl(P.max_speed(dpa[:3] + ua[:3]), dt, grid, config.cfl_limit)
            ds = da + dt * r1
            us = rhs.limit_physical(st.v_star_phys, th_half)
            r2, _ = rhs(ds, us, st.g_star)
            db = da + 0.5 * dt * (r1 + r2)
        else:
            db = da
        d = half.apply(db)
        _check_finite(d, t, dt)
        v = vc[sample_of_step[step]].copy() if step in sample_of_step else st.v_next
        if observer is not None:
            observer(t, d)
        rec.state(step, t, d)
        if step % config.diag_stride == 0 or step == nsteps:
            diagnose(t, d, v)
    diag = rec.diag_arrays()
    diag.update({k: np.asarray(val) for k, val in terms.items()})
    return Trajectory(grid, config, "difference", rec.series(), diag,
                      limit_samples=SpaceTimeSeries(grid, np.asarray(v_h_series.times), vc),
                      theta_profile=theta)


# ---------------------------------------------------------------- ledger


@dataclass
class EnergyLedger:
    times: np.ndarray
    l2_sq: np.ndarray
    dissipation: np.ndarray
    log_bound: np.ndarray
    gradient_sq: np.ndarray
    exact_dissipation: np.ndarray
    terms: dict = field(default_factory=dict)
    c0: float = 1.0
    pressure_l2: np.ndarray | None = None

    @property
    def total(self) -> np.ndarray:
        return self.l2_sq + self.dissipation

    def nonincreasing_defect(self) -> float:
        """Largest relative increase of l2_sq + dissipation between records."""
        tot = self.total
        return float(max(np.max(np.diff(tot), initial=0.0), 0.0) / max(tot[0], 1e-300))

    @property
    def bound(self) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_bound)

    def bound_holds(self) -> bool:
        return bool(np.all(np.log(np.maximum(self.total, 1e-300)) <= self.log_bound + 1e-12))


def _cumtrapz(y, t):
    out = np.zeros_like(y, dtype=float)
    if len(y) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def pressure_diagnostic(d: np.ndarray, v_h: np.ndarray | None, grid: Grid3, params: PhysicsParams,
                        mask: np.ndarray | None = None) -> np.ndarray:
    """q = -(1/eps) d3 Lap^-1 H - Lap^-1 div div(V (x) V + V (x) v + v (x) V)."""
    if mask is None:
        mask = P.product_mask(grid)
    x = grid.xi
    k2 = grid.xi_sq
    inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    V = P.physical(d[:3])
    if v_h is None:
        vt = np.zeros_like(V)
    else:
        vp = P.physical(v_h)
        vt = np.stack([vp[0], vp[1], np.zeros_like(vp[0])])
    dd = np.zeros(grid.spatial_shape, dtype=complex)
    for i in range(3):
        for j in range(3):
            F = P.spectral(V[i] * V[j] + V[i] * vt[j] + vt[i] * V[j], mask)
            dd += x[i] * x[j] * F
    return 1j * x[2] * inv * d[3] / params.epsilon - dd * inv


def energy_report(traj: Trajectory, c0: float = 1.0, with_pressure: bool = True) -> EnergyLedger:
    """Energy ledger and the Gronwall bound assembled from measured norms."""
    dg = traj.diag
    if len(dg.get("t", [])) == 0:
        raise ArgumentError("trajectory has no diagnostics")
    p = traj.config.params
    t = dg["t"]
    l2 = dg["l2_sq"]
    grad = dg["grad_v_sq"] + dg["grad_theta_sq"]
    diss = p.nu0 * _cumtrapz(grad, t)
    exact = _cumtrapz(2 * p.nu * dg["grad_v_sq"] + 2 * p.nu_prime * dg["grad_theta_sq"], t)
    terms = {}
    if traj.kind == "difference":
        gl = dg["g_l2"]
        expo = gl + dg["grad_v_h12_sq"] / p.nu0 + dg["theta_h1"] ** (4.0 / 3.0) / p.nu0 ** (1.0 / 3.0)
        log_bound = np.log(l2[0] + 0.5 * _cumtrapz(gl, t)) + c0 * _cumtrapz(expo, t)
        terms = {k: dg[k] for k in ("A", "B", "C", "g_l2", "grad_v_h12_sq", "theta_h1")}
    else:
        log_bound = np.full_like(l2, math.log(max(l2[0], 1e-300)))
    pressure = None
    if with_pressure:
        grid = traj.grid
        st = traj.states
        vs = traj.limit_samples
        vals = []
        for i in range(len(st)):
            v = None
            if vs is not None:
                j = int(np.argmin(np.abs(vs.times - st.times[i])))
                v = np.asarray(vs.coeffs[j])
            q = pressure_diagnostic(np.asarray(st.coeffs[i]), v, grid, p, traj.config.mask(grid))
            vals.append(math.sqrt(grid.volume * float(np.sum(np.abs(q) ** 2))))
        pressure = np.asarray(vals)
    return EnergyLedger(np.asarray(t), l2, diss, log_bound, grad, exact, terms, c0, pressure)


# ------------------------------------------------------------ checkpoint

MAGIC = b"BQS1"
_HEADER = struct.Struct("<4sQ5d")


def write_checkpoint(path, state: SpectralField4, params: PhysicsParams, time: float) -> None:
    grid = state.grid
    c = np.ascontiguousarray(np.asarray(state.coeffs), dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.n, grid.box_length, params.nu, params.nu_prime, params.epsilon, time))
        fh.write(c.tobytes(order="C"))


def read_checkpoint(path) -> tuple[SpectralField4, PhysicsParams, float]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise NumericError("checkpoint is truncated")
    magic, n, L, nu, nup, eps, t = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArgumentError(f"not a BQS1 checkpoint (magic {magic!r})")
    expected = _HEADER.size + 4 * n**3 * 16
    if len(raw) != expected:
        raise NumericError(f"checkpoint size {len(raw)} does not match n={n} (expected {expected})")
    c = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size).reshape((4, n, n, n)).astype(complex)
    grid = Grid3(int(n), float(L))
    return SpectralField4(grid, c), PhysicsParams.unchecked(nu, nup, eps), float(t)
