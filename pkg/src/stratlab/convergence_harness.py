"""Ill-prepared data, epsilon sweeps and rate fits for D = U - (v_h, 0, theta).

The limit flow (v_h, theta) is computed once and shared by every epsilon.
Norms are accumulated while the solver runs, so full trajectories are never
held in memory.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boussinesq_solver import SolverConfig, simulate_sepsilon
from .dispersion_lab import loglog_fit
from .errors import ArgumentError, DivergenceError, DomainError
from .limit_solvers import Heat1DState, VorticityState, heat_multiplier, solve_sns, step_count
from .spectral_core import (
    Grid1,
    Grid3,
    SpaceTimeSeries,
    SpectralField4,
    lq_norm_coeffs,
    to_physical_real,
    to_spectral_real,
)
from .wave_algebra import PhysicsParams, TruncationWindow, epsilon_threshold, leray_coeffs, strat_coeffs

GLOBAL_RATE_NU_EQUAL = 3.0 / 16.0
SWEEP_COLUMNS = ("epsilon", "q", "t_final", "norm_osc_L2tLq", "norm_strat_L2tLq", "admissible_flag")


# ----------------------------------------------------------- initial data


@dataclass(frozen=True)
class InitialDataSpec:
    """Random-phase data under a Gaussian envelope.

    ``theta_profile`` lists (mode, cos_coeff, sin_coeff) triples for the
    x3-profile.  Amplitudes are L2(box) norms of the stratified and
    oscillating parts.
    """

    seed: int = 0
    spectrum_peak: float = 4.0
    amplitude_strat: float = 0.5
    amplitude_osc: float = 1.0
    theta_profile: tuple = ((1, 0.5, 0.0), (2, 0.0, 0.25))
    exclude_degenerate_line: bool = True
    envelope_width: float | None = 0.6

    def __post_init__(self):
        if not self.spectrum_peak > 0:
            raise ArgumentError("spectrum_peak must be positive")
        if self.amplitude_strat < 0 or self.amplitude_osc < 0:
            raise ArgumentError("amplitudes must be nonnegative")
        if self.envelope_width is not None and not self.envelope_width > 0:
            raise ArgumentError("envelope_width must be positive")


def _profile_coeffs(profile, grid1: Grid1) -> np.ndarray:
    x = grid1.coordinates()
    vals = np.zeros(grid1.n)
    kmax = grid1.n // 3
    for mode, a, b in profile:
        mode = int(mode)
        if not 0 < mode < kmax:
            raise ArgumentError(f"theta profile mode {mode} outside (0, {kmax})")
        kx = 2 * math.pi * mode / grid1.box_length * x
        vals = vals + a * np.cos(kx) + b * np.sin(kx)
    return to_spectral_real(vals, dim=1)


def _l2(c: np.ndarray, grid: Grid3) -> float:
    return math.sqrt(grid.volume * float(np.sum(np.abs(c) ** 2)))


def build_initial_data(spec: InitialDataSpec, grid: Grid3):
    """Return (U0, theta_tilde0 coefficients on the x3 axis, v_tilde0_h).

    v_tilde0_h is the horizontal part of P2 U0, so the stratified part of the
    data coincides with the limit initial velocity.
    """
    cutoff = grid.kmin * grid.n / 3.0
    if spec.spectrum_peak * grid.kmin >= cutoff:
        raise ArgumentError(f"spectrum_peak {spec.spectrum_peak} is above the dealiasing cutoff")
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal((4,) + grid.spatial_shape)
    if spec.envelope_width is not None:
        L = grid.box_length
        r2 = sum((x - L / 2) ** 2 for x in grid.coordinates())
        noise *= np.exp(-r2 / (2 * spec.envelope_width**2))
    c = np.stack([to_spectral_real(noise[i]) for i in range(4)])
    kp = spec.spectrum_peak * grid.kmin
    k = grid.kmag
    c *= (k / kp) ** 2 * np.exp(-((k / kp) ** 2))
    c[:, ~grid.dealias_mask()] = 0.0
    if spec.exclude_degenerate_line:
        c[:, grid.xi_h_sq == 0] = 0.0
    c = leray_coeffs(c, grid)
    s = strat_coeffs(c, grid)
    o = c - s
    ns, no = _l2(s, grid), _l2(o, grid)
    if (spec.amplitude_strat > 0 and ns == 0) or (spec.amplitude_osc > 0 and no == 0):
        raise ArgumentError("generated field has an empty stratified or oscillating part")
    s = s * (spec.amplitude_strat / ns if ns > 0 else 0.0)
    o = o * (spec.amplitude_osc / no if no > 0 else 0.0)
    U0 = SpectralField4(grid, s + o, is_dealiased=True)
    theta0 = _profile_coeffs(spec.theta_profile, Grid1(grid.n, grid.box_length))
    return U0, theta0, strat_coeffs(np.asarray(U0.coeffs), grid)[:2].copy()


def measured_amplitudes(U0, grid: Grid3) -> tuple[float, float]:
    c = np.asarray(getattr(U0, "coeffs", U0))
    s = strat_coeffs(c, grid)
    return _l2(s, grid), _l2(c - s, grid)


# --------------------------------------------------------------- rates


def k_of_q(q: float) -> float:
    if not 2 < q < 6:
        raise DomainError(f"q must lie in (2, 6), got {q}")
    a = 6.0 / q - 1.0
    return min(a, 1.0 - 2.0 / q) ** 2 / a


def theoretical_rate(q: float, regime: str = "nu_distinct", norm: str = "L2tLq") -> float:
    """Guaranteed decay exponent of ||D_osc|| in epsilon.

    ``norm="global"`` with ``regime="nu_equal"`` gives the exponent of the
    global-in-time Besov estimate, which does not depend on q.
    """
    K = k_of_q(q)
    if regime not in ("nu_distinct", "nu_equal"):
        raise ArgumentError(f"unknown regime {regime!r}")
    if norm == "global":
        if regime != "nu_equal":
            raise ArgumentError("the global estimate is only available when nu = nu'")
        return GLOBAL_RATE_NU_EQUAL
    if norm != "L2tLq":
        raise ArgumentError(f"unknown norm {norm!r}")
    return K / 640.0 if regime == "nu_distinct" else K / 544.0


# ------------------------------------------------------------ diagnostics


def _running_l2(values: np.ndarray, times: np.ndarray) -> np.ndarray:
    sq = np.asarray(values, float) ** 2
    inc = 0.5 * (sq[1:] + sq[:-1]) * np.diff(times)
    return np.sqrt(np.concatenate([[0.0], np.cumsum(inc)]))


def osc_norm_series(traj, q: float):
    """(t, ||(I - P2) D(t)||_q, running L2_t aggregate) along a trajectory of D."""
    if not 2 < q < 6:
        raise DomainError(f"q must lie in (2, 6), got {q}")
    series = traj.states if hasattr(traj, "states") else traj
    grid = series.grid
    t = np.asarray(series.times, float)
    vals = np.empty(t.size)
    for i in range(t.size):
        c = np.asarray(series.coeffs[i])
        vals[i] = lq_norm_coeffs(c - strat_coeffs(c, grid), grid, q)
    return t, vals, _running_l2(vals, t)


def osc_series(series: SpaceTimeSeries) -> SpaceTimeSeries:
    c = np.asarray(series.coeffs)
    out = np.stack([ci - strat_coeffs(ci, series.grid) for ci in c])
    return SpaceTimeSeries(series.grid, series.times, out)


def difference_coeffs(u: np.ndarray, v_h: np.ndarray, theta_line: np.ndarray) -> np.ndarray:
    """D = U - (v_h, 0, theta) with theta on the xi_h = 0 line."""
    d = np.array(u, dtype=complex)
    d[:2] -= v_h
    d[3, 0, 0, :] -= theta_line
    return d


# ------------------------------------------------------ Boussinesq form


def rho_bar(x3, epsilon: float, kappa: float = 1.0, rho0: float = 0.0):
    return rho0 - np.asarray(x3) / (epsilon**2 * kappa**2)


def to_boussinesq(u_phys: np.ndarray, x3, epsilon: float, kappa: float = 1.0, rho0: float = 0.0) -> np.ndarray:
    """(v, theta) -> (v, rho_bar + theta / (eps kappa^2)) in physical space."""
    u = np.asarray(u_phys, dtype=float)
    out = u.copy()
    out[3] = rho_bar(x3, epsilon, kappa, rho0) + u[3] / (epsilon * kappa**2)
    return out


def from_boussinesq(V_phys: np.ndarray, x3, epsilon: float, kappa: float = 1.0, rho0: float = 0.0) -> np.ndarray:
    V = np.asarray(V_phys, dtype=float)
    out = V.copy()
    out[3] = epsilon * kappa**2 * (V[3] - rho_bar(x3, epsilon, kappa, rho0))
    return out


def boussinesq_roundtrip_defect(series: SpaceTimeSeries, epsilon: float, kappa: float = 1.0,
                                rho0: float = 0.0) -> float:
    """Max relative defect of from_boussinesq(to_boussinesq(U)) over a stored trajectory."""
    x3 = series.grid.coordinates()[2]
    worst = 0.0
    for c in np.asarray(series.coeffs):
        u = np.stack([to_physical_real(ci) for ci in c])
        back = from_boussinesq(to_boussinesq(u, x3, epsilon, kappa, rho0), x3, epsilon, kappa, rho0)
        scale = max(float(np.abs(u).max()), 1e-300)
        worst = max(worst, float(np.abs(back - u).max()) / scale)
    return worst


# ----------------------------------------------------------------- sweep


@dataclass
class LimitFlow:
    """Limit velocity and temperature sampled on the norm time grid."""

    grid: Grid3
    times: np.ndarray
    v_h: np.ndarray
    theta: Heat1DState
    stride: int
    dt: float

    def theta_line(self, t: float) -> np.ndarray:
        return self.theta.coeffs * heat_multiplier(self.theta.grid, self.theta.nu_prime, t)


def compute_limit(v_tilde0_h: np.ndarray, theta0: np.ndarray, grid: Grid3, nu: float, nu_prime: float,
                  t_final: float, dt: float, stride: int, friedrichs_radius: float | None = None) -> LimitFlow:
    omega = VorticityState.from_velocity(v_tilde0_h, grid, nu)
    sns = solve_sns(omega, t_final=t_final, dt=dt, sample_stride=stride, friedrichs_radius=friedrichs_radius)
    theta = Heat1DState(Grid1(grid.n, grid.box_length), theta0, nu_prime)
    return LimitFlow(grid, np.asarray(sns.times), np.asarray(sns.coeffs)[:, 1:], theta, stride, dt)


@dataclass
class RunNorms:
    epsilon: float
    times: np.ndarray
    osc: dict
    strat: dict
    admissible: bool
    completed: bool = True
    final_state: np.ndarray | None = None

    def l2t(self, q: float, part: str = "osc") -> float:
        vals = (self.osc if part == "osc" else self.strat)[q]
        return float(_running_l2(vals, self.times)[-1])


def _norms_of(d: np.ndarray, grid: Grid3, q_list):
    s = strat_coeffs(d, grid)
    o = d - s
    return ({q: lq_norm_coeffs(o, grid, q) for q in q_list},
            {q: lq_norm_coeffs(s, grid, q) for q in q_list})


def run_single(U0, theta0, limit: LimitFlow, params: PhysicsParams, t_final: float, q_list,
               admissible: bool = True, friedrichs_radius: float | None = None) -> RunNorms:
    grid = limit.grid
    nsteps, dt = step_count(t_final, limit.dt)
    config = SolverConfig(params, dt, t_final, friedrichs_radius=friedrichs_radius, sample_stride=max(nsteps, 1),
                          diag_stride=max(nsteps, 1))
    times, osc, strat = [], {q: [] for q in q_list}, {q: [] for q in q_list}
    index = {int(round(t / dt)): i for i, t in enumerate(limit.times)}

    def record(t, c):
        step = int(round(t / dt))
        if step not in index:
            return
        i = index[step]
        d = difference_coeffs(c, limit.v_h[i], limit.theta_line(limit.times[i]))
        no, ns = _norms_of(d, grid, q_list)
        times.append(t)
        for q in q_list:
            osc[q].append(no[q])
            strat[q].append(ns[q])

    u0 = np.array(U0.coeffs)
    u0[3, 0, 0, :] += theta0
    record(0.0, np.where(config.mask(grid), u0, 0.0))

    def pack(done, final=None):
        return RunNorms(params.epsilon, np.asarray(times), {q: np.asarray(v) for q, v in osc.items()},
                        {q: np.asarray(v) for q, v in strat.items()}, admissible, done, final)

    try:
        traj = simulate_sepsilon(U0, theta0, config, observer=record)
    except DivergenceError as exc:
        exc.partial = pack(False)
        raise
    return pack(True, np.array(traj.states.coeffs[-1]))


@dataclass
class SweepResult:
    epsilons: np.ndarray
    q_list: tuple
    regime: str
    t_final: float
    norm_osc: dict
    norm_strat: dict
    admissible: np.ndarray
    fits: dict = field(default_factory=dict)
    theoretical: dict = field(default_factory=dict)
    global_reference: float | None = None
    runs: list = field(default_factory=list)

    def decreasing(self, q: float) -> bool:
        v = self.norm_osc[q]
        return bool(np.all(np.diff(v) < 0))

    def rows(self):
        for i, eps in enumerate(self.epsilons):
            for q in self.q_list:
                yield (float(eps), float(q), float(self.t_final), float(self.norm_osc[q][i]),
                       float(self.norm_strat[q][i]), int(bool(self.admissible[i])))


class SweepAborted(DivergenceError):
    def __init__(self, message, partial: SweepResult):
        super().__init__(message)
        self.partial = partial


def _fmt(x) -> str:
    return repr(x) if isinstance(x, int) else format(x, ".17g")


def write_sweep_csv(result: SweepResult, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in result.rows():
            w.writerow([_fmt(v) for v in row])
    return path


def write_summary(result: SweepResult, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("q", "regime", "fitted_exponent", "r_squared", "theoretical_exponent", "global_reference"))
        for q in result.q_list:
            f = result.fits.get(q)
            w.writerow([_fmt(float(q)), result.regime, _fmt(f.exponent) if f else "nan",
                        _fmt(f.r_squared) if f else "nan", _fmt(result.theoretical[q]),
                        _fmt(result.global_reference) if result.global_reference is not None else ""])
    return path


def read_sweep_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != SWEEP_COLUMNS:
        raise ArgumentError(f"{path}: unexpected sweep header")
    return [tuple(float(v) for v in r) for r in rows[1:]]


def _assemble(runs, q_list, regime, t_final) -> SweepResult:
    runs = sorted(runs, key=lambda r: -r.epsilon)
    eps = np.array([r.epsilon for r in runs])
    res = SweepResult(eps, tuple(q_list), regime, t_final,
                      {q: np.array([r.l2t(q) for r in runs]) for q in q_list},
                      {q: np.array([r.l2t(q, "strat") for r in runs]) for q in q_list},
                      np.array([r.admissible for r in runs]), runs=runs)
    for q in q_list:
        res.theoretical[q] = theoretical_rate(q, regime)
        use = res.admissible & np.array([r.completed for r in runs])
        if use.sum() >= 2 and np.all(res.norm_osc[q][use] > 0):
            res.fits[q] = loglog_fit(eps[use], res.norm_osc[q][use])
    if regime == "nu_equal":
        res.global_reference = GLOBAL_RATE_NU_EQUAL
    return res


def run_sweep(eps_list, spec: InitialDataSpec, physics: PhysicsParams, solver_config: dict | None = None,
              q_list=(3, 4, 5), grid: Grid3 | None = None, window: tuple[float, float] | None = None,
              output_dir=None, workers: int = 1, data=None) -> SweepResult:
    """Simulate every epsilon from the same data and fit ||D_osc||_{L2_t L^q} ~ eps^a.

    ``solver_config`` holds dt, t_final, norm_stride and friedrichs_radius.
    ``window`` = (m, M) enables the eps <= eps_1 flag when nu != nu'.
    """
    eps = [float(e) for e in eps_list]
    if len(eps) < 2 or any(not e > 0 for e in eps):
        raise ArgumentError("need at least two positive epsilons")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ArgumentError("epsilons must be strictly decreasing")
    for q in q_list:
        k_of_q(q)
    cfg = {"dt": 5e-3, "t_final": 1.0, "norm_stride": 4, "friedrichs_radius": None}
    cfg.update(solver_config or {})
    grid = grid or Grid3(48)
    regime = "nu_equal" if physics.nu == physics.nu_prime else "nu_distinct"

    flags = []
    for e in eps:
        if regime == "nu_distinct" and window is not None:
            m, M = window
            flags.append(TruncationWindow.from_epsilon(e, m, M).admissible(physics.with_epsilon(e)))
        else:
            flags.append(True)
    if regime == "nu_distinct" and window is not None and not any(flags):
        raise ArgumentError(f"no epsilon is below eps_1 = {epsilon_threshold(physics, *window).eps1}")

    U0, theta0, v0 = data if data is not None else build_initial_data(spec, grid)
    limit = compute_limit(v0, theta0, grid, physics.nu, physics.nu_prime, cfg["t_final"], cfg["dt"],
                          cfg["norm_stride"], cfg["friedrichs_radius"])

    def one(i):
        return run_single(U0, theta0, limit, physics.with_epsilon(eps[i]), cfg["t_final"], q_list,
                          flags[i], cfg["friedrichs_radius"])

    runs = []
    try:
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                for r in pool.map(one, range(len(eps))):
                    runs.append(r)
        else:
            for i in range(len(eps)):
                runs.append(one(i))
    except DivergenceError as exc:
        if getattr(exc, "partial", None) is not None:
            runs.append(exc.partial)
        partial = _assemble(runs, q_list, regime, cfg["t_final"]) if runs else None
        if output_dir is not None and partial is not None:
            write_sweep_csv(partial, Path(output_dir) / "sweep_partial.csv")
        raise SweepAborted(f"sweep aborted: {exc}", partial) from exc

    result = _assemble(runs, q_list, regime, cfg["t_final"])
    if output_dir is not None:
        write_sweep_csv(result, Path(output_dir) / "sweep.csv")
        write_summary(result, Path(output_dir) / "sweep_summary.csv")
    return result
