"""Acceptance suite: one test per criterion, each with its runtime budget.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
one PASS/FAIL line per criterion.
"""

import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from stratlab import _products as P
from stratlab import convergence_harness as H
from stratlab import dispersion_lab as dl
from stratlab.boussinesq_solver import SolverConfig, energy_report, simulate_difference, simulate_sepsilon
from stratlab.limit_solvers import Heat1DState, VorticityState, compute_gtilde, heat_multiplier, solve_sns
from stratlab.spectral_core import Grid1, Grid3, SpectralField4, to_spectral
from stratlab.wave_algebra import (
    PhysicsParams,
    closed_form_batch,
    discriminant,
    leray_coeffs,
    penalization_matrix,
    strat_coeffs,
    wave_matrix,
)

BC = dl.BETA_CRIT


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds
        self.start = time.perf_counter()

    def check(self):
        elapsed = time.perf_counter() - self.start
        assert elapsed < self.seconds, f"runtime {elapsed:.1f} s exceeds {self.seconds} s"


# ---------------------------------------------------------------- 1


def _sample_regime(rng, regime, n):
    out = []
    while len(out) < n:
        xi = rng.uniform(-4, 4, 3)
        if math.hypot(xi[0], xi[1]) < 1e-3:
            continue
        nu = math.exp(rng.uniform(-3, 1))
        nup = nu if regime == "nu_equal" else math.exp(rng.uniform(-3, 1))
        p = PhysicsParams(nu, nup, math.exp(rng.uniform(-5, 0)))
        if regime == "nu_distinct" and not discriminant(xi, p) < 0:
            continue
        out.append((xi, p))
    return out


def _eigen_errors(xi, p):
    lam, V = closed_form_batch(xi, p)
    B = wave_matrix(xi, p)
    mu, W = np.linalg.eig(B)
    scale = np.abs(mu).max()
    lam_err, vec_err = 0.0, 0.0
    for k in range(4):
        j = int(np.argmin(np.abs(mu - lam[k])))
        lam_err = max(lam_err, abs(mu[j] - lam[k]) / scale)
        w = W[:, j] / np.linalg.norm(W[:, j])
        v = V[k] / np.linalg.norm(V[k])
        vec_err = max(vec_err, np.linalg.norm(v - np.vdot(w, v) * w))
    return lam_err, vec_err, lam[1]


@pytest.mark.criterion(1, "eigen-decomposition exactness")
def test_criterion_1_eigen_decomposition():
    budget = Budget(5)
    rng = np.random.default_rng(20240601)
    for regime in ("nu_equal", "nu_distinct"):
        worst_l, worst_v = 0.0, 0.0
        for xi, p in _sample_regime(rng, regime, 1000):
            le, ve, lam2 = _eigen_errors(xi, p)
            worst_l, worst_v = max(worst_l, le), max(worst_v, ve)
            assert lam2 == -p.nu * float(np.sum(xi**2))
        assert worst_l <= 1e-10, regime
        assert worst_v <= 1e-10, regime
    budget.check()


# ---------------------------------------------------------------- 2


@pytest.mark.criterion(2, "projector algebra")
def test_criterion_2_projector_algebra():
    budget = Budget(10)
    g = Grid3(32)
    rng = np.random.default_rng(7)
    xi = np.moveaxis(g.xi_vectors(), 0, -1)
    nz = g.kmag > 0
    Bmat = penalization_matrix(xi[nz], 1.0)
    x1, x2, _ = g.xi
    for _ in range(200):
        c = to_spectral(rng.standard_normal((4,) + g.spatial_shape))
        c[:, ~nz] = 0
        f = leray_coeffs(c, g)
        scale = np.abs(f).max()
        s = strat_coeffs(f, g)
        o = f - s
        # 2: orthogonality of the splitting and of B f against P2 f
        assert abs(np.vdot(s, o)) <= 1e-12 * np.vdot(f, f).real
        Bf = np.einsum("mij,jm->im", Bmat, f[:, nz])
        assert abs(np.vdot(s[:, nz], Bf)) <= 1e-12 * np.linalg.norm(Bf) * np.linalg.norm(s)
        # 4: P2 f is stratified and a fixed point
        assert np.abs(s[2:]).max() <= 1e-12 * scale
        assert np.abs(x1 * s[0] + x2 * s[1]).max() <= 1e-12 * scale * g.kmag.max()
        assert np.abs(strat_coeffs(s, g) - s).max() <= 1e-12 * scale
        phi = c[3]
        strat = np.stack([-1j * x2 * phi, 1j * x1 * phi, 0 * phi, 0 * phi])
        assert np.abs(strat_coeffs(strat, g) - strat).max() <= 1e-12 * np.abs(strat).max()
        # 6: B P2 f = 0
        Bs = np.einsum("mij,jm->im", Bmat, s[:, nz])
        assert np.abs(Bs).max() <= 1e-12 * np.abs(Bmat).max() * scale
        # 7: P2 commutes with Leray and kills gradients
        assert np.abs(strat_coeffs(leray_coeffs(c, g), g) - strat_coeffs(c, g)).max() <= 1e-12 * np.abs(c).max()
        assert np.abs(leray_coeffs(strat_coeffs(c, g), g) - strat_coeffs(c, g)).max() <= 1e-12 * np.abs(c).max()
        grad = np.stack([1j * k * phi for k in np.broadcast_arrays(*g.xi)] + [0 * phi])
        assert np.abs(strat_coeffs(grad, g)).max() <= 1e-12 * np.abs(grad).max()
    budget.check()


# ---------------------------------------------------------------- 3


@pytest.mark.criterion(3, "Cardan roots and asymptotic expansions")
def test_criterion_3_cardan_and_expansions():
    budget = Budget(5)
    y = np.random.default_rng(3).uniform(0.0, BC, 10_000)
    y = y[(y > 0) & (y < BC)]
    z1, z2 = dl.cardan_roots(y)
    assert np.max(np.abs(dl.f1_eval(z1) - y)) <= 1e-12
    assert np.max(np.abs(dl.f1_eval(z2) - y)) <= 1e-12
    # independent root oracle on a subsample
    for yi in y[:50]:
        r1 = brentq(lambda x: dl.f1_eval(x) - yi, 0.0, 1 / math.sqrt(2), xtol=1e-15)
        assert abs(r1 - dl.cardan_roots(yi)[0]) <= 1e-12
    for kind in dl.RESIDUAL_KINDS:
        r = [abs(dl.asymptotic_residual(kind, a)) for a in (1e-2, 1e-3, 1e-4)]
        assert r[0] > r[1] > r[2], kind
    budget.check()


# ---------------------------------------------------------------- 4


@pytest.mark.criterion(4, "optimal dispersion exponent and sup-in-beta constants")
def test_criterion_4_dispersion_exponent():
    budget = Budget(120)
    sig = dl.log_samples(1e2, 1e6, 21)
    for R in (2.0, 4.0):
        vals = np.array([dl.eval_I(1.0, BC, R, s) for s in sig])
        fit = dl.fit_decay(zip(sig, vals))
        assert abs(fit.exponent + 0.25) <= 0.03, (R, fit.exponent)
        c = float(np.min(vals * sig**0.25))
        assert c > 0
        assert np.all(vals >= c * sig**-0.25)
    small = dl.log_samples(1e4, 1e8, 21)
    for beta in (0.0, 0.05):
        fit = dl.fit_decay((s, dl.eval_I(1.0, beta, 2.0, s)) for s in small)
        assert abs(fit.exponent + 0.5) <= 0.05, (beta, fit.exponent)

    rng = np.random.default_rng(44)
    for R in (2.0, 4.0):
        for sigma in dl.log_samples(1e2, 1e6, 9):
            crit = dl.eval_I(1.0, BC, R, sigma)
            for beta in BC + np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 9)]):
                assert dl.eval_I(1.0, float(beta), R, sigma) <= 4 * crit
    for _ in range(150):
        sigma = float(10 ** rng.uniform(2, 6))
        R = float(rng.choice([2.0, 4.0]))
        b0 = float(rng.uniform(0, 1.2 * BC))
        b = max(0.0, b0 + float(rng.uniform(-1, 1)) / math.sqrt(sigma))
        assert dl.eval_I(1.0, b, R, sigma) <= 3 * dl.eval_I(1.0, b0, R, sigma)
    budget.check()


# ---------------------------------------------------------------- 5


def _fd_hessian(xi, h=1e-3):
    e = np.eye(3)
    H_ = np.zeros((3, 3))
    st = [(-2, 1 / 12), (-1, -2 / 3), (1, 2 / 3), (2, -1 / 12)]
    for i in range(3):
        for j in range(3):
            H_[i, j] = sum(ci * cj * dl.phase_b(xi + a * h * e[i] + b * h * e[j]) for a, ci in st for b, cj in st) / h**2
    return H_


@pytest.mark.criterion(5, "kernel decay and Hessian eigenvalues")
def test_criterion_5_kernel_decay():
    budget = Budget(600)
    sig = dl.log_samples(16.0, 4096.0, 9)
    sups = [dl.kernel_K0_sup(float(s)) for s in sig]
    fit = dl.loglog_fit(sig, sups)
    assert abs(fit.exponent + 0.5) <= 0.1, fit.exponent
    rng = np.random.default_rng(5)
    for _ in range(100):
        xi = rng.uniform(-2, 2, 3)
        if math.hypot(xi[0], xi[1]) < 0.3:
            xi[0] += 0.5
        fd = np.linalg.eigvalsh(_fd_hessian(xi))
        assert np.allclose(np.sort(dl.hessian_b_eigenvalues(xi)), fd, atol=1e-6, rtol=0)
    budget.check()


# ---------------------------------------------------------------- 6


@pytest.mark.criterion(6, "heat-flow truncation constant")
def test_criterion_6_heat_truncation():
    budget = Budget(60)
    a = dl.heat_sweep(trials=2, seed=0)
    b = dl.heat_sweep(trials=2, seed=1)
    assert len(a) >= 81
    for ra, rb in zip(a, b):
        assert math.isfinite(ra["ratio"]) and 0 < ra["ratio"] <= 1e3
        assert 0.5 <= ra["ratio"] / rb["ratio"] <= 2.0
    budget.check()


# ---------------------------------------------------------------- 7


def _div_free(grid, rng, kmax, amp):
    c = to_spectral(rng.standard_normal((4,) + grid.spatial_shape))
    c[:, grid.k_int_mag > kmax] = 0
    c = leray_coeffs(c, grid)
    return amp * c / np.abs(P.physical(c)).max()


def _strat_velocity(grid, rng, kmax, amp):
    psi = to_spectral(rng.standard_normal(grid.spatial_shape))
    psi[grid.k_int_mag > kmax] = 0
    psi[grid.xi_h_sq == 0] = 0
    x1, x2, _ = grid.xi
    v = np.stack([-1j * x2 * psi, 1j * x1 * psi])
    return amp * v / np.abs(P.physical(v)).max()


@pytest.mark.criterion(7, "solver integrity")
def test_criterion_7_solver_integrity():
    budget = Budget(300)
    g = Grid3(32)
    rng = np.random.default_rng(77)
    params = PhysicsParams(0.05, 0.08, 0.1)
    theta = np.zeros(g.n, complex)
    theta[1] = theta[-1] = 0.2
    theta[2], theta[-2] = 0.1j, -0.1j

    # divergence and energy along a forcing-free trajectory
    U0 = SpectralField4(g, _div_free(g, rng, 6, 1.0))
    tr = simulate_sepsilon(U0, theta, SolverConfig(params, 0.01, 1.0, sample_stride=10))
    assert np.max(tr.diag["max_div"]) <= 1e-10
    assert energy_report(tr, with_pressure=False).nonincreasing_defect() <= 1e-6

    # Strang order: error ratios under dt halving
    small = SpectralField4(g, _div_free(g, rng, 3, 0.3))
    T = 0.4

    def final(k):
        cfg = SolverConfig(PhysicsParams(0.05, 0.05, 0.1), T / k, T, sample_stride=10**6)
        return simulate_sepsilon(small, None, cfg).states.coeffs[-1]

    ref = final(256)
    e = [np.abs(final(k) - ref).max() for k in (8, 16, 32)]
    assert 3.6 <= e[0] / e[1] <= 4.4 and 3.6 <= e[1] / e[2] <= 4.4, e

    # U - (v_h, 0, theta) against the direct D run
    dt = 0.02
    v = _strat_velocity(g, rng, 4, 0.5)
    sns = solve_sns(VorticityState.from_velocity(v, g, params.nu), t_final=1.0, dt=dt)
    th = Heat1DState(Grid1(g.n), theta, params.nu_prime)
    d0 = _div_free(g, rng, 4, 0.5)
    cfg = SolverConfig(params, dt, 1.0)
    full = simulate_sepsilon(SpectralField4(g, d0 + np.concatenate([v, np.zeros((2,) + g.spatial_shape)])), th, cfg)
    diff = simulate_difference(SpectralField4(g, d0), sns, th, compute_gtilde(sns), cfg)
    assert np.max(diff.diag["max_div"]) <= 1e-10
    worst = 0.0
    for i, t in enumerate(full.times):
        lim = np.zeros((4,) + g.spatial_shape, complex)
        lim[:2] = sns.coeffs[i, 1:]
        lim[3, 0, 0, :] = th.coeffs * heat_multiplier(th.grid, params.nu_prime, t)
        worst = max(worst, float(np.abs(full.states.coeffs[i] - lim - diff.states.coeffs[i]).max()))
    assert full.times[-1] == pytest.approx(1.0)
    assert worst <= 1e-8
    budget.check()


# ---------------------------------------------------------------- 8


EPSILONS = [0.1, 0.05, 0.025, 0.0125]


def _check_sweep(res):
    for q in (3, 4, 5):
        norms = res.norm_osc[q]
        assert np.all(np.diff(norms) < 0), (q, norms)
        fit = res.fits[q]
        assert fit.exponent >= res.theoretical[q] - 0.01, (q, fit.exponent)
        assert abs(fit.exponent) >= 0.05, (q, fit.exponent)


@pytest.mark.slow
@pytest.mark.criterion(8, "convergence experiment")
def test_criterion_8_convergence_experiment():
    budget = Budget(1800)
    grid = Grid3(48)
    spec = H.InitialDataSpec()
    data = H.build_initial_data(spec, grid)
    s, o = H.measured_amplitudes(data[0], grid)
    assert o == pytest.approx(spec.amplitude_osc, rel=0.05)
    solver = {"dt": 5e-3, "t_final": 1.0, "norm_stride": 4}

    equal = H.run_sweep(EPSILONS, spec, PhysicsParams(0.05, 0.05, 0.1), solver, (3, 4, 5), grid=grid, data=data)
    _check_sweep(equal)
    assert equal.theoretical[4] == pytest.approx(0.5 / 544)

    window = (1 / 320, 1 / 320)
    distinct = H.run_sweep(EPSILONS, spec, PhysicsParams(0.05, 0.1, 0.1), solver, (3, 4, 5), grid=grid,
                           window=window, data=data)
    assert distinct.admissible.all()
    _check_sweep(distinct)
    assert distinct.theoretical[4] == pytest.approx(0.5 / 640)
    for q in (3, 4, 5):
        print(f"q={q}: nu=nu' exponent {equal.fits[q].exponent:.4f}, nu!=nu' exponent {distinct.fits[q].exponent:.4f}")
    budget.check()
