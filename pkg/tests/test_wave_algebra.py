import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from stratlab.errors import (
    ArgumentError,
    ConditioningError,
    DegenerateLineError,
    NotApplicableError,
    SingularModeError,
)
from stratlab.spectral_core import Grid3, SpectralField4, norm, to_physical_real, to_spectral
from stratlab.wave_algebra import (
    PhysicsParams,
    TruncationWindow,
    correction_term,
    discriminant,
    divergence_coeffs,
    eigen_closed_form,
    epsilon_threshold,
    freq_truncate,
    leray_project,
    penalization_matrix,
    split_stratified_osc,
    wave_matrix,
    wave_project,
)


def random_field(grid, rng, ncomp=4, kmax=None):
    c = to_spectral(rng.standard_normal((ncomp,) + grid.spatial_shape))
    if kmax is not None:
        c[:, grid.k_int_mag > kmax] = 0
    c[:, grid.kmag == 0] = 0
    return c


def div_free(grid, rng, kmax=None, drop_vertical=True):
    c = leray_project(SpectralField4(grid, random_field(grid, rng, 4, kmax))).coeffs.copy()
    if drop_vertical:
        c[:, grid.xi_h_sq == 0] = 0
    return c


class TestWaveMatrix:
    def test_entries(self):
        B = wave_matrix([1.0, 0.0, 0.0], PhysicsParams(1, 1, 1))
        assert B[2, 3] == pytest.approx(-1)
        assert B[3, 2] == pytest.approx(1)
        assert B[0, 0] == 0
        assert B[1, 1] == pytest.approx(-1)

    def test_singular(self):
        with pytest.raises(SingularModeError):
            wave_matrix([0, 0, 0], PhysicsParams(1, 1, 1))

    def test_skew_on_div_free(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            xi = rng.uniform(-3, 3, 3)
            M = penalization_matrix(xi, 0.3)
            v = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            v[:3] -= xi * (xi @ v[:3]) / (xi @ xi)
            assert abs(np.vdot(v, M @ v).real) <= 1e-12 * np.linalg.norm(M) * np.vdot(v, v).real

    def test_trace_and_characteristic_polynomial(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            xi = rng.uniform(-2, 2, 3)
            p = PhysicsParams(*np.exp(rng.uniform(-2, 0.5, 2)), 0.7)
            B = wave_matrix(xi, p)
            es = eigen_closed_form(xi, p)
            assert np.trace(B) == pytest.approx(es.lambdas.sum(), rel=1e-12, abs=1e-12)
            k2 = xi @ xi
            kh2 = xi[0] ** 2 + xi[1] ** 2
            coeffs = np.polymul(np.polymul([1, 0], [1, p.nu * k2]),
                                [1, (p.nu + p.nu_prime) * k2, p.nu * p.nu_prime * k2**2 + kh2 / (p.epsilon**2 * k2)])
            assert np.allclose(np.poly(B), coeffs, rtol=1e-10, atol=1e-10 * np.abs(coeffs).max())


class TestEigen:
    def test_nu_equal_example(self):
        es = eigen_closed_form([1.0, 0.0, 0.0], PhysicsParams(1, 1, 0.1))
        assert es.regime == "nu_equal"
        assert np.allclose(es.lambdas, [0, -1, -1 + 10j, -1 - 10j])
        assert np.allclose(es.vectors[1], [0, 1, 0, 0])

    def test_distinct_matches_oracle(self):
        xi = np.array([1.0, 0.0, 1.0])
        p = PhysicsParams(1, 2, 0.2)
        assert discriminant(xi, p) < 0
        es = eigen_closed_form(xi, p)
        assert es.regime == "nu_distinct_admissible"
        mu = np.linalg.eigvals(wave_matrix(xi, p))
        assert np.min(np.abs(mu - es.lambdas[2])) <= 1e-10 * np.abs(mu).max()

    def test_eigenpairs_random(self):
        rng = np.random.default_rng(2)
        for _ in range(300):
            xi = rng.uniform(-3, 3, 3)
            p = PhysicsParams(*np.exp(rng.uniform(-2, 1, 2)), math.exp(rng.uniform(-3, 1)))
            es = eigen_closed_form(xi, p)
            B = wave_matrix(xi, p)
            assert es.lambdas[0] == 0
            assert es.lambdas[1] == pytest.approx(-p.nu * (xi @ xi), rel=1e-14)
            for lam, V in zip(es.lambdas, es.vectors):
                res = np.linalg.norm(B @ V - lam * V)
                assert res <= 1e-10 * np.linalg.norm(B) * np.linalg.norm(V)

    def test_real_part_and_conjugacy(self):
        p = PhysicsParams(0.5, 1.5, 0.05)
        es = eigen_closed_form([0.3, -1.0, 0.8], p)
        k2 = 0.3**2 + 1 + 0.8**2
        assert es.lambdas[2].real == pytest.approx(-(p.nu + p.nu_prime) * k2 / 2, rel=1e-14)
        assert es.lambdas[3] == pytest.approx(np.conj(es.lambdas[2]), rel=1e-14)

    def test_correction_matches_integral_remainder(self):
        """D from the square root equals the integral form of the Taylor remainder."""
        rng = np.random.default_rng(3)
        for _ in range(40):
            xi = rng.uniform(-2, 2, 3)
            k, kh = np.linalg.norm(xi), np.hypot(xi[0], xi[1])
            nu, nup = 0.3, 1.7
            xr = rng.uniform(0.01, 0.95)
            eps = math.sqrt(4 * xr * kh**2 / ((nu - nup) ** 2 * k**6))
            p = PhysicsParams(nu, nup, eps)
            D = correction_term(k, kh, p)
            integral = quad(lambda u: 1 / math.sqrt(1 - u * xr), 0, 1, epsabs=0, epsrel=1e-13)[0]
            oracle = (nu - nup) ** 2 * k**5 / (8 * kh) * integral
            assert D == pytest.approx(oracle, rel=1e-12)
            lam3 = eigen_closed_form(xi, p).lambdas[2]
            assert lam3.imag == pytest.approx(kh / (eps * k) - eps * D, rel=1e-12)
            if xr <= 0.5:
                assert abs(D) <= (nu - nup) ** 2 * k**5 / (4 * math.sqrt(2) * kh) * (1 + 1e-12)

    def test_correction_bound_on_window(self):
        p = PhysicsParams(1.0, 1.4, 0.05)
        win = TruncationWindow(0.5, 3.0)
        g = Grid3(16)
        inside = (g.kmag <= win.R) & (g.xi_h_abs >= win.r)
        D = correction_term(g.kmag[inside], g.xi_h_abs[inside], p)
        ratio = np.max(np.abs(D)) / ((p.nu - p.nu_prime) ** 2 * win.R**5 / win.r)
        assert np.isfinite(ratio) and ratio < 1

    def test_fallback_regime(self):
        p = PhysicsParams(0.1, 3.0, 5.0)
        es = eigen_closed_form([1.0, 0.0, 2.0], p)
        assert es.regime == "fallback" and es.correction is None
        B = wave_matrix([1.0, 0.0, 2.0], p)
        for lam, V in zip(es.lambdas, es.vectors):
            assert np.linalg.norm(B @ V - lam * V) <= 1e-10 * np.linalg.norm(B)

    def test_degenerate_line(self):
        with pytest.raises(DegenerateLineError):
            eigen_closed_form([0, 0, 1.0], PhysicsParams(1, 1, 1))


class TestProjections:
    grid = Grid3(16)

    def test_leray_gradient_and_idempotence(self):
        rng = np.random.default_rng(4)
        g = self.grid
        phi = random_field(g, rng, 1)[0]
        grad = np.stack([1j * xi * phi for xi in np.broadcast_arrays(*g.xi)] + [np.zeros_like(phi)])
        assert np.abs(leray_project(SpectralField4(g, grad)).coeffs).max() < 1e-14
        f = SpectralField4(g, random_field(g, rng))
        once = leray_project(f)
        twice = leray_project(once)
        assert np.abs(twice.coeffs - once.coeffs).max() <= 1e-12 * np.abs(once.coeffs).max()
        assert np.abs(divergence_coeffs(once.coeffs, g)).max() <= 1e-12 * np.abs(f.coeffs).max() * g.kmag.max()
        assert np.array_equal(once.coeffs[3], f.coeffs[3])

    def test_stratified_fixed_point(self):
        rng = np.random.default_rng(5)
        g = self.grid
        phi = random_field(g, rng, 1)[0]
        x1, x2, _ = g.xi
        f = np.stack([-1j * x2 * phi, 1j * x1 * phi, 0 * phi, 0 * phi])
        s, o = split_stratified_osc(SpectralField4(g, f))
        assert np.abs(s.coeffs - f).max() <= 1e-12 * np.abs(f).max()
        assert np.abs(o.coeffs).max() <= 1e-12 * np.abs(f).max()

    def test_gradient_has_no_stratified_part(self):
        rng = np.random.default_rng(6)
        g = self.grid
        q = random_field(g, rng, 1)[0]
        grad = np.stack([1j * xi * q for xi in np.broadcast_arrays(*g.xi)] + [np.zeros_like(q)])
        with pytest.warns(UserWarning):
            s, _ = split_stratified_osc(SpectralField4(g, grad * 1.0))
        assert np.abs(s.coeffs).max() <= 1e-12 * np.abs(grad).max()

    @pytest.mark.parametrize("s", [0.0, 0.5])
    def test_orthogonality(self, s):
        rng = np.random.default_rng(7)
        g = self.grid
        f = div_free(g, rng)
        st, osc = split_stratified_osc(SpectralField4(g, f))
        w = np.where(g.kmag > 0, g.kmag ** (2 * s), 0)
        inner = np.sum(w * np.sum(st.coeffs * np.conj(osc.coeffs), axis=0))
        total = np.sum(w * np.sum(np.abs(f) ** 2, axis=0))
        assert abs(inner) <= 1e-12 * total

    def test_penalization_kills_stratified(self):
        rng = np.random.default_rng(8)
        g = self.grid
        st, _ = split_stratified_osc(SpectralField4(g, div_free(g, rng)))
        xi = np.moveaxis(g.xi_vectors(), 0, -1)
        nz = g.kmag > 0
        M = penalization_matrix(xi[nz], 0.01)
        out = np.einsum("mij,mj->mi", M, np.moveaxis(st.coeffs, 0, -1)[nz])
        assert np.abs(out).max() <= 1e-12 * np.abs(st.coeffs).max()

    def test_warns_when_not_div_free(self):
        rng = np.random.default_rng(9)
        g = self.grid
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            split_stratified_osc(SpectralField4(g, random_field(g, rng)))
        assert any("divergence" in str(r.message) for r in rec)

    def test_vorticity_identity_for_stratified(self):
        """omega(f . grad f) = f . grad omega(f) for stratified f."""
        rng = np.random.default_rng(10)
        g = Grid3(32)
        phi = random_field(g, rng, 1, kmax=7)[0]
        x1, x2, x3 = g.xi
        f = np.stack([-1j * x2 * phi, 1j * x1 * phi, 0 * phi])
        omega = 1j * x1 * f[1] - 1j * x2 * f[0]
        fp = to_physical_real(f)
        grads = [to_physical_real(np.stack([1j * x1 * fc, 1j * x2 * fc, 1j * x3 * fc])) for fc in f]
        adv = np.stack([sum(fp[i] * grads[c][i] for i in range(3)) for c in range(3)])
        advc = to_spectral(adv)
        lhs = 1j * x1 * advc[1] - 1j * x2 * advc[0]
        gw = to_physical_real(np.stack([1j * x1 * omega, 1j * x2 * omega, 1j * x3 * omega]))
        rhs = to_spectral(sum(fp[i] * gw[i] for i in range(3)))
        assert np.abs(lhs - rhs).max() <= 1e-10 * np.abs(lhs).max()


class TestWaveProject:
    grid = Grid3(16)

    def test_resolution_of_identity_nu_equal(self):
        rng = np.random.default_rng(11)
        g = self.grid
        p = PhysicsParams(0.7, 0.7, 0.05)
        f = div_free(g, rng)
        F = SpectralField4(g, f)
        st, _ = split_stratified_osc(F)
        total = st.coeffs + wave_project(F, 3, p).coeffs + wave_project(F, 4, p).coeffs
        assert np.abs(total - f).max() <= 1e-12 * np.abs(f).max()
        for k in (3, 4):
            for s in (0.0, 1.0):
                assert norm(wave_project(F, k, p), "sobolev", {"s": s}) <= norm(F, "sobolev", {"s": s}) * (1 + 1e-12)

    def test_distinct_expansion_and_bound(self):
        rng = np.random.default_rng(12)
        g = self.grid
        p = PhysicsParams(0.5, 1.0, 0.02)
        win = TruncationWindow(1.0, 6.0)
        F = freq_truncate(SpectralField4(g, div_free(g, rng)), win)
        st, _ = split_stratified_osc(F)
        p3, p4 = wave_project(F, 3, p), wave_project(F, 4, p)
        total = st.coeffs + p3.coeffs + p4.coeffs
        assert np.abs(total - F.coeffs).max() <= 1e-12 * np.abs(F.coeffs).max()
        bound = math.sqrt(2) * win.R / win.r * norm(F, "sobolev", {"s": 0})
        assert norm(p3, "sobolev", {"s": 0}) <= bound
        assert norm(p4, "sobolev", {"s": 0}) <= bound

    def test_conditioning_error_names_mode(self):
        g = Grid3(8)
        k, kh = math.sqrt(2), 1.0
        nu, nup = 1.0, 2.0
        eps = math.sqrt(4 * kh**2 / ((nu - nup) ** 2 * k**6)) * (1 - 1e-17)
        c = np.zeros((4,) + g.spatial_shape, dtype=complex)
        c[3, 1, 0, 1] = 1.0
        with pytest.raises(ConditioningError) as err:
            wave_project(SpectralField4(g, c), 3, PhysicsParams(nu, nup, eps))
        assert err.value.mode == (1, 0, 1)

    def test_bad_index(self):
        g = Grid3(8)
        with pytest.raises(ArgumentError):
            wave_project(SpectralField4(g, np.zeros((4,) + g.spatial_shape)), 2, PhysicsParams(1, 1, 1))


class TestTruncation:
    def test_core_and_support(self):
        win = TruncationWindow(1.0, 8.0)
        assert win.multiplier(3.9, 2.1) == 1.0
        assert win.multiplier(8.0, 5.0) == 0.0
        assert win.multiplier(3.0, 0.5) == 0.0

    def test_nested_windows(self):
        rng = np.random.default_rng(13)
        g = Grid3(16)
        f = SpectralField4(g, random_field(g, rng))
        win = TruncationWindow(1.5, 6.0)
        once = freq_truncate(f, win)
        both = freq_truncate(once, win.widened())
        assert np.abs(both.coeffs - once.coeffs).max() <= 1e-12 * np.abs(once.coeffs).max()

    def test_threshold_examples(self):
        th = epsilon_threshold(PhysicsParams(1, 2, 0.1), 1 / 320, 1 / 320)
        assert th.eps1 == pytest.approx(math.sqrt(2) ** (80 / 79), rel=1e-14)
        assert th.eps1 == pytest.approx(1.416, rel=5e-3)
        assert th.eps0 > th.eps1
        assert epsilon_threshold((1.0, 1.0 + 1e-9), 0.1, 0.1).eps1 > 1e9
        with pytest.raises(NotApplicableError):
            epsilon_threshold(PhysicsParams(1, 1, 0.1), 0.1, 0.1)
        with pytest.raises(ArgumentError):
            epsilon_threshold(PhysicsParams(1, 2, 0.1), 0.4, 0.2)

    def test_admissible_scan(self):
        """Below eps_1 every grid mode inside C_{r_eps, R_eps} has D < 0."""
        g = Grid3(32)
        nu, nup, m, M = 0.2, 3.0, 0.1, 0.2
        eps1 = epsilon_threshold((nu, nup), m, M).eps1
        for eps in (eps1, 0.5 * eps1, 0.1 * eps1):
            p = PhysicsParams(nu, nup, eps)
            win = TruncationWindow.from_epsilon(eps, m, M)
            assert win.admissible(p)
            inside = (g.kmag <= win.R) & (g.xi_h_abs >= win.r)
            assert inside.sum() > 0
            xi = np.moveaxis(g.xi_vectors(), 0, -1)[inside]
            assert np.all(discriminant(xi, p) < 0)
