import math

import numpy as np
import pytest

from stratlab.errors import ArgumentError, GridRangeError, NumericError
from stratlab.spectral_core import (
    DyadicLadder,
    Grid1,
    Grid3,
    PhysicalField,
    SpaceTimeSeries,
    SpectralField,
    chemin_lerner_norm,
    chi,
    dyadic_mask,
    dyadic_project,
    grid_wavenumber,
    hermitian_defect,
    norm,
    spacetime_norm,
    to_physical,
    to_physical_real,
    to_spectral,
    to_spectral_real,
    transform,
)


def plane_wave(grid, kvec, comp=0, ncomp=1):
    X = grid.coordinates()
    phase = sum(k * x for k, x in zip(kvec, X))
    vals = np.zeros((ncomp,) + grid.spatial_shape, dtype=complex)
    vals[comp] = np.exp(1j * phase)
    return vals


class TestGrid:
    def test_wavenumber_examples(self):
        assert np.allclose(grid_wavenumber(Grid3(8), (1, 0, 0)), [1, 0, 0])
        assert np.allclose(grid_wavenumber(Grid3(8), (7, 0, 0)), [-1, 0, 0])
        assert np.allclose(grid_wavenumber(Grid3(8, math.pi), (1, 1, 1)), [2, 2, 2])

    def test_out_of_range(self):
        with pytest.raises(GridRangeError):
            grid_wavenumber(Grid3(8), (8, 0, 0))
        with pytest.raises(GridRangeError):
            grid_wavenumber(Grid3(8), (0, -1, 0))

    @pytest.mark.parametrize("n", [7, 6, 0])
    def test_invalid_n(self, n):
        with pytest.raises(ArgumentError):
            Grid3(n)

    def test_involution(self):
        g = Grid3(16, 3.0)
        k = g.wavenumbers
        neg = np.roll(k[::-1], 1)
        assert np.array_equal(neg, -k)

    def test_dealias_mask_counts(self):
        g = Grid3(48)
        kept = np.abs(g.k_int[g.dealias_mask()[:, 0, 0]])
        assert kept.max() == 15


class TestTransform:
    def test_plane_wave_single_coefficient(self):
        g = Grid3(8)
        c = transform(PhysicalField(g, plane_wave(g, (1, -2, 3))), "forward").coeffs[0]
        nz = np.argwhere(np.abs(c) > 1e-12)
        assert len(nz) == 1
        assert np.allclose(grid_wavenumber(g, nz[0]), [1, -2, 3])
        assert abs(c[tuple(nz[0])] - 1) < 1e-12

    def test_roundtrip_and_parseval_many(self):
        rng = np.random.default_rng(1)
        g = Grid3(8, 2.5)
        worst_rt = worst_p = 0.0
        for _ in range(1000):
            f = rng.standard_normal((1,) + g.spatial_shape)
            F = transform(PhysicalField(g, f), "forward")
            back = transform(F, "inverse").values
            worst_rt = max(worst_rt, np.abs(back - f).max() / np.abs(f).max())
            phys = np.sum(f**2) * g.cell_volume
            spec = g.volume * np.sum(np.abs(F.coeffs) ** 2)
            worst_p = max(worst_p, abs(phys - spec) / phys)
        assert worst_rt < 1e-12
        assert worst_p < 1e-12

    def test_real_paths_match_complex(self):
        rng = np.random.default_rng(2)
        f = rng.standard_normal((3, 12, 12, 12))
        c = to_spectral(f)
        assert np.allclose(to_spectral_real(f), c, atol=1e-14)
        assert hermitian_defect(c) < 1e-13
        assert np.allclose(to_physical_real(c), f, atol=1e-13)
        g1 = rng.standard_normal((2, 16))
        assert np.allclose(to_spectral_real(g1, dim=1), to_spectral(g1, dim=1), atol=1e-14)

    def test_nonfinite(self):
        g = Grid3(8)
        f = np.zeros(g.spatial_shape)
        f[0, 0, 0] = np.nan
        with pytest.raises(NumericError):
            transform(PhysicalField(g, f), "forward")


class TestDyadic:
    def test_chi_shape(self):
        assert chi(0.5) == 1.0 and chi(1.0) == 0.0 and chi(-0.3) == 1.0
        x = np.linspace(0.5, 1.0, 200)
        assert np.all(np.diff(chi(x)) <= 1e-15)

    def test_core_and_support(self):
        g = Grid3(64, 2 * math.pi)
        for j in range(0, 4):
            f = SpectralField(g, to_spectral(plane_wave(g, (2**j, 0, 0))))
            out = dyadic_project(f, j)
            assert np.allclose(out.coeffs, f.coeffs, atol=1e-14)
        f = SpectralField(g, to_spectral(plane_wave(g, (0, 0, 2**5))))
        assert np.abs(dyadic_project(f, 0).coeffs).max() < 1e-14

    def test_out_of_ladder_is_zero(self):
        g = Grid3(8)
        f = SpectralField(g, np.ones((1,) + g.spatial_shape))
        assert np.abs(dyadic_project(f, 40).coeffs).max() == 0

    def test_summation_oracle(self):
        """Blocks sum back to the field away from mode 0."""
        rng = np.random.default_rng(3)
        g = Grid3(16, 4.0)
        c = to_spectral(rng.standard_normal((1,) + g.spatial_shape))
        c[:, g.kmag == 0] = 0
        f = SpectralField(g, c)
        lad = DyadicLadder.for_grid(g)
        total = sum(dyadic_project(f, j, lad).coeffs for j in lad.indices)
        assert np.abs(total - c).max() <= 1e-12 * np.abs(c).max()
        assert lad.partition_defect(g) <= 1e-12


class TestNorms:
    def test_h1_single_mode(self):
        g = Grid3(16)
        c = to_spectral(plane_wave(g, (0, 2, 0))) / math.sqrt(g.volume)
        f = SpectralField(g, c)
        assert norm(f, "sobolev", {"s": 0}) == pytest.approx(1.0, rel=1e-12)
        assert norm(f, "sobolev", {"s": 1}) == pytest.approx(2.0, rel=1e-12)

    def test_lq_matches_quadrature(self):
        g = Grid3(16)
        X, Y, Z = g.coordinates()
        f = np.sin(X) * np.cos(2 * Y) + 0.3 * np.sin(Z)
        F = SpectralField(g, to_spectral(f[None]))
        direct = (np.sum(np.abs(f) ** 3) * g.cell_volume) ** (1 / 3)
        assert norm(F, "lq", {"q": 3}) == pytest.approx(direct, rel=1e-12)
        assert norm(F, "lq", {"q": math.inf}) == pytest.approx(np.abs(f).max(), rel=1e-12)

    def test_besov_l2_direct_sum(self):
        """B^0_{2,2} squared equals sum_k (sum_j mask_j^2) |c_k|^2 exactly."""
        g = Grid3(32)
        X, Y, Z = g.coordinates()
        f = np.exp(-((X - np.pi) ** 2 + (Y - np.pi) ** 2 + (Z - np.pi) ** 2) / (2 * 0.5**2))
        F = transform(PhysicalField(g, f), "forward")
        lad = DyadicLadder.for_grid(g)
        weight = sum(m**2 for m in lad.masks(g).values())
        oracle = math.sqrt(g.volume * np.sum(weight * np.abs(F.coeffs[0]) ** 2))
        b = norm(F, "besov", {"s": 0, "p": 2, "r": 2})
        h = norm(F, "sobolev", {"s": 0})
        assert b == pytest.approx(oracle, rel=1e-12)
        assert abs(b / h - 1) < 0.05

    def test_besov_embedding_constant(self):
        rng = np.random.default_rng(4)
        g = Grid3(16)
        ratios = []
        for _ in range(100):
            c = to_spectral(rng.standard_normal((1,) + g.spatial_shape))
            c[:, 0, 0, 0] = 0
            f = SpectralField(g, c)
            ratios.append(norm(f, "lq", {"q": 4}) / norm(f, "besov", {"s": 0, "p": 4, "r": 2}))
        C = max(ratios)
        assert math.isfinite(C) and C < 10

    @pytest.mark.parametrize("kind,params", [
        ("sobolev", {"s": 0.5}), ("sobolev", {"s": -1}), ("lq", {"q": 3}),
        ("lq", {"q": math.inf}), ("besov", {"s": 0.5, "p": 3, "r": 1}),
    ])
    def test_homogeneity(self, kind, params):
        rng = np.random.default_rng(5)
        g = Grid3(8)
        f = SpectralField(g, to_spectral(rng.standard_normal((4,) + g.spatial_shape)))
        lam = -2.75
        assert norm(f * lam, kind, params) == pytest.approx(abs(lam) * norm(f, kind, params), rel=1e-12)

    def test_overflow(self):
        g = Grid3(8)
        f = SpectralField(g, np.ones((1,) + g.spatial_shape))
        with pytest.raises(NumericError):
            norm(f, "sobolev", {"s": 400})

    def test_one_dimensional(self):
        g = Grid1(32)
        x = g.coordinates()
        f = SpectralField(g, to_spectral(np.cos(3 * x)[None], dim=1))
        assert norm(f, "sobolev", {"s": 1}) == pytest.approx(3 * math.sqrt(math.pi), rel=1e-12)


def _series(g, vals, times):
    return SpaceTimeSeries(g, np.asarray(times), np.stack(vals))


class TestSpaceTime:
    def test_constant_single_mode_cl(self):
        g = Grid3(16)
        c = to_spectral(plane_wave(g, (2, 0, 0)))
        s = _series(g, [c] * 5, np.linspace(0, 1, 5))
        cl = chemin_lerner_norm(s, math.inf, 2, 1, 0.5)
        blk = 2**0.5 * norm(SpectralField(g, c * dyadic_mask(g.kmag, 1)), "lq", {"q": 2})
        assert cl == pytest.approx(blk, rel=1e-12)

    def test_permutation_ordering(self):
        """Time-inside norm is dominated by the time-outside one when a <= c."""
        rng = np.random.default_rng(6)
        g = Grid3(8)
        times = np.linspace(0, 1, 7)
        vals = [to_spectral(rng.standard_normal((1,) + g.spatial_shape)) * (1 + t) for t in times]
        s = _series(g, vals, times)
        for a, b, c in [(1, 2, 2), (2, 2, 2), (1, 4, 1), (2, 3, 4)]:
            tilde = chemin_lerner_norm(s, a, b, c, 0.25)
            outer = [norm(s.field(i), "besov", {"s": 0.25, "p": b, "r": c}) for i in range(len(s))]
            plain = float(np.trapezoid(np.asarray(outer) ** a, times) ** (1 / a))
            assert tilde <= plain * (1 + 1e-12)

    def test_spacetime_constant_and_scaling(self):
        g = Grid3(8)
        c = to_spectral(plane_wave(g, (1, 1, 0)))
        s = _series(g, [c] * 11, np.linspace(0, 1, 11))
        lq = norm(SpectralField(g, c), "lq", {"q": 3})
        assert spacetime_norm(s, 2, 3) == pytest.approx(lq, rel=1e-12)
        s2 = _series(g, [3 * c] * 11, np.linspace(0, 1, 11))
        assert spacetime_norm(s2, 2, 3) == pytest.approx(3 * lq, rel=1e-12)

    def test_exponential_envelope(self):
        """int_0^inf e^{-2t} dt = 1/2, so the L2_t norm is ||f||/sqrt2."""
        g = Grid3(8)
        c = to_spectral(plane_wave(g, (1, 0, 0)))
        t = np.linspace(0, 30, 6001)
        s = _series(g, [c * math.exp(-tt) for tt in t], t)
        lq = norm(SpectralField(g, c), "lq", {"q": 4})
        assert spacetime_norm(s, 2, 4) == pytest.approx(lq / math.sqrt(2), rel=1e-5)

    def test_argument_errors(self):
        g = Grid3(8)
        c = np.zeros((1,) + g.spatial_shape)
        s = _series(g, [c, c], [0, 1])
        with pytest.raises(ArgumentError):
            spacetime_norm(s, 0.5, 2)
        with pytest.raises(ArgumentError):
            SpaceTimeSeries(g, np.array([0.0, 0.0]), np.stack([c, c]))
        with pytest.raises(ArgumentError):
            SpaceTimeSeries(g, np.array([]), np.zeros((0, 1) + g.spatial_shape))

    def test_to_physical_inverse(self):
        rng = np.random.default_rng(7)
        c = rng.standard_normal((2, 8, 8, 8)) + 1j * rng.standard_normal((2, 8, 8, 8))
        assert np.allclose(to_spectral(to_physical(c)), c)
