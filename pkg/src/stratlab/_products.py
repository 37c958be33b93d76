"""Pseudo-spectral helpers shared by the limit and full solvers."""

from __future__ import annotations

import numpy as np

from .spectral_core import Grid3, to_physical_real, to_spectral_real


def product_mask(grid: Grid3, friedrichs_radius: float | None = None) -> np.ndarray:
    """Modes kept after a quadratic product: 2/3 rule, optionally the ball too."""
    mask = grid.dealias_mask()
    if friedrichs_radius is not None:
        mask = mask & grid.ball_mask(friedrichs_radius)
    return mask


def physical(coeffs: np.ndarray) -> np.ndarray:
    return to_physical_real(np.asarray(coeffs))


def spectral(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = to_spectral_real(values)
    out *= mask
    return out


def max_speed(vel_phys: np.ndarray) -> float:
    return float(np.sqrt(np.max(np.sum(vel_phys**2, axis=0))))


def divergence_of_flux(grid: Grid3, flux: dict, ncomp: int) -> np.ndarray:
    """sum_i i xi_i F_ic for spectral fluxes keyed by (i, c), i < 3.

    Missing (i, c) with c < 3 are taken from the symmetric partner (c, i).
    """
    xi = grid.xi
    shape = grid.spatial_shape
    out = np.zeros((ncomp,) + shape, dtype=complex)
    for c in range(ncomp):
        acc = np.zeros(shape, dtype=complex)
        for i in range(3):
            f = flux.get((i, c))
            if f is None:
                f = flux.get((c, i))
            if f is None:
                continue
            acc += xi[i] * f
        out[c] = 1j * acc
    return out
