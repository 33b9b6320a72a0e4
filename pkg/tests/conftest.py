import numpy as np
import pytest

from sns2d.spectral import SpectralField, TorusGrid


@pytest.fixture(scope="session")
def grid32():
    return TorusGrid(32)


def random_scalar_field(grid, seed, dealiased=False):
    rng = np.random.default_rng(seed)
    phys = rng.standard_normal((grid.n, grid.n))
    f = SpectralField.from_physical(grid, phys - phys.mean())
    if dealiased:
        f = SpectralField(grid, np.where(grid.dealias_mask, f.coeffs, 0.0))
    return f


def random_divfree_field(grid, seed, dealiased=True, level="velocity"):
    from sns2d.gaussian import lift_level

    rng = np.random.default_rng(seed)
    z = rng.standard_normal((grid.n, grid.n)) + 1j * rng.standard_normal((grid.n, grid.n))
    i, j = grid.flip_index
    z = (z + np.conj(z[i, j])) / 2.0
    mask = grid.dealias_mask if dealiased else grid.nonzero_mask
    return SpectralField(grid, lift_level(grid, np.where(mask, z, 0.0), "velocity"), level)


def grid_axes(n):
    x = 2 * np.pi * np.arange(n) / n
    return x[:, None] * np.ones((1, n)), np.ones((n, 1)) * x[None, :]
