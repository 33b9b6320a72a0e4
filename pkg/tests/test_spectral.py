"""Spectral core: operators, norms, transform identities."""

import numpy as np
import pytest

from conftest import grid_axes, random_divfree_field, random_scalar_field
from sns2d.spectral import (
    SHARP,
    SMOOTH,
    DyadicProfile,
    GridMismatch,
    SpectralField,
    TorusGrid,
    besov_pp_norm,
    biot_savart,
    curl,
    fractional_power,
    holder_norm,
    l2_inner,
    l2_norm,
    leray_project,
    lp_project,
    semigroup_apply,
    smoothstep_plateau,
)


def test_grid_validation():
    with pytest.raises(ValueError):
        TorusGrid(7)
    with pytest.raises(ValueError):
        TorusGrid(4)
    assert TorusGrid(32).dealias_radius == 10


def test_grid_closed_under_negation(grid32):
    # mod-n identification: -k maps retained indices onto retained indices
    i, j = grid32.flip_index
    k1f = grid32.k1[i, j]
    k2f = grid32.k2[i, j]
    assert np.all((k1f + grid32.k1) % grid32.n == 0)
    assert np.all((k2f + grid32.k2) % grid32.n == 0)


def test_transform_round_trip(grid32):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        phys = rng.standard_normal((32, 32))
        phys -= phys.mean()
        f = SpectralField.from_physical(grid32, phys)
        assert np.max(np.abs(f.to_physical() - phys)) <= 1e-12 * max(1.0, np.abs(phys).max())


def test_parseval(grid32):
    for seed in range(20):
        f = random_scalar_field(grid32, seed)
        phys = f.to_physical()
        assert np.mean(phys**2) == pytest.approx(l2_norm(f) ** 2, rel=1e-12)


def test_leray_annihilates_gradient_mode(grid32):
    c = np.zeros((2, 32, 32), complex)
    c[0, 1, 0] = 1.0  # uhat(1,0) = (1,0): pure gradient direction
    c[0, -1, 0] = 1.0
    out = leray_project(SpectralField(grid32, c))
    assert np.max(np.abs(out.coeffs)) == 0.0


def test_leray_keeps_divfree_mode(grid32):
    c = np.zeros((2, 32, 32), complex)
    c[1, 1, 0] = 1.0
    c[1, -1, 0] = 1.0
    out = leray_project(SpectralField(grid32, c))
    assert np.max(np.abs(out.coeffs - c)) == 0.0


def test_leray_hand_value_diagonal_mode(grid32):
    # (I - k k^T/|k|^2) at k=(1,1) applied to (1,0) gives (1/2, -1/2)
    c = np.zeros((2, 32, 32), complex)
    c[0, 1, 1] = 1.0
    c[0, -1, -1] = 1.0
    out = leray_project(SpectralField(grid32, c))
    assert out.coeffs[0, 1, 1] == pytest.approx(0.5, abs=1e-15)
    assert out.coeffs[1, 1, 1] == pytest.approx(-0.5, abs=1e-15)


def test_leray_idempotent_self_adjoint(grid32):
    for seed in range(100):
        u = random_divfree_field(grid32, seed, dealiased=False)
        rng = np.random.default_rng(seed + 10_000)
        raw = rng.standard_normal((2, 32, 32)) + 1j * rng.standard_normal((2, 32, 32))
        i, j = grid32.flip_index
        raw = (raw + np.conj(raw[:, i, j])) / 2
        raw[:, 0, 0] = 0.0
        v = SpectralField(grid32, raw)
        pv = leray_project(v)
        ppv = leray_project(pv)
        assert np.max(np.abs(ppv.coeffs - pv.coeffs)) <= 1e-12 * l2_norm(pv)
        w = random_divfree_field(grid32, seed + 1, dealiased=False)
        lhs = l2_inner(pv, w)
        rhs = l2_inner(v, leray_project(w))
        assert lhs == pytest.approx(rhs, abs=1e-12 * (l2_norm(v) * l2_norm(w) + 1))


def test_biot_savart_single_mode(grid32):
    x1, _ = grid_axes(32)
    w = SpectralField.from_physical(grid32, 2 * np.cos(x1))
    u = biot_savart(w)
    phys = u.to_physical()
    assert np.max(np.abs(phys[0])) <= 1e-13
    assert np.max(np.abs(phys[1] - 2 * np.sin(x1))) <= 1e-13
    assert np.max(np.abs(curl(u).coeffs - w.coeffs)) <= 1e-13


def test_biot_savart_zero(grid32):
    z = SpectralField(grid32, np.zeros((32, 32), complex))
    assert l2_norm(biot_savart(z)) == 0.0


def test_biot_savart_diagonal_mode(grid32):
    # w = 2cos(x1+x2): apply i k_perp/|k|^2 at k=(1,1) by hand
    x1, x2 = grid_axes(32)
    w = SpectralField.from_physical(grid32, 2 * np.cos(x1 + x2))
    u = biot_savart(w).to_physical()
    assert np.max(np.abs(u[0] + np.sin(x1 + x2))) <= 1e-13
    assert np.max(np.abs(u[1] - np.sin(x1 + x2))) <= 1e-13


def test_curl_of_gradient_vanishes(grid32):
    f = random_scalar_field(grid32, 3)
    grad = np.stack([-1j * grid32.k1 * f.coeffs, -1j * grid32.k2 * f.coeffs])
    assert l2_norm(curl(SpectralField(grid32, grad))) <= 1e-12 * l2_norm(f)


def test_curl_left_inverse_of_biot_savart(grid32):
    for seed in range(50):
        w = random_scalar_field(grid32, seed)
        back = curl(biot_savart(w))
        assert np.max(np.abs(back.coeffs - w.coeffs)) <= 1e-12 * l2_norm(w)


def test_fractional_power_identity_and_semigroup(grid32):
    f = random_scalar_field(grid32, 5)
    assert fractional_power(f, 0.0) is f
    for s, t in [(0.7, -0.7), (1.3, 0.4), (-2.0, 0.5)]:
        a = fractional_power(fractional_power(f, s), t)
        b = fractional_power(f, s + t)
        assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-12 * l2_norm(f)


def test_fractional_power_hand_values(grid32):
    x1, _ = grid_axes(32)
    f = SpectralField.from_physical(grid32, np.cos(x1))
    g = fractional_power(f, 2.0)  # |k| = 1
    assert np.max(np.abs(g.coeffs - f.coeffs)) <= 1e-14
    f2 = SpectralField.from_physical(grid32, np.cos(2 * x1))
    g2 = fractional_power(f2, -1.0)
    assert np.max(np.abs(g2.to_physical() - 0.5 * np.cos(2 * x1))) <= 1e-13


def test_semigroup_identity_and_single_mode(grid32):
    f = random_scalar_field(grid32, 6)
    assert semigroup_apply(f, 0.0, 1.0) is f
    x1, _ = grid_axes(32)
    single = SpectralField.from_physical(grid32, np.cos(x1))
    out = semigroup_apply(single, 1.0, 1.0)
    assert np.max(np.abs(out.to_physical() - np.exp(-1.0) * np.cos(x1))) <= 1e-13
    with pytest.raises(ValueError):
        semigroup_apply(f, -0.1, 1.0)


def test_semigroup_property(grid32):
    for seed in range(50):
        f = random_scalar_field(grid32, seed)
        a = semigroup_apply(semigroup_apply(f, 0.3, 0.8), 0.45, 0.8)
        b = semigroup_apply(f, 0.75, 0.8)
        assert np.max(np.abs(a.coeffs - b.coeffs)) <= 1e-12 * l2_norm(f)


def test_lp_project_sharp(grid32):
    c = np.zeros((32, 32), complex)
    c[4, 0] = 0.5
    c[-4, 0] = 0.5
    f = SpectralField(grid32, c)
    assert np.max(np.abs(lp_project(f, 4).coeffs - f.coeffs)) == 0.0
    assert l2_norm(lp_project(f, 16)) == 0.0
    with pytest.raises(ValueError):
        lp_project(f, 3)


def test_lp_reconstruction(grid32):
    for profile in (SHARP, SMOOTH):
        f = random_scalar_field(grid32, 11)
        total = np.zeros_like(f.coeffs)
        for m in grid32.dyadic_levels:
            total = total + lp_project(f, m, profile).coeffs
        assert np.max(np.abs(total - f.coeffs)) <= 1e-12 * max(l2_norm(f), 1.0)


def test_smooth_profile_partition_and_split(grid32):
    prof = SMOOTH
    total = sum(prof.weights(grid32, m) for m in grid32.dyadic_levels)
    kabs = grid32.kabs
    on = (kabs >= 1.0)
    assert np.max(np.abs(np.where(on, total - 1.0, 0.0))) <= 1e-12
    # mode |k|=3 splits across N=2 and N=4 with weights phi(3/2), phi(3/4)
    w2 = prof.phi(np.array(3.0 / 2.0))
    w4 = prof.phi(np.array(3.0 / 4.0))
    assert w2 + w4 == pytest.approx(1.0, abs=1e-12)
    c = np.zeros((32, 32), complex)
    c[3, 0] = 1.0
    c[-3, 0] = 1.0
    f = SpectralField(grid32, c)
    assert lp_project(f, 2, prof).coeffs[3, 0] == pytest.approx(w2, abs=1e-12)
    assert lp_project(f, 4, prof).coeffs[3, 0] == pytest.approx(w4, abs=1e-12)


def test_holder_norm_values(grid32):
    x1, _ = grid_axes(32)
    zero = SpectralField(grid32, np.zeros((32, 32), complex))
    assert holder_norm(zero, 0.7) == 0.0
    f = SpectralField.from_physical(grid32, np.cos(x1))
    for beta in (-1.0, 0.0, 1.7):
        assert holder_norm(f, beta) == pytest.approx(1.0, rel=1e-12)
    f8 = SpectralField.from_physical(grid32, np.cos(8 * x1))
    assert holder_norm(f8, 0.5) == pytest.approx(np.sqrt(8.0), rel=1e-12)


def test_holder_norm_homogeneity(grid32):
    f = random_scalar_field(grid32, 13)
    c = -3.7
    scaled = SpectralField(grid32, c * f.coeffs)
    assert holder_norm(scaled, 0.9) == pytest.approx(abs(c) * holder_norm(f, 0.9), rel=1e-14)


def test_besov_norm_single_mode_quadrature():
    grid = TorusGrid(64)
    x = 2 * np.pi * np.arange(64) / 64
    f = SpectralField.from_physical(grid, np.cos(4 * x)[:, None] * np.ones((1, 64)))
    # ||cos||_{L^8}^8 = 35/128 exactly; single bin N=4
    for s in (0.0, 0.6, -0.3):
        expected = 4.0**s * (35.0 / 128.0) ** (1.0 / 8.0)
        assert besov_pp_norm(f, s, 8) == pytest.approx(expected, rel=1e-12)
    assert besov_pp_norm(SpectralField(grid, np.zeros((64, 64), complex)), 0.5, 4) == 0.0
    with pytest.raises(ValueError):
        besov_pp_norm(f, 0.5, 3)


def test_besov_monotone_in_smoothness(grid32):
    f = random_scalar_field(grid32, 17)
    assert besov_pp_norm(f, 0.3, 4) <= besov_pp_norm(f, 0.9, 4) <= besov_pp_norm(f, 1.5, 4)


def test_grid_mismatch_rejected():
    a = random_scalar_field(TorusGrid(32), 1)
    b = random_scalar_field(TorusGrid(16), 1)
    with pytest.raises(GridMismatch):
        l2_inner(a, b)


def test_field_invariants(grid32):
    u = random_divfree_field(grid32, 23)
    u.validate(divergence_free=True)
    assert u.coeffs[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        bad = np.zeros((32, 32), complex)
        bad[0, 0] = 1.0
        SpectralField(grid32, bad).validate()
    assert not u.coeffs.flags.writeable


def test_smoothstep_plateau_profile():
    assert smoothstep_plateau(0.5) == 1.0
    assert smoothstep_plateau(1.0) == 1.0
    assert smoothstep_plateau(2.0) == 0.0
    assert smoothstep_plateau(3.0) == 0.0
    xs = np.linspace(1.0, 2.0, 2001)
    vals = smoothstep_plateau(xs)
    assert np.all(np.diff(vals) <= 1e-12)
    lip = np.max(np.abs(np.diff(vals)) / np.diff(xs))
    assert lip == pytest.approx(15.0 / 8.0, rel=1e-4)
