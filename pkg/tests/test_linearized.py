"""Linearised propagator: Jacobian consistency, flow structure, probes."""

import numpy as np
import pytest

from conftest import random_divfree_field, random_scalar_field
from sns2d.dynamics import (
    DriftSpec,
    IntegratorConfig,
    SimulationConfig,
    drift_operator,
    ns_drift,
    simulate,
)
from sns2d.gaussian import GaussianMeasureSpec, sample_gaussian_field
from sns2d.linearized import (
    LinearizationPath,
    df_apply,
    propagate_j,
    propagate_many,
    propagator_difference,
    regularity_gain_probe,
    single_mode_field,
)
from sns2d.rng import RngStream
from sns2d.spectral import SpectralField, TorusGrid, l2_norm, semigroup_apply

GRID = TorusGrid(32)
SIM_V = SimulationConfig(n=32, alpha=1.0, gamma=1.0, level="velocity", master_seed=0)
SIM_W = SimulationConfig(n=32, alpha=1.0, gamma=1.0, level="vorticity", master_seed=0)


def _ns_trajectory(seed=0, horizon=0.05, dt=1e-3, level="velocity"):
    sim = SIM_V if level == "velocity" else SIM_W
    mu = GaussianMeasureSpec(1.0, level)
    u0 = sample_gaussian_field(mu, GRID, RngStream(seed, (0,)), mask=GRID.dealias_mask)
    integ = IntegratorConfig(dt=dt, horizon=horizon)
    return simulate(sim, integ, DriftSpec("navier_stokes"), u0)


def test_df_euler_identity():
    # quadratic drift: DF(u) u = 2 F(u)
    w = random_scalar_field(GRID, 1, dealiased=True)
    drift = DriftSpec("navier_stokes")
    lhs = df_apply(drift, w, w, level="vorticity")
    rhs = ns_drift(w)
    assert np.max(np.abs(lhs.coeffs - 2 * rhs.coeffs)) <= 1e-12 * max(l2_norm(rhs), 1.0)


def test_df_zero_base_point():
    zero = SpectralField(GRID, np.zeros((2, 32, 32), complex))
    v = random_divfree_field(GRID, 2)
    out = df_apply(DriftSpec("twisted", alpha=1.0), zero, v)
    assert l2_norm(out) == 0.0


@pytest.mark.parametrize("kind,level", [("navier_stokes", "vorticity"), ("twisted", "velocity")])
def test_df_finite_difference_slope(kind, level):
    drift = DriftSpec(kind, alpha=1.0)
    make = random_scalar_field if level == "vorticity" else random_divfree_field
    u = make(GRID, 3)
    v = make(GRID, 4)
    op = drift_operator(drift, level, GRID)
    dfv = op.apply_df(u.coeffs, v.coeffs)
    errs = []
    eps_grid = [1e-3, 1e-4, 1e-5]
    for eps in eps_grid:
        fd = (op.value(u.coeffs + eps * v.coeffs) - op.value(u.coeffs)) / eps
        errs.append(np.max(np.abs(fd - dfv)))
    slope = np.polyfit(np.log(eps_grid), np.log(errs), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_propagator_zero_path_equals_semigroup():
    # A = 0: each J step multiplies by the same decay array as the
    # discrete semigroup, so stepwise composition is bit-for-bit equal
    traj = simulate(SIM_V, IntegratorConfig(dt=2e-3, horizon=0.02), DriftSpec("linear"),
                    SpectralField(GRID, np.zeros((2, 32, 32), complex)))
    path = LinearizationPath.from_trajectory(traj)
    v = random_divfree_field(GRID, 5)
    out = propagate_j(path, 0.0, 0.02, v)
    stepwise = v
    for _ in range(10):
        stepwise = semigroup_apply(stepwise, 2e-3, 1.0)
    assert np.array_equal(out.coeffs, stepwise.coeffs)
    oneshot = semigroup_apply(v, 0.02, 1.0)
    assert np.max(np.abs(out.coeffs - oneshot.coeffs)) <= 1e-12 * max(l2_norm(v), 1.0)


def test_flow_property_bitwise_and_identity():
    traj = _ns_trajectory()
    path = LinearizationPath.from_trajectory(traj)
    v = random_divfree_field(GRID, 6)
    assert np.array_equal(propagate_j(path, 0.01, 0.01, v).coeffs, v.coeffs)
    full = propagate_j(path, 0.0, 0.05, v)
    half = propagate_j(path, 0.025, 0.05, propagate_j(path, 0.0, 0.025, v))
    assert np.array_equal(full.coeffs, half.coeffs)


def test_propagator_linearity():
    traj = _ns_trajectory(seed=2)
    path = LinearizationPath.from_trajectory(traj)
    v = random_divfree_field(GRID, 7)
    w = random_divfree_field(GRID, 8)
    a, b = 1.7, -0.4
    combo = SpectralField(GRID, a * v.coeffs + b * w.coeffs, "velocity")
    lhs = propagate_j(path, 0.0, 0.04, combo)
    rhs = a * propagate_j(path, 0.0, 0.04, v).coeffs + b * propagate_j(path, 0.0, 0.04, w).coeffs
    assert np.max(np.abs(lhs.coeffs - rhs)) <= 1e-10 * max(np.max(np.abs(rhs)), 1e-30)


def test_propagator_rejects_off_grid_times():
    traj = _ns_trajectory(seed=3)
    path = LinearizationPath.from_trajectory(traj)
    v = random_divfree_field(GRID, 9)
    with pytest.raises(ValueError):
        propagate_j(path, 0.0037, 0.05, v)


def test_jacobian_matches_flow_derivative():
    # J is the exact Jacobian of the discrete flow: FD error is O(eps)
    mu = GaussianMeasureSpec(1.0, "velocity")
    u0 = sample_gaussian_field(mu, GRID, RngStream(11, (0,)), mask=GRID.dealias_mask)
    integ = IntegratorConfig(dt=1e-3, horizon=0.03)
    drift = DriftSpec("navier_stokes")
    base = simulate(SIM_V, integ, drift, u0)
    path = LinearizationPath.from_trajectory(base)
    v = random_divfree_field(GRID, 12)
    jv = propagate_j(path, 0.0, 0.03, v).coeffs
    errs, eps_grid = [], [1e-3, 1e-4, 1e-5]
    for eps in eps_grid:
        pert = SpectralField(GRID, u0.coeffs + eps * v.coeffs, "velocity")
        out = simulate(SIM_V, integ, drift, pert)
        fd = (out.states[-1] - base.states[-1]) / eps
        errs.append(np.sqrt(np.sum(np.abs(fd - jv) ** 2)) / max(np.sqrt(np.sum(np.abs(jv) ** 2)), 1e-30))
    slope = np.polyfit(np.log(eps_grid), np.log(errs), 1)[0]
    assert slope >= 0.8


def test_propagate_many_matches_individual():
    traj = _ns_trajectory(seed=4)
    path = LinearizationPath.from_trajectory(traj)
    vs = [random_divfree_field(GRID, 20 + i) for i in range(3)]
    windows = [(0, 50), (10, 40), (25, 30)]
    batch = propagate_many(path, windows, np.stack([v.coeffs for v in vs]))
    for i, (j0, j1) in enumerate(windows):
        solo = propagate_j(path, j0 * path.dt, j1 * path.dt, vs[i])
        assert np.max(np.abs(batch[i] - solo.coeffs)) <= 1e-12 * max(np.max(np.abs(solo.coeffs)), 1e-30)


def test_regularity_probe_semigroup_flat():
    traj = simulate(SIM_V, IntegratorConfig(dt=1e-3, horizon=0.5), DriftSpec("linear"),
                    SpectralField(GRID, np.zeros((2, 32, 32), complex)))
    path = LinearizationPath.from_trajectory(traj)
    # lags chosen so some probe mode sits near the sup of x^theta e^-x
    rep = regularity_gain_probe(path, theta=0.4, delta=1.0, lags=[0.1, 0.05, 0.025, 0.012])
    assert abs(rep.aggregates["slope"]) <= 0.2
    assert rep.verdicts["bounded"]


def test_regularity_probe_theta_zero_bounded():
    traj = _ns_trajectory(seed=5, horizon=0.1)
    path = LinearizationPath.from_trajectory(traj)
    rep = regularity_gain_probe(path, theta=0.0, delta=1.0, lags=[0.1, 0.05, 0.025])
    assert rep.verdicts["bounded"]


def test_regularity_probe_constraint_errors():
    traj = _ns_trajectory(seed=6, horizon=0.02)
    path = LinearizationPath.from_trajectory(traj)
    with pytest.raises(ValueError, match="exceed beta"):
        regularity_gain_probe(path, theta=0.0, delta=0.1)
    with pytest.raises(ValueError, match="beta - 1 \\+ 2 gamma"):
        regularity_gain_probe(path, theta=0.9, delta=1.0)
    with pytest.raises(ValueError, match="theta"):
        regularity_gain_probe(path, theta=1.0, delta=1.0)


def test_regularity_probe_ns_path_bounded():
    traj = _ns_trajectory(seed=7, horizon=0.5, dt=2e-3)
    path = LinearizationPath.from_trajectory(traj)
    rep = regularity_gain_probe(path, theta=0.4, delta=1.0, lags=[0.5, 0.25, 0.124, 0.064])
    assert rep.verdicts["bounded"]


def test_propagator_difference_identical_paths():
    traj = _ns_trajectory(seed=8)
    path = LinearizationPath.from_trajectory(traj)
    v = random_divfree_field(GRID, 30)
    rep = propagator_difference(path, path, 0.0, 0.04, v)
    assert rep.aggregates["norm_direct"] <= 1e-12 * l2_norm(v)


def test_propagator_difference_voc_and_scaling():
    traj = _ns_trajectory(seed=9)
    base = LinearizationPath.from_trajectory(traj)
    v = random_divfree_field(GRID, 31)
    mult = np.where(GRID.dealias_mask, 0.5 + 0.1 * GRID.kabs, 0.0)
    norms = []
    eps_grid = [1e-2, 1e-3, 1e-4]
    for eps in eps_grid:
        pert = base.with_perturbation(lambda j, x, e=eps: e * mult * x)
        rep = propagator_difference(base, pert, 0.0, 0.05, v)
        assert rep.aggregates["agreement"] <= 1e-9  # discrete VoC telescopes (round-off)
        norms.append(rep.aggregates["norm_direct"])
    slope = np.polyfit(np.log(eps_grid), np.log(norms), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.1)


def test_fused_fast_path_matches_generic():
    for kind in ("navier_stokes", "twisted"):
        traj = _ns_trajectory(seed=40)
        path = LinearizationPath.from_trajectory(traj, DriftSpec(kind, alpha=1.0))
        op = drift_operator(DriftSpec(kind, alpha=1.0), "velocity", GRID)
        v = random_divfree_field(GRID, 41).coeffs
        fused = path.apply_a(5, v)
        generic = op.apply_df(traj.states[5], v)
        assert np.max(np.abs(fused - generic)) <= 1e-12 * max(np.max(np.abs(generic)), 1e-30)


def test_single_mode_field_shapes():
    f = single_mode_field(GRID, (3, 0), "velocity")
    f.validate(divergence_free=True)
    s = single_mode_field(GRID, (0, 2), "hat")
    assert not s.is_vector
