"""Gaussian machinery: coloured noise increments, exact OU transitions,
damped stationary convolutions and the invariant-measure sampler.

Noise levels and their per-mode multipliers ``m(k)`` (the forcing term is
``sqrt(2) m(k) dW_k`` with ``W`` complex standard):

* ``velocity``:  ``m(k) = |k|^(gamma - 1 - alpha)`` acting along the
  divergence-free frame ``i k_perp / |k|``,
* ``vorticity``: ``m(k) = |k|^(gamma - alpha)``,
* ``hat``:       ``m(k) = |k|^gamma``.

With dissipation ``|k|^(2 gamma)`` the stationary per-mode variances are
``|k|^(-2-2 alpha)``, ``|k|^(-2 alpha)`` and ``1`` respectively (solve the
one-dimensional OU stationary variance ``2 m^2 / (2 lambda)``), independent
of gamma by construction.

Complex-mode convention: real and imaginary parts carry variance
``sigma^2 / 2`` each on a conjugate half-lattice, so ``E |fhat(k)|^2 =
sigma^2`` literally; the four self-conjugate lattice modes are real with
full variance.  All samplers are pure functions of an :class:`RngStream`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import RngStream
from .spectral import SpectralField, TorusGrid

__all__ = [
    "NoiseSpec",
    "GaussianMeasureSpec",
    "LEVELS",
    "sample_gaussian_field",
    "noise_increment",
    "ou_exact_step",
    "damped_ou_sample_path",
    "ou_covariance_oracle",
    "symmetrize_complex",
    "white_increment_coeffs",
]

LEVELS = ("velocity", "vorticity", "hat")


def _check_level(level: str) -> None:
    if level not in LEVELS:
        raise ValueError(f"unknown level {level!r}, expected one of {LEVELS}")


@dataclass(frozen=True)
class NoiseSpec:
    """Spatial colour of the white-in-time forcing."""

    alpha: float
    gamma: float
    level: str = "velocity"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not 0.5 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (1/2, 1], got {self.gamma}")
        _check_level(self.level)

    @property
    def multiplier_exponent(self) -> float:
        if self.level == "velocity":
            return self.gamma - 1.0 - self.alpha
        if self.level == "vorticity":
            return self.gamma - self.alpha
        return self.gamma

    def multiplier(self, grid: TorusGrid) -> np.ndarray:
        m = grid.kabs_safe ** self.multiplier_exponent
        return np.where(grid.nonzero_mask, m, 0.0)

    def measure(self) -> "GaussianMeasureSpec":
        return GaussianMeasureSpec(self.alpha, self.level)


@dataclass(frozen=True)
class GaussianMeasureSpec:
    """Invariant Gaussian measure of the linear dynamics at a given level."""

    alpha: float
    level: str = "velocity"

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        _check_level(self.level)

    @property
    def variance_exponent(self) -> float:
        if self.level == "velocity":
            return -2.0 - 2.0 * self.alpha
        if self.level == "vorticity":
            return -2.0 * self.alpha
        return 0.0

    def mode_variance(self, grid: TorusGrid) -> np.ndarray:
        v = grid.kabs_safe ** self.variance_exponent
        return np.where(grid.nonzero_mask, v, 0.0)


def symmetrize_complex(grid: TorusGrid, z: np.ndarray) -> np.ndarray:
    """Project iid unit complex Gaussians onto conjugate-symmetric ones.

    ``(z(k) + conj(z(-k))) / sqrt(2)`` preserves unit per-mode variance,
    is conjugate-symmetric, and leaves the self-conjugate modes real with
    full variance.
    """
    i, j = grid.flip_index
    return (z + np.conj(z[..., i, j])) / np.sqrt(2.0)


def _unit_complex(grid: TorusGrid, rng: RngStream, counter: int, lead: tuple[int, ...] = ()) -> np.ndarray:
    shape = lead + (2, grid.n, grid.n)
    block = rng.standard_normal(counter, shape)
    z = (block[..., 0, :, :] + 1j * block[..., 1, :, :]) / np.sqrt(2.0)
    return symmetrize_complex(grid, z)


def white_increment_coeffs(
    grid: TorusGrid,
    dt: float,
    rng: RngStream,
    counter: int,
    mask: np.ndarray | None = None,
    lead: tuple[int, ...] = (),
) -> np.ndarray:
    """Scalar white-noise increment coefficients, ``E |z(k)|^2 = dt``.

    These are the raw increments recorded with every trajectory; level
    multipliers and the divergence-free frame are applied at use.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    z = _unit_complex(grid, rng, counter, lead) * np.sqrt(dt)
    keep = grid.nonzero_mask if mask is None else mask
    return np.where(keep, z, 0.0)


def _frame_to_vector(grid: TorusGrid, scalar: np.ndarray) -> np.ndarray:
    """Lift scalar mode amplitudes onto the frame ``i k_perp / |k|``.

    Restricted to ``grid.frame_mask``: on the Nyquist rows the frame is not
    conjugation-consistent (and at self-conjugate modes it is imaginary
    where a real field needs a real coefficient), so those modes stay empty.
    """
    fac = np.where(grid.frame_mask, 1j / grid.kabs_safe, 0.0)
    out = np.empty(scalar.shape[:-2] + (2, grid.n, grid.n), dtype=np.complex128)
    out[..., 0, :, :] = -grid.k2 * fac * scalar
    out[..., 1, :, :] = grid.k1 * fac * scalar
    return out


def lift_level(grid: TorusGrid, scalar: np.ndarray, level: str) -> np.ndarray:
    """Scalar mode coefficients -> field coefficients at the given level."""
    if level == "velocity":
        return _frame_to_vector(grid, scalar)
    return scalar


def sample_gaussian_field(
    spec: GaussianMeasureSpec,
    grid: TorusGrid,
    rng: RngStream,
    counter: int = 0,
    mask: np.ndarray | None = None,
) -> SpectralField:
    """Draw one field from the (truncated) Gaussian measure.

    Velocity-level draws are divergence-free by construction.  ``mask``
    restricts the support (defaults to all nonzero modes).
    """
    keep = grid.nonzero_mask if mask is None else mask
    z = _unit_complex(grid, rng, counter)
    amp = np.where(keep, np.sqrt(spec.mode_variance(grid)), 0.0)
    return SpectralField(grid, lift_level(grid, amp * z, spec.level), spec.level)


def noise_increment(
    spec: NoiseSpec,
    dt: float,
    grid: TorusGrid,
    rng: RngStream,
    counter: int = 0,
    mask: np.ndarray | None = None,
) -> SpectralField:
    """Forcing increment over one step: variance ``2 m(k)^2 dt`` per mode."""
    z = white_increment_coeffs(grid, dt, rng, counter, mask)
    scaled = np.sqrt(2.0) * spec.multiplier(grid) * z
    return SpectralField(grid, lift_level(grid, scaled, spec.level), spec.level)


def _transition_arrays(grid: TorusGrid, spec: NoiseSpec, dt: float, damping: float = 0.0):
    """Exact OU transition: decay factor and noise standard deviation."""
    lam = damping + grid.kabs_safe ** (2.0 * spec.gamma)
    decay = np.exp(-lam * dt)
    var_inf = 2.0 * spec.multiplier(grid) ** 2 / (2.0 * lam)
    std = np.sqrt(var_inf * (-np.expm1(-2.0 * lam * dt)))
    return decay, std, var_inf


def ou_exact_step(
    f: SpectralField,
    dt: float,
    spec: NoiseSpec,
    rng: RngStream,
    counter: int = 0,
    mask: np.ndarray | None = None,
) -> SpectralField:
    """One exact-in-distribution transition of the linear (OU) dynamics."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    grid = f.grid
    decay, std, _ = _transition_arrays(grid, spec, dt)
    keep = grid.nonzero_mask if mask is None else mask
    z = _unit_complex(grid, rng, counter)
    eta = lift_level(grid, np.where(keep, std * z, 0.0), spec.level)
    return f.with_coeffs(decay * f.coeffs + eta)


def damped_ou_sample_path(
    damping: float,
    horizon: float,
    dt: float,
    spec: NoiseSpec,
    grid: TorusGrid,
    rng: RngStream,
) -> list[SpectralField]:
    """Stationary path of the K-damped stochastic convolution.

    The initial state is drawn from the damped stationary measure and each
    step uses the exact damped transition, so every marginal is exactly
    stationary with per-mode variance ``2 m(k)^2 / (2 (K + |k|^{2 gamma}))``.
    """
    if damping < 0:
        raise ValueError(f"damping must be >= 0, got {damping}")
    n_steps = int(round(horizon / dt))
    decay, std, var_inf = _transition_arrays(grid, spec, dt, damping)
    keep = grid.nonzero_mask
    z0 = _unit_complex(grid, rng, 0)
    state = np.where(keep, np.sqrt(var_inf) * z0, 0.0)
    path = [SpectralField(grid, lift_level(grid, state, spec.level), spec.level)]
    for j in range(1, n_steps + 1):
        z = _unit_complex(grid, rng, j)
        state = decay * state + np.where(keep, std * z, 0.0)
        path.append(SpectralField(grid, lift_level(grid, state, spec.level), spec.level))
    return path


def damped_stationary_pairs(
    damping: float,
    lag: float,
    spec: NoiseSpec,
    grid: TorusGrid,
    rng: RngStream,
    m: int,
) -> tuple[np.ndarray, np.ndarray]:
    """m stationary scalar-mode samples and their exact lag-``lag`` updates.

    Shares the transition law of :func:`damped_ou_sample_path` (same
    decay/variance arrays), stacked for Monte-Carlo covariance estimates.
    """
    decay, std, var_inf = _transition_arrays(grid, spec, lag, damping)
    keep = grid.nonzero_mask
    z0 = np.where(keep, np.sqrt(var_inf) * _unit_complex(grid, rng, 0, (m,)), 0.0)
    z1 = decay * z0 + np.where(keep, std * _unit_complex(grid, rng, 1, (m,)), 0.0)
    return z0, z1


def ou_covariance_oracle(kabs: float, lag: float, damping: float, spec: NoiseSpec) -> float:
    """Closed-form covariance of the damped stationary convolution.

    ``|k|^(2 gamma - 2 alpha - 2) / (K + |k|^(2 gamma)) *
    exp(-(K + |k|^(2 gamma)) lag)`` at velocity level; other levels shift
    the power of ``|k|`` through the multiplier.
    """
    if kabs < 1:
        raise ValueError("covariance oracle needs |k| >= 1")
    if lag < 0:
        raise ValueError("lag must be >= 0")
    lam = damping + kabs ** (2.0 * spec.gamma)
    m = kabs ** spec.multiplier_exponent
    return 2.0 * m * m / (2.0 * lam) * float(np.exp(-lam * lag))
