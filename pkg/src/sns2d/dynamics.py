"""Drift fields, cutoffs, the exponential-Euler stepper and trajectory runs.

All quadratic drifts are computed pseudo-spectrally with the 2/3-rule
dealias mask applied to every product, so for states supported on the
dealiased set they coincide with the exact Galerkin nonlinearity and the
transport identities ``<w, ns_drift(w)> = 0`` hold to round-off.

The stepper is exponential Euler with the phi1 weight on the drift and the
exact OU transition for the stochastic term: with zero drift a step is an
exact sample of the linear dynamics for any dt.

Internal helpers operate on raw coefficient arrays with arbitrary leading
batch axes; the public operations wrap them for single fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .gaussian import NoiseSpec, lift_level, white_increment_coeffs
from .rng import PURPOSE_NOISE, RngStream
from .spectral import (
    SHARP,
    SpectralField,
    TorusGrid,
    besov_pp_norm,
    biot_savart_coeffs,
    holder_norm,
    l2_norm,
    leray_coeffs,
    smoothstep_plateau,
    to_physical,
    to_spectral,
)

__all__ = [
    "BlowupDetected",
    "DriftSpec",
    "CutoffSpec",
    "IntegratorConfig",
    "SimulationConfig",
    "NoiseRecord",
    "TrajectoryRecord",
    "ns_drift",
    "twisted_drift",
    "hat_twisted_drift",
    "generalized_drift",
    "ns_velocity_drift",
    "twisted_velocity_drift",
    "commutator_g",
    "commutator_g_direct",
    "rough_commutator_probe",
    "evaluate_cutoffs",
    "step",
    "simulate",
    "evolve_ensemble",
    "enstrophy_diagnostic",
    "drift_operator",
]


class BlowupDetected(RuntimeError):
    """State norm crossed the configured threshold; carries a partial record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


# -- pseudo-spectral transport -------------------------------------------------

def _grad_coeffs(grid: TorusGrid, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return -1j * grid.k1 * g, -1j * grid.k2 * g


def advect(grid: TorusGrid, u: np.ndarray, g: np.ndarray, vector_g: bool,
           dealias: bool = True) -> np.ndarray:
    """``(u . grad) g`` for divergence-free u; batched, dealiased output.

    ``u`` has shape ``(..., 2, n, n)``; ``g`` is scalar ``(..., n, n)`` or,
    with ``vector_g``, vector ``(..., 2, n, n)``; the result matches ``g``.
    Leading batch axes of u and g broadcast against each other.
    """
    u_phys = to_physical(u)
    d1, d2 = _grad_coeffs(grid, g)
    d1p, d2p = to_physical(d1), to_physical(d2)
    if vector_g:  # keep a singleton component axis on u to broadcast over g's
        u1 = u_phys[..., 0:1, :, :]
        u2 = u_phys[..., 1:2, :, :]
    else:
        u1 = u_phys[..., 0, :, :]
        u2 = u_phys[..., 1, :, :]
    out = to_spectral(u1 * d1p + u2 * d2p)
    mask = grid.dealias_mask if dealias else grid.nonzero_mask
    return np.where(mask, out, 0.0)


def _frac(grid: TorusGrid, c: np.ndarray, s: float) -> np.ndarray:
    if s == 0.0:
        return c
    return c * grid.kabs_safe ** s


# -- drift families (coefficient level, batched) -------------------------------

def ns_drift_coeffs(grid: TorusGrid, w: np.ndarray) -> np.ndarray:
    """Vorticity-form Navier-Stokes drift ``-(K w . grad) w``."""
    return -advect(grid, biot_savart_coeffs(grid, w), w, vector_g=False)


def twisted_bilinear_coeffs(grid: TorusGrid, a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """``-|grad|^-alpha (K a . grad) |grad|^alpha b`` (vorticity level)."""
    adv = advect(grid, biot_savart_coeffs(grid, a), _frac(grid, b, alpha), vector_g=False)
    return -_frac(grid, adv, -alpha)


def hat_bilinear_coeffs(grid: TorusGrid, a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Hat-form transport ``-(K |grad|^-alpha a . grad) b``."""
    return -advect(grid, biot_savart_coeffs(grid, _frac(grid, a, -alpha)), b, vector_g=False)


def generalized_bilinear_coeffs(
    grid: TorusGrid, a: np.ndarray, b: np.ndarray, beta: float, alpha: float
) -> np.ndarray:
    """``-P ((|grad|^(beta-alpha) a) . grad) b`` (velocity level)."""
    adv = advect(grid, _frac(grid, a, beta - alpha), b, vector_g=True)
    return -leray_coeffs(grid, adv)


def ns_velocity_bilinear_coeffs(grid: TorusGrid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``-P (a . grad) b`` = ``-P div(a x b)`` for divergence-free a."""
    return -leray_coeffs(grid, advect(grid, a, b, vector_g=True))


def twisted_velocity_bilinear_coeffs(
    grid: TorusGrid, a: np.ndarray, b: np.ndarray, alpha: float
) -> np.ndarray:
    """``-|grad|^-alpha P div(a x |grad|^alpha b)`` (velocity level)."""
    adv = advect(grid, a, _frac(grid, b, alpha), vector_g=True)
    return -_frac(grid, leray_coeffs(grid, adv), -alpha)


def commutator_bilinear_coeffs(grid: TorusGrid, a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Bilinear commutator ``|grad|^-a P div(a x |grad|^a b) - P div(a x b)``."""
    hi = _frac(grid, leray_coeffs(grid, advect(grid, a, _frac(grid, b, alpha), vector_g=True)), -alpha)
    lo = leray_coeffs(grid, advect(grid, a, b, vector_g=True))
    return hi - lo


# -- public single-field wrappers ----------------------------------------------

def _scalar_in(f: SpectralField, name: str) -> None:
    if f.is_vector:
        raise ValueError(f"{name} expects a scalar field")


def _vector_df_in(u: SpectralField, name: str, tol: float = 1e-10) -> None:
    if not u.is_vector:
        raise ValueError(f"{name} expects a vector field")
    if u.max_divergence_defect() > tol * max(l2_norm(u), 1.0):
        raise ValueError(f"{name} requires a divergence-free field")


def ns_drift(w: SpectralField) -> SpectralField:
    """Nonlinear vorticity drift; exactly L^2-orthogonal to the state."""
    _scalar_in(w, "ns_drift")
    out = ns_drift_coeffs(w.grid, w.coeffs)
    _raise_on_nonfinite(out, "ns_drift")
    return w.with_coeffs(out)


def twisted_drift(v: SpectralField, alpha: float) -> SpectralField:
    """Twisted vorticity drift ``-|grad|^-a (K v . grad) |grad|^a v``."""
    _scalar_in(v, "twisted_drift")
    out = twisted_bilinear_coeffs(v.grid, v.coeffs, v.coeffs, alpha)
    _raise_on_nonfinite(out, "twisted_drift")
    return v.with_coeffs(out)


def hat_twisted_drift(vhat: SpectralField, alpha: float) -> SpectralField:
    """Hat-form drift ``-(K |grad|^-a vhat . grad) vhat``; conserves ||vhat||."""
    _scalar_in(vhat, "hat_twisted_drift")
    out = hat_bilinear_coeffs(vhat.grid, vhat.coeffs, vhat.coeffs, alpha)
    _raise_on_nonfinite(out, "hat_twisted_drift")
    return vhat.with_coeffs(out)


def generalized_drift(u: SpectralField, beta: float, alpha: float) -> SpectralField:
    """Interpolating family: beta=alpha is Navier-Stokes, beta=0 is twisted."""
    if not 0.0 <= beta <= alpha:
        raise ValueError(f"generalized drift needs 0 <= beta <= alpha, got beta={beta}, alpha={alpha}")
    if not u.is_vector:
        raise ValueError("generalized_drift expects a vector field")
    out = generalized_bilinear_coeffs(u.grid, u.coeffs, u.coeffs, beta, alpha)
    _raise_on_nonfinite(out, "generalized_drift")
    return u.with_coeffs(out)


def ns_velocity_drift(u: SpectralField) -> SpectralField:
    _vector_df_in(u, "ns_velocity_drift")
    return u.with_coeffs(ns_velocity_bilinear_coeffs(u.grid, u.coeffs, u.coeffs))


def twisted_velocity_drift(u: SpectralField, alpha: float) -> SpectralField:
    _vector_df_in(u, "twisted_velocity_drift")
    return u.with_coeffs(twisted_velocity_bilinear_coeffs(u.grid, u.coeffs, u.coeffs, alpha))


def commutator_g(u: SpectralField, alpha: float) -> SpectralField:
    """The regularising commutator
    ``G_a(u) = |grad|^-a P div(u x |grad|^a u) - P div(u x u)``.

    The resonant cancellation relies on div u = 0, so non-solenoidal
    input is rejected.
    """
    _vector_df_in(u, "commutator_g")
    return u.with_coeffs(commutator_bilinear_coeffs(u.grid, u.coeffs, u.coeffs, alpha))


def commutator_multiplier(n_vec: np.ndarray, ell_vec: np.ndarray, alpha: float) -> float:
    """Symbol factor ``|n|^-a (|n|^a - |l|^a)``; vanishes when |l| = |n|."""
    nn = float(np.hypot(*n_vec))
    ll = float(np.hypot(*ell_vec))
    return (nn**alpha - ll**alpha) / nn**alpha


def commutator_g_direct(u: SpectralField, alpha: float) -> SpectralField:
    """Brute-force bilinear lattice sum for ``G_a`` (small supports only).

    ``F[G](n) = P_n [ i |n|^-a sum_{k+l=n} (|n|^a - |l|^a) (uhat(k).l) uhat(l) ]``
    """
    _vector_df_in(u, "commutator_g_direct")
    grid = u.grid
    c = u.coeffs
    ks = np.argwhere(np.abs(c).sum(axis=0) > 0)
    out = np.zeros_like(c)
    kvals = {}
    for i, j in ks:
        k = (int(grid.k1[i, j]), int(grid.k2[i, j]))
        kvals[k] = c[:, i, j]
    r = grid.dealias_radius
    for k, uk in kvals.items():
        for ell, ul in kvals.items():
            n = (k[0] + ell[0], k[1] + ell[1])
            if n == (0, 0) or max(abs(n[0]), abs(n[1])) > r:
                continue
            mult = commutator_multiplier(np.array(n), np.array(ell), alpha)
            val = 1j * mult * (uk[0] * ell[0] + uk[1] * ell[1]) * ul
            out[:, n[0] % grid.n, n[1] % grid.n] += val
    return u.with_coeffs(leray_coeffs(grid, out))


def _raise_on_nonfinite(c: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(c)):
        raise BlowupDetected(f"non-finite values produced in {where}")


# -- cutoffs -------------------------------------------------------------------

def _chi0(x) -> np.ndarray | float:
    """Plateau cutoff: 1 on (-inf, 1], 0 on [2, inf); Lipschitz 15/8."""
    return smoothstep_plateau(x)


def _chi0_prime(x: float) -> float:
    t = min(max(x - 1.0, 0.0), 1.0)
    return -30.0 * t * t * (t - 1.0) ** 2 if 0.0 < x - 1.0 < 1.0 else 0.0


CHI0_LIPSCHITZ = 15.0 / 8.0


@dataclass(frozen=True)
class CutoffSpec:
    """Radius-R cutoffs of the interpolated drift family.

    ``chi`` is the Lipschitz cutoff of the Holder norm at smoothness
    ``alpha - kappa``; ``chi_sm`` is the smooth cutoff of the p-th power of
    the ``B^{alpha-2kappa}_{p,p}`` norm.  The Besov argument is calibrated
    by the worst-case embedding constant ``sum_N N^{-kappa p}`` over the
    grid's dyadic levels, so both cutoffs equal 1 whenever the Holder norm
    is below R.
    """

    alpha: float
    radius: float
    kappa: float = 0.05
    p: int = 8

    def __post_init__(self):
        if self.p < 2 or self.p % 2:
            raise ValueError("p must be an even integer >= 2")
        if self.radius <= 0 or self.kappa <= 0:
            raise ValueError("radius and kappa must be positive")

    @property
    def holder_exponent(self) -> float:
        return self.alpha - self.kappa

    @property
    def besov_exponent(self) -> float:
        return self.alpha - 2.0 * self.kappa

    def with_radius(self, radius: float) -> "CutoffSpec":
        return replace(self, radius=radius)

    def embedding_constant(self, grid: TorusGrid) -> float:
        return float(sum(m ** (-self.kappa * self.p) for m in grid.dyadic_levels))

    def besov_argument(self, f: SpectralField) -> float:
        cal = self.embedding_constant(f.grid) * self.radius**self.p
        return besov_pp_norm(f, self.besov_exponent, self.p) ** self.p / cal

    def chi(self, f: SpectralField) -> float:
        return float(_chi0(holder_norm(f, self.holder_exponent) / self.radius))

    def chi_sm(self, f: SpectralField) -> float:
        return float(_chi0(self.besov_argument(f)))

    def chi_sm_gradient(self, f: SpectralField) -> np.ndarray | None:
        """Field g with ``D chi_sm(f) . v = <g, v>``; None where the slope is 0."""
        arg = self.besov_argument(f)
        slope = _chi0_prime(arg)
        if slope == 0.0:
            return None
        grid, p, s = f.grid, self.p, self.besov_exponent
        cal = self.embedding_constant(grid) * self.radius**p
        acc = np.zeros_like(f.coeffs)
        for level in grid.dyadic_levels:
            w = SHARP.weights(grid, level)
            block = to_physical(f.coeffs * w)
            if f.is_vector:
                mag = np.sqrt(block[0] ** 2 + block[1] ** 2)
                dens = np.where(mag > 0, mag ** (p - 2), 0.0) * block
            else:
                dens = block ** (p - 1)
            acc += level ** (s * p) * to_spectral(dens) * w
        return (slope * p / cal) * acc


def evaluate_cutoffs(f: SpectralField, spec: CutoffSpec) -> tuple[float, float]:
    """Return ``(chi_R(f), chi_sm_R(f))``; both are 1 on the core ball."""
    return spec.chi(f), spec.chi_sm(f)


# -- drift dispatch ------------------------------------------------------------

@dataclass(frozen=True)
class DriftSpec:
    """Which drift family a trajectory follows.

    kinds: ``linear``; ``navier_stokes`` (vorticity or velocity level);
    ``twisted`` (vorticity, velocity or hat level); ``generalized`` with
    ``0 <= beta <= alpha`` (velocity); ``interpolated`` with homotopy
    parameter ``s`` and cutoffs, ``F_s = (F + s G) chi_sm`` (velocity).
    """

    kind: str
    alpha: float = 1.0
    beta: float | None = None
    s: float | None = None
    cutoff: CutoffSpec | None = None

    def __post_init__(self):
        kinds = ("linear", "navier_stokes", "twisted", "generalized", "interpolated")
        if self.kind not in kinds:
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.kind == "generalized":
            if self.beta is None or not 0.0 <= self.beta <= self.alpha:
                raise ValueError("generalized drift needs 0 <= beta <= alpha")
        if self.kind == "interpolated":
            if self.s is None or not 0.0 <= self.s <= 1.0:
                raise ValueError("interpolated drift needs s in [0, 1]")
            if self.cutoff is None:
                raise ValueError("interpolated drift needs a CutoffSpec")


@dataclass
class DriftOperator:
    """Callable bundle for one (DriftSpec, level) pair.

    ``value`` and ``bilinear`` act on raw (batched) coefficient arrays;
    ``chi_log`` returns cutoff values for the activation log (or None).
    """

    grid: TorusGrid
    is_vector: bool
    bilinear: Callable[[np.ndarray, np.ndarray], np.ndarray] | None
    value: Callable[[np.ndarray], np.ndarray]
    chi_log: Callable[[np.ndarray], dict] | None = None
    df: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    def apply_df(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.df is not None:
            return self.df(u, v)
        if self.bilinear is None:
            return np.zeros_like(v)
        return self.bilinear(u, v) + self.bilinear(v, u)


def drift_operator(spec: DriftSpec, level: str, grid: TorusGrid) -> DriftOperator:
    if spec.kind == "linear":
        return DriftOperator(grid, level == "velocity", None, lambda u: np.zeros_like(u))

    if spec.kind == "navier_stokes":
        if level == "vorticity":
            bil = lambda a, b: -advect(grid, biot_savart_coeffs(grid, a), b, vector_g=False)
        elif level == "velocity":
            bil = lambda a, b: ns_velocity_bilinear_coeffs(grid, a, b)
        else:
            raise ValueError("navier_stokes drift is defined at vorticity or velocity level")
        return DriftOperator(grid, level == "velocity", bil, lambda u: bil(u, u))

    if spec.kind == "twisted":
        a0 = spec.alpha
        if level == "vorticity":
            bil = lambda a, b: twisted_bilinear_coeffs(grid, a, b, a0)
        elif level == "hat":
            bil = lambda a, b: hat_bilinear_coeffs(grid, a, b, a0)
        elif level == "velocity":
            bil = lambda a, b: twisted_velocity_bilinear_coeffs(grid, a, b, a0)
        else:
            raise ValueError(f"unsupported level {level!r} for twisted drift")
        return DriftOperator(grid, level == "velocity", bil, lambda u: bil(u, u))

    if spec.kind == "generalized":
        if level != "velocity":
            raise ValueError("generalized drift is defined at velocity level")
        bil = lambda a, b: generalized_bilinear_coeffs(grid, a, b, spec.beta, spec.alpha)
        return DriftOperator(grid, True, bil, lambda u: bil(u, u))

    # interpolated family F_s = (F + s G) chi_sm_{2R}, velocity level
    if level != "velocity":
        raise ValueError("interpolated drift is defined at velocity level")
    a0, s = spec.alpha, spec.s
    cut2 = spec.cutoff.with_radius(2.0 * spec.cutoff.radius)
    cache: list = [None, 0.0]  # state buffer -> cutoff argument (stepper calls repeat per state)

    def arg_of(u):
        if cache[0] is not u:
            cache[0] = u
            cache[1] = cut2.besov_argument(SpectralField(grid, u, "velocity"))
        return cache[1]

    def bil(a, b):
        base = ns_velocity_bilinear_coeffs(grid, a, b)
        comm = commutator_bilinear_coeffs(grid, a, b, a0)
        return base - s * comm  # G = -G_alpha

    def value(u):
        if u.ndim > 3:
            raise ValueError("interpolated drift evaluates single states only")
        return float(_chi0(arg_of(u))) * bil(u, u)

    def df(u, v):
        lin = bil(u, v) + bil(v, u)
        out = float(_chi0(arg_of(u))) * lin
        if _chi0_prime(arg_of(u)) != 0.0:
            grad = cut2.chi_sm_gradient(SpectralField(grid, u, "velocity"))
            pair = np.real(np.sum(np.conj(grad) * v, axis=(-3, -2, -1)))
            out = out + pair[..., None, None, None] * bil(u, u)
        return out

    def chi_log(u):
        fu = SpectralField(grid, u, "velocity")
        return {"chi": cut2.chi(fu), "chi_sm": float(_chi0(arg_of(u)))}

    return DriftOperator(grid, True, bil, value, chi_log, df)


# -- configuration and records ---------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    """Physical parameters, grid, level and seed of one simulation."""

    n: int
    alpha: float
    gamma: float
    level: str = "velocity"
    kappa: float = 0.05
    master_seed: int = 0
    cutoff_radius: float | None = None

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.n)

    @property
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(self.alpha, self.gamma, self.level)


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    horizon: float
    scheme: str = "exponential_euler"
    blowup_threshold: float = 1e6

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < self.dt:
            raise ValueError("need dt > 0 and horizon >= dt")
        if self.scheme not in ("exponential_euler", "etdrk2"):
            raise ValueError(f"unknown scheme {self.scheme!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class NoiseRecord:
    """White-noise-level increments ``zeta_j`` with per-mode variance dt.

    Level multipliers and (for velocity) the divergence-free frame are
    applied at use, so one record can drive systems at any level; this is
    what couples two dynamics to the identical realisation.
    """

    grid: TorusGrid
    dt: float
    increments: np.ndarray  # (n_steps, n, n) complex
    seed_info: tuple = ()

    @classmethod
    def draw(cls, grid: TorusGrid, n_steps: int, dt: float, rng: RngStream,
             mask: np.ndarray | None = None) -> "NoiseRecord":
        keep = grid.dealias_mask if mask is None else mask
        inc = white_increment_coeffs(grid, dt, rng, 0, keep, lead=(n_steps,))
        return cls(grid, dt, inc, (rng.master_seed, rng.stream_id))

    def spliced(self, other: "NoiseRecord", cut_step: int) -> "NoiseRecord":
        """This record up to cut_step, the other's increments after."""
        inc = self.increments.copy()
        inc[cut_step:] = other.increments[cut_step:]
        return NoiseRecord(self.grid, self.dt, inc, self.seed_info + ("spliced", cut_step))

    def coarsened(self, factor: int) -> "NoiseRecord":
        """The same Brownian path on a grid coarsened by ``factor``
        (consecutive increments summed), for nested convergence studies."""
        if self.n_steps % factor:
            raise ValueError("step count not divisible by the coarsening factor")
        inc = self.increments.reshape((self.n_steps // factor, factor) + self.increments.shape[1:]).sum(axis=1)
        return NoiseRecord(self.grid, self.dt * factor, inc, self.seed_info + ("coarsened", factor))

    @property
    def n_steps(self) -> int:
        return self.increments.shape[0]


@dataclass
class TrajectoryRecord:
    sim: SimulationConfig
    integ: IntegratorConfig
    drift: DriftSpec
    times: np.ndarray
    states: np.ndarray          # (n_times, [2,] n, n) complex
    noise: NoiseRecord | None
    diagnostics: dict = field(default_factory=dict)
    complete: bool = True

    def state(self, j: int) -> SpectralField:
        return SpectralField(self.sim.grid, self.states[j], self.sim.level)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1


# -- stepping ------------------------------------------------------------------

def _phi1(z: np.ndarray) -> np.ndarray:
    return np.expm1(z) / z


def _phi2(z: np.ndarray) -> np.ndarray:
    return (np.expm1(z) - z) / (z * z)


@dataclass
class _StepperArrays:
    decay: np.ndarray
    drift_weight: np.ndarray       # phi1(-lam dt) dt
    phi2_weight: np.ndarray        # phi2(-lam dt) dt (etdrk2 correction)
    noise_std: np.ndarray          # exact OU transition std / sqrt(dt)
    cm_mult: np.ndarray            # |grad|^(gamma-1-alpha)-type level multiplier


def _stepper_arrays(sim: SimulationConfig, dt: float) -> _StepperArrays:
    grid = sim.grid
    spec = sim.noise_spec
    lam = grid.kabs_safe ** (2.0 * sim.gamma)
    z = -lam * dt
    var_inf = spec.multiplier(grid) ** 2 / lam
    std = np.sqrt(var_inf * (-np.expm1(2.0 * z)) / dt)
    return _StepperArrays(
        decay=np.exp(z),
        drift_weight=_phi1(z) * dt,
        phi2_weight=_phi2(z) * dt,
        noise_std=std,
        cm_mult=spec.multiplier(grid),
    )


def _advance(state: np.ndarray, op: DriftOperator, arrays: _StepperArrays,
             grid: TorusGrid, level: str, scheme: str,
             zeta: np.ndarray | None, cm: np.ndarray | None) -> np.ndarray:
    """One integrator step on raw coefficients (batched).

    ``zeta`` is a white-noise increment with per-mode variance dt.
    """
    drift = op.value(state)
    total = drift if cm is None else drift + arrays.cm_mult * cm
    out = arrays.decay * state + arrays.drift_weight * total
    if scheme == "etdrk2" and op.bilinear is not None:
        out = out + arrays.phi2_weight * (op.value(out) - drift)
    if zeta is not None:
        out = out + lift_level(grid, arrays.noise_std * zeta, level)
    return out


def step(
    state: SpectralField,
    drift: DriftSpec,
    sim: SimulationConfig,
    dt: float,
    zeta: np.ndarray | None = None,
    cm: np.ndarray | None = None,
    scheme: str = "exponential_euler",
) -> SpectralField:
    """One exponential-Euler step; ``zeta`` is a white increment (var dt)."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    op = drift_operator(drift, sim.level, sim.grid)
    arrays = _stepper_arrays(sim, dt)
    out = _advance(state.coeffs, op, arrays, sim.grid, sim.level, scheme, zeta, cm)
    _raise_on_nonfinite(out, "step")
    return state.with_coeffs(out)


def _project_initial(grid: TorusGrid, c: np.ndarray) -> np.ndarray:
    return np.where(grid.dealias_mask, c, 0.0)


def simulate(
    sim: SimulationConfig,
    integ: IntegratorConfig,
    drift: DriftSpec,
    initial: SpectralField,
    noise: NoiseRecord | None = None,
    rng: RngStream | None = None,
    cm_drift: np.ndarray | None = None,
) -> TrajectoryRecord:
    """Integrate one trajectory, recording states and driving noise.

    ``noise`` takes precedence over ``rng``; with ``rng`` given, fresh
    increments are drawn and recorded so the run can be replayed or used
    to drive a second system on the identical realisation.  ``cm_drift``
    is an optional per-step Cameron-Martin path at white-noise level,
    entering the equation through the level multiplier.
    """
    grid, level = sim.grid, sim.level
    n_steps = integ.n_steps
    if noise is None and rng is not None:
        noise = NoiseRecord.draw(grid, n_steps, integ.dt, rng)
    if noise is not None and noise.n_steps < n_steps:
        raise ValueError("noise record shorter than the requested horizon")

    op = drift_operator(drift, level, grid)
    arrays = _stepper_arrays(sim, integ.dt)
    state = _project_initial(grid, initial.coeffs)

    times = np.linspace(0.0, n_steps * integ.dt, n_steps + 1)
    states = np.empty((n_steps + 1,) + state.shape, dtype=np.complex128)
    states[0] = state
    chi_min = {"chi": 1.0, "chi_sm": 1.0}
    holder_trace = []

    for j in range(n_steps):
        zeta = None if noise is None else noise.increments[j]
        cm = None if cm_drift is None else cm_drift[j]
        if op.chi_log is not None:
            logged = op.chi_log(state)
            chi_min = {k: min(chi_min[k], logged[k]) for k in chi_min}
        state = _advance(state, op, arrays, grid, level, integ.scheme, zeta, cm)
        states[j + 1] = state
        if not np.all(np.isfinite(state)):
            record = _partial_record(sim, integ, drift, times, states, noise, j + 1)
            raise BlowupDetected(f"non-finite state at t={times[j + 1]:.6g}", record)
        hn = holder_norm(SpectralField(grid, state, level), sim.alpha - sim.kappa)
        holder_trace.append(hn)
        if hn > integ.blowup_threshold:
            record = _partial_record(sim, integ, drift, times, states, noise, j + 1)
            raise BlowupDetected(f"holder norm {hn:.3g} over threshold at t={times[j + 1]:.6g}", record)

    diagnostics = {
        "energy": np.sum(np.abs(states) ** 2, axis=tuple(range(1, states.ndim))),
        "holder": np.asarray(holder_trace),
        "chi_min": chi_min,
    }
    return TrajectoryRecord(sim, integ, drift, times, states, noise, diagnostics)


def _partial_record(sim, integ, drift, times, states, noise, upto):
    return TrajectoryRecord(
        sim, integ, drift, times[: upto + 1], states[: upto + 1], noise, {}, complete=False
    )


def evolve_ensemble(
    sim: SimulationConfig,
    integ: IntegratorConfig,
    drift: DriftSpec,
    states0: np.ndarray,
    master_seed: int,
    holder_check_every: int = 25,
) -> np.ndarray:
    """March M stacked trajectories with independent per-trajectory streams.

    Trajectory i draws its step-j increment from stream ``(i, NOISE)`` at
    counter j, so results are independent of batching and bit-reproducible
    against one-at-a-time simulation with the same streams.
    """
    grid, level = sim.grid, sim.level
    m = states0.shape[0]
    op = drift_operator(drift, level, grid)
    arrays = _stepper_arrays(sim, integ.dt)
    state = np.where(grid.dealias_mask, states0, 0.0)
    mask = grid.dealias_mask
    streams = [RngStream(master_seed, (i, PURPOSE_NOISE)) for i in range(m)]
    sqdt = np.sqrt(integ.dt)
    i0, i1 = grid.flip_index

    blocks = np.empty((m, 2, grid.n, grid.n))
    for j in range(integ.n_steps):
        for i, s in enumerate(streams):
            blocks[i] = s.standard_normal(j, (2, grid.n, grid.n))
        z = (blocks[:, 0] + 1j * blocks[:, 1]) / np.sqrt(2.0)
        z = (z + np.conj(z[..., i0, i1])) / np.sqrt(2.0)
        zeta = np.where(mask, z * sqdt, 0.0)
        state = _advance(state, op, arrays, grid, level, integ.scheme, zeta, None)
        if not np.all(np.isfinite(state)):
            raise BlowupDetected(f"ensemble blow-up at step {j}")
        if holder_check_every and (j + 1) % holder_check_every == 0:
            worst = np.sqrt(np.max(np.sum(np.abs(state) ** 2, axis=tuple(range(1, state.ndim)))))
            if worst > integ.blowup_threshold:
                raise BlowupDetected(f"ensemble norm {worst:.3g} over threshold at step {j}")
    return state


# -- diagnostics ---------------------------------------------------------------

def enstrophy_diagnostic(traj: TrajectoryRecord):
    """Discrete enstrophy balance along a vorticity-level trajectory.

    Per step, with ``w+ = E w + D drift + eta``:

    ``d||w||^2 = (||E w||^2 - ||w||^2) + 2<E w, D drift> + ||D drift||^2
                 + martingale part``, and ``E||eta||^2`` is the exact
    injection.  Columns report each term; the transfer ``<w, drift(w)>``
    vanishes to round-off for the conservative drifts.
    """
    if traj.sim.level == "velocity":
        raise ValueError("enstrophy diagnostic expects a scalar-level trajectory")
    sim, integ = traj.sim, traj.integ
    grid = sim.grid
    op = drift_operator(traj.drift, sim.level, grid)
    arrays = _stepper_arrays(sim, integ.dt)
    spec = sim.noise_spec
    lam = grid.kabs_safe ** (2.0 * sim.gamma)
    injection_step = float(
        np.sum(np.where(grid.dealias_mask, spec.multiplier(grid) ** 2 / lam * (-np.expm1(-2 * lam * integ.dt)), 0.0))
    )

    rows = []
    for j in range(traj.n_steps):
        w = traj.states[j]
        w_next = traj.states[j + 1]
        drift = op.value(w) if op.bilinear is not None else np.zeros_like(w)
        ew = arrays.decay * w
        dd = arrays.drift_weight * drift
        s2 = float(np.sum(np.abs(w) ** 2))
        ds2 = float(np.sum(np.abs(w_next) ** 2)) - s2
        linear_change = float(np.sum((arrays.decay**2 - 1.0) * np.abs(w) ** 2))
        transfer = float(np.real(np.sum(w * np.conj(drift))))
        cross = 2.0 * float(np.real(np.sum(ew * np.conj(dd))))
        drift_sq = float(np.sum(np.abs(dd) ** 2))
        dissipation = -2.0 * float(np.sum(lam * np.where(grid.nonzero_mask, np.abs(w) ** 2, 0.0)))
        martingale = ds2 - linear_change - cross - drift_sq - (injection_step if traj.noise is not None else 0.0)
        rows.append(
            {
                "time": float(traj.times[j]),
                "enstrophy": s2,
                "d_enstrophy": ds2,
                "dissipation": dissipation,
                "linear_change": linear_change,
                "transfer": transfer,
                "transfer_scale": l2_norm_arr(w) * l2_norm_arr(drift),
                "drift_cross": cross,
                "drift_sq": drift_sq,
                "injection": injection_step if traj.noise is not None else 0.0,
                "residual": martingale,
            }
        )
    from .stats import StatReport

    return StatReport(
        name="enstrophy_balance",
        rows=rows,
        aggregates={
            "injection_per_step": injection_step,
            "mean_residual": float(np.mean([r["residual"] for r in rows])),
            "max_transfer_rel": max(
                (abs(r["transfer"]) / r["transfer_scale"]) if r["transfer_scale"] > 0 else 0.0 for r in rows
            ),
        },
    )


def l2_norm_arr(c: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(c) ** 2)))


# -- rough-symbol commutator probe ----------------------------------------------

def rough_symbol_weights(grid: TorusGrid) -> np.ndarray:
    """Oscillating weights ``sigma_n = 2 + (-1)^floor(|n|)`` on integer rings."""
    return 2.0 + (-1.0) ** np.floor(grid.kabs)


def rough_commutator(u: SpectralField, alpha: float, gamma: float,
                     weights: np.ndarray | None = None) -> SpectralField:
    """Commutator with symbol ``Q = sigma_n |n|^(gamma-1-alpha)``:
    ``C_Q[u] = P div(u x u) - Q P div(u x Q^-1 u)``.

    For constant sigma this is ``-G_{alpha+1-gamma}(u)`` exactly; the
    oscillating weights destroy the symbol smoothness that the gain relies on.
    """
    _vector_df_in(u, "rough_commutator")
    grid = u.grid
    sig = rough_symbol_weights(grid) if weights is None else weights
    q = sig * grid.kabs_safe ** (gamma - 1.0 - alpha)
    lo = leray_coeffs(grid, advect(grid, u.coeffs, u.coeffs, vector_g=True))
    hi = q * leray_coeffs(grid, advect(grid, u.coeffs, u.coeffs / q, vector_g=True))
    return u.with_coeffs(lo - hi)


def dyadic_sup_profile(f: SpectralField, levels: list[int]) -> dict[int, float]:
    from .spectral import dyadic_blocks

    blocks = dyadic_blocks(f)
    out = {}
    for m in levels:
        phys = blocks[m]
        if f.is_vector:
            out[m] = float(np.sqrt(phys[0] ** 2 + phys[1] ** 2).max())
        else:
            out[m] = float(np.abs(phys).max())
    return out


def fit_dyadic_slope(profile: dict[int, float]) -> float:
    levels = sorted(profile)
    xs = np.log2(levels)
    ys = np.log2([max(profile[m], 1e-300) for m in levels])
    return float(np.polyfit(xs, ys, 1)[0])


def rough_commutator_probe(u: SpectralField, alpha: float, gamma: float,
                           levels: list[int] | None = None):
    """Dyadic sup-norm profiles of the rough probe against the smooth
    commutator, the constant-symbol control and the plain quadratic drift,
    with fitted log2 slopes for comparison."""
    from .stats import StatReport

    grid = u.grid
    if levels is None:
        levels = [m for m in grid.dyadic_levels if 4 <= m <= grid.n // 4]
    rough = rough_commutator(u, alpha, gamma)
    smooth = rough_commutator(u, alpha, gamma, weights=np.full((grid.n, grid.n), 2.0))
    gal = commutator_g(u, alpha)
    naive = u.with_coeffs(leray_coeffs(grid, advect(grid, u.coeffs, u.coeffs, vector_g=True)))
    prof = {
        "rough": dyadic_sup_profile(rough, levels),
        "smooth_const": dyadic_sup_profile(smooth, levels),
        "commutator": dyadic_sup_profile(gal, levels),
        "naive": dyadic_sup_profile(naive, levels),
    }
    zero = l2_norm(u) == 0.0
    slopes = {k: (float("nan") if zero else fit_dyadic_slope(v)) for k, v in prof.items()}
    rows = [{"level": m, **{k: prof[k][m] for k in prof}} for m in levels]
    return StatReport(
        name="rough_commutator_probe",
        rows=rows,
        aggregates={"slopes": slopes, "zero_input": zero, "alpha": alpha, "gamma": gamma},
    )
