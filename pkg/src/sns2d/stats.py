"""Ensemble statistics: per-mode Gaussian marginal tests, moment
diagnostics, slope fits and decorrelation estimates.

Family-wise control: with hundreds of per-mode tests, a bare 3-sigma rule
rejects somewhere with near certainty under the null, so hard verdicts use
Bonferroni-corrected thresholds at the configured family level; raw
z-scores are still reported per mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .spectral import TorusGrid

__all__ = [
    "StatReport",
    "mode_test_set",
    "gaussian_marginal_tests",
    "moment_diagnostics",
    "integrated_autocorrelation_time",
    "fit_loglog_slope",
]


@dataclass
class StatReport:
    """Uniform container for experiment statistics.

    ``rows`` are per-item records (one dict per mode, level, lag, ...),
    ``aggregates`` scalar summaries, ``verdicts`` named pass/fail booleans
    (None = informational only).  Reports carry the seeds needed to
    regenerate them bit-exactly.
    """

    name: str
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        hard = [v for v in self.verdicts.values() if v is not None]
        return all(hard) if hard else True

    def row_columns(self) -> list[str]:
        cols: list[str] = []
        for r in self.rows:
            for k in r:
                if k not in cols:
                    cols.append(k)
        return cols


def mode_test_set(grid: TorusGrid, max_abs: float) -> list[tuple[int, int]]:
    """Half-lattice representatives with ``1 <= |k| <= max_abs``.

    One representative per conjugate pair (k1 > 0, or k1 = 0 and k2 > 0);
    self-conjugate lattice corners are excluded (they sit at Nyquist, far
    outside any sensible ``max_abs``).
    """
    out = []
    half = grid.n // 2
    for k1 in range(0, half):
        for k2 in range(-half + 1, half):
            if k1 == 0 and k2 <= 0:
                continue
            if 1.0 <= np.hypot(k1, k2) <= max_abs:
                out.append((k1, k2))
    return sorted(out)


def gaussian_marginal_tests(
    samples: np.ndarray,
    variances: dict[tuple[int, int], float],
    grid: TorusGrid,
    family_level: float = 0.01,
) -> StatReport:
    """Per-mode KS and variance tests of complex-Gaussian marginals.

    ``samples`` has shape ``(M, n, n)`` (scalar mode coefficients).  For
    every tested mode the real and imaginary parts are standardised by the
    target ``sqrt(variance / 2)`` and KS-tested against N(0, 1); variance
    gets a z-score against its sampling error.  Rejection thresholds are
    Bonferroni-corrected to ``family_level`` across all comparisons.
    """
    modes = sorted(variances)
    m = samples.shape[0]
    n_tests = 2 * len(modes)
    ks_level = family_level / n_tests
    z_crit = float(sps.norm.ppf(1.0 - family_level / (2 * n_tests)))

    rows = []
    worst_p, worst_z = 1.0, 0.0
    for k in modes:
        zc = samples[:, k[0] % grid.n, k[1] % grid.n]
        target = variances[k]
        scale = np.sqrt(target / 2.0)
        p_re = sps.kstest(np.real(zc) / scale, "norm").pvalue
        p_im = sps.kstest(np.imag(zc) / scale, "norm").pvalue
        var_hat = float(np.mean(np.abs(zc) ** 2))
        # relative SE of the variance of a complex Gaussian is 1/sqrt(M)
        z_var = (var_hat / target - 1.0) * np.sqrt(m)
        rows.append(
            {
                "k1": k[0],
                "k2": k[1],
                "variance": var_hat,
                "variance_target": target,
                "z_variance": z_var,
                "ks_p_re": p_re,
                "ks_p_im": p_im,
            }
        )
        worst_p = min(worst_p, p_re, p_im)
        worst_z = max(worst_z, abs(z_var))

    return StatReport(
        name="gaussian_marginals",
        rows=rows,
        aggregates={
            "n_modes": len(modes),
            "n_tests": n_tests,
            "m_samples": m,
            "worst_ks_p": worst_p,
            "worst_variance_z": worst_z,
            "ks_threshold": ks_level,
            "variance_z_threshold": z_crit,
        },
        verdicts={
            "ks_no_rejection": bool(worst_p > ks_level),
            "variance_no_rejection": bool(worst_z < z_crit),
        },
    )


def moment_diagnostics(samples: np.ndarray, variances: dict[tuple[int, int], float],
                       grid: TorusGrid, kurtosis_se_flag: float = 5.0) -> StatReport:
    """Variance ratios, excess kurtosis and tail quantiles per mode.

    Kurtosis beyond ``kurtosis_se_flag`` standard errors is reported as a
    finding, never as a failure (the nonlinear invariant measure is only
    equivalent to the Gaussian, not equal).
    """
    modes = sorted(variances)
    m = samples.shape[0]
    se_kurt = np.sqrt(24.0 / m)
    rows, flags = [], 0
    for k in modes:
        zc = samples[:, k[0] % grid.n, k[1] % grid.n]
        parts = np.concatenate([np.real(zc), np.imag(zc)])
        std = parts.std()
        kurt = float(sps.kurtosis(parts)) if std > 0 else 0.0
        q99 = float(np.quantile(np.abs(parts), 0.99)) / max(std, 1e-300)
        flagged = abs(kurt) > kurtosis_se_flag * se_kurt / np.sqrt(2.0)
        flags += flagged
        rows.append(
            {
                "k1": k[0],
                "k2": k[1],
                "variance_ratio": float(np.mean(np.abs(zc) ** 2)) / variances[k],
                "excess_kurtosis": kurt,
                "kurtosis_se": se_kurt / np.sqrt(2.0),
                "q99_over_std": q99,
                "flagged": bool(flagged),
            }
        )
    return StatReport(
        name="moment_diagnostics",
        rows=rows,
        aggregates={"n_flagged": flags, "m_samples": m},
        verdicts={"gaussian_moments": None},  # informational
    )


def integrated_autocorrelation_time(series: np.ndarray, window_factor: float = 5.0) -> float:
    """Sokal-windowed IAT: smallest tau with window >= window_factor * tau."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    n = len(x)
    if n < 4 or np.allclose(x, 0):
        return 1.0
    acf = np.correlate(x, x, mode="full")[n - 1 :] / (np.arange(n, 0, -1) * x.var())
    tau = 1.0
    for w in range(1, n // 2):
        tau = 1.0 + 2.0 * float(acf[1 : w + 1].sum())
        if w >= window_factor * tau:
            break
    return max(tau, 1.0)


def fit_loglog_slope(xs, ys) -> float:
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.maximum(np.asarray(ys, dtype=float), 1e-300))
    return float(np.polyfit(lx, ly, 1)[0])
