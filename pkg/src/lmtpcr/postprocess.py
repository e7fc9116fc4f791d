"""Range truncation, isotonic projection, simultaneous bands and adjusted tests."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm, qmc

__all__ = [
    "truncate_unit",
    "isotonic_project",
    "BandResult",
    "simultaneous_band",
    "adjusted_tests",
    "ProjectedCurve",
    "project_curve",
    "contrast_curves",
    "write_curve_csv",
]


def truncate_unit(values, lower: float = 0.0, upper: float = 1.0) -> np.ndarray:
    """Clip to [lower, upper] (default the unit interval)."""
    return np.clip(np.asarray(values, dtype=float), lower, upper)


def isotonic_project(values, weights=None, increasing: bool = True) -> np.ndarray:
    """Weighted least-squares projection onto monotone sequences (pool adjacent violators).

    Examples
    --------
    >>> isotonic_project([0.2, 0.1, 0.3])
    array([0.15, 0.15, 0.3 ])
    """
    y = np.asarray(values, dtype=float).ravel()
    if y.size == 0:
        return y.copy()
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != y.shape or (w <= 0).any():
        raise ValueError("weights must be positive and match the values")
    if not increasing:
        return -isotonic_project(-y, w, True)
    # each block keeps (weighted mean, total weight, length)
    means, totals, sizes = [], [], []
    for yi, wi in zip(y, w):
        m, tw, sz = yi, wi, 1
        while means and means[-1] > m:
            pm, pw, ps = means.pop(), totals.pop(), sizes.pop()
            m = (pm * pw + m * tw) / (pw + tw)
            tw += pw
            sz += ps
        means.append(m)
        totals.append(tw)
        sizes.append(sz)
    return np.repeat(means, sizes)


@dataclass(frozen=True)
class BandResult:
    z: float
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def _band_critical(eif, level, B, seed, chunk, method):
    phi = np.asarray(eif, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    n, K = phi.shape
    centered = phi - phi.mean(axis=0)
    sd = centered.std(axis=0)
    use = np.isfinite(sd) & (sd > 0)
    if (~use).any():
        warnings.warn(f"{int((~use).sum())} horizon(s) with zero or undefined SE left out of the "
                      "band calibration", stacklevel=3)
    if not use.any():
        return float("nan"), sd
    scaled = centered[:, use] / sd[use]
    if method == "multiplier":
        rng = np.random.default_rng(seed)
        stats = np.empty(B)
        for start in range(0, B, chunk):
            k = min(chunk, B - start)
            xi = rng.standard_normal((k, n))
            stats[start:start + k] = np.abs(xi @ scaled).max(axis=1) / np.sqrt(n)
    elif method == "qmc":
        # Given the data, n^{-1/2} sum_i xi_i phi_i is exactly N(0, corr) for Gaussian xi,
        # so draw that K-dimensional law directly from scrambled Sobol points.
        corr = scaled.T @ scaled / n
        vals, vecs = np.linalg.eigh(corr)
        root = vecs * np.sqrt(np.clip(vals, 0.0, None))
        m = int(np.ceil(np.log2(max(B, 2))))
        u = qmc.Sobol(d=root.shape[0], scramble=True, seed=seed).random_base2(m)[:B]
        z = norm.ppf(np.clip(u, 1e-16, 1 - 1e-16))
        stats = np.abs(z @ root.T).max(axis=1)
    else:
        raise ValueError(f"unknown band method {method!r}")
    return float(np.quantile(stats, level)), sd


def simultaneous_band(eif, estimates=None, level: float = 0.95, B: int = 10_000,
                      seed: int = 0, chunk: int = 500, method: str = "qmc") -> BandResult:
    """Gaussian multiplier bootstrap band theta_k +/- z* SE_k.

    z* is the ``level`` quantile over B draws of
    max_k |n^{-1/2} sum_i xi_i (phi_ik - mean_k)| / sd_k with xi_i ~ N(0, 1).
    ``method="multiplier"`` draws the xi_i explicitly; the default ``"qmc"``
    draws the equivalent K-dimensional Gaussian from scrambled Sobol points,
    which has much smaller simulation error for the same B. Columns with zero
    or non-finite SE are excluded from the maximum.
    """
    phi = np.asarray(eif, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    n = phi.shape[0]
    z, sd = _band_critical(phi, level, B, seed, chunk, method)
    se = sd / np.sqrt(n)
    if estimates is None:
        estimates = phi.mean(axis=0)
    est = np.asarray(estimates, dtype=float)
    return BandResult(z, se, est - z * se, est + z * se)


def adjusted_tests(estimates, ses, K: int | None = None) -> np.ndarray:
    """Bonferroni-adjusted two-sided p-values for H0: theta_k = 0."""
    est = np.asarray(estimates, dtype=float)
    se = np.asarray(ses, dtype=float)
    K = est.size if K is None else int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        zstat = np.abs(est) / se
    zero = se == 0
    if np.any(zero & (est != 0)):
        warnings.warn("zero standard error with a non-zero estimate; p-value set to 0", stacklevel=2)
    zstat = np.where(zero, np.where(est != 0, np.inf, 0.0), zstat)
    raw = 2 * norm.sf(zstat)
    return np.minimum(1.0, K * raw)


@dataclass(frozen=True)
class ProjectedCurve:
    horizons: np.ndarray
    theta_raw: np.ndarray
    theta_proj: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    band_lo: np.ndarray
    band_hi: np.ndarray
    z_star: float
    p_adj: np.ndarray

    def rows(self):
        for k, h in enumerate(self.horizons):
            yield {"horizon": int(h), "theta_raw": self.theta_raw[k], "theta_proj": self.theta_proj[k],
                   "se": self.se[k], "ci_lo": self.ci_lo[k], "ci_hi": self.ci_hi[k],
                   "band_lo": self.band_lo[k], "band_hi": self.band_hi[k], "p_adj": self.p_adj[k]}


def _tidy(v, bounds, monotone, increasing):
    """Truncate, then project the finite entries."""
    out = np.asarray(v, dtype=float).copy()
    ok = np.isfinite(out)
    out[ok] = truncate_unit(out[ok], *bounds)
    if monotone and ok.any():
        out[ok] = isotonic_project(out[ok], increasing=increasing)
    return out


def project_curve(horizons, theta, eif, *, level: float = 0.95, B: int = 10_000, seed: int = 0,
                  bounds=(0.0, 1.0), monotone: bool = True, increasing: bool = True,
                  z_point: float | None = None) -> ProjectedCurve:
    """Pointwise and simultaneous limits, each truncated and projected separately.

    Columns of ``eif`` that are entirely NaN (failed horizons) stay NaN.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(eif, dtype=float).reshape(-1, theta.size)
    good = np.isfinite(theta) & np.all(np.isfinite(phi), axis=0)
    n = phi.shape[0]
    se = np.full(theta.size, np.nan)
    se[good] = phi[:, good].std(axis=0) / np.sqrt(n)
    if good.any():
        z = simultaneous_band(phi[:, good], theta[good], level, B, seed).z
    else:
        z = float("nan")
    zp = norm.ppf(0.5 + level / 2) if z_point is None else z_point
    p_adj = np.full(theta.size, np.nan)
    p_adj[good] = adjusted_tests(theta[good], se[good], int(good.sum()))
    return ProjectedCurve(
        horizons=np.asarray(horizons), theta_raw=theta,
        theta_proj=_tidy(theta, bounds, monotone, increasing), se=se,
        ci_lo=_tidy(theta - zp * se, bounds, monotone, increasing),
        ci_hi=_tidy(theta + zp * se, bounds, monotone, increasing),
        band_lo=_tidy(theta - z * se, bounds, monotone, increasing),
        band_hi=_tidy(theta + z * se, bounds, monotone, increasing),
        z_star=z, p_adj=p_adj,
    )


def contrast_curves(horizons, theta_a, eif_a, theta_b, eif_b, **kwargs) -> ProjectedCurve:
    """Difference curve theta_a - theta_b with EIF differences for SEs and bands.

    Both EIF matrices must come from the same units, folds and horizons. The
    difference is bounded to [-1, 1] and not projected onto monotone curves.
    """
    ea = np.asarray(eif_a, dtype=float)
    eb = np.asarray(eif_b, dtype=float)
    if ea.shape != eb.shape or np.size(theta_a) != np.size(theta_b):
        raise ValueError("contrast arms must share units and horizons")
    kwargs.setdefault("bounds", (-1.0, 1.0))
    kwargs.setdefault("monotone", False)
    return project_curve(horizons, np.asarray(theta_a) - np.asarray(theta_b), ea - eb, **kwargs)


def write_curve_csv(curve: ProjectedCurve, path) -> None:
    fields = ["horizon", "theta_raw", "theta_proj", "se", "ci_lo", "ci_hi", "band_lo", "band_hi",
              "p_adj"]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in curve.rows():
            w.writerow({k: (v if k == "horizon" else repr(float(v))) for k, v in row.items()})
