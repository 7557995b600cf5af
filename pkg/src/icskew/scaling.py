"""RMS skew versus fiber length: sqrt(L) + c and power-law fits, bootstrap CI."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericalError, ValidationError

LN10 = math.log(10.0)
POINTS_HEADER = ("length_m", "rms_ps", "sigma_ps", "n_pairs")
PLOT_HEADER = (
    "length_m",
    "measured_rms_ps",
    "measured_sigma_ps",
    "sqrt_model_ps",
    "power_law_ps",
    "power_law_lo_ps",
    "power_law_hi_ps",
    "ref_sqrt_ps",
    "ref_linear_ps",
)


@dataclass(frozen=True)
class LengthPoint:
    length_m: float
    rms_ps: float
    sigma_rms_ps: float
    n_pairs: int = 6

    def __post_init__(self):
        if not (self.length_m > 0 and self.rms_ps > 0 and self.sigma_rms_ps > 0):
            raise DomainError(f"length, rms and sigma must be > 0: {self}")
        if not 1 <= int(self.n_pairs) <= 6:
            raise DomainError(f"n_pairs must be in [1, 6], got {self.n_pairs}")


@dataclass
class SqrtFit:
    kappa: float
    offset_c: float
    covariance: np.ndarray
    r_squared: float

    @property
    def kappa_stderr(self) -> float:
        return float(math.sqrt(self.covariance[0, 0]))

    @property
    def offset_stderr(self) -> float:
        return float(math.sqrt(self.covariance[1, 1]))

    def predict(self, length_m):
        return self.kappa * np.sqrt(np.asarray(length_m, dtype=float)) + self.offset_c

    def to_dict(self) -> dict:
        return {
            "model": "kappa*sqrt(L)+c",
            "kappa_ps_per_sqrt_m": self.kappa,
            "kappa_stderr": self.kappa_stderr,
            "kappa_ps_per_sqrt_km": self.kappa * math.sqrt(1000.0),
            "offset_c_ps": self.offset_c,
            "offset_stderr": self.offset_stderr,
            "covariance": self.covariance.tolist(),
            "r_squared": self.r_squared,
        }


@dataclass
class PowerLawFit:
    """``rms = A L^alpha``; ``covariance`` is over ``(log10 A, alpha)``."""

    amplitude_A: float
    exponent_alpha: float
    covariance: np.ndarray
    r_squared: float

    @property
    def alpha_stderr(self) -> float:
        return float(math.sqrt(self.covariance[1, 1]))

    def predict(self, length_m):
        return self.amplitude_A * np.asarray(length_m, dtype=float) ** self.exponent_alpha

    def log_band(self, length_m, n_sigma: float = 1.0):
        """Lower/upper curves from the +-n_sigma band of the log10 prediction."""
        lx = np.log10(np.asarray(length_m, dtype=float))
        X = np.column_stack([np.ones_like(lx), lx])
        sd = np.sqrt(np.einsum("ij,jk,ik->i", X, self.covariance, X))
        centre = math.log10(self.amplitude_A) + self.exponent_alpha * lx
        return 10.0 ** (centre - n_sigma * sd), 10.0 ** (centre + n_sigma * sd)

    def to_dict(self) -> dict:
        return {
            "model": "A*L^alpha",
            "amplitude_A": self.amplitude_A,
            "exponent_alpha": self.exponent_alpha,
            "alpha_stderr": self.alpha_stderr,
            "covariance_log10A_alpha": self.covariance.tolist(),
            "r_squared": self.r_squared,
        }


@dataclass
class BootstrapResult:
    point_estimate: float
    ci_low: float
    ci_high: float
    n_resamples: int
    seed: int
    bootstrap_median: float
    confidence: float = 0.95
    n_redrawn: int = 0

    def contains(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "parameter": "alpha",
            "method": "percentile",
            "point_estimate": self.point_estimate,
            "bootstrap_median": self.bootstrap_median,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "confidence": self.confidence,
            "n_resamples": self.n_resamples,
            "n_redrawn": self.n_redrawn,
            "seed": self.seed,
        }


def _arrays(points: Sequence[LengthPoint], min_points: int = 3):
    if len(points) < min_points:
        raise ValidationError(f"need at least {min_points} length points, got {len(points)}")
    L = np.array([p.length_m for p in points], dtype=float)
    y = np.array([p.rms_ps for p in points], dtype=float)
    s = np.array([p.sigma_rms_ps for p in points], dtype=float)
    n = np.array([p.n_pairs for p in points], dtype=float)
    return L, y, s, n


def pair_weight(n_pairs, downweight: bool = True):
    """Extra weight factor for length points with missing core pairs."""
    return np.asarray(n_pairs, dtype=float) / 6.0 if downweight else np.ones_like(np.asarray(n_pairs, dtype=float))


def weighted_linear_fit(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Closed-form WLS: coefficients, ``(X^T W X)^-1`` and weighted R^2."""
    A = X.T @ (w[:, None] * X)
    try:
        cov = np.linalg.inv(A)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular design matrix; need distinct lengths") from exc
    beta = cov @ (X.T @ (w * y))
    resid = y - X @ beta
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    r2 = 1.0 - np.sum(w * resid**2) / ss_tot if ss_tot > 0 else 1.0
    return beta, 0.5 * (cov + cov.T), float(r2)


def fit_sqrt_model(points: Sequence[LengthPoint], downweight: bool = True) -> SqrtFit:
    L, y, s, n = _arrays(points)
    if np.unique(L).size < 2:
        raise ValidationError("need at least two distinct lengths")
    w = pair_weight(n, downweight) / s**2
    X = np.column_stack([np.sqrt(L), np.ones_like(L)])
    beta, cov, r2 = weighted_linear_fit(X, y, w)
    return SqrtFit(float(beta[0]), float(beta[1]), cov, r2)


def log_sigma(rms, sigma):
    """Propagated log10 uncertainty ``sigma / (rms ln 10)``."""
    return np.asarray(sigma, dtype=float) / (np.asarray(rms, dtype=float) * LN10)


def fit_power_law(points: Sequence[LengthPoint], downweight: bool = True) -> PowerLawFit:
    L, y, s, n = _arrays(points)
    if np.unique(L).size < 2:
        raise ValidationError("need at least two distinct lengths")
    w = pair_weight(n, downweight) / log_sigma(y, s) ** 2
    lx = np.log10(L)
    X = np.column_stack([np.ones_like(lx), lx])
    beta, cov, r2 = weighted_linear_fit(X, np.log10(y), w)
    return PowerLawFit(float(10.0 ** beta[0]), float(beta[1]), cov, r2)


def _slopes(lx: np.ndarray, ly: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise weighted least-squares slope for stacked resamples."""
    sw = w.sum(axis=1)
    sx = (w * lx).sum(axis=1)
    sy = (w * ly).sum(axis=1)
    sxx = (w * lx * lx).sum(axis=1)
    sxy = (w * lx * ly).sum(axis=1)
    return (sw * sxy - sx * sy) / (sw * sxx - sx * sx)


def bootstrap_ci(
    points: Sequence[LengthPoint],
    n_resamples: int = 5000,
    seed: int = 0,
    confidence: float = 0.95,
    downweight: bool = True,
    max_redraw_rounds: int = 1000,
) -> BootstrapResult:
    """Case-resampling percentile CI for the power-law exponent.

    Resamples with fewer than three distinct lengths are redrawn, so exactly
    ``n_resamples`` refits enter the percentiles.
    """
    L, y, s, n = _arrays(points)
    if n_resamples < 2:
        raise ValidationError("bootstrap needs n_resamples >= 2")
    if not 0 < confidence < 1:
        raise ValidationError("confidence must be in (0, 1)")
    if np.unique(L).size < 3:
        raise ValidationError("bootstrap needs at least three distinct lengths")
    lx, ly = np.log10(L), np.log10(y)
    w = pair_weight(n, downweight) / log_sigma(y, s) ** 2
    full = fit_power_law(points, downweight)

    rng = np.random.default_rng(seed)
    m = L.size
    idx = rng.integers(0, m, size=(n_resamples, m))
    redrawn = 0
    for _ in range(max_redraw_rounds):
        srt = np.sort(L[idx], axis=1)
        distinct = 1 + np.sum(np.diff(srt, axis=1) > 0, axis=1)
        bad = np.flatnonzero(distinct < 3)
        if bad.size == 0:
            break
        redrawn += bad.size
        idx[bad] = rng.integers(0, m, size=(bad.size, m))
    else:
        raise NumericalError("could not draw non-degenerate bootstrap resamples")

    alphas = _slopes(lx[idx], ly[idx], w[idx])
    tail = 50.0 * (1.0 - confidence)
    lo, hi = np.percentile(alphas, [tail, 100.0 - tail])
    return BootstrapResult(
        point_estimate=full.exponent_alpha,
        ci_low=float(lo),
        ci_high=float(hi),
        n_resamples=n_resamples,
        seed=seed,
        bootstrap_median=float(np.median(alphas)),
        confidence=confidence,
        n_redrawn=int(redrawn),
    )


# -- files -------------------------------------------------------------------

def read_points_csv(path) -> list[LengthPoint]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[:4]) != POINTS_HEADER:
            raise ValidationError(f"{path}: expected header {','.join(POINTS_HEADER)}")
        try:
            return [
                LengthPoint(float(r["length_m"]), float(r["rms_ps"]), float(r["sigma_ps"]), int(r["n_pairs"]))
                for r in reader
            ]
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: malformed row ({exc})") from exc


def write_points_csv(points: Sequence[LengthPoint], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POINTS_HEADER)
        for p in points:
            w.writerow((repr(float(p.length_m)), repr(float(p.rms_ps)), repr(float(p.sigma_rms_ps)), int(p.n_pairs)))
    return path


def plot_rows(points: Sequence[LengthPoint], sqrt_fit: SqrtFit, power_fit: PowerLawFit, n_grid: int = 50):
    """Rows for a log-log figure: data, both models, log-space band, L^0.5 and L^1 references.

    Grid rows leave the measured columns empty.  Reference lines pass
    through the shortest measured point.
    """
    L, y, s, _ = _arrays(points, min_points=1)
    grid = np.geomspace(L.min(), L.max(), n_grid)
    measured = {float(a): (float(b), float(c)) for a, b, c in zip(L, y, s)}
    xs = np.unique(np.concatenate([grid, L]))
    lo, hi = power_fit.log_band(xs)
    i0 = int(np.argmin(L))
    L0, y0 = L[i0], y[i0]
    rows = []
    for k, x in enumerate(xs):
        meas = measured.get(float(x))
        rows.append((
            float(x),
            None if meas is None else meas[0],
            None if meas is None else meas[1],
            float(sqrt_fit.predict(x)),
            float(power_fit.predict(x)),
            float(lo[k]),
            float(hi[k]),
            float(y0 * math.sqrt(x / L0)),
            float(y0 * x / L0),
        ))
    return rows


def write_plot_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_HEADER)
        for r in rows:
            w.writerow(["" if v is None else repr(v) for v in r])
    return path
