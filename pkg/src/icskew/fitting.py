"""Weighted nonlinear least-squares fits of HOM dips, peaks and beat envelopes.

SPDC scans are fitted with ``y = a + b exp(-(x - d)^2 / 2 s^2)``; fine laser
scans with ``y = a - b cos^2(pi (x - d) / T) exp(-(x - d)^2 / 2 s_p^2)`` at a
fixed pulse width ``s_p``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DegenerateFitError, NoFeatureError, ValidationError
from .scanmodel import ScanRecord

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


# -- optimizer ---------------------------------------------------------------

@dataclass
class LMResult:
    params: np.ndarray
    normal_matrix: np.ndarray
    wsse: float
    n_iter: int
    converged: bool
    damping: float


def levenberg_marquardt(
    model: Callable[[np.ndarray, np.ndarray], np.ndarray],
    jacobian: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    p0,
    scale=None,
    max_iter: int = 200,
    xtol: float = 1e-10,
) -> LMResult:
    """Minimise ``sum w (y - model)^2`` by damped Gauss-Newton.

    Marquardt scaling: the damping term is ``lam * diag(J^T W J)``.  A step
    is accepted only if the weighted SSE does not increase; ``lam`` drops
    x10 on acceptance and grows x10 on rejection.  Converged when every
    parameter moves by less than ``xtol * (|p| + scale)``.
    """
    p = np.array(p0, dtype=float)
    scale = np.zeros_like(p) if scale is None else np.asarray(scale, dtype=float)
    r = y - model(x, p)
    sse = float(np.sum(weights * r * r))
    lam = 1e-3
    for it in range(1, max_iter + 1):
        J = jacobian(x, p)
        A = J.T @ (weights[:, None] * J)
        g = J.T @ (weights * r)
        diag = np.diag(A).copy()
        diag[diag <= 0] = 1.0
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                p_new = p + step
                r_new = y - model(x, p_new)
                sse_new = float(np.sum(weights * r_new * r_new))
                if np.isfinite(sse_new) and sse_new <= sse:
                    lam = max(lam / 10.0, 1e-12)
                    break
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left: p is a minimum to working precision
                return LMResult(p, A, sse, it, True, lam)
        small = np.abs(step) <= xtol * (np.abs(p) + scale)
        p, r, sse = p_new, r_new, sse_new
        if np.all(small) or sse == 0.0:
            J = jacobian(x, p)
            return LMResult(p, J.T @ (weights[:, None] * J), sse, it, True, lam)
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (last wsse={sse:.6g})",
        last_params=p,
        n_iter=max_iter,
    )


def _covariance(normal_matrix: np.ndarray) -> np.ndarray:
    try:
        cov = np.linalg.inv(normal_matrix)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFitError("singular normal matrix at the optimum") from exc
    return 0.5 * (cov + cov.T)


# -- models ----------------------------------------------------------------

def gaussian_model(x, p):
    a, b, d, s = p
    return a + b * np.exp(-0.5 * ((x - d) / s) ** 2)


def gaussian_jacobian(x, p):
    a, b, d, s = p
    u = x - d
    e = np.exp(-0.5 * (u / s) ** 2)
    return np.column_stack([np.ones_like(x), e, b * e * u / s**2, b * e * u**2 / s**3])


def make_beat_model(pulse_width_ps: float):
    sp2 = pulse_width_ps**2

    def model(x, p):
        a, b, d, T = p
        u = x - d
        return a - b * np.cos(np.pi * u / T) ** 2 * np.exp(-0.5 * u * u / sp2)

    def jac(x, p):
        a, b, d, T = p
        u = x - d
        c = np.cos(np.pi * u / T)
        s = np.sin(np.pi * u / T)
        e = np.exp(-0.5 * u * u / sp2)
        g = c * c * e
        dg_du = e * (-2.0 * c * s * np.pi / T - c * c * u / sp2)
        dg_dT = e * 2.0 * c * s * np.pi * u / T**2
        return np.column_stack([np.ones_like(x), -g, b * dg_du, -b * dg_dT])

    return model, jac


# -- results ---------------------------------------------------------------

@dataclass
class InitialGuess:
    baseline: float
    amplitude: float
    center_ps: float
    width_ps: float
    kind: str
    sign_mismatch: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.baseline, self.amplitude, self.center_ps, self.width_ps])


@dataclass
class GaussianFit:
    baseline: float
    amplitude: float
    center_ps: float
    width_ps: float
    covariance: np.ndarray
    reduced_chi2: float
    n_iter: int = 0
    channel: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return "dip" if self.amplitude < 0 else "peak"

    @property
    def visibility(self) -> float:
        return abs(self.amplitude) / self.baseline

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def center_stderr_ps(self) -> float:
        return float(self.stderr[2])

    @property
    def visibility_stderr(self) -> float:
        a, b = self.baseline, self.amplitude
        grad = np.array([-abs(b) / a**2, math.copysign(1.0, b) / a, 0.0, 0.0])
        return float(math.sqrt(max(grad @ self.covariance @ grad, 0.0)))

    def to_dict(self) -> dict:
        se = self.stderr
        return {
            "model": "gaussian",
            "channel": self.channel,
            "kind": self.kind,
            "baseline": self.baseline,
            "amplitude": self.amplitude,
            "center_ps": self.center_ps,
            "width_ps": self.width_ps,
            "stderr": {"baseline": se[0], "amplitude": se[1], "center_ps": se[2], "width_ps": se[3]},
            "visibility": self.visibility,
            "visibility_stderr": self.visibility_stderr,
            "covariance": self.covariance.tolist(),
            "reduced_chi2": self.reduced_chi2,
            "n_iter": self.n_iter,
            **self.meta,
        }


@dataclass
class BeatFit:
    baseline: float
    amplitude: float
    center_ps: float
    beat_period_ps: float
    pulse_width_ps: float
    covariance: np.ndarray
    reduced_chi2: float
    n_iter: int = 0
    channel: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def effective_precision_ps(self) -> float:
        return self.beat_period_ps / (2.0 * math.pi)

    @property
    def center_stderr_ps(self) -> float:
        """Purely statistical standard error of the fringe center."""
        return float(math.sqrt(max(self.covariance[2, 2], 0.0)))

    @property
    def center_uncertainty_ps(self) -> float:
        """Statistical error combined in quadrature with ``T_beat / 2 pi``."""
        return math.hypot(self.center_stderr_ps, self.effective_precision_ps)

    @property
    def visibility(self) -> float:
        return self.amplitude / self.baseline

    def to_dict(self) -> dict:
        return {
            "model": "beat_envelope",
            "channel": self.channel,
            "baseline": self.baseline,
            "amplitude": self.amplitude,
            "center_ps": self.center_ps,
            "beat_period_ps": self.beat_period_ps,
            "pulse_width_ps": self.pulse_width_ps,
            "stderr": dict(zip(("baseline", "amplitude", "center_ps", "beat_period_ps"),
                               np.sqrt(np.clip(np.diag(self.covariance), 0, None)).tolist())),
            "center_stderr_ps": self.center_stderr_ps,
            "effective_precision_ps": self.effective_precision_ps,
            "center_uncertainty_ps": self.center_uncertainty_ps,
            "visibility": self.visibility,
            "covariance": self.covariance.tolist(),
            "reduced_chi2": self.reduced_chi2,
            "n_iter": self.n_iter,
            **self.meta,
        }


# -- initial guess -----------------------------------------------------------

def _moving_average(y: np.ndarray, width: int = 5) -> np.ndarray:
    return np.convolve(y, np.ones(width) / width, mode="valid")


def _half_crossing(xs, frac, i0, direction) -> float | None:
    """Interpolated position where ``frac`` drops through 0.5 walking from ``i0``."""
    i = i0
    while 0 <= i + direction < len(xs):
        j = i + direction
        if frac[j] <= 0.5:
            f0, f1 = frac[i], frac[j]
            t = (f0 - 0.5) / (f0 - f1) if f0 != f1 else 0.0
            return xs[i] + t * (xs[j] - xs[i])
        i = j
    return None


def initial_guess(record: ScanRecord, kind: str | None = None) -> InitialGuess:
    """Seed values ``(a, b, d, s)`` for the Gaussian fit.

    ``kind`` ("dip"/"peak") is checked against the detected feature; a
    disagreement is reported through ``sign_mismatch`` and the detected sign
    is used.
    """
    x = record.delay_grid_ps
    y = np.asarray(record.counts, dtype=float)
    if x.size < 8:
        raise ValidationError(f"need >= 8 grid points for a fit, got {x.size}")
    if kind not in (None, "dip", "peak"):
        raise ValidationError(f"kind must be 'dip' or 'peak', got {kind!r}")
    q = max(2, x.size // 4)
    outer = np.concatenate([y[:q], y[-q:]])
    a = float(np.median(outer))
    if record.variance is not None:
        noise = math.sqrt(max(float(np.median(np.concatenate([record.variance[:q], record.variance[-q:]]))), 1.0))
    else:
        noise = math.sqrt(max(a, 1.0))

    sm = _moving_average(y)
    xs = x[2:-2]
    i_lo, i_hi = int(np.argmin(sm)), int(np.argmax(sm))
    depth, height = a - sm[i_lo], sm[i_hi] - a
    detected = "dip" if depth >= height else "peak"
    if max(depth, height) < 2.0 * noise:
        raise NoFeatureError(
            f"no dip or peak above 2 sigma counting noise (extremum {max(depth, height):.3g}, noise {noise:.3g})"
        )
    i0 = i_lo if detected == "dip" else i_hi
    b = float(sm[i0] - a)
    frac = (sm - a) / b
    left = _half_crossing(xs, frac, i0, -1)
    right = _half_crossing(xs, frac, i0, +1)
    if left is not None and right is not None:
        fwhm = right - left
    elif left is not None or right is not None:
        fwhm = 2.0 * abs((left if left is not None else right) - xs[i0])
    else:
        fwhm = (x[-1] - x[0]) / 2.0
    width = max(fwhm / FWHM_PER_SIGMA, float(np.min(np.diff(x))))
    return InitialGuess(
        baseline=a,
        amplitude=b,
        center_ps=float(xs[i0]),
        width_ps=float(width),
        kind=detected,
        sign_mismatch=kind is not None and kind != detected,
    )


# -- fits --------------------------------------------------------------------

def _fit_weighted(record, model, jac, p0, scale, max_iter):
    """Fit with Poisson weights: raw-count variance first, then one pass with model variance.

    Records that carry a variance field (accidental-corrected) use it as is.
    """
    x = record.delay_grid_ps
    y = np.asarray(record.counts, dtype=float)
    if record.variance is not None:
        w = 1.0 / np.clip(record.variance, 1.0, None)
        return levenberg_marquardt(model, jac, x, y, w, p0, scale, max_iter), w
    w = 1.0 / np.clip(y, 1.0, None)
    first = levenberg_marquardt(model, jac, x, y, w, p0, scale, max_iter)
    mu = model(x, first.params)
    floor = max(1e-12 * float(np.max(np.abs(mu))), 1e-300)
    w = 1.0 / np.clip(mu, floor, None)
    second = levenberg_marquardt(model, jac, x, y, w, first.params, scale, max_iter)
    second.n_iter += first.n_iter
    return second, w


def fit_gaussian(record: ScanRecord, kind: str | None = None, max_iter: int = 200) -> GaussianFit:
    guess = initial_guess(record, kind)
    p0 = guess.as_array()
    scale = np.array([abs(p0[0]), abs(p0[1]), abs(p0[3]), abs(p0[3])])
    step = float(np.min(np.diff(record.delay_grid_ps)))
    try:
        res, _ = _fit_weighted(record, gaussian_model, gaussian_jacobian, p0, scale, max_iter)
    except ConvergenceError as exc:
        # a width sliding toward zero never settles; report it as the collapse it is
        if exc.last_params is not None and abs(exc.last_params[3]) < step:
            raise DegenerateFitError(
                f"fitted width {abs(exc.last_params[3]):.3g} ps collapsed below the grid step {step:.3g} ps"
            ) from exc
        raise
    a, b, d, s = res.params
    s = abs(s)
    if s < step:
        raise DegenerateFitError(f"fitted width {s:.3g} ps collapsed below the grid step {step:.3g} ps")
    if not a > 0:
        raise DegenerateFitError(f"non-positive fitted baseline {a:.3g}")
    params = np.array([a, b, d, s])
    cov = _covariance(_normal_matrix(record, gaussian_model, gaussian_jacobian, params))
    dof = max(record.delay_grid_ps.size - 4, 1)
    return GaussianFit(
        baseline=float(a),
        amplitude=float(b),
        center_ps=float(d),
        width_ps=float(s),
        covariance=cov,
        reduced_chi2=res.wsse / dof,
        n_iter=res.n_iter,
        channel=record.channel,
        meta={"sign_mismatch": guess.sign_mismatch} if guess.sign_mismatch else {},
    )


def _normal_matrix(record, model, jac, params):
    """``J^T W J`` at ``params`` with the weights used in the final fit pass."""
    x = record.delay_grid_ps
    if record.variance is not None:
        w = 1.0 / np.clip(record.variance, 1.0, None)
    else:
        mu = model(x, params)
        floor = max(1e-12 * float(np.max(np.abs(mu))), 1e-300)
        w = 1.0 / np.clip(mu, floor, None)
    J = jac(x, params)
    return J.T @ (w[:, None] * J)


def _record_float(record: ScanRecord, key: str):
    sp = record.source_params or {}
    v = sp.get(key)
    return None if v is None else float(v)


def fit_beat_envelope(
    record: ScanRecord,
    pulse_width_ps: float | None = None,
    beat_period_ps: float | None = None,
    max_iter: int = 200,
) -> BeatFit:
    """Fit the cos^2-times-Gaussian fringe of a fine laser scan.

    The pulse width is held fixed (taken from the record's source
    parameters when not given); one beat period cannot constrain it.
    """
    x = record.delay_grid_ps
    y = np.asarray(record.counts, dtype=float)
    if x.size < 8:
        raise ValidationError(f"need >= 8 grid points for a fit, got {x.size}")
    sp = pulse_width_ps if pulse_width_ps is not None else _record_float(record, "pulse_width_ps")
    if sp is None or not sp > 0:
        raise ValidationError("pulse width must be given or present in the record's source parameters")
    T0 = beat_period_ps if beat_period_ps is not None else _record_float(record, "beat_period_ps")
    if T0 is None:
        T0 = float(x[-1] - x[0])

    sm = _moving_average(y)
    xs = x[2:-2]
    hi = float(np.max(sm))
    i_lo = int(np.argmin(sm))
    b0 = hi - float(sm[i_lo])
    noise = math.sqrt(max(hi, 1.0))
    if b0 < 2.0 * noise:
        raise NoFeatureError("no beat fringe above 2 sigma counting noise")
    p0 = np.array([hi, b0, float(xs[i_lo]), T0])
    scale = np.array([hi, b0, T0, T0])
    model, jac = make_beat_model(sp)
    res, _ = _fit_weighted(record, model, jac, p0, scale, max_iter)
    a, b, d, T = res.params
    T = abs(T)
    if T < float(np.min(np.diff(x))):
        raise DegenerateFitError(f"fitted beat period {T:.3g} ps below the grid step")
    params = np.array([a, b, d, T])
    cov = _covariance(_normal_matrix(record, model, jac, params))
    return BeatFit(
        baseline=float(a),
        amplitude=float(b),
        center_ps=float(d),
        beat_period_ps=float(T),
        pulse_width_ps=float(sp),
        covariance=cov,
        reduced_chi2=res.wsse / max(x.size - 4, 1),
        n_iter=res.n_iter,
        channel=record.channel,
    )


def locate_envelope(coarse: ScanRecord, beat_period_ps: float | None = None) -> float:
    """Fine-scan center from a coarse laser scan.

    A Gaussian fit to the coarse scan locates the pulse envelope; the
    coarse sample with the fewest counts within half a beat period of that
    center marks the deepest fringe.
    """
    env = fit_gaussian(coarse, kind="dip")
    T = beat_period_ps if beat_period_ps is not None else _record_float(coarse, "beat_period_ps")
    if T is None:
        return env.center_ps
    x = coarse.delay_grid_ps
    near = np.abs(x - env.center_ps) <= 0.5 * T
    if not np.any(near):
        return env.center_ps
    idx = np.flatnonzero(near)
    return float(x[idx[np.argmin(np.asarray(coarse.counts)[idx])]])
