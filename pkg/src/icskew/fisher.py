"""Fisher information and Cramer-Rao bound for locating a HOM dip center.

Each delay point is a series of binary coincidence trials (one per source
pulse) with success probability ``P(tau) = q (1 - V G(tau))``, where
``q = detection_efficiency * p_dist`` is the per-trial baseline.  The
per-trial information ``F = P'^2 / (P (1 - P))`` is integrated over delay
and divided by ``q``, which gives information per detected baseline count:
with N counts spread over a scan range R the total information is
``(N / R) * I_F``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalError

# q = 1e-4 * 1/8 at 80 MHz is ~1000 cps per channel, the SPDC scan default
DEFAULT_DETECTION_EFFICIENCY = 1.0e-4
QUAD_HALF_WIDTH_SIGMAS = 10.0
MIN_RANGE_RATIO = 4.0


@dataclass(frozen=True)
class DipShape:
    p_dist: float = 0.125
    visibility: float = 0.92
    coherence_time_ps: float = 0.25
    detection_efficiency: float = DEFAULT_DETECTION_EFFICIENCY

    def __post_init__(self):
        if not 0 < self.p_dist < 1:
            raise DomainError(f"p_dist must be in (0, 1), got {self.p_dist}")
        if not 0 <= self.visibility <= 1:
            raise DomainError(f"visibility must be in [0, 1], got {self.visibility}")
        if not self.coherence_time_ps > 0:
            raise DomainError(f"coherence time must be > 0, got {self.coherence_time_ps}")
        if not 0 < self.detection_efficiency <= 1:
            raise DomainError(f"detection efficiency must be in (0, 1], got {self.detection_efficiency}")

    @property
    def trial_baseline(self) -> float:
        return self.detection_efficiency * self.p_dist


@dataclass(frozen=True)
class CrbReport:
    integrated_info_per_ps: float
    shape_factor: float
    n_eff: float
    crb_ps: float
    total_counts: float
    scan_range_ps: float
    note: str = ""

    @property
    def crb_fs(self) -> float:
        return self.crb_ps * 1e3

    def to_dict(self) -> dict:
        return {
            "integrated_info_per_ps": self.integrated_info_per_ps,
            "shape_factor_J_F": self.shape_factor,
            "n_eff": self.n_eff,
            "crb_ps": None if math.isinf(self.crb_ps) else self.crb_ps,
            "crb_fs": None if math.isinf(self.crb_ps) else self.crb_fs,
            "total_counts": self.total_counts,
            "scan_range_ps": self.scan_range_ps,
            "note": self.note,
        }


def trial_probability(shape: DipShape, tau_ps):
    t = np.asarray(tau_ps, dtype=float)
    g = np.exp(-0.5 * (t / shape.coherence_time_ps) ** 2)
    return shape.trial_baseline * (1.0 - shape.visibility * g)


def trial_probability_derivative(shape: DipShape, tau_ps):
    """Analytic ``dP/dtau``."""
    s = shape.coherence_time_ps
    t = np.asarray(tau_ps, dtype=float)
    g = np.exp(-0.5 * (t / s) ** 2)
    return shape.trial_baseline * shape.visibility * g * t / s**2


def _tau2_over_depth(shape: DipShape, t: np.ndarray) -> np.ndarray:
    """``tau^2 / (1 - V G)`` without cancellation; ``2 sigma^2`` at the V = 1 dip bottom."""
    s2 = shape.coherence_time_ps**2
    x = 0.5 * t * t / s2
    v = shape.visibility
    depth = (1.0 - v) - v * np.expm1(-x)
    out = np.empty_like(t)
    zero = depth == 0.0
    out[~zero] = t[~zero] ** 2 / depth[~zero]
    out[zero] = 2.0 * s2
    return out


def fisher_info_at(shape: DipShape, tau_ps):
    """Per-trial Fisher information (1/ps^2) about the dip center.

    For V = 1 the bottom of the dip is a removable 0/0; the continuous
    limit ``2 q / sigma^2`` is returned there.
    """
    t = np.atleast_1d(np.asarray(tau_ps, dtype=float))
    s = shape.coherence_time_ps
    q, v = shape.trial_baseline, shape.visibility
    g = np.exp(-0.5 * (t / s) ** 2)
    p = q * (1.0 - v * g)
    f = q * v * v * g * g / s**4 * _tau2_over_depth(shape, t) / (1.0 - p)
    return float(f[0]) if np.ndim(tau_ps) == 0 else f


def integrated_info(shape: DipShape, rel_tol: float = 1e-9) -> tuple[float, float]:
    """``(I_F, J_F)``: information per baseline count per ps, and ``sigma * I_F``.

    Adaptive quadrature over +-10 coherence times; the integrand decays
    like ``u^2 exp(-u^2)`` so the truncated tail is below 1e-40 relative.
    """
    if shape.visibility == 0.0:
        return 0.0, 0.0
    s = shape.coherence_time_ps
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            half, err = integrate.quad(
                lambda u: fisher_info_at(shape, u), 0.0, QUAD_HALF_WIDTH_SIGMAS * s,
                epsabs=0.0, epsrel=rel_tol, limit=500,
            )
        except integrate.IntegrationWarning as exc:
            raise NumericalError(f"Fisher quadrature did not converge for {shape}: {exc}") from exc
    total = 2.0 * half / shape.trial_baseline
    return total, s * total


def crb(shape: DipShape, total_counts: float, scan_range_ps: float) -> CrbReport:
    """Scan Cramer-Rao bound ``sigma / sqrt(N_eff J_F)`` with ``N_eff = N sigma / R``."""
    if not total_counts > 0:
        raise DomainError(f"total counts must be > 0, got {total_counts}")
    if not scan_range_ps > 0:
        raise DomainError(f"scan range must be > 0, got {scan_range_ps}")
    s = shape.coherence_time_ps
    if scan_range_ps / s < MIN_RANGE_RATIO:
        warnings.warn(
            f"scan range {scan_range_ps} ps is only {scan_range_ps / s:.2f} coherence times; "
            "the integral approximation assumes range >> coherence time",
            RuntimeWarning,
            stacklevel=2,
        )
    info, jf = integrated_info(shape)
    n_eff = total_counts * s / scan_range_ps
    if jf <= 0.0:
        return CrbReport(info, jf, n_eff, math.inf, total_counts, scan_range_ps,
                         note="zero visibility carries no information about the dip center; bound diverges")
    return CrbReport(info, jf, n_eff, s / math.sqrt(n_eff * jf), total_counts, scan_range_ps)
