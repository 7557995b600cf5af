"""Synthetic coincidence scans for the SPDC and bimodal-laser regimes.

Also holds ``ScanRecord`` and its on-disk form: a CSV with header
``delay_ps,counts,integration_s`` plus a JSON sidecar (same stem, ``.json``)
carrying channel, source parameters, seed and, for synthetic data, the
injected skew offset.  Floats are written with ``repr`` so a write/read
cycle is bit exact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .errors import DomainError, ValidationError
from .multiport import ChannelPrediction, coincidence_probability

CSV_HEADER = ("delay_ps", "counts", "integration_s")
SCAN_FORMAT = "icskew-scan/1"


@dataclass(frozen=True)
class SpdcSourceParams:
    coherence_time_ps: float = 0.25
    pair_rate_cps: float = 8000.0
    singles_rates_cps: tuple[float, ...] = (1.0e5, 1.0e5, 1.0e5, 1.0e5)
    rep_rate_hz: float = 80.0e6

    def __post_init__(self):
        if not self.coherence_time_ps > 0:
            raise DomainError("coherence_time_ps must be > 0")
        if self.pair_rate_cps < 0 or any(r < 0 for r in self.singles_rates_cps):
            raise DomainError("rates must be >= 0")
        if not self.rep_rate_hz > 0:
            raise DomainError("rep_rate_hz must be > 0")
        object.__setattr__(self, "singles_rates_cps", tuple(float(r) for r in self.singles_rates_cps))


@dataclass(frozen=True)
class LaserSourceParams:
    beat_period_ps: float = 10.0
    pulse_width_ps: float = 127.0
    mean_photons_per_pulse: float = 0.5
    rep_rate_hz: float = 1.0e6
    asymptotic_coinc_rate_cps: float = 2600.0

    def __post_init__(self):
        for name in ("beat_period_ps", "pulse_width_ps", "mean_photons_per_pulse",
                     "rep_rate_hz", "asymptotic_coinc_rate_cps"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be > 0")


@dataclass
class ScanRecord:
    delay_grid_ps: np.ndarray
    channel: str
    counts: np.ndarray
    integration_time_s: np.ndarray
    source_kind: str = "spdc"
    skew_offset_ps: float | None = None
    variance: np.ndarray | None = None
    seed: int | None = None
    source_params: dict | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.delay_grid_ps = np.asarray(self.delay_grid_ps, dtype=float)
        counts = np.asarray(self.counts)
        if counts.dtype.kind not in "iuf":
            counts = counts.astype(float)
        self.counts = counts
        t = np.asarray(self.integration_time_s, dtype=float)
        if t.ndim == 0:
            t = np.full(self.delay_grid_ps.shape, float(t))
        self.integration_time_s = t
        if self.variance is not None:
            self.variance = np.asarray(self.variance, dtype=float)
        _check_grid(self.delay_grid_ps)
        if counts.shape != self.delay_grid_ps.shape or t.shape != self.delay_grid_ps.shape:
            raise ValidationError("counts and integration times must match the delay grid length")
        if self.variance is not None and self.variance.shape != counts.shape:
            raise ValidationError("variance must match counts length")
        if np.any(t <= 0):
            raise ValidationError("integration times must be > 0")
        if self.source_kind not in ("spdc", "laser"):
            raise ValidationError(f"unknown source kind {self.source_kind!r}")
        if self.source_params is not None:
            sp = self.source_params if isinstance(self.source_params, dict) else asdict(self.source_params)
            # JSON-shaped (tuples become lists) so a file round trip is exact
            self.source_params = json.loads(json.dumps(sp))

    @property
    def is_corrected(self) -> bool:
        return self.variance is not None

    @property
    def negative_points(self) -> int:
        """Number of grid points whose (corrected) counts went below zero."""
        return int(np.sum(self.counts < 0))

    @property
    def total_counts(self) -> float:
        return float(np.sum(self.counts))

    def shifted(self, delta_ps: float) -> "ScanRecord":
        off = None if self.skew_offset_ps is None else self.skew_offset_ps + delta_ps
        return replace(self, delay_grid_ps=self.delay_grid_ps + delta_ps, skew_offset_ps=off)


def _check_grid(grid: np.ndarray) -> None:
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError("delay grid must be a non-empty 1-D sequence")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValidationError("delay grid must be strictly increasing")


def expected_spdc_rate(
    pred: ChannelPrediction,
    tau_ps,
    params: SpdcSourceParams,
    skew_offset_ps: float = 0.0,
    visibility_scale: float = 1.0,
):
    """Coincidence rate (cps) in one output channel.

    ``pair_rate_cps`` is the rate of detected pairs leaving the multiport,
    so the channel baseline is ``pair_rate_cps * p_dist``.
    """
    tau = np.asarray(tau_ps, dtype=float) - skew_offset_ps
    p = coincidence_probability(pred, tau, params.coherence_time_ps, visibility_scale)
    return params.pair_rate_cps * p


def beat_envelope(tau_ps, beat_period_ps: float, pulse_width_ps: float):
    """Bimodal HOM envelope ``cos^2(pi tau / T) exp(-tau^2 / 2 s^2)``."""
    t = np.asarray(tau_ps, dtype=float)
    return np.cos(np.pi * t / beat_period_ps) ** 2 * np.exp(-0.5 * (t / pulse_width_ps) ** 2)


def expected_laser_rate(tau_ps, params: LaserSourceParams, skew_offset_ps: float = 0.0):
    """Drift-averaged coincidence rate ``R_inf [1 - G_HOM / 2]`` (cps)."""
    g = beat_envelope(np.asarray(tau_ps, dtype=float) - skew_offset_ps,
                      params.beat_period_ps, params.pulse_width_ps)
    return params.asymptotic_coinc_rate_cps * (1.0 - 0.5 * g)


def accidental_rate(rate_a_cps: float, rate_b_cps: float, rep_rate_hz: float) -> float:
    if not rep_rate_hz > 0:
        raise DomainError(f"rep_rate_hz must be > 0, got {rep_rate_hz}")
    if rate_a_cps < 0 or rate_b_cps < 0:
        raise DomainError("singles rates must be >= 0")
    return rate_a_cps * rate_b_cps / rep_rate_hz


def curve_visibility(rates) -> float:
    """Michelson-style depth ``(max - min) / max`` of a sampled rate curve."""
    r = np.asarray(rates, dtype=float)
    hi = r.max()
    return 0.0 if hi <= 0 else float((hi - r.min()) / hi)


def centered_grid(center_ps: float, span_ps: float, step_ps: float) -> np.ndarray:
    if not span_ps > 0 or not step_ps > 0:
        raise ValidationError("span and step must be > 0")
    n = int(round(span_ps / step_ps))
    return center_ps + step_ps * (np.arange(n + 1) - n / 2.0)


def spdc_grid(center_ps: float = 0.0, scan_range_ps: float = 1.8, step_ps: float = 0.05) -> np.ndarray:
    return centered_grid(center_ps, scan_range_ps, step_ps)


def laser_coarse_grid(center_ps: float, params: LaserSourceParams) -> np.ndarray:
    """Step ``T/4`` across +-3 pulse widths."""
    return centered_grid(center_ps, 6.0 * params.pulse_width_ps, params.beat_period_ps / 4.0)


def laser_fine_grid(center_ps: float, params: LaserSourceParams) -> np.ndarray:
    """Step ``T/50`` across one beat period."""
    return centered_grid(center_ps, params.beat_period_ps, params.beat_period_ps / 50.0)


def sample_scan(
    rate_fn: Callable[[np.ndarray], np.ndarray],
    grid,
    integration_time_s,
    seed: int,
    channel: str = "",
    source_kind: str = "spdc",
    skew_offset_ps: float | None = None,
    metadata: dict | None = None,
    source_params=None,
) -> ScanRecord:
    """Poisson-sample ``rate_fn(grid) * integration_time`` at every grid point."""
    grid = np.asarray(grid, dtype=float)
    _check_grid(grid)
    t = np.broadcast_to(np.asarray(integration_time_s, dtype=float), grid.shape).copy()
    mean = np.asarray(rate_fn(grid), dtype=float) * t
    if np.any(mean < 0) or not np.all(np.isfinite(mean)):
        raise DomainError("expected counts must be finite and >= 0")
    rng = np.random.default_rng(seed)
    counts = rng.poisson(mean).astype(np.int64)
    return ScanRecord(
        delay_grid_ps=grid,
        channel=channel,
        counts=counts,
        integration_time_s=t,
        source_kind=source_kind,
        skew_offset_ps=skew_offset_ps,
        seed=seed,
        source_params=source_params,
        metadata=dict(metadata or {}),
    )


def subtract_accidentals(record: ScanRecord, accidental_cps: float) -> ScanRecord:
    """Remove the expected accidental counts, keeping a per-point variance.

    The variance is ``raw counts + accidental expectation`` (difference of
    independent Poisson quantities).  Negative corrected values are kept
    and counted in ``metadata["negative_points"]``.
    """
    if accidental_cps < 0:
        raise DomainError("accidental rate must be >= 0")
    if accidental_cps == 0:
        return record
    acc = accidental_cps * record.integration_time_s
    raw = np.asarray(record.counts, dtype=float)
    base_var = raw if record.variance is None else record.variance
    corrected = raw - acc
    meta = dict(record.metadata)
    meta["accidentals_subtracted_cps"] = float(accidental_cps)
    meta["negative_points"] = int(np.sum(corrected < 0))
    return replace(record, counts=corrected, variance=base_var + acc, metadata=meta)


# -- serialization ---------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def sidecar_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_scan(record: ScanRecord, csv_path) -> tuple[Path, Path]:
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for d, c, t in zip(record.delay_grid_ps, record.counts, record.integration_time_s):
            w.writerow((_num(d), _num(c), _num(t)))
    side = {
        "format": SCAN_FORMAT,
        "tool_version": __version__,
        "channel": record.channel,
        "source_kind": record.source_kind,
        "counts_dtype": "int" if record.counts.dtype.kind in "iu" else "float",
        "seed": record.seed,
        "skew_offset_ps": record.skew_offset_ps,
        "source_params": record.source_params,
        "variance": None if record.variance is None else [float(v) for v in record.variance],
        "metadata": record.metadata,
    }
    jpath = sidecar_path(csv_path)
    with open(jpath, "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, jpath


def read_scan(csv_path) -> ScanRecord:
    csv_path = Path(csv_path)
    jpath = sidecar_path(csv_path)
    side = {}
    if jpath.exists():
        with open(jpath) as fh:
            side = json.load(fh)
        if side.get("format") != SCAN_FORMAT:
            raise ValidationError(f"{jpath}: unrecognised sidecar format {side.get('format')!r}")
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise ValidationError(f"{csv_path}: expected header {','.join(CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    try:
        grid = np.array([float(r[0]) for r in body])
        if side.get("counts_dtype", "float") == "int":
            counts = np.array([int(r[1]) for r in body], dtype=np.int64)
        else:
            counts = np.array([float(r[1]) for r in body])
        t = np.array([float(r[2]) for r in body])
    except (ValueError, IndexError) as exc:
        raise ValidationError(f"{csv_path}: malformed row ({exc})") from exc
    var = side.get("variance")
    return ScanRecord(
        delay_grid_ps=grid,
        channel=side.get("channel", csv_path.stem),
        counts=counts,
        integration_time_s=t,
        source_kind=side.get("source_kind", "spdc"),
        skew_offset_ps=side.get("skew_offset_ps"),
        variance=None if var is None else np.array(var, dtype=float),
        seed=side.get("seed"),
        source_params=side.get("source_params"),
        metadata=dict(side.get("metadata") or {}),
    )


def default_integration_time(params: SpdcSourceParams, p_dist: float, n_points: int,
                             total_counts: float = 2.5e5) -> float:
    """Per-point dwell (s) giving roughly ``total_counts`` baseline counts per scan."""
    base = params.pair_rate_cps * p_dist
    if base <= 0:
        raise DomainError("zero baseline rate")
    return total_counts / (base * n_points)

