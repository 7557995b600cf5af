"""Pairwise inter-core skew from ordered-pair dip positions.

For input pair (j, k) the dip sits at ``d_jk = delta + tau_jk``; swapping
the inputs gives ``d_kj = delta - tau_jk``.  The difference cancels the arm
imbalance ``delta``, the sum measures it.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DomainError, IncompleteTableError, ValidationError

HALF = "half_difference"
FULL = "full_difference"
CONVENTIONS = (HALF, FULL)
CORES = (1, 2, 3, 4)


def unordered_pairs(cores=CORES) -> list[tuple[int, int]]:
    return list(itertools.combinations(cores, 2))


def ordered_pairs(cores=CORES) -> list[tuple[int, int]]:
    return list(itertools.permutations(cores, 2))


def pair_label(pair) -> str:
    return f"{pair[0]}-{pair[1]}"


def parse_pair(label: str) -> tuple[int, int]:
    try:
        a, b = (int(p) for p in str(label).replace("_", "-").split("-"))
    except ValueError as exc:
        raise ValidationError(f"bad pair label {label!r}; expected 'j-k'") from exc
    if a == b:
        raise ValidationError(f"pair {label!r} repeats a core")
    return a, b


@dataclass
class DipEntry:
    position_ps: float
    sigma_ps: float


@dataclass
class DipTable:
    entries: dict[tuple[int, int], DipEntry] = field(default_factory=dict)

    def __post_init__(self):
        for (j, k), e in self.entries.items():
            if j == k:
                raise ValidationError(f"ordered pair ({j},{k}) repeats a core")
            if not e.sigma_ps > 0:
                raise ValidationError(f"sigma for {j}-{k} must be > 0")

    @classmethod
    def from_positions(cls, positions: dict, sigma_ps: float) -> "DipTable":
        return cls({tuple(k): DipEntry(float(v), float(sigma_ps)) for k, v in positions.items()})

    def complete_pairs(self) -> list[tuple[int, int]]:
        cores = sorted({c for p in self.entries for c in p})
        return [(j, k) for j, k in itertools.combinations(cores, 2)
                if (j, k) in self.entries and (k, j) in self.entries]

    def missing_orderings(self, cores=CORES) -> list[tuple[int, int]]:
        return [p for p in ordered_pairs(cores) if p not in self.entries]


@dataclass
class IcsEntry:
    magnitude_ps: float
    sigma_ps: float


@dataclass
class IcsTable:
    entries: dict[tuple[int, int], IcsEntry] = field(default_factory=dict)
    convention: str = HALF

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValidationError(f"unknown convention {self.convention!r}")
        for p, e in self.entries.items():
            if e.magnitude_ps < 0:
                raise ValidationError(f"negative magnitude for {pair_label(p)}")

    def missing_pairs(self, cores=CORES) -> list[tuple[int, int]]:
        return [p for p in unordered_pairs(cores) if p not in self.entries]

    @property
    def is_complete(self) -> bool:
        return not self.missing_pairs()


@dataclass
class ArmImbalanceReport:
    delta_ps: dict[tuple[int, int], float]
    spread_ps: float
    tolerance_ps: float
    consistent: bool

    @property
    def mean_delta_ps(self) -> float:
        return sum(self.delta_ps.values()) / len(self.delta_ps)


def combine_uncertainty(sigma_fit_ps: float, sigma_cal_ps: float) -> float:
    if sigma_fit_ps < 0 or sigma_cal_ps < 0:
        raise DomainError("uncertainties must be >= 0")
    return math.hypot(sigma_fit_ps, sigma_cal_ps)


def pairwise_skew(d_jk: float | None, d_kj: float | None, sigma_d: float, convention: str = HALF) -> IcsEntry:
    """Skew magnitude from both orderings of one core pair.

    ``half_difference``: ``|d_jk - d_kj| / 2`` with sigma ``sigma_d / sqrt 2``.
    ``full_difference``: ``|d_jk - d_kj|`` with sigma ``sigma_d sqrt 2``.
    """
    if d_jk is None or d_kj is None:
        raise IncompleteTableError("both input orderings are required")
    if convention == HALF:
        return IcsEntry(abs(d_jk - d_kj) / 2.0, sigma_d / math.sqrt(2.0))
    if convention == FULL:
        return IcsEntry(abs(d_jk - d_kj), sigma_d * math.sqrt(2.0))
    raise ValidationError(f"unknown convention {convention!r}")


def ics_table(dips: DipTable, convention: str = HALF, allow_partial: bool = False) -> IcsTable:
    """Build the unordered-pair skew table.

    A pair's sigma_d is the quadrature mean of its two dip sigmas, which
    reduces to the common sigma when both readings share it.
    """
    missing = dips.missing_orderings()
    if missing and not allow_partial:
        raise IncompleteTableError(
            "missing input orderings: " + ", ".join(pair_label(p) for p in missing), missing
        )
    out = {}
    for j, k in dips.complete_pairs():
        a, b = dips.entries[(j, k)], dips.entries[(k, j)]
        sigma_d = math.sqrt(0.5 * (a.sigma_ps**2 + b.sigma_ps**2))
        out[(j, k)] = pairwise_skew(a.position_ps, b.position_ps, sigma_d, convention)
    if not out:
        raise IncompleteTableError("no core pair was measured in both orderings", missing)
    return IcsTable(out, convention)


def arm_imbalance(dips: DipTable, tolerance_ps: float | None = None) -> ArmImbalanceReport:
    """Per-pair ``delta = (d_jk + d_kj) / 2`` and their spread.

    Default tolerance is three times the largest dip sigma.
    """
    pairs = dips.complete_pairs()
    if not pairs:
        raise IncompleteTableError("no core pair was measured in both orderings", dips.missing_orderings())
    delta = {
        (j, k): 0.5 * (dips.entries[(j, k)].position_ps + dips.entries[(k, j)].position_ps)
        for j, k in pairs
    }
    spread = max(delta.values()) - min(delta.values())
    if tolerance_ps is None:
        tolerance_ps = 3.0 * max(e.sigma_ps for e in dips.entries.values())
    return ArmImbalanceReport(delta, spread, tolerance_ps, spread <= tolerance_ps)


def rms_skew(ics: IcsTable, allow_partial: bool = False) -> tuple[float, float]:
    """RMS over the table's pairs; sigma is the mean entry sigma over sqrt(6)."""
    missing = ics.missing_pairs()
    if missing and not allow_partial:
        raise IncompleteTableError(
            "incomplete skew table, missing pairs: " + ", ".join(pair_label(p) for p in missing), missing
        )
    if not ics.entries:
        raise IncompleteTableError("empty skew table", missing)
    mags = [e.magnitude_ps for e in ics.entries.values()]
    sig = [e.sigma_ps for e in ics.entries.values()]
    n = len(mags)
    rms = math.sqrt(sum(m * m for m in mags) / n)
    return rms, (sum(sig) / n) / math.sqrt(n)


# -- table files ---------------------------------------------------------------

DIP_HEADER = ("pair", "position_ps", "sigma_ps")
ICS_HEADER = ("pair", "magnitude_ps", "sigma_ps")


def write_dip_csv(dips: DipTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIP_HEADER)
        for p in sorted(dips.entries):
            e = dips.entries[p]
            w.writerow((pair_label(p), repr(e.position_ps), repr(e.sigma_ps)))
    return path


def read_dip_csv(path, default_sigma_ps: float | None = None) -> DipTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for row in rows:
        if "pair" not in row or "position_ps" not in row:
            raise ValidationError(f"{path}: expected columns {','.join(DIP_HEADER)}")
        pair = parse_pair(row["pair"])
        if pair in out:
            raise ValidationError(f"{path}: duplicate pair {row['pair']}")
        sigma = row.get("sigma_ps") or default_sigma_ps
        if sigma in (None, ""):
            raise ValidationError(f"{path}: no sigma for pair {row['pair']}")
        out[pair] = DipEntry(float(row["position_ps"]), float(sigma))
    return DipTable(out)


def write_ics_csv(ics: IcsTable, path) -> Path:
    """Unordered-pair table with a trailing RMS row (or no RMS row if empty)."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ICS_HEADER)
        for p in sorted(ics.entries):
            e = ics.entries[p]
            w.writerow((pair_label(p), repr(e.magnitude_ps), repr(e.sigma_ps)))
        rms, srms = rms_skew(ics, allow_partial=True)
        w.writerow(("RMS", repr(rms), repr(srms)))
    return path


def read_ics_csv(path, convention: str = HALF) -> IcsTable:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = {}
    for row in rows:
        if row["pair"] == "RMS":
            continue
        out[parse_pair(row["pair"])] = IcsEntry(float(row["magnitude_ps"]), float(row["sigma_ps"]))
    return IcsTable(out, convention)


def tables_to_json(dips: DipTable, ics: IcsTable, imbalance: ArmImbalanceReport) -> dict:
    rms, srms = rms_skew(ics, allow_partial=True)
    return {
        "convention": ics.convention,
        "dips": {pair_label(p): {"position_ps": e.position_ps, "sigma_ps": e.sigma_ps}
                 for p, e in sorted(dips.entries.items())},
        "missing_orderings": [pair_label(p) for p in dips.missing_orderings()],
        "ics": {pair_label(p): {"magnitude_ps": e.magnitude_ps, "sigma_ps": e.sigma_ps}
                for p, e in sorted(ics.entries.items())},
        "missing_pairs": [pair_label(p) for p in ics.missing_pairs()],
        "n_pairs": len(ics.entries),
        "rms_ps": rms,
        "sigma_rms_ps": srms,
        "arm_imbalance": {
            "delta_ps": {pair_label(p): v for p, v in sorted(imbalance.delta_ps.items())},
            "mean_delta_ps": imbalance.mean_delta_ps,
            "spread_ps": imbalance.spread_ps,
            "tolerance_ps": imbalance.tolerance_ps,
            "consistent": imbalance.consistent,
        },
    }


def write_json(obj, path) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
