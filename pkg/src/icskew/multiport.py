"""Two-photon interference in a real 4x4 multiport beam splitter.

Input ports are labelled 1..4 and output ports A..D.  Output ``l`` receives
``b_l^dag = sum_k U[l, k] a_k^dag``, so row index = output, column = input.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, ValidationError

INPUT_LABELS = (1, 2, 3, 4)
OUTPUT_LABELS = ("A", "B", "C", "D")
# row relabelling under which inputs (3, 4) peak at AB and CD
DEVICE_OUTPUT_LABELS = ("A", "C", "B", "D")


@dataclass(frozen=True)
class MultiportUnitary:
    entries: np.ndarray
    output_labels: tuple[str, ...] = OUTPUT_LABELS

    def __post_init__(self):
        m = np.array(self.entries, dtype=float)
        if m.shape != (4, 4):
            raise ValidationError(f"multiport matrix must be 4x4, got {m.shape}")
        if np.max(np.abs(m @ m.T - np.eye(4))) > 1e-12:
            raise ValidationError("multiport matrix is not orthogonal (U U^T != I)")
        if len(self.output_labels) != 4 or len(set(self.output_labels)) != 4:
            raise ValidationError("need four distinct output labels")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)
        object.__setattr__(self, "output_labels", tuple(self.output_labels))

    def with_labels(self, labels: Sequence[str]) -> "MultiportUnitary":
        """Relabel matrix rows; absorbs the output permutation of a real device."""
        return MultiportUnitary(self.entries, tuple(labels))


@dataclass(frozen=True)
class ChannelPrediction:
    output_pair: str  # e.g. "AC", letters in row order
    kind: str  # "dip" or "peak"
    ideal_visibility: float
    p_dist: float
    inputs: tuple[int, int] = field(default=(1, 2))


def hadamard_unitary() -> MultiportUnitary:
    """Sylvester Hadamard H2 (x) H2 with entries +-1/2."""
    h2 = np.array([[1.0, 1.0], [1.0, -1.0]])
    return MultiportUnitary(0.5 * np.kron(h2, h2))


def _check_inputs(inputs) -> tuple[int, int]:
    i, j = (int(x) for x in inputs)
    if i not in INPUT_LABELS or j not in INPUT_LABELS:
        raise ValidationError(f"input labels must be in {INPUT_LABELS}, got {inputs}")
    if i == j:
        raise ValidationError(f"two distinct inputs required, got ({i}, {j})")
    return i, j


def output_pairs(U: MultiportUnitary | None = None) -> list[str]:
    labels = OUTPUT_LABELS if U is None else U.output_labels
    return [a + b for a, b in itertools.combinations(labels, 2)]


def classify_output_pairs(U: MultiportUnitary, inputs) -> list[ChannelPrediction]:
    """Predict dip/peak character of all six coincidence channels.

    The visibility comes from the bosonic two-photon amplitude
    ``U_ki U_lj + U_li U_kj``: a vanishing sum suppresses coincidences
    (dip, V = +1) and an in-phase sum doubles them (peak, V = -1).
    """
    i, j = _check_inputs(inputs)
    ci, cj = i - 1, j - 1
    m = U.entries
    out = []
    for k, l in itertools.combinations(range(4), 2):
        direct = m[k, ci] * m[l, cj]
        exchange = m[l, ci] * m[k, cj]
        p_dist = direct**2 + exchange**2
        if p_dist <= 0.0:
            raise DomainError(f"channel {U.output_labels[k]}{U.output_labels[l]} has zero coincidence probability")
        vis = 1.0 - (direct + exchange) ** 2 / p_dist
        kind = "dip" if vis > 0 else "peak"
        out.append(
            ChannelPrediction(
                output_pair=U.output_labels[k] + U.output_labels[l],
                kind=kind,
                ideal_visibility=float(vis),
                p_dist=float(p_dist),
                inputs=(i, j),
            )
        )
    return out


def channel_map(U: MultiportUnitary, inputs) -> dict[str, ChannelPrediction]:
    return {p.output_pair: p for p in classify_output_pairs(U, inputs)}


def coincidence_probability(
    pred: ChannelPrediction,
    tau,
    coherence_time: float,
    visibility_scale: float = 1.0,
):
    """Coincidence probability ``p_dist [1 - s V exp(-tau^2 / 2 sigma^2)]``.

    ``tau`` may be a scalar or an array (ps).
    """
    if not coherence_time > 0:
        raise DomainError(f"coherence_time must be > 0, got {coherence_time}")
    if not 0.0 <= visibility_scale <= 1.0:
        raise DomainError(f"visibility_scale must be in [0, 1], got {visibility_scale}")
    t = np.asarray(tau, dtype=float)
    env = np.exp(-0.5 * (t / coherence_time) ** 2)
    p = pred.p_dist * (1.0 - visibility_scale * pred.ideal_visibility * env)
    return float(p) if p.ndim == 0 else p


def channel_visibility_scale(
    channel: str, default: float, per_channel: Mapping[str, float] | None = None
) -> float:
    if per_channel and channel in per_channel:
        return float(per_channel[channel])
    return float(default)


def distinguishable_normalization(U: MultiportUnitary, inputs) -> float:
    """Total probability for distinguishable photons (coincidence + same port)."""
    i, j = _check_inputs(inputs)
    m = U.entries
    coinc = sum(p.p_dist for p in classify_output_pairs(U, (i, j)))
    bunched = float(np.sum(m[:, i - 1] ** 2 * m[:, j - 1] ** 2))
    return coinc + bunched


def indistinguishable_normalization(U: MultiportUnitary, inputs) -> float:
    """Total probability for indistinguishable photons at zero delay."""
    i, j = _check_inputs(inputs)
    a, b = U.entries[:, i - 1], U.entries[:, j - 1]
    coinc = sum((a[k] * b[l] + a[l] * b[k]) ** 2 for k, l in itertools.combinations(range(4), 2))
    bunched = float(np.sum(2.0 * (a * b) ** 2))
    return float(coinc) + bunched


__all__ = [
    "ChannelPrediction",
    "MultiportUnitary",
    "channel_map",
    "channel_visibility_scale",
    "classify_output_pairs",
    "coincidence_probability",
    "distinguishable_normalization",
    "hadamard_unitary",
    "indistinguishable_normalization",
    "output_pairs",
]
