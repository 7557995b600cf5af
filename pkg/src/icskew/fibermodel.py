"""Skew accumulation along a multicore fiber.

Deterministic group delays plus a Monte Carlo random-walk ensemble with
connector-induced step offsets.

Seeding rule for ensembles: trial ``t`` draws from
``np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(t,)))``,
the same stream ``SeedSequence(seed).spawn(n)[t]`` would give.  Trials are
therefore independent and their results do not depend on evaluation order.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, ValidationError

SPEED_OF_LIGHT_M_S = 299_792_458.0
PS_PER_S = 1e12


@dataclass(frozen=True)
class FiberSpec:
    length_m: float
    group_indices: tuple[float, ...] = (1.468, 1.468, 1.468, 1.468)

    def __post_init__(self):
        if not self.length_m > 0:
            raise DomainError(f"fiber length must be > 0, got {self.length_m}")
        if any(not n > 1 for n in self.group_indices):
            raise DomainError("group indices must all exceed 1")
        object.__setattr__(self, "group_indices", tuple(float(n) for n in self.group_indices))

    def core_delays_ps(self) -> np.ndarray:
        return np.array([absolute_delay(self.length_m, n) for n in self.group_indices])


@dataclass(frozen=True)
class SkewSample:
    pair: tuple[int, int]
    skew_ps: float

    def reversed(self) -> "SkewSample":
        return SkewSample((self.pair[1], self.pair[0]), -self.skew_ps)


@dataclass(frozen=True)
class RandomWalkParams:
    step_length_m: float = 0.1
    step_std_ps: float = 0.1
    connector_positions_m: tuple[float, ...] = ()
    connector_offset_std_ps: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.step_length_m > 0:
            raise DomainError("step_length_m must be > 0")
        if self.step_std_ps < 0 or self.connector_offset_std_ps < 0:
            raise DomainError("standard deviations must be >= 0")
        pos = tuple(float(p) for p in self.connector_positions_m)
        if any(p < 0 for p in pos) or list(pos) != sorted(pos):
            raise ValidationError("connector positions must be sorted and non-negative")
        object.__setattr__(self, "connector_positions_m", pos)


@dataclass
class WalkEnsemble:
    """Ensemble RMS skew per length.

    ``rms_ps`` is the quadratic mean over trials and the six core pairs;
    ``stderr_ps`` is its delta-method standard error.  ``mean_trial_rms_ps``
    averages the per-trial RMS instead (biased low by Jensen's inequality).
    """

    lengths_m: np.ndarray
    rms_ps: np.ndarray
    stderr_ps: np.ndarray
    mean_trial_rms_ps: np.ndarray
    n_trials: int
    params: RandomWalkParams = field(repr=False, default=None)

    def rows(self):
        for row in zip(self.lengths_m, self.rms_ps, self.stderr_ps, self.mean_trial_rms_ps):
            yield tuple(float(x) for x in row)


def absolute_delay(length_m: float, group_index: float) -> float:
    """Group delay ``L n_g / c`` in ps."""
    if length_m < 0:
        raise DomainError(f"length must be >= 0, got {length_m}")
    return length_m * group_index / SPEED_OF_LIGHT_M_S * PS_PER_S


def deterministic_skew(length_m: float, n_gj: float, n_gk: float, pair=(1, 2)) -> SkewSample:
    if length_m < 0:
        raise DomainError(f"length must be >= 0, got {length_m}")
    skew = length_m / SPEED_OF_LIGHT_M_S * (n_gj - n_gk) * PS_PER_S
    return SkewSample(tuple(pair), skew)


def pairwise_differences(delays: np.ndarray) -> np.ndarray:
    """Signed ``tau_j - tau_k`` for every j < k along the last axis."""
    n = delays.shape[-1]
    idx = list(itertools.combinations(range(n), 2))
    j = np.array([a for a, _ in idx])
    k = np.array([b for _, b in idx])
    return delays[..., j] - delays[..., k]


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def _walk_checkpoints(params: RandomWalkParams, lengths: np.ndarray):
    steps_at_length = np.rint(lengths / params.step_length_m).astype(np.int64)
    conn = np.asarray(params.connector_positions_m, dtype=float)
    steps_at_conn = np.rint(conn / params.step_length_m).astype(np.int64)
    marks = np.unique(np.concatenate([[0], steps_at_length, steps_at_conn]))
    return steps_at_length, steps_at_conn, marks


def simulate_trial(params: RandomWalkParams, lengths, n_cores: int, trial: int) -> np.ndarray:
    """Core delays (ps) at each length for one trial, shape ``(len(lengths), n_cores)``.

    Gaussian step increments are summed exactly between checkpoints: the
    sum of ``m`` i.i.d. N(0, s^2) steps is drawn as one N(0, m s^2) variate.
    A connector at position p adds a fixed per-core offset to every length
    at or beyond p.
    """
    lengths = np.asarray(lengths, dtype=float)
    rng = trial_rng(params.seed, trial)
    at_len, at_conn, marks = _walk_checkpoints(params, lengths)
    seg_steps = np.diff(marks)
    incr = rng.standard_normal((seg_steps.size, n_cores)) * (
        params.step_std_ps * np.sqrt(seg_steps)[:, None]
    )
    walk = np.vstack([np.zeros((1, n_cores)), np.cumsum(incr, axis=0)])
    delays = walk[np.searchsorted(marks, at_len)]
    if at_conn.size:
        offsets = rng.standard_normal((at_conn.size, n_cores)) * params.connector_offset_std_ps
        passed = at_conn[None, :] <= at_len[:, None]
        delays = delays + passed.astype(float) @ offsets
    return delays


def simulate_walk_ensemble(
    params: RandomWalkParams,
    lengths: Sequence[float],
    n_cores: int = 4,
    n_trials: int = 1000,
) -> WalkEnsemble:
    lengths = np.asarray(lengths, dtype=float)
    if lengths.size == 0:
        raise ValidationError("lengths list is empty")
    if np.any(lengths <= 0):
        raise DomainError("lengths must be > 0")
    if n_trials < 1:
        raise ValidationError("n_trials must be >= 1")
    if n_cores < 2:
        raise ValidationError("need at least two cores")
    ms = np.empty((n_trials, lengths.size))
    for t in range(n_trials):
        diffs = pairwise_differences(simulate_trial(params, lengths, n_cores, t))
        ms[t] = np.mean(diffs**2, axis=-1)

    mean_ms = ms.mean(axis=0)
    rms = np.sqrt(mean_ms)
    if n_trials > 1:
        se_ms = ms.std(axis=0, ddof=1) / math.sqrt(n_trials)
    else:
        se_ms = np.full(lengths.size, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.where(rms > 0, se_ms / (2.0 * rms), 0.0)
    return WalkEnsemble(
        lengths_m=lengths,
        rms_ps=rms,
        stderr_ps=se,
        mean_trial_rms_ps=np.sqrt(ms).mean(axis=0),
        n_trials=n_trials,
        params=params,
    )


def expected_walk_rms(params: RandomWalkParams, length_m: float) -> float:
    """Ensemble RMS pair skew without connectors: ``s sqrt(2 L / step)``."""
    n_steps = round(length_m / params.step_length_m)
    return params.step_std_ps * math.sqrt(2.0 * n_steps)


def kappa_from_step(params: RandomWalkParams) -> float:
    """Random-walk coefficient in ps/sqrt(m) implied by the step statistics."""
    return params.step_std_ps * math.sqrt(2.0 / params.step_length_m)
