"""Weighted resampling inference: standard errors, percentile CIs, zero tests.

The resampling scheme draws, within each quarter independently, N records with
replacement (N = that quarter's sample size) with selection probability
proportional to the sampling weight; the drawn records then carry weight one,
the weights having been consumed by the sampling step. Standard errors use the
population-style divisor B over replicate values; confidence intervals are
percentile intervals whose endpoints are order statistics; the zero test is
the two-sided percentile tail fraction.

Determinism: replicate ``k`` draws from a generator seeded by
``(master_seed, k)``, and aggregation runs in replicate order, so results are
bitwise identical at any parallelism degree.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import (
    EmptySample,
    FlowcastError,
    TooFewReplicates,
    TooManyFailedReplicates,
)
from .panel import TransitionRecord

MIN_REPLICATES = 100


@dataclass(frozen=True)
class BootstrapConfig:
    """Replicate count, master seed, pipeline mode, and CI level."""

    B: int = 999
    master_seed: int = 0
    mode: str = "full_pipeline"  # or "estimation_only"
    ci_level: float = 0.95

    def __post_init__(self) -> None:
        if self.B < 1:
            raise ValueError("B must be positive")
        if self.mode not in ("full_pipeline", "estimation_only"):
            raise ValueError(f"unknown bootstrap mode {self.mode!r}")
        if not 0.0 < self.ci_level < 1.0:
            raise ValueError("ci_level must be in (0, 1)")


@dataclass(frozen=True)
class BootstrapResult:
    point: float
    se: float
    ci_lo: float
    ci_hi: float
    p_value: float
    B_effective: int

    @property
    def significant(self) -> bool:
        """Zero lies outside the percentile interval."""
        return self.ci_lo > 0.0 or self.ci_hi < 0.0

    def to_dict(self) -> dict:
        return {
            "point": self.point,
            "se": self.se,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "p_value": self.p_value,
            "significant": self.significant,
            "B_effective": self.B_effective,
        }


def replicate_rng(master_seed: int, k: int) -> np.random.Generator:
    """The deterministic RNG stream of replicate ``k``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((master_seed, k))))


def resample_indices(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw ``len(weights)`` indices with replacement, probability ~ weight."""
    n = weights.shape[0]
    if n == 0:
        raise EmptySample("cannot resample an empty sample")
    if weights[0] == weights[-1] and np.all(weights == weights[0]):
        # equal weights: a uniform draw is exact and much cheaper
        return rng.integers(0, n, size=n)
    cum = np.cumsum(weights)
    return np.searchsorted(cum, rng.random(n) * cum[-1], side="right").clip(0, n - 1)


def resample(transitions: Sequence[TransitionRecord],
             seed: int | np.random.Generator) -> list[TransitionRecord]:
    """Weighted resample of one quarter's transitions; drawn records get weight 1."""
    if not transitions:
        raise EmptySample("cannot resample an empty sample")
    rng = seed if isinstance(seed, np.random.Generator) else replicate_rng(int(seed), 0)
    w = np.fromiter((t.weight for t in transitions), np.float64, count=len(transitions))
    idx = resample_indices(w, rng)
    return [replace(transitions[int(i)], weight=1.0) for i in idx]


def se_and_ci(replicate_values: Sequence[float], cfg: BootstrapConfig,
              point: float | None = None) -> BootstrapResult:
    """Aggregate replicate values into SE, percentile CI, and a zero test.

    ``point`` defaults to the replicate mean; pass the full-sample statistic
    when available. Non-finite replicate values are dropped (and excluded from
    ``B_effective``); fewer than 100 finite values raise.
    """
    values = np.asarray(replicate_values, dtype=float)
    values = values[np.isfinite(values)]
    b = values.shape[0]
    if b < MIN_REPLICATES:
        raise TooFewReplicates(f"need >= {MIN_REPLICATES} finite replicate values, got {b}")
    if values[0] == values.min() == values.max():
        mean, se = float(values[0]), 0.0  # degenerate distribution, exactly
    else:
        mean = float(values.mean())
        se = float(math.sqrt(np.sum((values - mean) ** 2) / b))

    ordered = np.sort(values)
    alpha = 1.0 - cfg.ci_level
    k_lo = max(1, math.floor((b + 1) * alpha / 2.0))
    k_hi = b + 1 - k_lo
    ci_lo = float(ordered[k_lo - 1])
    ci_hi = float(ordered[min(k_hi, b) - 1])

    frac_le = float(np.mean(values <= 0.0))
    frac_ge = float(np.mean(values >= 0.0))
    p_floor = 2.0 / (b + 1)
    p_value = min(1.0, max(p_floor, 2.0 * min(frac_le, frac_ge)))

    return BootstrapResult(
        point=mean if point is None else float(point),
        se=se,
        ci_lo=ci_lo,
        ci_hi=ci_hi,
        p_value=p_value,
        B_effective=b,
    )


def _group_by_quarter(panel: Sequence[TransitionRecord]) -> list[list[TransitionRecord]]:
    groups: dict[int, list[TransitionRecord]] = {}
    for rec in panel:
        groups.setdefault(rec.period.index(), []).append(rec)
    return [groups[k] for k in sorted(groups)]


def run(
    statistic: Callable[[list[TransitionRecord]], float],
    panel: Sequence[TransitionRecord],
    cfg: BootstrapConfig,
    threads: int = 1,
) -> BootstrapResult:
    """Bootstrap a scalar statistic of a transition panel.

    Each replicate resamples every quarter independently (quarter sizes are
    preserved), rebuilds the panel, and evaluates the statistic. Replicates
    that fail with a flowcast error are dropped and counted via
    ``B_effective``; more than 5% failures abort the run.
    """
    if not panel:
        raise EmptySample("empty panel")
    groups = _group_by_quarter(panel)
    weights = [
        np.fromiter((t.weight for t in grp), np.float64, count=len(grp)) for grp in groups
    ]
    point = statistic(list(panel))

    def one(k: int) -> float:
        rng = replicate_rng(cfg.master_seed, k)
        resampled: list[TransitionRecord] = []
        for grp, w in zip(groups, weights):
            idx = resample_indices(w, rng)
            resampled.extend(replace(grp[int(i)], weight=1.0) for i in idx)
        try:
            return float(statistic(resampled))
        except FlowcastError:
            return math.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = list(pool.map(one, range(cfg.B)))
    else:
        values = [one(k) for k in range(cfg.B)]

    failed = sum(1 for v in values if not math.isfinite(v))
    if failed > 0.05 * cfg.B:
        raise TooManyFailedReplicates(f"{failed} of {cfg.B} replicates failed")
    return se_and_ci(values, cfg, point=point)
