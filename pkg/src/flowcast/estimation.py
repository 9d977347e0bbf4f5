"""Weighted maximum-likelihood estimation of quarterly transition matrices and shares.

The estimator is the classic ratio of weighted flow counts: entry ``(i, j)``
of the quarter-``t`` matrix is the summed weight of observed ``i -> j`` moves
divided by the summed weight of everyone observed in ``i`` at ``t-1``. Shares
are weighted state frequencies within a quarter.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyQuarter, WindowNotCovered, ZeroRowFallback
from .markov import (
    FIVE_STATES,
    QuarterId,
    ShareVector,
    StateSpace,
    TransitionMatrix,
    quarter_range,
)
from .panel import (
    PanelArrays,
    PersonQuarterRecord,
    SubgroupFilter,
    TransitionArrays,
    TransitionRecord,
)


@dataclass(frozen=True)
class FlowCounts:
    """Weighted transition counts behind one quarter's matrix estimate.

    ``counts[i, j]`` is the summed weight of ``i -> j`` moves into ``period``;
    ``row_totals[i]`` is the corresponding origin-state mass (the row sum by
    construction). ``sumsq`` holds per-cell sums of squared weights so that
    effective sample sizes ``(sum w)^2 / sum w^2`` can be reported.
    """

    space: StateSpace
    period: QuarterId
    counts: np.ndarray
    sumsq: np.ndarray
    fallback_rows: tuple[int, ...] = ()

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def effective_sample_sizes(self) -> np.ndarray:
        """Per-cell (sum w)^2 / sum w^2, zero where the cell is empty."""
        with np.errstate(divide="ignore", invalid="ignore"):
            ess = np.where(self.sumsq > 0, self.counts**2 / self.sumsq, 0.0)
        return ess


def _counts_from_arrays(tr: TransitionArrays) -> tuple[np.ndarray, np.ndarray]:
    k = tr.space.k
    code = tr.from_state.astype(np.int64) * k + tr.to_state
    counts = np.bincount(code, weights=tr.weight, minlength=k * k).reshape(k, k)
    sumsq = np.bincount(code, weights=tr.weight**2, minlength=k * k).reshape(k, k)
    return counts, sumsq


def estimate_matrix(
    transitions: Sequence[TransitionRecord] | TransitionArrays,
    space: StateSpace = FIVE_STATES,
    period: QuarterId | None = None,
) -> tuple[TransitionMatrix, FlowCounts]:
    """Estimate one quarter's transition matrix from its linked transitions.

    All transitions must belong to a single destination quarter. States with no
    observed leavers get an identity row (fully persistent for the quarter);
    this is loud: a :class:`ZeroRowFallback` warning fires and the row indices
    are recorded on the returned :class:`FlowCounts`.
    """
    if not isinstance(transitions, TransitionArrays):
        transitions = TransitionArrays.from_records(transitions, space)
    if len(transitions) == 0:
        raise EmptyQuarter("no transitions to estimate from")
    qidx = np.unique(transitions.qidx)
    if qidx.shape[0] > 1:
        raise ValueError(
            f"transitions span several quarters: {[str(QuarterId.from_index(int(q))) for q in qidx]}"
        )
    found = QuarterId.from_index(int(qidx[0]))
    if period is not None and period != found:
        raise ValueError(f"transitions are at {found}, expected {period}")
    period = found

    counts, sumsq = _counts_from_arrays(transitions)
    totals = counts.sum(axis=1)
    entries = np.empty_like(counts)
    fallback = np.flatnonzero(totals <= 0.0)
    for i in fallback:
        entries[i] = 0.0
        entries[i, i] = 1.0
    ok = totals > 0.0
    entries[ok] = counts[ok] / totals[ok, None]
    if fallback.size:
        labels = [transitions.space.labels[int(i)] for i in fallback]
        warnings.warn(
            f"{period}: no observed leavers from {labels}; identity rows substituted",
            ZeroRowFallback,
            stacklevel=2,
        )
    matrix = TransitionMatrix(transitions.space, entries, period)
    return matrix, FlowCounts(transitions.space, period, counts, sumsq,
                              tuple(int(i) for i in fallback))


def estimate_shares(
    records: Sequence[PersonQuarterRecord] | tuple[np.ndarray, np.ndarray],
    space: StateSpace = FIVE_STATES,
    period: QuarterId | None = None,
) -> ShareVector:
    """Weighted state shares for one quarter: share(k) = sum w in k / sum w."""
    if isinstance(records, tuple):
        state, weight = records
        if period is None:
            raise ValueError("period is required with array input")
    else:
        if not records:
            raise EmptyQuarter("no records to estimate shares from")
        periods = {r.period for r in records}
        if len(periods) > 1:
            raise ValueError(f"records span several quarters: {sorted(map(str, periods))}")
        found = periods.pop()
        if period is not None and period != found:
            raise ValueError(f"records are at {found}, expected {period}")
        period = found
        state = np.fromiter((space.index(r.state) for r in records), np.int8, count=len(records))
        weight = np.fromiter((r.weight for r in records), np.float64, count=len(records))
    if state.shape[0] == 0:
        raise EmptyQuarter(f"no records in {period}")
    mass = np.bincount(state, weights=weight, minlength=space.k)
    return ShareVector(space, mass / mass.sum(), period)


@dataclass
class QuarterSeries:
    """Per-quarter estimates over a window, plus the samples they came from.

    ``matrices[q]`` describes the ``[q-1, q]`` transition, so a window of
    ``n`` quarters yields ``n`` share vectors and ``n - 1`` matrices. The raw
    per-quarter samples (state codes / transition arrays) are retained so that
    resampling-based inference can re-estimate everything.
    """

    space: StateSpace
    shares: dict[QuarterId, ShareVector]
    matrices: dict[QuarterId, TransitionMatrix]
    counts: dict[QuarterId, FlowCounts]
    state_samples: dict[QuarterId, tuple[np.ndarray, np.ndarray]]
    transition_samples: dict[QuarterId, TransitionArrays]
    meta: dict = field(default_factory=dict)

    @property
    def first_quarter(self) -> QuarterId:
        return min(self.shares)

    @property
    def last_quarter(self) -> QuarterId:
        return max(self.shares)

    def entry_series(self, from_state: str, to_state: str,
                     quarters: Sequence[QuarterId]) -> np.ndarray:
        i, j = self.space.index(from_state), self.space.index(to_state)
        return np.array([self.matrices[q].entries[i, j] for q in quarters])

    def export_dir(self, outdir: str | Path) -> None:
        """Write shares.csv, one matrix_<period>.csv per quarter, and meta.json."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "shares.csv", "w", encoding="utf-8") as fh:
            fh.write("period," + ",".join(self.space.labels) + "\n")
            for q in sorted(self.shares):
                row = ",".join(repr(float(v)) for v in self.shares[q].values)
                fh.write(f"{q},{row}\n")
        for q in sorted(self.matrices):
            self.matrices[q].to_csv(outdir / f"matrix_{q}.csv")
        with open(outdir / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)
            fh.write("\n")


def build_series(
    panel: Sequence[PersonQuarterRecord] | PanelArrays,
    space: StateSpace = FIVE_STATES,
    window: tuple[QuarterId, QuarterId] | None = None,
    subgroup: SubgroupFilter | None = None,
    weight_from: str = "destination",
) -> QuarterSeries:
    """Estimate shares for every quarter in the window and matrices for pairs.

    The subgroup filter (if any) is applied to person-quarters before linking.
    ``window`` defaults to the panel's full span and must be covered by data:
    an empty quarter anywhere in the window raises :class:`EmptyQuarter`.
    """
    if not isinstance(panel, PanelArrays):
        panel = PanelArrays.from_records(panel, space)
    if subgroup is not None:
        panel = panel.filtered(subgroup)
    if len(panel) == 0:
        raise EmptyQuarter("panel is empty (after filtering)")

    if window is None:
        qs = panel.quarters()
        window = (qs[0], qs[-1])
    start, end = window
    quarters = quarter_range(start, end)
    lo, hi = panel.qidx.min(), panel.qidx.max()
    if start.index() < lo or end.index() > hi:
        raise WindowNotCovered(
            f"window {start}..{end} not covered by data "
            f"({QuarterId.from_index(int(lo))}..{QuarterId.from_index(int(hi))})"
        )

    transitions = panel.link(weight_from=weight_from)

    shares: dict[QuarterId, ShareVector] = {}
    matrices: dict[QuarterId, TransitionMatrix] = {}
    counts: dict[QuarterId, FlowCounts] = {}
    state_samples: dict[QuarterId, tuple[np.ndarray, np.ndarray]] = {}
    transition_samples: dict[QuarterId, TransitionArrays] = {}
    sample_sizes: dict[str, dict] = {}
    warn_log: list[str] = []

    for q in quarters:
        state, weight = panel.states_at(q)
        if state.shape[0] == 0:
            raise EmptyQuarter(f"no observations in {q}")
        shares[q] = estimate_shares((state, weight), space, q)
        state_samples[q] = (state, weight)
        wsum = float(weight.sum())
        sample_sizes[str(q)] = {
            "observations": int(state.shape[0]),
            "weight_sum": wsum,
            "ess": float(wsum**2 / float((weight**2).sum())),
        }

    for q in quarters[1:]:
        tr = transitions.at(q)
        if len(tr) == 0:
            raise EmptyQuarter(f"no linked transitions into {q}")
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ZeroRowFallback)
            matrices[q], counts[q] = estimate_matrix(tr, space, q)
        for w in caught:
            if issubclass(w.category, ZeroRowFallback):
                warn_log.append(str(w.message))
                warnings.warn(w.message, ZeroRowFallback, stacklevel=2)
        transition_samples[q] = tr
        sample_sizes[str(q)]["transitions"] = int(len(tr))

    meta = {
        "window": [str(start), str(end)],
        "subgroup": subgroup.name if subgroup is not None else "all",
        "weight_from": weight_from,
        "sample_sizes": sample_sizes,
        "warnings": warn_log,
    }
    return QuarterSeries(space, shares, matrices, counts, state_samples,
                         transition_samples, meta)
