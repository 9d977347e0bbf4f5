"""State spaces, quarterly time axis, and exact Markov algebra.

Conventions used everywhere in this package:

* Transition matrices are **row-stochastic**: entry ``(i, j)`` is the
  probability of moving from state ``i`` (row) to state ``j`` (column)
  between two consecutive quarters.
* Population shares are **row vectors**; one period of dynamics is
  ``shares_t = shares_{t-1} @ matrix_t``.
* A matrix is stamped with the *destination* quarter of the transition it
  describes.

Construction tolerates violations of the sum-to-one constraints up to
``CONSTRUCT_TOL`` (results of floating-point arithmetic use the looser
``ARITHMETIC_TOL``); anything within tolerance is renormalized, anything
beyond it is rejected.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import reduce, total_ordering
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadQuarterFormat,
    EmptyChain,
    InvalidShareVector,
    InvalidTransitionMatrix,
    PeriodMismatch,
    StateSpaceMismatch,
)

#: tolerance for sum-to-one checks on user-constructed objects
CONSTRUCT_TOL = 1e-9
#: tolerance for objects produced by matrix arithmetic
ARITHMETIC_TOL = 1e-8

_QUARTER_RE = re.compile(r"^(\d{4})Q([1-4])$")


@total_ordering
@dataclass(frozen=True, slots=True)
class QuarterId:
    """A calendar quarter, totally ordered, with arithmetic by quarter count."""

    year: int
    quarter: int

    def __post_init__(self) -> None:
        if self.quarter not in (1, 2, 3, 4):
            raise BadQuarterFormat(f"quarter must be 1..4, got {self.quarter}")

    @classmethod
    def parse(cls, text: str) -> "QuarterId":
        """Parse the canonical ``YYYYQn`` form, e.g. ``2018Q3``."""
        m = _QUARTER_RE.match(text.strip())
        if m is None:
            raise BadQuarterFormat(f"not a valid quarter: {text!r} (expected YYYYQn)")
        return cls(int(m.group(1)), int(m.group(2)))

    @classmethod
    def from_index(cls, index: int) -> "QuarterId":
        return cls(index // 4, index % 4 + 1)

    def index(self) -> int:
        """Monotone integer encoding: 4*year + quarter - 1."""
        return 4 * self.year + self.quarter - 1

    def successor(self) -> "QuarterId":
        return QuarterId.from_index(self.index() + 1)

    def predecessor(self) -> "QuarterId":
        return QuarterId.from_index(self.index() - 1)

    def shift(self, quarters: int) -> "QuarterId":
        return QuarterId.from_index(self.index() + quarters)

    def __str__(self) -> str:
        return f"{self.year}Q{self.quarter}"

    def __lt__(self, other: "QuarterId") -> bool:
        return self.index() < other.index()


def quarter_range(start: QuarterId, end: QuarterId) -> list[QuarterId]:
    """All quarters from ``start`` to ``end`` inclusive."""
    if end < start:
        raise ValueError(f"empty quarter range {start}..{end}")
    return [QuarterId.from_index(i) for i in range(start.index(), end.index() + 1)]


@dataclass(frozen=True)
class StateSpace:
    """An ordered set of labour-market state labels."""

    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise ValueError("a state space needs at least two states")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate state labels: {self.labels}")
        if any(not lab for lab in self.labels):
            raise ValueError("state labels must be non-empty")

    @property
    def k(self) -> int:
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown state label {label!r} (space: {self.labels})") from None

    def __contains__(self, label: str) -> bool:
        return label in self.labels

    def __iter__(self):
        return iter(self.labels)


#: the canonical five-state labour-market space: self-employment, temporary
#: employment, permanent employment, unemployment, inactivity
FIVE_STATES = StateSpace(("SE", "TE", "PE", "U", "IN"))


def _require_same_space(a: StateSpace, b: StateSpace) -> None:
    if a != b:
        raise StateSpaceMismatch(f"state spaces differ: {a.labels} vs {b.labels}")


def _normalized(values: np.ndarray, tol: float, what: str, exc: type) -> np.ndarray:
    """Clip tiny negative noise, renormalize a within-tolerance vector to sum 1."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise exc(f"{what}: expected 1-D values, got shape {values.shape}")
    if np.any(~np.isfinite(values)):
        raise exc(f"{what}: non-finite entries")
    if np.any(values < -tol) or np.any(values > 1.0 + tol):
        raise exc(f"{what}: entries outside [0, 1]: {values}")
    total = float(values.sum())
    if abs(total - 1.0) > tol:
        raise exc(f"{what}: entries sum to {total!r}, violating the sum-to-one constraint")
    values = np.clip(values, 0.0, None)
    total = float(values.sum())
    # idempotent: values already normalized to float noise are stored as-is,
    # so construction round-trips (e.g. CSV write/read) bit-exactly
    if abs(total - 1.0) > 1e-14:
        values = values / max(total, np.finfo(float).tiny)
    return values


@dataclass(frozen=True)
class ShareVector:
    """Population shares across the states of one quarter (sums to one).

    ``period`` may be ``None`` for timeless vectors (e.g. stationary
    distributions); propagation requires a stamped period.
    """

    space: StateSpace
    values: np.ndarray
    period: QuarterId | None
    tol: float = field(default=CONSTRUCT_TOL, compare=False, repr=False)

    def __post_init__(self) -> None:
        values = _normalized(self.values, self.tol, "share vector", InvalidShareVector)
        if values.shape != (self.space.k,):
            raise InvalidShareVector(
                f"share vector has {values.shape[0]} entries for {self.space.k} states"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def share(self, label: str) -> float:
        return float(self.values[self.space.index(label)])

    def to_json_dict(self) -> dict:
        return {
            "space": list(self.space.labels),
            "period": None if self.period is None else str(self.period),
            "values": [float(v) for v in self.values],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ShareVector":
        period = obj.get("period")
        return cls(StateSpace(tuple(obj["space"])), np.asarray(obj["values"]),
                   None if period is None else QuarterId.parse(period))


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic quarterly transition probabilities.

    ``period`` is the destination quarter of the ``[t-1, t]`` transition; it
    may be ``None`` for free-standing matrices (e.g. equilibrium inputs) but
    must be set for anything that participates in a chain.
    """

    space: StateSpace
    entries: np.ndarray
    period: QuarterId | None = None
    tol: float = field(default=CONSTRUCT_TOL, compare=False, repr=False)

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.shape != (self.space.k, self.space.k):
            raise InvalidTransitionMatrix(
                f"expected a {self.space.k}x{self.space.k} matrix, got shape {entries.shape}"
            )
        rows = [
            _normalized(entries[i], self.tol, f"matrix row {self.space.labels[i]}",
                        InvalidTransitionMatrix)
            for i in range(self.space.k)
        ]
        entries = np.vstack(rows)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    def probability(self, from_state: str, to_state: str) -> float:
        return float(self.entries[self.space.index(from_state), self.space.index(to_state)])

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "space": list(self.space.labels),
            "period": None if self.period is None else str(self.period),
            "entries": [[float(v) for v in row] for row in self.entries],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "TransitionMatrix":
        period = obj.get("period")
        return cls(
            StateSpace(tuple(obj["space"])),
            np.asarray(obj["entries"]),
            None if period is None else QuarterId.parse(period),
        )

    def to_csv(self, path: str | Path) -> None:
        """Write as CSV: header row of state labels, rows labeled by origin state."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("state," + ",".join(self.space.labels) + "\n")
            for i, lab in enumerate(self.space.labels):
                fh.write(lab + "," + ",".join(repr(float(v)) for v in self.entries[i]) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path, period: QuarterId | None = None,
                 tol: float = CONSTRUCT_TOL) -> "TransitionMatrix":
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
        if not lines:
            raise InvalidTransitionMatrix(f"empty matrix file: {path}")
        header = lines[0].split(",")
        labels = tuple(h.strip() for h in header[1:])
        space = StateSpace(labels)
        entries = np.zeros((space.k, space.k))
        if len(lines) != space.k + 1:
            raise InvalidTransitionMatrix(
                f"{path}: expected {space.k} data rows, found {len(lines) - 1}"
            )
        for row_no, line in enumerate(lines[1:]):
            cells = [c.strip() for c in line.split(",")]
            if cells[0] != labels[row_no]:
                raise InvalidTransitionMatrix(
                    f"{path}: row {row_no + 1} labeled {cells[0]!r}, expected {labels[row_no]!r}"
                )
            entries[row_no] = [float(c) for c in cells[1:]]
        return cls(space, entries, period, tol=tol)


def share_vector_to_json(share: ShareVector) -> str:
    return json.dumps(share.to_json_dict())


def matrix_to_json(matrix: TransitionMatrix) -> str:
    return json.dumps(matrix.to_json_dict())


@dataclass(frozen=True)
class MatrixChain:
    """Transition matrices over strictly consecutive quarters, shared space."""

    matrices: tuple[TransitionMatrix, ...]

    def __post_init__(self) -> None:
        matrices = tuple(self.matrices)
        if not matrices:
            raise EmptyChain("a matrix chain needs at least one matrix")
        space = matrices[0].space
        for m in matrices:
            _require_same_space(space, m.space)
            if m.period is None:
                raise PeriodMismatch("chain matrices must carry a period")
        for prev, nxt in zip(matrices, matrices[1:]):
            if nxt.period != prev.period.successor():
                raise PeriodMismatch(
                    f"chain periods not consecutive: {prev.period} then {nxt.period}"
                )
        object.__setattr__(self, "matrices", matrices)

    @property
    def space(self) -> StateSpace:
        return self.matrices[0].space

    @property
    def first_period(self) -> QuarterId:
        return self.matrices[0].period

    @property
    def last_period(self) -> QuarterId:
        return self.matrices[-1].period

    def __len__(self) -> int:
        return len(self.matrices)

    def __iter__(self):
        return iter(self.matrices)


def propagate(shares: ShareVector, matrix: TransitionMatrix) -> ShareVector:
    """One quarter of dynamics: row vector times row-stochastic matrix.

    The matrix period must be the successor of the share period; the result is
    stamped with the matrix period.
    """
    _require_same_space(shares.space, matrix.space)
    if shares.period is None or matrix.period is None or matrix.period != shares.period.successor():
        raise PeriodMismatch(
            f"matrix period {matrix.period} is not the successor of {shares.period}"
        )
    values = shares.values @ matrix.entries
    return ShareVector(shares.space, values, matrix.period, tol=ARITHMETIC_TOL)


def propagate_path(shares: ShareVector, chain: MatrixChain) -> list[ShareVector]:
    """Fold :func:`propagate` over a chain, returning the share path."""
    path = []
    current = shares
    for m in chain:
        current = propagate(current, m)
        path.append(current)
    return path


def chain_product(chain: MatrixChain | Sequence[TransitionMatrix]) -> TransitionMatrix:
    """Ordered product of a chain: cumulative multi-quarter transition probabilities.

    The product of row-stochastic matrices is row-stochastic; the result keeps
    the space and is stamped with the last period of the chain.
    """
    if not isinstance(chain, MatrixChain):
        chain = MatrixChain(tuple(chain))
    product = reduce(np.matmul, (m.entries for m in chain))
    return TransitionMatrix(chain.space, product, chain.last_period, tol=ARITHMETIC_TOL)


def matrix_difference(a: TransitionMatrix, b: TransitionMatrix) -> np.ndarray:
    """Entrywise ``a - b``; each row sums to zero (both inputs row-stochastic)."""
    _require_same_space(a.space, b.space)
    return a.entries - b.entries
