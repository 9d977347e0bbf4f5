"""Rotating-panel microdata: schema, parsing, linkage, and subgroup filters.

Input schema (CSV, gzip accepted by ``.gz`` extension)::

    person_id,period,state,weight,sex,age,education,region

``period`` uses the ``YYYYQn`` form. ``sex`` is ``M``/``F``; ``education`` is
``low``/``high``; ``region`` is ``north_center``/``south``; an empty string in
any stratifier (including ``age``) is read as *unknown*. Weights must be
strictly positive and states must belong to the configured state space.

Quarter-on-quarter transitions are built by linking the records of one person
observed in two consecutive quarters. The rotating design (in two quarters,
out two, back two) means roughly half of a quarter's sample links backwards;
observations separated by a gap never produce a transition.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import (
    BadQuarterFormat,
    BadStateLabel,
    DuplicateObservation,
    MissingColumn,
    NonPositiveWeight,
)
from .markov import FIVE_STATES, QuarterId, StateSpace

PANEL_COLUMNS = ("person_id", "period", "state", "weight", "sex", "age", "education", "region")

SEX_VALUES = ("unknown", "M", "F")
EDUCATION_VALUES = ("unknown", "low", "high")
REGION_VALUES = ("unknown", "north_center", "south")

#: default working-age trim applied at parse time
WORKING_AGE = (15, 64)


@dataclass(frozen=True, slots=True)
class PersonQuarterRecord:
    """One person observed in one quarter."""

    person_id: str
    period: QuarterId
    state: str
    weight: float
    sex: str = "unknown"
    age: int | None = None
    education: str = "unknown"
    region: str = "unknown"


@dataclass(frozen=True, slots=True)
class TransitionRecord:
    """One linked quarter-on-quarter move, stamped with the destination quarter."""

    person_id: str
    from_state: str
    to_state: str
    period: QuarterId
    weight: float


@dataclass(frozen=True)
class SubgroupFilter:
    """Deterministic predicate over the observed stratifiers.

    All criteria left at ``None`` match everything. ``age_lt``/``age_gte`` are
    strict upper / inclusive lower bounds; records with unknown values never
    match a criterion on that field.
    """

    name: str = "all"
    sex: str | None = None
    education: str | None = None
    region: str | None = None
    age_lt: int | None = None
    age_gte: int | None = None
    young_cutoff: int = 35

    @classmethod
    def all(cls) -> "SubgroupFilter":
        return cls()

    @classmethod
    def young(cls, cutoff: int = 35) -> "SubgroupFilter":
        return cls(name=f"age<{cutoff}", age_lt=cutoff, young_cutoff=cutoff)

    @classmethod
    def parse(cls, expr: str, young_cutoff: int = 35) -> "SubgroupFilter":
        """Parse expressions like ``sex=F``, ``age<35``, ``edu=low,region=south``.

        Comma-separated criteria are combined with AND.
        """
        expr = expr.strip()
        if not expr or expr == "all":
            return cls.all()
        out = cls(name=expr, young_cutoff=young_cutoff)
        for part in expr.split(","):
            part = part.strip()
            if part.startswith("age<"):
                out = replace(out, age_lt=int(part[4:]))
            elif part.startswith("age>="):
                out = replace(out, age_gte=int(part[5:]))
            elif part == "young":
                out = replace(out, age_lt=young_cutoff)
            elif "=" in part:
                key, value = part.split("=", 1)
                key, value = key.strip(), value.strip()
                if key == "sex" and value in ("M", "F"):
                    out = replace(out, sex=value)
                elif key in ("edu", "education") and value in ("low", "high"):
                    out = replace(out, education=value)
                elif key == "region" and value in ("north_center", "south"):
                    out = replace(out, region=value)
                else:
                    raise ValueError(f"bad filter criterion: {part!r}")
            else:
                raise ValueError(f"bad filter criterion: {part!r}")
        return out

    def matches(self, record: PersonQuarterRecord) -> bool:
        if self.sex is not None and record.sex != self.sex:
            return False
        if self.education is not None and record.education != self.education:
            return False
        if self.region is not None and record.region != self.region:
            return False
        if self.age_lt is not None and (record.age is None or record.age >= self.age_lt):
            return False
        if self.age_gte is not None and (record.age is None or record.age < self.age_gte):
            return False
        return True

    def mask(self, sex: np.ndarray, age: np.ndarray, education: np.ndarray,
             region: np.ndarray) -> np.ndarray:
        """Vectorized form over stratifier code arrays (see module makers below)."""
        keep = np.ones(sex.shape[0], dtype=bool)
        if self.sex is not None:
            keep &= sex == SEX_VALUES.index(self.sex)
        if self.education is not None:
            keep &= education == EDUCATION_VALUES.index(self.education)
        if self.region is not None:
            keep &= region == REGION_VALUES.index(self.region)
        if self.age_lt is not None:
            keep &= (age >= 0) & (age < self.age_lt)
        if self.age_gte is not None:
            keep &= age >= self.age_gte
        return keep

    @property
    def is_all(self) -> bool:
        return (self.sex is None and self.education is None and self.region is None
                and self.age_lt is None and self.age_gte is None)


def apply_filter(records: Iterable[PersonQuarterRecord],
                 subgroup: SubgroupFilter) -> list[PersonQuarterRecord]:
    """Keep the person-quarter records matching the filter.

    The pipeline always filters person-quarters first and links afterwards, so
    both endpoints of every surviving transition satisfy the filter.
    """
    return [r for r in records if subgroup.matches(r)]


def parse_panel(
    path: str | Path,
    space: StateSpace = FIVE_STATES,
    working_age: tuple[int, int] | None = WORKING_AGE,
) -> list[PersonQuarterRecord]:
    """Read a panel CSV into records, validating the schema row by row.

    Rows with unknown state labels, non-positive weights, or malformed quarters
    are rejected with the offending line numbers (header is line 1). Rows whose
    age falls outside ``working_age`` are silently trimmed (pass ``None`` to
    keep everyone); rows with unknown age are always kept.
    """
    path = Path(path)
    df = pd.read_csv(path, dtype=str, keep_default_na=False)

    missing = [c for c in PANEL_COLUMNS if c not in df.columns]
    if missing:
        raise MissingColumn(f"{path}: missing columns {missing}")

    def lines(mask: np.ndarray) -> list[int]:
        # +2: header line plus 1-based counting
        return [int(i) + 2 for i in np.flatnonzero(mask)[:5]]

    period_ok = df["period"].str.fullmatch(r"\d{4}Q[1-4]")
    if not period_ok.all():
        raise BadQuarterFormat(f"{path}: bad period format at lines {lines(~period_ok.to_numpy())}")

    state_ok = df["state"].isin(space.labels)
    if not state_ok.all():
        bad = df.loc[~state_ok, "state"].unique()[:5]
        raise BadStateLabel(
            f"{path}: unknown state labels {list(bad)} at lines {lines(~state_ok.to_numpy())}"
        )

    def _float_or_nan(text: str) -> float:
        try:
            return float(text)  # correctly rounded, unlike pandas' fast parser
        except ValueError:
            return float("nan")

    weight = df["weight"].map(_float_or_nan)
    weight_ok = weight.notna() & (weight > 0)
    if not weight_ok.all():
        raise NonPositiveWeight(
            f"{path}: non-positive or unparseable weights at lines {lines(~weight_ok.to_numpy())}"
        )

    age = pd.to_numeric(df["age"].replace("", np.nan), errors="coerce")
    if working_age is not None:
        lo, hi = working_age
        keep = age.isna() | ((age >= lo) & (age <= hi))
        df = df[keep]
        weight = weight[keep]
        age = age[keep]

    records: list[PersonQuarterRecord] = []
    sex_col = df["sex"].where(df["sex"].isin(("M", "F")), "unknown")
    edu_col = df["education"].where(df["education"].isin(("low", "high")), "unknown")
    reg_col = df["region"].where(df["region"].isin(("north_center", "south")), "unknown")
    for pid, per, st, w, sx, ag, ed, rg in zip(
        df["person_id"], df["period"], df["state"], weight, sex_col, age, edu_col, reg_col
    ):
        records.append(
            PersonQuarterRecord(
                person_id=pid,
                period=QuarterId.parse(per),
                state=st,
                weight=float(w),
                sex=sx,
                age=None if pd.isna(ag) else int(ag),
                education=ed,
                region=rg,
            )
        )
    return records


def write_panel(records: Iterable[PersonQuarterRecord], path: str | Path) -> None:
    """Write records back to the documented CSV schema (gzip by extension)."""
    rows = [
        (
            r.person_id,
            str(r.period),
            r.state,
            repr(float(r.weight)),  # full precision so the file round-trips
            "" if r.sex == "unknown" else r.sex,
            "" if r.age is None else r.age,
            "" if r.education == "unknown" else r.education,
            "" if r.region == "unknown" else r.region,
        )
        for r in records
    ]
    df = pd.DataFrame(rows, columns=list(PANEL_COLUMNS))
    df.to_csv(path, index=False)


def link_transitions(
    records: Sequence[PersonQuarterRecord],
    weight_from: str = "destination",
) -> list[TransitionRecord]:
    """Link each person's consecutive-quarter observations into transitions.

    A transition is emitted for every pair of observations of one person in
    quarters ``t-1`` and ``t``; its weight is the destination-quarter weight
    (set ``weight_from="origin"`` for the origin-quarter convention). Gapped
    observations (the rotation's skip pattern) produce nothing.
    """
    if weight_from not in ("destination", "origin"):
        raise ValueError(f"weight_from must be 'destination' or 'origin', got {weight_from!r}")
    by_person: dict[str, list[PersonQuarterRecord]] = {}
    for rec in records:
        by_person.setdefault(rec.person_id, []).append(rec)

    out: list[TransitionRecord] = []
    for pid, recs in by_person.items():
        recs.sort(key=lambda r: r.period.index())
        for prev, nxt in zip(recs, recs[1:]):
            if prev.period == nxt.period:
                raise DuplicateObservation(f"person {pid!r} observed twice in {prev.period}")
            if nxt.period.index() - prev.period.index() == 1:
                out.append(
                    TransitionRecord(
                        person_id=pid,
                        from_state=prev.state,
                        to_state=nxt.state,
                        period=nxt.period,
                        weight=nxt.weight if weight_from == "destination" else prev.weight,
                    )
                )
    out.sort(key=lambda t: (t.period.index(), t.person_id))
    return out


# ---------------------------------------------------------------------------
# Compact array form (the estimation and bootstrap workhorse)


@dataclass(frozen=True)
class PanelArrays:
    """Column-oriented view of a panel, with states and stratifiers as codes.

    ``person`` holds dense integer codes, ``qidx`` the :meth:`QuarterId.index`
    encoding, ``state`` indexes into ``space.labels``; ``sex``/``education``/
    ``region`` index the module-level value tuples; ``age`` uses ``-1`` for
    unknown. Rows are sorted by (person, quarter).
    """

    space: StateSpace
    person: np.ndarray
    qidx: np.ndarray
    state: np.ndarray
    weight: np.ndarray
    sex: np.ndarray
    age: np.ndarray
    education: np.ndarray
    region: np.ndarray
    person_labels: tuple[str, ...] = ()

    @classmethod
    def from_records(cls, records: Sequence[PersonQuarterRecord],
                     space: StateSpace = FIVE_STATES) -> "PanelArrays":
        n = len(records)
        person_labels, person = np.unique([r.person_id for r in records], return_inverse=True)
        qidx = np.fromiter((r.period.index() for r in records), dtype=np.int64, count=n)
        state = np.fromiter((space.index(r.state) for r in records), dtype=np.int8, count=n)
        weight = np.fromiter((r.weight for r in records), dtype=np.float64, count=n)
        sex = np.fromiter((SEX_VALUES.index(r.sex) for r in records), dtype=np.int8, count=n)
        age = np.fromiter((-1 if r.age is None else r.age for r in records), dtype=np.int16, count=n)
        education = np.fromiter(
            (EDUCATION_VALUES.index(r.education) for r in records), dtype=np.int8, count=n
        )
        region = np.fromiter(
            (REGION_VALUES.index(r.region) for r in records), dtype=np.int8, count=n
        )
        arr = cls(space, person, qidx, state, weight, sex, age, education, region,
                  tuple(person_labels))
        return arr.sorted()

    def sorted(self) -> "PanelArrays":
        order = np.lexsort((self.qidx, self.person))
        return PanelArrays(
            self.space,
            self.person[order], self.qidx[order], self.state[order], self.weight[order],
            self.sex[order], self.age[order], self.education[order], self.region[order],
            self.person_labels,
        )

    def filtered(self, subgroup: SubgroupFilter) -> "PanelArrays":
        if subgroup.is_all:
            return self
        keep = subgroup.mask(self.sex, self.age, self.education, self.region)
        return PanelArrays(
            self.space,
            self.person[keep], self.qidx[keep], self.state[keep], self.weight[keep],
            self.sex[keep], self.age[keep], self.education[keep], self.region[keep],
            self.person_labels,
        )

    def __len__(self) -> int:
        return self.person.shape[0]

    def check_no_duplicates(self) -> None:
        """Raise if any person appears twice in one quarter (assumes sorted)."""
        if len(self) < 2:
            return
        dup = (self.person[1:] == self.person[:-1]) & (self.qidx[1:] == self.qidx[:-1])
        if dup.any():
            i = int(np.flatnonzero(dup)[0])
            pid = self.person_labels[self.person[i]] if self.person_labels else self.person[i]
            raise DuplicateObservation(
                f"person {pid!r} observed twice in {QuarterId.from_index(int(self.qidx[i]))}"
            )

    def link(self, weight_from: str = "destination") -> "TransitionArrays":
        """Array equivalent of :func:`link_transitions` (assumes sorted)."""
        self.check_no_duplicates()
        if len(self) < 2:
            return TransitionArrays.empty(self.space)
        same = self.person[1:] == self.person[:-1]
        step = self.qidx[1:] - self.qidx[:-1] == 1
        j = np.flatnonzero(same & step) + 1  # destination row
        return TransitionArrays(
            space=self.space,
            qidx=self.qidx[j],
            from_state=self.state[j - 1],
            to_state=self.state[j],
            weight=self.weight[j] if weight_from == "destination" else self.weight[j - 1],
        )

    def states_at(self, quarter: QuarterId) -> tuple[np.ndarray, np.ndarray]:
        """State codes and weights of the records observed in one quarter."""
        m = self.qidx == quarter.index()
        return self.state[m], self.weight[m]

    def quarters(self) -> list[QuarterId]:
        return [QuarterId.from_index(int(i)) for i in np.unique(self.qidx)]


@dataclass(frozen=True)
class TransitionArrays:
    """Column-oriented transitions; same role as a list of TransitionRecord."""

    space: StateSpace
    qidx: np.ndarray
    from_state: np.ndarray
    to_state: np.ndarray
    weight: np.ndarray

    @classmethod
    def empty(cls, space: StateSpace) -> "TransitionArrays":
        return cls(space, np.empty(0, np.int64), np.empty(0, np.int8),
                   np.empty(0, np.int8), np.empty(0, np.float64))

    @classmethod
    def from_records(cls, records: Sequence[TransitionRecord],
                     space: StateSpace = FIVE_STATES) -> "TransitionArrays":
        n = len(records)
        return cls(
            space,
            np.fromiter((r.period.index() for r in records), np.int64, count=n),
            np.fromiter((space.index(r.from_state) for r in records), np.int8, count=n),
            np.fromiter((space.index(r.to_state) for r in records), np.int8, count=n),
            np.fromiter((r.weight for r in records), np.float64, count=n),
        )

    def at(self, quarter: QuarterId) -> "TransitionArrays":
        m = self.qidx == quarter.index()
        return TransitionArrays(self.space, self.qidx[m], self.from_state[m],
                                self.to_state[m], self.weight[m])

    def __len__(self) -> int:
        return self.qidx.shape[0]
