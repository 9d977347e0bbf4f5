"""Synthetic rotating-panel worlds with known transition dynamics.

The generator simulates a closed population of individuals whose latent state
trajectories follow configurable per-quarter transition matrices, observes
them through the survey's 2-2-2 rotation (in the sample two consecutive
quarters, out two, back two), and emits panel records plus a truth object
holding the realized and counterfactual matrices and the exact share paths.

An intervention is an additive shift, on the logit scale followed by row
renormalization, applied to targeted cells of every matrix from the quarter
after ``t_star`` onward; it never reverts, and pre-intervention draws are
arranged so that a world and its no-intervention twin (same seed) are bitwise
identical before the shift kicks in. Heterogeneous worlds add extra shifts
for subgroups defined by one stratifier value.

World configs are plain ``key = value`` text files; see
:func:`parse_world_config` for the key reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, HorizonOutOfRange
from .markov import (
    MatrixChain,
    QuarterId,
    ShareVector,
    StateSpace,
    TransitionMatrix,
    chain_product,
    propagate,
    quarter_range,
)
from .panel import (
    EDUCATION_VALUES,
    REGION_VALUES,
    SEX_VALUES,
    PanelArrays,
    PersonQuarterRecord,
)

_EPS = 1e-9


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _EPS, 1.0 - _EPS)
    return np.log(x / (1.0 - x))


def _expit(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def shifted_rows(entries: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Apply additive logit shifts cellwise, then renormalize affected rows."""
    out = entries.copy()
    for i in np.flatnonzero(np.any(deltas != 0.0, axis=1)):
        row = _expit(_logit(entries[i]) + deltas[i])
        out[i] = row / row.sum()
    return out


@dataclass(frozen=True)
class Intervention:
    """A persistent shift applied to all transitions into quarters > t_star."""

    t_star: QuarterId
    shifts: dict[tuple[str, str], float]


@dataclass(frozen=True)
class WorldConfig:
    space: StateSpace
    start: QuarterId
    n_quarters: int
    n_persons: int
    seed: int
    baseline: np.ndarray
    initial_shares: np.ndarray
    intervention: Intervention | None = None
    drift: dict[tuple[str, str], float] = field(default_factory=dict)
    #: extra intervention shifts per subgroup, keyed by e.g. ("sex", "F")
    group_shifts: dict[tuple[str, str], dict[tuple[str, str], float]] = field(default_factory=dict)
    weight_model: tuple = ("constant",)  # or ("lognormal", sigma)
    female_share: float = 0.5
    young_share: float = 0.4
    young_cutoff: int = 35
    high_education_share: float = 0.3
    south_share: float = 0.35

    def __post_init__(self) -> None:
        if self.n_quarters < 2:
            raise ConfigInvalid("need at least 2 quarters")
        if self.n_persons < 1:
            raise ConfigInvalid("need at least 1 person")
        k = self.space.k
        base = np.asarray(self.baseline, dtype=float)
        if base.shape != (k, k):
            raise ConfigInvalid(f"baseline matrix must be {k}x{k}")
        TransitionMatrix(self.space, base)  # validates row-stochasticity
        ShareVector(self.space, np.asarray(self.initial_shares, dtype=float), self.start)
        if self.intervention is not None:
            span = quarter_range(self.start, self.end)
            if self.intervention.t_star not in span:
                raise ConfigInvalid(f"t_star {self.intervention.t_star} outside the span")
            for key in self.intervention.shifts:
                self._check_cell(key)
        for cell in self.drift:
            self._check_cell(cell)
        for (fld, _), shifts in self.group_shifts.items():
            if fld not in ("sex", "education", "region", "age"):
                raise ConfigInvalid(f"unknown group field {fld!r}")
            for key in shifts:
                self._check_cell(key)
        if self.weight_model[0] not in ("constant", "lognormal"):
            raise ConfigInvalid(f"unknown weight model {self.weight_model!r}")

    def _check_cell(self, key: tuple[str, str]) -> None:
        if key[0] not in self.space or key[1] not in self.space:
            raise ConfigInvalid(f"shift cell {key} not in state space")

    @property
    def end(self) -> QuarterId:
        return self.start.shift(self.n_quarters - 1)

    def delta_matrix(self, shifts: dict[tuple[str, str], float]) -> np.ndarray:
        k = self.space.k
        deltas = np.zeros((k, k))
        for (a, b), v in shifts.items():
            deltas[self.space.index(a), self.space.index(b)] = v
        return deltas


@dataclass
class WorldTruth:
    """Exact bookkeeping of the generating process.

    ``matrices`` / ``matrices_counterfactual`` map destination quarters to the
    shifted / unshifted truth; ``shares`` is the exact share path of the
    shifted world. For heterogeneous worlds these aggregate fields describe
    subgroup "all" only approximately and ``groups`` holds per-subgroup truth.
    """

    space: StateSpace
    start: QuarterId
    end: QuarterId
    t_star: QuarterId | None
    matrices: dict[QuarterId, TransitionMatrix]
    matrices_counterfactual: dict[QuarterId, TransitionMatrix]
    shares: dict[QuarterId, ShareVector]
    groups: dict[str, "WorldTruth"] = field(default_factory=dict)
    linkage_fraction: float = 0.5

    def to_json_dict(self) -> dict:
        out = {
            "space": list(self.space.labels),
            "start": str(self.start),
            "end": str(self.end),
            "t_star": None if self.t_star is None else str(self.t_star),
            "matrices": {str(q): m.entries.tolist() for q, m in self.matrices.items()},
            "matrices_counterfactual": {
                str(q): m.entries.tolist() for q, m in self.matrices_counterfactual.items()
            },
            "shares": {str(q): s.values.tolist() for q, s in self.shares.items()},
            "linkage_fraction": self.linkage_fraction,
        }
        if self.groups:
            out["groups"] = {name: g.to_json_dict() for name, g in self.groups.items()}
        return out


@dataclass(frozen=True)
class TrueEffects:
    """Exact effects implied by the truth over a given horizon."""

    horizon: int
    share_diffs: np.ndarray
    cumulative_effects: np.ndarray
    fitted_share_path: list[ShareVector]
    counterfactual_share_path: list[ShareVector]


def _truth_matrices(cfg: WorldConfig, extra_shifts: dict[tuple[str, str], float] | None,
                    counterfactual: bool) -> dict[QuarterId, np.ndarray]:
    """Per-quarter true matrices; quarter q describes the [q-1, q] transition."""
    drift = cfg.delta_matrix(cfg.drift)
    shift = np.zeros_like(drift)
    if cfg.intervention is not None and not counterfactual:
        shift = cfg.delta_matrix(cfg.intervention.shifts)
        if extra_shifts:
            shift = shift + cfg.delta_matrix(extra_shifts)
    out: dict[QuarterId, np.ndarray] = {}
    for step, q in enumerate(quarter_range(cfg.start.shift(1), cfg.end)):
        deltas = drift * step
        if cfg.intervention is not None and not counterfactual and q > cfg.intervention.t_star:
            deltas = deltas + shift
        out[q] = shifted_rows(cfg.baseline, deltas) if np.any(deltas) else cfg.baseline.copy()
    return out


def _group_key(cfg: WorldConfig, sex: np.ndarray, age: np.ndarray, education: np.ndarray,
               region: np.ndarray, fld: str, value: str) -> np.ndarray:
    if fld == "sex":
        return sex == SEX_VALUES.index(value)
    if fld == "education":
        return education == EDUCATION_VALUES.index(value)
    if fld == "region":
        return region == REGION_VALUES.index(value)
    if fld == "age":  # value is "young" or "old" relative to the cutoff
        return (age < cfg.young_cutoff) if value == "young" else (age >= cfg.young_cutoff)
    raise ConfigInvalid(f"unknown group field {fld!r}")


def _build_truth(cfg: WorldConfig, extra: dict[tuple[str, str], float] | None) -> WorldTruth:
    actual = _truth_matrices(cfg, extra, counterfactual=False)
    counter = _truth_matrices(cfg, extra, counterfactual=True)
    shares = {cfg.start: ShareVector(cfg.space, cfg.initial_shares, cfg.start)}
    matrices = {q: TransitionMatrix(cfg.space, m, q) for q, m in actual.items()}
    current = shares[cfg.start]
    for q in quarter_range(cfg.start.shift(1), cfg.end):
        current = propagate(current, matrices[q])
        shares[q] = current
    return WorldTruth(
        space=cfg.space,
        start=cfg.start,
        end=cfg.end,
        t_star=None if cfg.intervention is None else cfg.intervention.t_star,
        matrices=matrices,
        matrices_counterfactual={q: TransitionMatrix(cfg.space, m, q) for q, m in counter.items()},
        shares=shares,
    )


def generate_arrays(cfg: WorldConfig) -> tuple[PanelArrays, WorldTruth]:
    """Simulate the world and return the observed panel in array form.

    All randomness flows from ``cfg.seed`` in a fixed draw order that does not
    depend on the intervention, so twin worlds share their pre-intervention
    records bitwise.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    n = cfg.n_persons
    k = cfg.space.k
    start_idx = cfg.start.index()
    span = cfg.n_quarters

    # fixed draw order: stratifiers, weights, rotation offsets, initial states,
    # then one uniform per (person, quarter) transition
    sex = np.where(rng.random(n) < cfg.female_share, SEX_VALUES.index("F"),
                   SEX_VALUES.index("M")).astype(np.int8)
    young = rng.random(n) < cfg.young_share
    age_young = rng.integers(15, cfg.young_cutoff, size=n)
    age_old = rng.integers(cfg.young_cutoff, 65, size=n)
    age = np.where(young, age_young, age_old).astype(np.int16)
    education = np.where(rng.random(n) < cfg.high_education_share,
                         EDUCATION_VALUES.index("high"), EDUCATION_VALUES.index("low")).astype(np.int8)
    region = np.where(rng.random(n) < cfg.south_share, REGION_VALUES.index("south"),
                      REGION_VALUES.index("north_center")).astype(np.int8)
    if cfg.weight_model[0] == "constant":
        weight = np.ones(n)
        _ = rng.standard_normal(n)  # keep the draw order fixed across weight models
    else:
        sigma = float(cfg.weight_model[1])
        weight = np.exp(sigma * rng.standard_normal(n) - 0.5 * sigma * sigma)

    offsets = rng.integers(start_idx - 5, start_idx + span, size=n)  # inclusive of end
    init_u = rng.random(n)
    u = rng.random((span - 1, n))

    cum_init = np.cumsum(np.asarray(cfg.initial_shares, dtype=float))
    states = np.empty((span, n), dtype=np.int8)
    states[0] = np.searchsorted(cum_init, init_u, side="right").clip(0, k - 1)

    # group memberships (heterogeneous shifts); everyone else uses the base truth
    truth = _build_truth(cfg, None)
    group_masks: list[tuple[str, np.ndarray, WorldTruth]] = []
    claimed = np.zeros(n, dtype=bool)
    for (fld, value), extra in cfg.group_shifts.items():
        mask = _group_key(cfg, sex, age, education, region, fld, value) & ~claimed
        claimed |= mask
        gt = _build_truth(cfg, extra)
        name = f"{fld}={value}"
        group_masks.append((name, mask, gt))
        truth.groups[name] = gt
    base_mask = ~claimed

    quarters = quarter_range(cfg.start, cfg.end)
    for step, q in enumerate(quarters[1:]):
        uq = u[step]
        nxt = np.empty(n, dtype=np.int8)
        segments = [(base_mask, truth.matrices[q].entries)]
        segments += [(mask, gt.matrices[q].entries) for _, mask, gt in group_masks]
        for mask, entries in segments:
            if not mask.any():
                continue
            cum = np.cumsum(entries, axis=1)
            prev = states[step][mask]
            draws = uq[mask]
            sub = np.empty(prev.shape[0], dtype=np.int8)
            for i in range(k):
                sel = prev == i
                if sel.any():
                    sub[sel] = np.searchsorted(cum[i], draws[sel], side="right").clip(0, k - 1)
            nxt[mask] = sub
        states[step + 1] = nxt

    # survey observation: waves {e, e+1, e+4, e+5} clipped to the span
    wave_offsets = np.array([0, 1, 4, 5])
    obs_q = offsets[:, None] + wave_offsets[None, :]
    visible = (obs_q >= start_idx) & (obs_q < start_idx + span)
    person_rows = np.repeat(np.arange(n), visible.sum(axis=1))
    q_rows = obs_q[visible]

    arr = PanelArrays(
        space=cfg.space,
        person=person_rows.astype(np.int64),
        qidx=q_rows.astype(np.int64),
        state=states[q_rows - start_idx, person_rows],
        weight=weight[person_rows],
        sex=sex[person_rows],
        age=age[person_rows],
        education=education[person_rows],
        region=region[person_rows],
        person_labels=tuple(f"P{i:07d}" for i in range(n)),
    ).sorted()
    return arr, truth


def generate(cfg: WorldConfig) -> tuple[list[PersonQuarterRecord], WorldTruth]:
    """Simulate the world and return observed panel records plus the truth."""
    arr, truth = generate_arrays(cfg)
    records = [
        PersonQuarterRecord(
            person_id=arr.person_labels[p],
            period=QuarterId.from_index(int(q)),
            state=cfg.space.labels[s],
            weight=float(w),
            sex=SEX_VALUES[sx],
            age=int(a),
            education=EDUCATION_VALUES[e],
            region=REGION_VALUES[r],
        )
        for p, q, s, w, sx, a, e, r in zip(
            arr.person, arr.qidx, arr.state, arr.weight, arr.sex, arr.age,
            arr.education, arr.region
        )
    ]
    return records, truth


def true_effects(truth: WorldTruth, t_star: QuarterId, horizon: int,
                 group: str | None = None) -> TrueEffects:
    """Exact fitted-vs-counterfactual differences implied by the truth."""
    if group is not None:
        truth = truth.groups[group]
    last = t_star.shift(horizon)
    if horizon < 1 or last > truth.end or t_star < truth.start:
        raise HorizonOutOfRange(f"horizon {horizon} after {t_star} leaves {truth.start}..{truth.end}")
    horizon_quarters = quarter_range(t_star.shift(1), last)
    actual = MatrixChain(tuple(truth.matrices[q] for q in horizon_quarters))
    counter = MatrixChain(tuple(truth.matrices_counterfactual[q] for q in horizon_quarters))
    anchor = truth.shares[t_star]
    fit_path: list[ShareVector] = []
    cf_path: list[ShareVector] = []
    cur_f, cur_c = anchor, anchor
    for mf, mc in zip(actual, counter):
        cur_f = propagate(cur_f, mf)
        cur_c = propagate(cur_c, mc)
        fit_path.append(cur_f)
        cf_path.append(cur_c)
    share_diffs = np.mean([s.values for s in fit_path], axis=0) - np.mean(
        [s.values for s in cf_path], axis=0
    )
    cumulative = chain_product(actual).entries - chain_product(counter).entries
    return TrueEffects(horizon, share_diffs, cumulative, fit_path, cf_path)


# ---------------------------------------------------------------------------
# Config file


CONFIG_DOC = """\
World config keys (one `key = value` per line, `#` comments):
  states            comma-separated labels (default SE,TE,PE,U,IN)
  start             first quarter, e.g. 2016Q1
  quarters          number of quarters in the span
  persons           number of simulated individuals
  seed              RNG seed (integer)
  initial_shares    comma-separated shares at `start`
  matrix.<STATE>    one baseline matrix row per state, comma-separated
  weight_model      constant | lognormal:<sigma>
  sex_female        P(female)            (default 0.5)
  age_young         P(age < cutoff)      (default 0.4)
  young_cutoff      age threshold        (default 35)
  education_high    P(high education)    (default 0.3)
  region_south      P(south)             (default 0.35)
  tstar             intervention quarter (optional)
  shift.<FROM>.<TO>  additive logit shift applied after tstar
  drift.<FROM>.<TO>  additive logit trend per quarter (pre and post)
  group.<field>.<value>.shift.<FROM>.<TO>  extra subgroup shift
                    (field: sex | education | region | age; e.g. group.sex.F.shift.TE.PE)
"""


def parse_key_values(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{line_no}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_world_config(path: str | Path) -> WorldConfig:
    raw = parse_key_values(path)
    try:
        space = StateSpace(tuple(s.strip() for s in raw.get("states", "SE,TE,PE,U,IN").split(",")))
        start = QuarterId.parse(raw["start"])
        n_quarters = int(raw["quarters"])
        n_persons = int(raw["persons"])
        seed = int(raw.get("seed", "0"))
        initial = np.array([float(x) for x in raw["initial_shares"].split(",")])
        baseline = np.zeros((space.k, space.k))
        for i, lab in enumerate(space.labels):
            key = f"matrix.{lab}"
            if key not in raw:
                raise ConfigInvalid(f"missing baseline row {key}")
            baseline[i] = [float(x) for x in raw[key].split(",")]
    except KeyError as exc:
        raise ConfigInvalid(f"missing config key {exc}") from None

    wm = raw.get("weight_model", "constant")
    weight_model: tuple = ("constant",)
    if wm.startswith("lognormal"):
        weight_model = ("lognormal", float(wm.split(":", 1)[1]))
    elif wm != "constant":
        raise ConfigInvalid(f"unknown weight_model {wm!r}")

    shifts: dict[tuple[str, str], float] = {}
    drift: dict[tuple[str, str], float] = {}
    group_shifts: dict[tuple[str, str], dict[tuple[str, str], float]] = {}
    for key, value in raw.items():
        if key.startswith("shift."):
            _, a, b = key.split(".")
            shifts[(a, b)] = float(value)
        elif key.startswith("drift."):
            _, a, b = key.split(".")
            drift[(a, b)] = float(value)
        elif key.startswith("group."):
            parts = key.split(".")
            if len(parts) != 6 or parts[3] != "shift":
                raise ConfigInvalid(
                    f"bad group key {key!r} (expected group.<field>.<value>.shift.<FROM>.<TO>)")
            _, fld, val, _, a, b = parts
            group_shifts.setdefault((fld, val), {})[(a, b)] = float(value)

    intervention = None
    if "tstar" in raw:
        intervention = Intervention(QuarterId.parse(raw["tstar"]), shifts)
    elif shifts:
        raise ConfigInvalid("shift.* keys need a tstar")

    return WorldConfig(
        space=space,
        start=start,
        n_quarters=n_quarters,
        n_persons=n_persons,
        seed=seed,
        baseline=baseline,
        initial_shares=initial,
        intervention=intervention,
        drift=drift,
        group_shifts=group_shifts,
        weight_model=weight_model,
        female_share=float(raw.get("sex_female", "0.5")),
        young_share=float(raw.get("age_young", "0.4")),
        young_cutoff=int(raw.get("young_cutoff", "35")),
        high_education_share=float(raw.get("education_high", "0.3")),
        south_share=float(raw.get("region_south", "0.35")),
    )
