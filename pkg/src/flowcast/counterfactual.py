"""Counterfactual evaluation of a universal intervention on labour-market flows.

The three-step procedure: (i) fit a low-order ARIMA model to every transition-
matrix entry over the pre-intervention observation window, (ii) forecast each
entry past the intervention quarter and renormalize rows to recover proper
transition matrices (the no-intervention counterfactual), and (iii) take
differences between observed-path quantities and their forecast counterparts:
horizon-averaged state shares, head counts (shares times the working-age
population), and cumulative multi-quarter transition probabilities.

Both the "fitted" (observed matrices) and "forecasted" share paths start from
the same observed shares at the intervention quarter, so a horizon-1 share
difference is exactly the anchor vector times the matrix difference.

Entry series are forecast on the logit scale by default, which keeps every
counterfactual probability inside (0, 1); pass ``scale="raw"`` for untransformed
forecasts (clipped before renormalization).

Inference is by quarter-stratified weighted resampling (see
:mod:`flowcast.bootstrap`): ``full_pipeline`` mode re-estimates matrices *and*
refits the per-cell forecast coefficients (orders stay fixed at the original
selection) in every replicate; ``estimation_only`` keeps the fitted forecast
models frozen and propagates only estimation noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import arima
from .bootstrap import BootstrapConfig, BootstrapResult, replicate_rng, resample_indices, se_and_ci
from .errors import FlowcastError, MissingQuarter, ShiftTooLarge, WindowNotCovered
from .estimation import QuarterSeries
from .markov import (
    ARITHMETIC_TOL,
    MatrixChain,
    QuarterId,
    ShareVector,
    StateSpace,
    TransitionMatrix,
    chain_product,
    quarter_range,
)

_EPS = 1e-9


def _logit(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, _EPS, 1.0 - _EPS)
    return np.log(x / (1.0 - x))


def _expit(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


@dataclass(frozen=True)
class InterventionSpec:
    """Evaluation frame: observation window ending at t_star, forecast horizon."""

    t_star: QuarterId
    horizon: int = 4
    window_start: QuarterId | None = None

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.window_start is not None and not self.window_start < self.t_star:
            raise ValueError("observation window must start before t_star")

    def window(self, series: QuarterSeries) -> tuple[QuarterId, QuarterId]:
        start = self.window_start if self.window_start is not None else series.first_quarter
        return start, self.t_star

    def horizon_quarters(self) -> list[QuarterId]:
        return quarter_range(self.t_star.shift(1), self.t_star.shift(self.horizon))


@dataclass
class EffectReport:
    """Fitted-vs-forecasted shares, head counts, and cumulative transitions."""

    space: StateSpace
    t_star: QuarterId
    horizon: int
    population: float
    fitted_share_path: list[ShareVector]
    forecasted_share_path: list[ShareVector]
    fitted_shares: np.ndarray
    forecasted_shares: np.ndarray
    fitted_shares_se: np.ndarray
    forecasted_shares_se: np.ndarray
    share_diffs: np.ndarray
    share_diff_results: list[BootstrapResult]
    count_diffs: np.ndarray
    count_diff_results: list[BootstrapResult]
    cumulative_fitted: TransitionMatrix
    cumulative_forecasted: TransitionMatrix
    cumulative_effects: np.ndarray
    cumulative_results: list[list[BootstrapResult]]
    cell_series: dict[str, dict]
    share_series: dict[str, dict]
    metadata: dict = field(default_factory=dict)

    @property
    def significant_counts(self) -> list[bool]:
        return [r.significant for r in self.count_diff_results]

    @property
    def significant_cumulative(self) -> list[list[bool]]:
        return [[r.significant for r in row] for r in self.cumulative_results]

    def to_json_dict(self) -> dict:
        labels = list(self.space.labels)
        return {
            "space": labels,
            "t_star": str(self.t_star),
            "horizon": self.horizon,
            "population": self.population,
            "fitted_share_path": [s.to_json_dict() for s in self.fitted_share_path],
            "forecasted_share_path": [s.to_json_dict() for s in self.forecasted_share_path],
            "fitted_shares": self.fitted_shares.tolist(),
            "forecasted_shares": self.forecasted_shares.tolist(),
            "fitted_shares_se": self.fitted_shares_se.tolist(),
            "forecasted_shares_se": self.forecasted_shares_se.tolist(),
            "share_diffs": {
                lab: res.to_dict() | {"point": float(self.share_diffs[i])}
                for i, (lab, res) in enumerate(zip(labels, self.share_diff_results))
            },
            "count_diffs": {
                lab: res.to_dict() | {"point": float(self.count_diffs[i])}
                for i, (lab, res) in enumerate(zip(labels, self.count_diff_results))
            },
            "cumulative_fitted": self.cumulative_fitted.entries.tolist(),
            "cumulative_forecasted": self.cumulative_forecasted.entries.tolist(),
            "cumulative_effects": {
                a: {
                    b: self.cumulative_results[i][j].to_dict()
                    | {"point": float(self.cumulative_effects[i, j])}
                    for j, b in enumerate(labels)
                }
                for i, a in enumerate(labels)
            },
            "cell_series": self.cell_series,
            "share_series": self.share_series,
            "metadata": self.metadata,
        }


@dataclass
class PlaceboReport:
    """An effect report at a fake intervention date, plus the no-effect verdict."""

    effect: EffectReport
    passed: bool

    def to_json_dict(self) -> dict:
        return {"passed": self.passed, "effect": self.effect.to_json_dict()}


@dataclass
class ShiftReport:
    """Side-by-side reports for the base and boundary-shifted intervention date."""

    base: EffectReport
    shifted: EffectReport
    shift: int

    def to_json_dict(self) -> dict:
        return {
            "shift": self.shift,
            "base": self.base.to_json_dict(),
            "shifted": self.shifted.to_json_dict(),
        }


# ---------------------------------------------------------------------------
# Forecasting the matrix entries


def _check_window(series: QuarterSeries, spec: InterventionSpec, need_horizon: bool) -> None:
    start, end = spec.window(series)
    if start not in series.shares or end not in series.shares:
        raise WindowNotCovered(f"series does not cover the observation window {start}..{end}")
    for q in quarter_range(start.shift(1), end):
        if q not in series.matrices:
            raise MissingQuarter(f"no estimated matrix for {q}")
    if need_horizon:
        for q in spec.horizon_quarters():
            if q not in series.matrices:
                raise MissingQuarter(f"no observed matrix for horizon quarter {q}")


def _pre_quarters(series: QuarterSeries, spec: InterventionSpec) -> list[QuarterId]:
    start, end = spec.window(series)
    return quarter_range(start.shift(1), end)


def _stack(series_matrices: dict, quarters: Sequence[QuarterId]) -> np.ndarray:
    return np.stack([series_matrices[q].entries for q in quarters])


def _select_cell_models(pre: np.ndarray, space: StateSpace, scale: str):
    """Order-select and fit one model per matrix cell on the chosen scale.

    Returns (fits, meta): ``fits[i][j]`` is an :class:`arima.ArimaFit` or None
    when every attempt failed; failures are listed in ``meta['cell_warnings']``
    with their coordinates, and rows with more than half their cells failed are
    flagged for the last-observed-row fallback.
    """
    k = space.k
    fits: list[list[arima.ArimaFit | None]] = [[None] * k for _ in range(k)]
    orders: dict[str, str] = {}
    warnings: list[str] = []
    for i in range(k):
        failed = 0
        for j in range(k):
            xs = pre[:, i, j]
            xs = _logit(xs) if scale == "logit" else xs.copy()
            try:
                fits[i][j] = arima.select(xs)
                orders[f"{space.labels[i]}->{space.labels[j]}"] = fits[i][j].spec.label()
            except FlowcastError as exc:
                failed += 1
                warnings.append(f"cell ({space.labels[i]},{space.labels[j]}): {exc}")
        if failed > k / 2:
            warnings.append(
                f"row {space.labels[i]}: {failed}/{k} cells failed; "
                "forecast falls back to the last observed row"
            )
            fits[i] = [None] * k
    meta = {"orders": orders, "cell_warnings": warnings}
    return fits, meta


def _forecast_entries(
    pre: np.ndarray,
    fits: Sequence[Sequence[arima.ArimaFit | None]],
    horizon: int,
    scale: str,
    refit: bool,
) -> tuple[np.ndarray, np.ndarray]:
    """Forecast each cell; returns (mean, variance) arrays of shape (h, k, k).

    ``refit`` re-estimates the coefficients of each cell's selected spec on
    ``pre`` (warm-started); otherwise the stored fits are applied as-is.
    Cells without a usable fit repeat their last observed value with zero
    variance. Means are mapped back from the fitting scale; rows are clamped
    and renormalized to be stochastic.
    """
    k = pre.shape[1]
    mean = np.empty((horizon, k, k))
    var = np.zeros((horizon, k, k))
    for i in range(k):
        for j in range(k):
            xs = pre[:, i, j]
            zs = _logit(xs) if scale == "logit" else xs
            fit_ = fits[i][j]
            if fit_ is None:
                mean[:, i, j] = xs[-1]
                continue
            if refit:
                fit_ = arima.fit(zs, fit_.spec,
                                 warm_start=(fit_.ar, fit_.ma, fit_.drift_coeff))
            fc = arima.forecast(fit_, zs, horizon)
            path = _expit(fc.mean_path) if scale == "logit" else fc.mean_path
            mean[:, i, j] = path
            var[:, i, j] = fc.variance_path
    mean = np.clip(mean, _EPS, 1.0 - _EPS)
    mean /= mean.sum(axis=2, keepdims=True)
    return mean, var


def forecast_matrices(series: QuarterSeries, spec: InterventionSpec,
                      scale: str = "logit") -> MatrixChain:
    """Forecast the transition matrices for the horizon after ``t_star``.

    Every matrix entry's pre-intervention series is order-selected and
    forecast independently (logit scale by default); each forecast quarter's
    rows are renormalized to sum to one.
    """
    _check_window(series, spec, need_horizon=False)
    pre = _stack(series.matrices, _pre_quarters(series, spec))
    fits, _ = _select_cell_models(pre, series.space, scale)
    mean, _ = _forecast_entries(pre, fits, spec.horizon, scale, refit=False)
    return _chain_from_entries(mean, series.space, spec)


def _chain_from_entries(mean: np.ndarray, space: StateSpace,
                        spec: InterventionSpec) -> MatrixChain:
    return MatrixChain(tuple(
        TransitionMatrix(space, mean[h], q, tol=ARITHMETIC_TOL)
        for h, q in enumerate(spec.horizon_quarters())
    ))


def fitted_path(series: QuarterSeries,
                spec: InterventionSpec) -> tuple[MatrixChain, list[ShareVector]]:
    """Propagate the observed t_star shares through the observed matrices."""
    _check_window(series, spec, need_horizon=True)
    chain = MatrixChain(tuple(series.matrices[q] for q in spec.horizon_quarters()))
    anchor = series.shares[spec.t_star]
    path = []
    current = anchor
    for m in chain:
        current = ShareVector(series.space, current.values @ m.entries, m.period,
                              tol=ARITHMETIC_TOL)
        path.append(current)
    return chain, path


def counterfactual_path(series: QuarterSeries, spec: InterventionSpec,
                        scale: str = "logit") -> list[ShareVector]:
    """Propagate the observed t_star shares through the forecasted matrices."""
    chain = forecast_matrices(series, spec, scale)
    anchor = series.shares[spec.t_star]
    path = []
    current = anchor
    for m in chain:
        current = ShareVector(series.space, current.values @ m.entries, m.period,
                              tol=ARITHMETIC_TOL)
        path.append(current)
    return path


# ---------------------------------------------------------------------------
# The effects pipeline with resampling inference


class _ReplicateEngine:
    """Precomputed arrays for fast quarter-stratified resampling replicates."""

    def __init__(self, series: QuarterSeries, spec: InterventionSpec, scale: str,
                 mode: str):
        self.space = series.space
        self.k = series.space.k
        self.spec = spec
        self.scale = scale
        self.mode = mode
        self.pre_quarters = _pre_quarters(series, spec)
        self.horizon_quarters = spec.horizon_quarters()
        self.all_quarters = self.pre_quarters + self.horizon_quarters

        self.tr: dict[QuarterId, tuple[np.ndarray, np.ndarray]] = {}
        for q in self.all_quarters:
            sample = series.transition_samples.get(q)
            if sample is None or len(sample) == 0:
                raise MissingQuarter(f"no transition sample retained for {q}")
            codes = sample.from_state.astype(np.int64) * self.k + sample.to_state
            self.tr[q] = (codes, sample.weight)
        anchor_states, anchor_w = series.state_samples[spec.t_star]
        self.anchor = (anchor_states.astype(np.int64), anchor_w)

        pre = _stack(series.matrices, self.pre_quarters)
        self.fits, self.meta = _select_cell_models(pre, self.space, scale)

    # -- replicate computation ------------------------------------------------

    def _matrices(self, rng) -> dict[QuarterId, np.ndarray]:
        out = {}
        for q in self.all_quarters:
            codes, weights = self.tr[q]
            idx = resample_indices(weights, rng)
            counts = np.bincount(codes[idx], minlength=self.k**2).astype(float)
            counts = counts.reshape(self.k, self.k)
            totals = counts.sum(axis=1)
            entries = np.empty_like(counts)
            for i in range(self.k):
                if totals[i] > 0:
                    entries[i] = counts[i] / totals[i]
                else:
                    entries[i] = 0.0
                    entries[i, i] = 1.0
            out[q] = entries
        return out

    def _anchor_shares(self, rng) -> np.ndarray:
        states, weights = self.anchor
        idx = resample_indices(weights, rng)
        mass = np.bincount(states[idx], minlength=self.k).astype(float)
        return mass / mass.sum()

    def statistics(self, matrices: dict[QuarterId, np.ndarray],
                   anchor: np.ndarray) -> np.ndarray:
        """Flat statistic vector for one (re-estimated) panel realization.

        Layout: share diffs (k), fitted averaged shares (k), forecasted
        averaged shares (k), per-quarter forecasted share path (h*k),
        cumulative effects (k*k).
        """
        pre = np.stack([matrices[q] for q in self.pre_quarters])
        refit = self.mode == "full_pipeline"
        mean, _ = _forecast_entries(pre, self.fits, self.spec.horizon, self.scale, refit)

        fit_path = np.empty((self.spec.horizon, self.k))
        fc_path = np.empty((self.spec.horizon, self.k))
        cur_f = anchor
        cur_c = anchor
        prod_f = np.eye(self.k)
        prod_c = np.eye(self.k)
        for h, q in enumerate(self.horizon_quarters):
            cur_f = cur_f @ matrices[q]
            cur_c = cur_c @ mean[h]
            fit_path[h] = cur_f
            fc_path[h] = cur_c
            prod_f = prod_f @ matrices[q]
            prod_c = prod_c @ mean[h]
        fitted_avg = fit_path.mean(axis=0)
        fc_avg = fc_path.mean(axis=0)
        return np.concatenate([
            fitted_avg - fc_avg,
            fitted_avg,
            fc_avg,
            fc_path.ravel(),
            (prod_f - prod_c).ravel(),
        ])

    def replicate(self, master_seed: int, k_rep: int) -> np.ndarray:
        rng = replicate_rng(master_seed, k_rep)
        matrices = self._matrices(rng)
        anchor = self._anchor_shares(rng)
        try:
            return self.statistics(matrices, anchor)
        except FlowcastError:
            return np.full(3 * self.k + self.spec.horizon * self.k + self.k**2, np.nan)


def effects(
    series: QuarterSeries,
    spec: InterventionSpec,
    population: float,
    bootstrap_cfg: BootstrapConfig,
    scale: str = "logit",
    threads: int = 1,
) -> EffectReport:
    """Run the full fitted-vs-forecasted comparison with resampling inference."""
    if population <= 0:
        raise ValueError("population must be positive")
    if scale not in ("logit", "raw"):
        raise ValueError(f"scale must be 'logit' or 'raw', got {scale!r}")
    _check_window(series, spec, need_horizon=True)

    engine = _ReplicateEngine(series, spec, scale, bootstrap_cfg.mode)
    k = series.space.k
    h = spec.horizon

    # point estimates from the original (un-resampled) sample
    anchor = series.shares[spec.t_star]
    observed_matrices = {q: series.matrices[q].entries for q in engine.all_quarters}
    point = engine.statistics(observed_matrices, anchor.values)

    fitted_chain, fitted = fitted_path(series, spec)
    pre = _stack(series.matrices, engine.pre_quarters)
    fc_mean, fc_var = _forecast_entries(pre, engine.fits, h, scale, refit=False)
    forecast_chain = _chain_from_entries(fc_mean, series.space, spec)
    forecasted = []
    current = anchor
    for m in forecast_chain:
        current = ShareVector(series.space, current.values @ m.entries, m.period,
                              tol=ARITHMETIC_TOL)
        forecasted.append(current)

    # resampling replicates (deterministic per (master_seed, k), any thread count)
    def one(k_rep: int) -> np.ndarray:
        return engine.replicate(bootstrap_cfg.master_seed, k_rep)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            draws = list(pool.map(one, range(bootstrap_cfg.B)))
    else:
        draws = [one(k_rep) for k_rep in range(bootstrap_cfg.B)]
    draws = np.vstack(draws)

    def agg(col: np.ndarray, point_val: float) -> BootstrapResult:
        return se_and_ci(col, bootstrap_cfg, point=point_val)

    share_diffs = point[:k]
    share_results = [agg(draws[:, i], share_diffs[i]) for i in range(k)]
    fitted_se = np.array([agg(draws[:, k + i], point[k + i]).se for i in range(k)])
    fc_se = np.array([agg(draws[:, 2 * k + i], point[2 * k + i]).se for i in range(k)])

    count_diffs = share_diffs * population
    count_results = [
        BootstrapResult(
            point=r.point * population,
            se=r.se * population,
            ci_lo=r.ci_lo * population,
            ci_hi=r.ci_hi * population,
            p_value=r.p_value,
            B_effective=r.B_effective,
        )
        for r in share_results
    ]

    cum_offset = 3 * k + h * k
    cum_point = point[cum_offset:].reshape(k, k)
    cumulative_results = [
        [agg(draws[:, cum_offset + i * k + j], cum_point[i, j]) for j in range(k)]
        for i in range(k)
    ]

    # per-quarter percentile bands of the counterfactual share path (for plots)
    path_offset = 3 * k
    share_series = _share_series(series, spec, fitted, forecasted,
                                 draws[:, path_offset:path_offset + h * k],
                                 bootstrap_cfg)
    cell_series = _cell_series(series, spec, engine.pre_quarters, fc_mean, fc_var, scale)

    metadata = {
        "t_star": str(spec.t_star),
        "horizon": h,
        "window": [str(q) for q in spec.window(series)],
        "scale": scale,
        "mode": bootstrap_cfg.mode,
        "B": bootstrap_cfg.B,
        "master_seed": bootstrap_cfg.master_seed,
        "ci_level": bootstrap_cfg.ci_level,
        "population": population,
        "orders": engine.meta["orders"],
        "cell_warnings": engine.meta["cell_warnings"],
        "series_meta": series.meta,
    }

    return EffectReport(
        space=series.space,
        t_star=spec.t_star,
        horizon=h,
        population=population,
        fitted_share_path=fitted,
        forecasted_share_path=forecasted,
        fitted_shares=point[k:2 * k],
        forecasted_shares=point[2 * k:3 * k],
        fitted_shares_se=fitted_se,
        forecasted_shares_se=fc_se,
        share_diffs=share_diffs,
        share_diff_results=share_results,
        count_diffs=count_diffs,
        count_diff_results=count_results,
        cumulative_fitted=chain_product(fitted_chain),
        cumulative_forecasted=chain_product(forecast_chain),
        cumulative_effects=cum_point,
        cumulative_results=cumulative_results,
        cell_series=cell_series,
        share_series=share_series,
        metadata=metadata,
    )


def _share_series(series, spec, fitted, forecasted, path_draws, cfg) -> dict[str, dict]:
    start, _ = spec.window(series)
    quarters = quarter_range(start, spec.t_star.shift(spec.horizon))
    k = series.space.k
    h = spec.horizon
    out: dict[str, dict] = {}
    by_q = {s.period: s for s in fitted}
    fc_by_q = {s.period: s for s in forecasted}
    for i, lab in enumerate(series.space.labels):
        rows = []
        for q in quarters:
            obs = series.shares.get(q)
            row = {
                "period": str(q),
                "observed": None if obs is None else float(obs.values[i]),
                "fitted": None,
                "forecast": None,
                "lo95": None,
                "hi95": None,
            }
            if q in by_q:
                row["fitted"] = float(by_q[q].values[i])
            if q in fc_by_q:
                hh = q.index() - spec.t_star.index() - 1
                col = path_draws[:, hh * k + i]
                res = se_and_ci(col, cfg, point=float(fc_by_q[q].values[i]))
                row["forecast"] = res.point
                row["lo95"] = res.ci_lo
                row["hi95"] = res.ci_hi
            rows.append(row)
        out[lab] = {"state": lab, "rows": rows}
    return out


def _cell_series(series, spec, pre_quarters, fc_mean, fc_var, scale) -> dict[str, dict]:
    labels = series.space.labels
    quarters = pre_quarters + spec.horizon_quarters()
    out: dict[str, dict] = {}
    z = 1.959963984540054  # two-sided 95% normal quantile
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            rows = []
            for q in quarters:
                row = {"period": str(q), "observed": None, "forecast": None,
                       "lo95": None, "hi95": None}
                if q in series.matrices:
                    row["observed"] = float(series.matrices[q].entries[i, j])
                hh = q.index() - spec.t_star.index() - 1
                if hh >= 0:
                    m = fc_mean[hh, i, j]
                    sd = math.sqrt(max(fc_var[hh, i, j], 0.0))
                    if scale == "logit":
                        center = _logit(np.array([m]))[0]
                        lo = float(_expit(np.array([center - z * sd]))[0])
                        hi = float(_expit(np.array([center + z * sd]))[0])
                    else:
                        lo = max(0.0, m - z * sd)
                        hi = min(1.0, m + z * sd)
                    row["forecast"] = float(m)
                    row["lo95"] = lo
                    row["hi95"] = hi
                rows.append(row)
            out[f"{a}_{b}"] = {"from": a, "to": b, "rows": rows}
    return out


def placebo(
    series: QuarterSeries,
    placebo_spec: InterventionSpec,
    population: float,
    bootstrap_cfg: BootstrapConfig,
    scale: str = "logit",
    threads: int = 1,
    true_t_star: QuarterId | None = None,
) -> PlaceboReport:
    """Rerun the pipeline at a fake intervention date; pass means nothing significant.

    When the true intervention quarter is known, the placebo evaluation window
    (fake t_star plus horizon) must end before it.
    """
    if true_t_star is not None:
        last = placebo_spec.t_star.shift(placebo_spec.horizon)
        if not last < true_t_star:
            raise ValueError(
                f"placebo window through {last} overlaps the true intervention at {true_t_star}"
            )
    report = effects(series, placebo_spec, population, bootstrap_cfg, scale, threads)
    passed = not any(report.significant_counts)
    report.metadata["placebo"] = True
    report.metadata["true_t_star"] = None if true_t_star is None else str(true_t_star)
    return PlaceboReport(effect=report, passed=passed)


def shift_tstar(
    series: QuarterSeries,
    spec: InterventionSpec,
    new_tstar: QuarterId,
    population: float,
    bootstrap_cfg: BootstrapConfig,
    scale: str = "logit",
    threads: int = 1,
) -> ShiftReport:
    """Robustness to moving the intervention boundary by at most one quarter."""
    shift = new_tstar.index() - spec.t_star.index()
    if abs(shift) > 1:
        raise ShiftTooLarge(f"boundary shift of {shift} quarters (max 1) from {spec.t_star}")
    base = effects(series, spec, population, bootstrap_cfg, scale, threads)
    shifted_spec = InterventionSpec(new_tstar, spec.horizon, spec.window_start)
    shifted = effects(series, shifted_spec, population, bootstrap_cfg, scale, threads)
    shifted.metadata["shifted_from"] = str(spec.t_star)
    return ShiftReport(base=base, shifted=shifted, shift=shift)
