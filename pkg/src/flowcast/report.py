"""Report rendering: JSON, paper-style tables, plot-ready CSVs, and figures.

Every evaluation run writes a machine-readable ``effects.json``, three table
CSVs mirroring the published layout (averaged shares, head-count differences
with interval rows, cumulative transition effects), one ``series_<from>_<to>.csv``
per matrix cell and one ``series_share_<state>.csv`` per state, plus (unless
disabled) two PNG figures rendered from exactly the same series data.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .counterfactual import EffectReport, PlaceboReport, ShiftReport
from .equilibrium import EquilibriumResult
from .markov import QuarterId


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(float(x))


def write_effect_outputs(report: EffectReport, outdir: str | Path,
                         figures: bool = True) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _dump_json(report.to_json_dict(), outdir / "effects.json")
    write_tables(report, outdir)
    write_series_csvs(report, outdir)
    if figures:
        render_share_figure(report, outdir / "shares.png")
        render_transition_figure(report, outdir / "transitions.png")


def write_placebo_outputs(report: PlaceboReport, outdir: str | Path,
                          figures: bool = True) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _dump_json(report.to_json_dict(), outdir / "placebo.json")
    write_tables(report.effect, outdir)
    write_series_csvs(report.effect, outdir)
    if figures:
        render_share_figure(report.effect, outdir / "shares.png")
        render_transition_figure(report.effect, outdir / "transitions.png")


def write_shift_outputs(report: ShiftReport, outdir: str | Path,
                        figures: bool = True) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    _dump_json(report.to_json_dict(), outdir / "shift.json")
    write_effect_outputs(report.base, outdir / "base", figures)
    write_effect_outputs(report.shifted, outdir / "shifted", figures)


def write_tables(report: EffectReport, outdir: Path) -> None:
    labels = report.space.labels
    header = "," + ",".join(labels) + "\n"

    with open(outdir / "table2a.csv", "w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write("Fitted," + ",".join(_fmt(v) for v in report.fitted_shares) + "\n")
        fh.write("(s.e.)," + ",".join(_fmt(v) for v in report.fitted_shares_se) + "\n")
        fh.write("Forecasted," + ",".join(_fmt(v) for v in report.forecasted_shares) + "\n")
        fh.write("(s.e.)," + ",".join(_fmt(v) for v in report.forecasted_shares_se) + "\n")

    with open(outdir / "table2b.csv", "w", encoding="utf-8") as fh:
        fh.write(header)
        fh.write("C.I. 97.5%," + ",".join(_fmt(r.ci_hi) for r in report.count_diff_results) + "\n")
        fh.write("Difference," + ",".join(_fmt(v) for v in report.count_diffs) + "\n")
        fh.write("C.I. 2.5%," + ",".join(_fmt(r.ci_lo) for r in report.count_diff_results) + "\n")
        fh.write("significant," + ",".join(str(int(r.significant))
                                           for r in report.count_diff_results) + "\n")

    with open(outdir / "table2c.csv", "w", encoding="utf-8") as fh:
        fh.write(header)
        for i, lab in enumerate(labels):
            fh.write(lab + "," + ",".join(_fmt(v) for v in report.cumulative_effects[i]) + "\n")

    with open(outdir / "table2c_significance.csv", "w", encoding="utf-8") as fh:
        fh.write(header)
        for i, lab in enumerate(labels):
            fh.write(lab + "," + ",".join(
                str(int(r.significant)) for r in report.cumulative_results[i]) + "\n")


def write_series_csvs(report: EffectReport, outdir: Path) -> None:
    for key, series in report.cell_series.items():
        with open(outdir / f"series_{key}.csv", "w", encoding="utf-8") as fh:
            fh.write("period,observed,forecast,lo95,hi95\n")
            for row in series["rows"]:
                fh.write(",".join([row["period"], _fmt(row["observed"]),
                                   _fmt(row["forecast"]), _fmt(row["lo95"]),
                                   _fmt(row["hi95"])]) + "\n")
    for lab, series in report.share_series.items():
        with open(outdir / f"series_share_{lab}.csv", "w", encoding="utf-8") as fh:
            fh.write("period,observed,fitted,forecast,lo95,hi95\n")
            for row in series["rows"]:
                fh.write(",".join([row["period"], _fmt(row["observed"]), _fmt(row["fitted"]),
                                   _fmt(row["forecast"]), _fmt(row["lo95"]),
                                   _fmt(row["hi95"])]) + "\n")


# ---------------------------------------------------------------------------
# Figures


def _axis_positions(rows: list[dict]) -> tuple[np.ndarray, list[str]]:
    periods = [row["period"] for row in rows]
    xs = np.array([QuarterId.parse(p).index() for p in periods], dtype=float)
    return xs - xs[0], periods


def _plot_series(ax, rows: list[dict], t_star: QuarterId, observed_key: str = "observed",
                 fitted_key: str | None = None) -> None:
    xs, periods = _axis_positions(rows)
    obs = np.array([math.nan if r[observed_key] is None else r[observed_key] for r in rows])
    fc = np.array([math.nan if r["forecast"] is None else r["forecast"] for r in rows])
    lo = np.array([math.nan if r["lo95"] is None else r["lo95"] for r in rows])
    hi = np.array([math.nan if r["hi95"] is None else r["hi95"] for r in rows])
    ax.plot(xs, obs, color="C0", lw=1.4, label="observed")
    if fitted_key is not None:
        fit = np.array([math.nan if r[fitted_key] is None else r[fitted_key] for r in rows])
        if np.isfinite(fit).any():
            ax.plot(xs, fit, color="C2", lw=1.2, ls="--", label="fitted")
    band = np.isfinite(fc)
    if band.any():
        ax.plot(xs[band], fc[band], color="C3", lw=1.4, label="forecast")
        ax.fill_between(xs[band], lo[band], hi[band], color="C3", alpha=0.2, lw=0)
    t_idx = t_star.index() - QuarterId.parse(periods[0]).index()
    ax.axvline(t_idx, color="0.4", ls=":", lw=1.0)
    step = max(1, len(xs) // 4)
    ax.set_xticks(xs[::step])
    ax.set_xticklabels(periods[::step], rotation=45, fontsize=7)
    ax.tick_params(labelsize=7)


def render_share_figure(report: EffectReport, path: str | Path) -> None:
    labels = report.space.labels
    ncols = 3
    nrows = -(-len(labels) // ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.2 * ncols, 3.2 * nrows), squeeze=False)
    for idx, lab in enumerate(labels):
        ax = axes[idx // ncols][idx % ncols]
        _plot_series(ax, report.share_series[lab]["rows"], report.t_star, fitted_key="fitted")
        ax.set_title(f"share {lab}", fontsize=9)
    for idx in range(len(labels), nrows * ncols):
        axes[idx // ncols][idx % ncols].set_axis_off()
    handles, lbls = axes[0][0].get_legend_handles_labels()
    fig.legend(handles, lbls, loc="lower right", fontsize=8, frameon=False)
    fig.suptitle(f"Observed vs counterfactual shares (t* = {report.t_star})", fontsize=11)
    fig.tight_layout(rect=(0, 0, 1, 0.96))
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_transition_figure(report: EffectReport, path: str | Path) -> None:
    labels = report.space.labels
    k = len(labels)
    fig, axes = plt.subplots(k, k, figsize=(2.9 * k, 2.4 * k), squeeze=False)
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            ax = axes[i][j]
            _plot_series(ax, report.cell_series[f"{a}_{b}"]["rows"], report.t_star)
            ax.set_title(f"{a} → {b}", fontsize=8)
    fig.suptitle(f"Transition probabilities, observed vs forecast (t* = {report.t_star})",
                 fontsize=12)
    fig.tight_layout(rect=(0, 0, 1, 0.97))
    fig.savefig(path, dpi=110)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Equilibrium report


def equilibrium_text(result: EquilibriumResult) -> str:
    labels = result.stationary.space.labels
    rows = [("state", "stationary share")]
    rows += [(lab, f"{result.stationary.values[i]:.6f}") for i, lab in enumerate(labels)]
    width = max(len(r[0]) for r in rows)
    lines = [f"{name:<{width}}  {value}" for name, value in rows]
    lines.append("")
    lines.append(f"closed-form unemployment share : {result.closed_form_piU:.6f}")
    lines.append(f"d piU / d m(T,P)               : {result.derivative_piU_wrt_mTP:.6f}")
    lines.append(f"sign term m(P,U) - m(T,U)      : {result.sign_term:.6f}")
    return "\n".join(lines)
