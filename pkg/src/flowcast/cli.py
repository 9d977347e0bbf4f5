"""Command-line interface: evaluate, placebo, shift, equilibrium, synth.

Every subcommand reads its settings from flags, optionally backed by a
``key = value`` config file with identical keys (flags override the file).
All randomness flows from one master seed, outputs land only inside the
configured output directory, and reruns with the same inputs and seed write
byte-identical reports. On failure a machine-readable JSON error line goes to
stdout and the exit code identifies the error family: 2 usage/config,
3 input/IO, 4 data/estimation, 1 unexpected.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report as report_mod
from .bootstrap import BootstrapConfig
from .counterfactual import InterventionSpec, effects, placebo, shift_tstar
from .equilibrium import ThreeStateChain, analyze
from .errors import ConfigInvalid, FlowcastError, PanelFormatError
from .estimation import build_series
from .markov import FIVE_STATES, QuarterId, StateSpace, TransitionMatrix
from .panel import PanelArrays, SubgroupFilter, parse_panel, write_panel
from .synth import CONFIG_DOC, generate, parse_world_config, parse_key_values

_USAGE_ERRORS = (ConfigInvalid, ValueError, KeyError)
_IO_ERRORS = (FileNotFoundError, PermissionError, IsADirectoryError, PanelFormatError)


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "message": message}))
    return code


def _merge_config(args: argparse.Namespace, keys: list[str]) -> dict[str, str]:
    """Config-file values for ``keys``, overridden by explicitly set flags."""
    merged: dict[str, str] = {}
    if getattr(args, "config", None):
        file_values = parse_key_values(args.config)
        unknown = set(file_values) - set(keys)
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = str(value)
    return merged


def _parse_window(text: str) -> tuple[QuarterId, QuarterId]:
    try:
        start, end = text.split(":")
    except ValueError:
        raise ConfigInvalid(f"window must look like 2016Q1:2018Q3, got {text!r}") from None
    return QuarterId.parse(start), QuarterId.parse(end)


_EVALUATE_KEYS = ["input", "window", "tstar", "horizon", "population", "bootstrap",
                  "seed", "mode", "filter", "scale", "out", "threads", "figures",
                  "states", "weight_from", "true_tstar", "new_tstar"]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value file with the same keys as the flags")
    parser.add_argument("--input", help="panel CSV (.gz accepted)")
    parser.add_argument("--window", help="observation window, e.g. 2016Q1:2018Q3")
    parser.add_argument("--tstar", help="intervention quarter, e.g. 2018Q3")
    parser.add_argument("--horizon", type=int, help="forecast horizon in quarters (default 4)")
    parser.add_argument("--population", type=float,
                        help="working-age head count used for count differences")
    parser.add_argument("--bootstrap", type=int, help="replicate count B (default 999)")
    parser.add_argument("--seed", type=int, help="master seed (default 0)")
    parser.add_argument("--mode", choices=["full_pipeline", "estimation_only"],
                        help="bootstrap mode (default full_pipeline)")
    parser.add_argument("--filter", dest="filter",
                        help="subgroup filter, e.g. sex=F | age<35 | edu=low | region=south")
    parser.add_argument("--scale", choices=["logit", "raw"],
                        help="forecast scale for matrix entries (default logit)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="worker threads (default 1)")
    parser.add_argument("--no-figures", dest="figures", action="store_const", const="0",
                        help="skip PNG figure rendering")
    parser.add_argument("--states", help="comma-separated state labels (default SE,TE,PE,U,IN)")
    parser.add_argument("--weight-from", dest="weight_from",
                        choices=["destination", "origin"],
                        help="which quarter's weight a transition carries (default destination)")


def _evaluation_inputs(cfg: dict[str, str]):
    for key in ("input", "window", "tstar", "population", "out"):
        if key not in cfg:
            raise ConfigInvalid(f"missing required setting --{key}")
    space = (StateSpace(tuple(s.strip() for s in cfg["states"].split(",")))
             if "states" in cfg else FIVE_STATES)
    window_start, window_end = _parse_window(cfg["window"])
    t_star = QuarterId.parse(cfg["tstar"])
    if window_end != t_star:
        raise ConfigInvalid(f"window must end at tstar ({t_star}), got {window_end}")
    horizon = int(cfg.get("horizon", "4"))
    subgroup = SubgroupFilter.parse(cfg.get("filter", "all"))
    records = parse_panel(cfg["input"], space=space)
    panel = PanelArrays.from_records(records, space)
    series = build_series(
        panel, space,
        window=(window_start, t_star.shift(horizon)),
        subgroup=subgroup,
        weight_from=cfg.get("weight_from", "destination"),
    )
    spec = InterventionSpec(t_star, horizon, window_start)
    bootstrap_cfg = BootstrapConfig(
        B=int(cfg.get("bootstrap", "999")),
        master_seed=int(cfg.get("seed", "0")),
        mode=cfg.get("mode", "full_pipeline"),
    )
    common = dict(
        population=float(cfg["population"]),
        bootstrap_cfg=bootstrap_cfg,
        scale=cfg.get("scale", "logit"),
        threads=int(cfg.get("threads", "1")),
    )
    figures = cfg.get("figures", "1") not in ("0", "false", "no")
    return series, spec, common, Path(cfg["out"]), figures


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, _EVALUATE_KEYS)
    series, spec, common, outdir, figures = _evaluation_inputs(cfg)
    result = effects(series, spec, **common)
    result.metadata["filter"] = cfg.get("filter", "all")
    report_mod.write_effect_outputs(result, outdir, figures)
    return 0


def cmd_placebo(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, _EVALUATE_KEYS)
    series, spec, common, outdir, figures = _evaluation_inputs(cfg)
    true_t = QuarterId.parse(cfg["true_tstar"]) if "true_tstar" in cfg else None
    result = placebo(series, spec, true_t_star=true_t, **common)
    result.effect.metadata["filter"] = cfg.get("filter", "all")
    report_mod.write_placebo_outputs(result, outdir, figures)
    return 0


def cmd_shift(args: argparse.Namespace) -> int:
    cfg = _merge_config(args, _EVALUATE_KEYS)
    if "new_tstar" not in cfg:
        raise ConfigInvalid("missing required setting --new-tstar")
    series, spec, common, outdir, figures = _evaluation_inputs(cfg)
    result = shift_tstar(series, spec, QuarterId.parse(cfg["new_tstar"]), **common)
    result.base.metadata["filter"] = cfg.get("filter", "all")
    result.shifted.metadata["filter"] = cfg.get("filter", "all")
    report_mod.write_shift_outputs(result, outdir, figures)
    return 0


def cmd_equilibrium(args: argparse.Namespace) -> int:
    matrix = TransitionMatrix.from_csv(args.matrix)
    chain = ThreeStateChain(matrix, population=args.population)
    result = analyze(chain)
    payload = result.to_json_dict()
    payload["population"] = args.population
    print(json.dumps(payload, indent=2, sort_keys=True))
    print()
    print(report_mod.equilibrium_text(result))
    if args.out:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "equilibrium.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = parse_world_config(args.config)
    records, truth = generate(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_panel(records, outdir / "panel.csv")
    (outdir / "truth.json").write_text(
        json.dumps(truth.to_json_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowcast",
        description="Labour-market transition dynamics and counterfactual policy evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("evaluate", help="fitted-vs-forecasted effect evaluation")
    _add_common(p_eval)
    p_eval.set_defaults(func=cmd_evaluate)

    p_plac = sub.add_parser("placebo", help="rerun the evaluation at a fake intervention date")
    _add_common(p_plac)
    p_plac.add_argument("--true-tstar", dest="true_tstar",
                        help="actual intervention quarter (the placebo window must end before it)")
    p_plac.set_defaults(func=cmd_placebo)

    p_shift = sub.add_parser("shift", help="robustness to moving t* by one quarter")
    _add_common(p_shift)
    p_shift.add_argument("--new-tstar", dest="new_tstar", help="shifted intervention quarter")
    p_shift.set_defaults(func=cmd_shift)

    p_eq = sub.add_parser("equilibrium", help="stationary analysis of a 3x3 (T,P,U) matrix")
    p_eq.add_argument("--matrix", required=True, help="CSV with header T,P,U and labeled rows")
    p_eq.add_argument("--population", type=float, default=1.0)
    p_eq.add_argument("--out", help="optional output directory for equilibrium.json")
    p_eq.set_defaults(func=cmd_equilibrium)

    p_syn = sub.add_parser("synth", help="generate a synthetic rotating-panel world",
                           epilog=CONFIG_DOC,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
    p_syn.add_argument("--config", required=True, help="world config file (key = value lines)")
    p_syn.add_argument("--out", required=True, help="output directory for panel.csv + truth.json")
    p_syn.set_defaults(func=cmd_synth)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _IO_ERRORS as exc:
        return _fail(3, getattr(exc, "code", "io_error"), str(exc))
    except _USAGE_ERRORS as exc:
        return _fail(2, getattr(exc, "code", "usage"), str(exc))
    except FlowcastError as exc:
        return _fail(4, exc.code, str(exc))


if __name__ == "__main__":
    sys.exit(main())
