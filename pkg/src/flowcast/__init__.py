"""Labour-market transition dynamics and counterfactual policy evaluation.

Estimate quarterly transition matrices and state shares from rotating-panel
survey microdata, forecast them past an intervention date to build a
no-intervention counterfactual, quantify share / head-count / cumulative-flow
effects with resampling inference, and stress the result with placebo and
boundary-shift harnesses. A synthetic-world generator with exact truth
bookkeeping and a closed-form three-state equilibrium analysis round out the
toolkit. See the ``flowcast`` CLI for the orchestrated pipeline.
"""

from .arima import ArimaFit, ArimaSpec, ForecastResult, fit, forecast, select
from .bootstrap import BootstrapConfig, BootstrapResult, resample, run, se_and_ci
from .counterfactual import (
    EffectReport,
    InterventionSpec,
    PlaceboReport,
    ShiftReport,
    counterfactual_path,
    effects,
    fitted_path,
    forecast_matrices,
    placebo,
    shift_tstar,
)
from .equilibrium import (
    CompositionEffectReport,
    EquilibriumResult,
    ThreeStateChain,
    analyze,
    closed_form_unemployment,
    composition_effect_demo,
    derivative_wrt_mTP,
    stationary_distribution,
)
from .estimation import FlowCounts, QuarterSeries, build_series, estimate_matrix, estimate_shares
from .markov import (
    FIVE_STATES,
    MatrixChain,
    QuarterId,
    ShareVector,
    StateSpace,
    TransitionMatrix,
    chain_product,
    matrix_difference,
    propagate,
    propagate_path,
    quarter_range,
)
from .panel import (
    PanelArrays,
    PersonQuarterRecord,
    SubgroupFilter,
    TransitionRecord,
    apply_filter,
    link_transitions,
    parse_panel,
    write_panel,
)
from .synth import (
    Intervention,
    TrueEffects,
    WorldConfig,
    WorldTruth,
    generate,
    generate_arrays,
    parse_world_config,
    true_effects,
)

__version__ = "0.1.0"

__all__ = [
    "ArimaFit", "ArimaSpec", "ForecastResult", "fit", "forecast", "select",
    "BootstrapConfig", "BootstrapResult", "resample", "run", "se_and_ci",
    "EffectReport", "InterventionSpec", "PlaceboReport", "ShiftReport",
    "counterfactual_path", "effects", "fitted_path", "forecast_matrices",
    "placebo", "shift_tstar",
    "CompositionEffectReport", "EquilibriumResult", "ThreeStateChain", "analyze",
    "closed_form_unemployment", "composition_effect_demo", "derivative_wrt_mTP",
    "stationary_distribution",
    "FlowCounts", "QuarterSeries", "build_series", "estimate_matrix", "estimate_shares",
    "FIVE_STATES", "MatrixChain", "QuarterId", "ShareVector", "StateSpace",
    "TransitionMatrix", "chain_product", "matrix_difference", "propagate",
    "propagate_path", "quarter_range",
    "PanelArrays", "PersonQuarterRecord", "SubgroupFilter", "TransitionRecord",
    "apply_filter", "link_transitions", "parse_panel", "write_panel",
    "Intervention", "TrueEffects", "WorldConfig", "WorldTruth", "generate",
    "generate_arrays", "parse_world_config", "true_effects",
]
