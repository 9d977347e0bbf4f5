"""Exception hierarchy shared across the package.

Every error raised by flowcast derives from :class:`FlowcastError` so callers
(and the CLI) can distinguish domain failures from programming errors.
"""

from __future__ import annotations


class FlowcastError(Exception):
    """Base class for all flowcast errors."""

    #: short machine-readable code used by the CLI error JSON
    code = "error"


# ---------------------------------------------------------------------------
# Markov algebra


class StateSpaceMismatch(FlowcastError):
    code = "state_space_mismatch"


class PeriodMismatch(FlowcastError):
    code = "period_mismatch"


class EmptyChain(FlowcastError):
    code = "empty_chain"


class InvalidShareVector(FlowcastError):
    code = "invalid_share_vector"


class InvalidTransitionMatrix(FlowcastError):
    code = "invalid_transition_matrix"


class BadQuarterFormat(FlowcastError):
    code = "bad_quarter_format"


# ---------------------------------------------------------------------------
# Panel ingestion


class PanelFormatError(FlowcastError):
    code = "panel_format"


class MissingColumn(PanelFormatError):
    code = "missing_column"


class BadStateLabel(PanelFormatError):
    code = "bad_state_label"


class NonPositiveWeight(PanelFormatError):
    code = "non_positive_weight"


class DuplicateObservation(FlowcastError):
    code = "duplicate_observation"


# ---------------------------------------------------------------------------
# Estimation


class EmptyQuarter(FlowcastError):
    code = "empty_quarter"


class WindowNotCovered(FlowcastError):
    code = "window_not_covered"


class ZeroRowFallback(UserWarning):
    """A state had no observed leavers; its row was filled with the identity."""


# ---------------------------------------------------------------------------
# Time-series fitting


class SeriesTooShort(FlowcastError):
    code = "series_too_short"


class NonConvergence(FlowcastError):
    code = "non_convergence"


class AllFitsFailed(FlowcastError):
    code = "all_fits_failed"


# ---------------------------------------------------------------------------
# Counterfactual pipeline


class MissingQuarter(FlowcastError):
    code = "missing_quarter"


class ShiftTooLarge(FlowcastError):
    code = "shift_too_large"


# ---------------------------------------------------------------------------
# Bootstrap


class EmptySample(FlowcastError):
    code = "empty_sample"


class TooFewReplicates(FlowcastError):
    code = "too_few_replicates"


class TooManyFailedReplicates(FlowcastError):
    code = "too_many_failed_replicates"


# ---------------------------------------------------------------------------
# Equilibrium analysis


class NotIrreducible(FlowcastError):
    code = "not_irreducible"


class NotAperiodic(FlowcastError):
    code = "not_aperiodic"


class NonUniqueStationary(NotIrreducible):
    code = "non_unique_stationary"


class ClosedFormMismatch(FlowcastError):
    code = "closed_form_mismatch"


class InvalidPerturbation(FlowcastError):
    code = "invalid_perturbation"


# ---------------------------------------------------------------------------
# Synthetic worlds


class ConfigInvalid(FlowcastError):
    code = "config_invalid"


class HorizonOutOfRange(FlowcastError):
    code = "horizon_out_of_range"
