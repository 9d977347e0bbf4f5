"""Low-order ARIMA fitting, order selection, and multi-step forecasting.

Designed for the short quarterly series this package lives on (roughly ten
points in a pre-intervention window), the model grid is deliberately tiny:
``p <= 2``, ``d <= 1``, ``q <= 1``, with an optional mean ("drift") term for
the differenced series. Anything larger is unidentifiable at these lengths.

Fitting maximizes the exact Gaussian likelihood of the differenced series
through a state-space innovations recursion with the stationary initial
covariance, using a derivative-free simplex search over an unconstrained
parameterization: partial autocorrelations mapped through ``tanh`` and
expanded by the Durbin-Levinson recursion, which keeps the AR polynomial
stationary and the MA polynomial invertible by construction. The innovation
variance is concentrated out of the likelihood.

Restart policy: the simplex starts from the zero vector in transformed space;
if it fails to converge the two fallback starts ``+/-(atanh(0.5), ...)`` for
AR and ``-/+(atanh(0.3), ...)`` for MA terms are tried in order, and
:class:`NonConvergence` is raised only if all three fail. A warm start, when
supplied, is tried before the documented points.

Order selection ranks the grid by AICc, screens out candidates with roots at
the unit circle or near AR/MA cancellation, and treats AICc differences below
:data:`TIE_MARGIN` as ties resolved toward parsimony (see :func:`select`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import AllFitsFailed, NonConvergence, SeriesTooShort
from .markov import QuarterId

SIGMA2_FLOOR = 1e-12
#: simplex convergence tolerance on the (scaled) negative log-likelihood
LOGLIK_TOL = 1e-8


@dataclass(frozen=True, slots=True)
class ArimaSpec:
    """Model order (p, d, q) plus a mean/drift flag for the differenced series."""

    p: int
    d: int
    q: int
    drift: bool = False

    def __post_init__(self) -> None:
        if not (0 <= self.p <= 2 and 0 <= self.d <= 1 and 0 <= self.q <= 1):
            raise ValueError(f"order out of the supported grid: {self}")

    @property
    def n_params(self) -> int:
        # +1 for the innovation variance
        return self.p + self.q + int(self.drift) + 1

    def min_length(self) -> int:
        return self.p + self.d + self.q + 3

    def label(self) -> str:
        return f"({self.p},{self.d},{self.q})" + ("+drift" if self.drift else "")


@dataclass(frozen=True)
class ArimaFit:
    """A fitted model: coefficients, innovation variance, and fit measures."""

    spec: ArimaSpec
    ar: tuple[float, ...]
    ma: tuple[float, ...]
    drift_coeff: float
    sigma2: float
    loglik: float
    aicc: float
    n_obs: int
    residuals: np.ndarray = field(repr=False)
    residual_scales: np.ndarray = field(repr=False)
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        """JSON-ready diagnostics: spec, coefficients, aicc, residuals."""
        return {
            "spec": {"p": self.spec.p, "d": self.spec.d, "q": self.spec.q,
                     "drift": self.spec.drift},
            "ar": list(self.ar),
            "ma": list(self.ma),
            "drift_coeff": self.drift_coeff,
            "sigma2": self.sigma2,
            "loglik": self.loglik,
            "aicc": self.aicc,
            "n_obs": self.n_obs,
            "residuals": [float(v) for v in self.residuals],
            "warnings": list(self.warnings),
        }


@dataclass(frozen=True)
class ForecastResult:
    """Minimum-MSE mean path and forecast-error variances, one step per entry."""

    horizon: int
    mean_path: np.ndarray
    variance_path: np.ndarray
    origin: QuarterId | None = None


# ---------------------------------------------------------------------------
# Parameter transforms


def pacf_to_coeffs(pacf: Sequence[float]) -> np.ndarray:
    """Durbin-Levinson expansion of partial autocorrelations into AR coefficients."""
    a = np.zeros(len(pacf))
    for k, r in enumerate(pacf):
        new = a.copy()
        for j in range(k):
            new[j] = a[j] - r * a[k - 1 - j]
        new[k] = r
        a = new
    return a


def coeffs_to_pacf(coeffs: Sequence[float]) -> np.ndarray:
    """Inverse of :func:`pacf_to_coeffs`; input must be stationary."""
    a = np.asarray(coeffs, dtype=float).copy()
    p = len(a)
    pacf = np.zeros(p)
    for k in range(p - 1, -1, -1):
        r = a[k]
        if abs(r) >= 1.0:
            raise ValueError(f"coefficients are not stationary: {coeffs}")
        pacf[k] = r
        prev = np.zeros(k)
        for j in range(k):
            prev[j] = (a[j] + r * a[k - 1 - j]) / (1.0 - r * r)
        a = prev
    return pacf


def _decode(z: np.ndarray, p: int, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Unconstrained vector -> (stationary AR, invertible MA) coefficients."""
    ar = pacf_to_coeffs(np.tanh(z[:p])) if p else np.empty(0)
    ma = -pacf_to_coeffs(np.tanh(z[p:p + q])) if q else np.empty(0)
    return ar, ma


def _encode(ar: Sequence[float], ma: Sequence[float]) -> np.ndarray:
    za = np.arctanh(coeffs_to_pacf(ar)) if len(ar) else np.empty(0)
    zm = np.arctanh(coeffs_to_pacf([-m for m in ma])) if len(ma) else np.empty(0)
    return np.concatenate([za, zm])


# ---------------------------------------------------------------------------
# Exact likelihood via the innovations recursion
#
# Harvey's companion form with state dimension r = max(p, q + 1) <= 2 on this
# grid; lower orders are exact specializations (their second state component
# and covariance entries stay identically zero), so one scalar recursion
# serves every spec. It runs thousands of times inside the optimizer and
# bootstrap loops, hence the optional JIT.


def _filter_core(w, f1, f2, th):
    # stationary initial covariance for T = [[f1, 1], [f2, 0]], R = (1, th)
    denom_p01 = 1.0 - f2
    d = 1.0 - f1 * f1 - f2 * f2 - 2.0 * f1 * f1 * f2 / denom_p01
    if d <= 0.0:
        return math.inf, math.inf, 0.0, 0.0
    p00 = (2.0 * f1 * th / denom_p01 + th * th + 1.0) / d
    p01 = (f1 * f2 * p00 + th) / denom_p01
    p11 = f2 * f2 * p00 + th * th

    r01 = th
    r11 = th * th
    a0 = 0.0
    a1 = 0.0
    sumlog = 0.0
    ssq = 0.0
    for i in range(w.shape[0]):
        y = w[i]
        v = y - a0
        f = p00
        if f < 1e-300:
            return math.inf, math.inf, 0.0, 0.0
        sumlog += math.log(f)
        ssq += v * v / f
        k0 = (f1 * p00 + p01) / f
        k1 = (f2 * p00) / f
        na0 = f1 * a0 + a1 + k0 * v
        a1 = f2 * a0 + k1 * v
        a0 = na0
        tp00 = f1 * p00 + p01
        tp01 = f1 * p01 + p11
        tp10 = f2 * p00
        q00 = tp00 * f1 + tp01 + 1.0
        q01 = tp00 * f2 + r01
        q11 = tp10 * f2 + r11
        p00 = q00 - k0 * k0 * f
        p01 = q01 - k0 * k1 * f
        p11 = q11 - k1 * k1 * f
    return sumlog, ssq, a0, a1


try:  # optional JIT of the hot loop; the pure-Python path is the fallback
    from numba import njit as _njit

    _filter_core = _njit(cache=True, nogil=True)(_filter_core)
except ImportError:  # pragma: no cover - exercised only without numba
    pass


def _filter_collect(w, f1, f2, th):
    """Python twin of :func:`_filter_core` that also stores innovations."""
    denom_p01 = 1.0 - f2
    d = 1.0 - f1 * f1 - f2 * f2 - 2.0 * f1 * f1 * f2 / denom_p01
    if d <= 0.0:
        return math.inf, math.inf, None, None, (0.0, 0.0)
    p00 = (2.0 * f1 * th / denom_p01 + th * th + 1.0) / d
    p01 = (f1 * f2 * p00 + th) / denom_p01
    p11 = f2 * f2 * p00 + th * th
    r01 = th
    r11 = th * th
    a0 = 0.0
    a1 = 0.0
    sumlog = 0.0
    ssq = 0.0
    vs = []
    fs = []
    for y in w:
        v = y - a0
        f = p00
        if f < 1e-300:
            return math.inf, math.inf, None, None, (0.0, 0.0)
        sumlog += math.log(f)
        ssq += v * v / f
        vs.append(v)
        fs.append(f)
        k0 = (f1 * p00 + p01) / f
        k1 = (f2 * p00) / f
        na0 = f1 * a0 + a1 + k0 * v
        a1 = f2 * a0 + k1 * v
        a0 = na0
        tp00 = f1 * p00 + p01
        tp01 = f1 * p01 + p11
        tp10 = f2 * p00
        q00 = tp00 * f1 + tp01 + 1.0
        q01 = tp00 * f2 + r01
        q11 = tp10 * f2 + r11
        p00 = q00 - k0 * k0 * f
        p01 = q01 - k0 * k1 * f
        p11 = q11 - k1 * k1 * f
    return sumlog, ssq, vs, fs, (a0, a1)


def _core_params(ar: np.ndarray, ma: np.ndarray) -> tuple[float, float, float]:
    f1 = float(ar[0]) if len(ar) >= 1 else 0.0
    f2 = float(ar[1]) if len(ar) >= 2 else 0.0
    th = float(ma[0]) if len(ma) >= 1 else 0.0
    return f1, f2, th


def _filter(w: np.ndarray, ar: np.ndarray, ma: np.ndarray, collect: bool = False):
    """Run the innovations recursion; returns (sumlog, ssq, vs, fs, end_state)."""
    f1, f2, th = _core_params(ar, ma)
    if collect:
        return _filter_collect(w, f1, f2, th)
    w = np.ascontiguousarray(w, dtype=np.float64)
    sumlog, ssq, a0, a1 = _filter_core(w, f1, f2, th)
    return sumlog, ssq, None, None, (a0, a1)


def _loglik_parts(sumlog: float, ssq: float, n: int) -> tuple[float, float, bool]:
    """Concentrated sigma^2 (floored) and the resulting exact log-likelihood."""
    sigma2 = ssq / n
    clamped = sigma2 < SIGMA2_FLOOR
    sigma2 = max(sigma2, SIGMA2_FLOOR)
    loglik = -0.5 * (n * math.log(2.0 * math.pi) + n * math.log(sigma2)
                     + ssq / sigma2 + sumlog)
    return sigma2, loglik, clamped


# ---------------------------------------------------------------------------
# Derivative-free simplex minimizer (Nelder-Mead, deterministic)


def _nelder_mead(fn, x0, fatol=LOGLIK_TOL, xatol=1e-6, maxiter=None):
    n = len(x0)
    if maxiter is None:
        maxiter = 400 * (n + 1)
    simplex = [np.asarray(x0, dtype=float)]
    for i in range(n):
        pt = simplex[0].copy()
        pt[i] += 0.1 if pt[i] == 0.0 else 0.05 * abs(pt[i]) + 0.05
        simplex.append(pt)
    fvals = [fn(pt) for pt in simplex]

    for _ in range(maxiter):
        order = np.argsort(fvals, kind="stable")
        simplex = [simplex[i] for i in order]
        fvals = [fvals[i] for i in order]
        if (fvals[-1] - fvals[0] <= fatol
                and max(np.max(np.abs(pt - simplex[0])) for pt in simplex[1:]) <= xatol):
            return simplex[0], fvals[0], True

        centroid = np.mean(simplex[:-1], axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = fn(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = fn(xe)
            simplex[-1], fvals[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            xc = centroid + 0.5 * (simplex[-1] - centroid)
            fc = fn(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
            else:
                best = simplex[0]
                simplex = [best] + [best + 0.5 * (pt - best) for pt in simplex[1:]]
                fvals = [fvals[0]] + [fn(pt) for pt in simplex[1:]]
    return simplex[0], fvals[0], False


# ---------------------------------------------------------------------------
# Fitting


def _difference(series: np.ndarray, d: int) -> np.ndarray:
    return np.diff(series, n=d) if d else np.asarray(series, dtype=float)


def fit(series: Sequence[float], spec: ArimaSpec,
        warm_start: tuple[tuple[float, ...], tuple[float, ...], float] | None = None) -> ArimaFit:
    """Maximum-likelihood fit of one spec to one scalar series.

    ``warm_start`` is an optional ``(ar, ma, drift_coeff)`` triple tried before
    the documented start points (used by resampling loops that refit the same
    spec many times).
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 1:
        raise ValueError("series must be one-dimensional")
    if len(series) < spec.min_length():
        raise SeriesTooShort(
            f"need at least {spec.min_length()} observations for {spec.label()}, "
            f"got {len(series)}"
        )
    w = _difference(series, spec.d)
    n = len(w)
    mean_w = float(np.mean(w))
    warn: list[str] = []

    # degenerate (near-constant) series: no information for ARMA terms
    if float(np.ptp(w)) < 1e-12:
        mu = mean_w if spec.drift else 0.0
        resid = w - mu
        ssq = float(resid @ resid)
        sigma2, loglik, clamped = _loglik_parts(0.0, ssq, n)
        if clamped:
            warn.append("sigma2 clamped to floor (degenerate series)")
        return ArimaFit(spec, (0.0,) * spec.p, (0.0,) * spec.q, mu, sigma2, loglik,
                        _aicc(loglik, spec, n, warn), n, resid, np.ones(n), tuple(warn))

    p, q = spec.p, spec.q

    if p == 0 and q == 0:
        # white noise (+ optional mean): the MLE of the mean is the sample mean
        z_best = np.array([mean_w]) if spec.drift else np.empty(0)
    else:
        def objective(params: np.ndarray) -> float:
            ar, ma = _decode(params, p, q)
            mu = params[p + q] if spec.drift else 0.0
            sumlog, ssq, _, _, _ = _filter(w - mu, ar, ma)
            if not math.isfinite(sumlog):
                return 1e30
            sigma2 = max(ssq / n, SIGMA2_FLOOR)
            return n * math.log(sigma2) + sumlog

        starts = []
        if warm_start is not None:
            try:
                z0 = _encode(warm_start[0], warm_start[1])
                mu0 = [warm_start[2]] if spec.drift else []
                starts.append(np.concatenate([z0, mu0]))
            except ValueError:
                pass
        base_mu = [mean_w] if spec.drift else []
        z_half = math.atanh(0.5)
        z_third = math.atanh(0.3)
        starts.append(np.array([0.0] * (p + q) + base_mu))
        starts.append(np.array([z_half] * p + [-z_third] * q + base_mu))
        starts.append(np.array([-z_half] * p + [z_third] * q + base_mu))

        z_best = None
        for start in starts:
            x, fval, converged = _nelder_mead(objective, start)
            if converged and math.isfinite(fval):
                z_best = x
                break
        if z_best is None:
            raise NonConvergence(
                f"{spec.label()}: simplex failed to converge from all start points"
            )

    ar, ma = _decode(z_best, p, q)
    mu = float(z_best[p + q]) if spec.drift else 0.0
    sumlog, ssq, vs, fs, _ = _filter(w - mu, ar, ma, collect=True)
    sigma2, loglik, clamped = _loglik_parts(sumlog, ssq, n)
    if clamped:
        warn.append("sigma2 clamped to floor (degenerate series)")
    return ArimaFit(
        spec,
        tuple(float(c) for c in ar),
        tuple(float(c) for c in ma),
        mu,
        sigma2,
        loglik,
        _aicc(loglik, spec, n, warn),
        n,
        np.asarray(vs),
        np.asarray(fs),
        tuple(warn),
    )


def _aicc(loglik: float, spec: ArimaSpec, n: int, warn: list[str]) -> float:
    k = spec.n_params
    if n - k - 1 < 1:
        warn.append(f"AICc undefined for {spec.label()} at n={n}")
        return math.inf
    return -2.0 * loglik + 2.0 * k + 2.0 * k * (k + 1) / (n - k - 1)


DEFAULT_GRID = tuple(
    ArimaSpec(p, d, q, drift)
    for p in (0, 1, 2)
    for d in (0, 1)
    for q in (0, 1)
    for drift in (False, True)
)

#: AICc differences below this are treated as ties and resolved toward
#: parsimony; at the series lengths this package targets such differences are
#: well inside estimation noise, and without the band AICc over-selects
#: spurious one-parameter refinements of a true white-noise process (a fitted
#: AR(1) needs |coefficient| above roughly 1.1 to clear the band at ten
#: observations, i.e. only dynamics that are actually identifiable there).
TIE_MARGIN = 5.0
#: candidate fits with AR/MA polynomial roots this close to the unit circle,
#: or with near-cancelling AR and MA roots, are screened out before ranking
ROOT_TOL = 1.02
CANCEL_TOL = 0.15


def _admissible(fit_: ArimaFit, root_tol: float, cancel_tol: float) -> bool:
    ar_roots = (np.roots([-c for c in fit_.ar[::-1]] + [1.0])
                if any(fit_.ar) else np.empty(0))
    ma_roots = (np.roots(list(fit_.ma[::-1]) + [1.0])
                if any(fit_.ma) else np.empty(0))
    if ar_roots.size and np.any(np.abs(ar_roots) < root_tol):
        return False
    if ma_roots.size and np.any(np.abs(ma_roots) < root_tol):
        return False
    for ra in ar_roots:
        for rm in ma_roots:
            if abs(ra - rm) < cancel_tol * max(abs(ra), abs(rm)):
                return False
    return True


def select(series: Sequence[float], grid: Sequence[ArimaSpec] = DEFAULT_GRID,
           tie_margin: float = TIE_MARGIN, root_tol: float = ROOT_TOL,
           cancel_tol: float = CANCEL_TOL) -> ArimaFit:
    """Fit every grid spec whose preconditions hold and return the AICc winner.

    Candidates whose roots sit on the unit circle (to within ``root_tol``) or
    whose AR and MA roots nearly cancel are screened out first (unless that
    empties the grid). All fits within ``tie_margin`` of the minimum AICc are
    treated as tied; ties break toward fewer parameters, then lower AR order.
    Specs that fail to fit are skipped; :class:`AllFitsFailed` is raised only
    if nothing fits, which cannot happen for series of length >= 6 since
    (0,0,0) always fits.
    """
    series = np.asarray(series, dtype=float)
    if len(series) < 6:
        raise SeriesTooShort(f"order selection needs at least 6 observations, got {len(series)}")
    candidates: list[ArimaFit] = []
    for spec in grid:
        if len(series) < spec.min_length():
            continue
        try:
            fitted = fit(series, spec)
        except (NonConvergence, SeriesTooShort):
            continue
        if math.isfinite(fitted.aicc):
            candidates.append(fitted)
    if not candidates:
        raise AllFitsFailed("no spec on the grid produced a finite AICc")
    screened = [f for f in candidates if _admissible(f, root_tol, cancel_tol)]
    candidates = screened or candidates
    best = min(f.aicc for f in candidates)
    tied = [f for f in candidates if f.aicc <= best + tie_margin]
    # parsimony counts differencing as complexity: a random walk is not a
    # simpler description of a level series than a plain mean
    tied.sort(
        key=lambda f: (f.spec.p + f.spec.q + int(f.spec.drift) + f.spec.d,
                       f.spec.p, f.spec.d, f.spec.q, f.spec.drift, f.aicc)
    )
    return tied[0]


# ---------------------------------------------------------------------------
# Forecasting


def psi_weights(ar: Sequence[float], ma: Sequence[float], count: int) -> np.ndarray:
    """MA(infinity) weights psi_0..psi_{count-1} of a stationary ARMA model."""
    p, q = len(ar), len(ma)
    psi = np.zeros(count)
    psi[0] = 1.0
    for j in range(1, count):
        acc = ma[j - 1] if j <= q else 0.0
        for i in range(1, min(j, p) + 1):
            acc += ar[i - 1] * psi[j - i]
        psi[j] = acc
    return psi


def forecast(fit_: ArimaFit, series: Sequence[float], f: int,
             origin: QuarterId | None = None) -> ForecastResult:
    """Minimum-MSE forecast of ``f`` future values with psi-weight variances.

    The filtered end state of ``series`` under the fitted coefficients drives
    the mean path, so a fixed fit can be re-applied to a resampled series. For
    ``d = 1`` the variance path accumulates psi weights, so a drift-free
    random-walk spec forecasts the last observed value with variance
    ``sigma2 * h``.
    """
    if f < 1:
        raise ValueError(f"forecast horizon must be >= 1, got {f}")
    series = np.asarray(series, dtype=float)
    spec = fit_.spec
    w = _difference(series, spec.d) - fit_.drift_coeff
    ar = np.asarray(fit_.ar)
    ma = np.asarray(fit_.ma)
    _, _, _, _, state = _filter(w, ar, ma)

    deviations = np.zeros(f)
    a0, a1 = state
    f1, f2, _ = _core_params(ar, ma)
    for h in range(f):
        deviations[h] = a0
        a0, a1 = f1 * a0 + a1, f2 * a0
    step_means = deviations + fit_.drift_coeff

    psi = psi_weights(fit_.ar, fit_.ma, f)
    if spec.d == 0:
        mean_path = step_means
        variance_path = fit_.sigma2 * np.cumsum(psi**2)
    else:
        mean_path = series[-1] + np.cumsum(step_means)
        variance_path = fit_.sigma2 * np.cumsum(np.cumsum(psi) ** 2)
    return ForecastResult(f, mean_path, variance_path, origin)
