"""Long-run equilibrium analysis of a three-state (T, P, U) labour market.

For a constant, irreducible, aperiodic chain over temporary employment (T),
permanent employment (P), and unemployment (U), the stationary distribution
exists and is independent of the starting point. The unemployment component
has a closed form obtained by eliminating ``pi_T`` and ``pi_P`` from the
two-equation stationary system (with ``pi_U = 1 - pi_T - pi_P``)::

    pi_U = N / D
    N = m(T,U) (1 - m(P,P)) + m(T,P) m(P,U)
    D = (1 - m(P,P)) (1 + m(T,U) - m(U,U))
      + m(T,P)      (1 + m(P,U) - m(U,U))
      - m(U,P)      (m(P,U)     - m(T,U))

where ``m(i, j)`` is the i-to-j transition probability. Differentiating with
respect to ``m(T,P)`` while compensating on the persistence entry ``m(T,T)``
(so the T row stays stochastic and ``m(T,U)`` stays fixed) gives::

    d pi_U / d m(T,P)
      = (m(P,U) - m(T,U)) [ (1 - m(P,P)) m(U,T) + m(U,P) m(P,T) ] / D**2

so the sign of the derivative depends only on ``m(P,U) - m(T,U)`` whenever
the bracketed factor is positive: re-routing temporary workers into permanent
jobs can shrink the unemployment stock purely through composition, with the
entry and exit rates of unemployment untouched.

Every closed-form evaluation is guarded by the numeric stationary solution;
a disagreement beyond ``1e-8`` raises :class:`ClosedFormMismatch`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    ClosedFormMismatch,
    FlowcastError,
    InvalidPerturbation,
    NonUniqueStationary,
    NotAperiodic,
    NotIrreducible,
)
from .markov import ShareVector, StateSpace, TransitionMatrix

THREE_STATES = StateSpace(("T", "P", "U"))

_GUARD_TOL = 1e-8


@dataclass(frozen=True)
class ThreeStateChain:
    """A constant 3x3 chain over (T, P, U) plus the fixed population mass."""

    matrix: TransitionMatrix
    population: float = 1.0

    def __post_init__(self) -> None:
        if self.matrix.space.k != 3:
            raise ValueError("chain must have exactly three states (T, P, U)")
        if self.population <= 0:
            raise ValueError("population must be positive")

    def m(self, i: int, j: int) -> float:
        return float(self.matrix.entries[i, j])


@dataclass(frozen=True)
class EquilibriumResult:
    stationary: ShareVector
    closed_form_piU: float
    derivative_piU_wrt_mTP: float
    sign_term: float  # m(P,U) - m(T,U)

    def to_json_dict(self) -> dict:
        return {
            "stationary": self.stationary.to_json_dict(),
            "closed_form_piU": self.closed_form_piU,
            "derivative_piU_wrt_mTP": self.derivative_piU_wrt_mTP,
            "sign_term": self.sign_term,
        }


# ---------------------------------------------------------------------------
# Structure checks


def _positive_graph(entries: np.ndarray) -> np.ndarray:
    return entries > 0.0


def _reachable(adj: np.ndarray) -> np.ndarray:
    k = adj.shape[0]
    reach = adj.copy()
    for _ in range(k):
        reach = reach | (reach @ adj)
    return reach


def check_structure(matrix: TransitionMatrix) -> None:
    """Raise unless the chain is irreducible and aperiodic."""
    adj = _positive_graph(matrix.entries)
    k = adj.shape[0]
    reach = _reachable(adj)
    mutual = reach & reach.T
    if not mutual.all():
        # closed communicating classes: SCCs with no edge leaving the class
        classes: list[set[int]] = []
        seen: set[int] = set()
        for i in range(k):
            if i in seen:
                continue
            cls = {j for j in range(k) if mutual[i, j] or i == j}
            cls |= {i}
            seen |= cls
            classes.append(cls)
        closed = [
            c for c in classes
            if not any(adj[i, j] for i in c for j in range(k) if j not in c)
        ]
        if len(closed) > 1:
            raise NonUniqueStationary(
                f"{len(closed)} closed classes: every mixture of their "
                "stationary vectors is stationary"
            )
        raise NotIrreducible("the graph of positive transitions is not strongly connected")

    if np.any(np.diag(matrix.entries) > 0.0):
        return  # a self-loop makes an irreducible chain aperiodic
    # period = gcd over edges (u, v) of level(u) + 1 - level(v), BFS from node 0
    level = np.full(k, -1)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.flatnonzero(adj[u]):
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    period = 0
    for u in range(k):
        for v in np.flatnonzero(adj[u]):
            period = math.gcd(period, int(level[u]) + 1 - int(level[v]))
    if abs(period) != 1:
        raise NotAperiodic(f"chain has period {abs(period)}")


# ---------------------------------------------------------------------------
# Stationary distribution


def _power_iteration(entries: np.ndarray, tol: float = 1e-14,
                     maxiter: int = 200_000) -> np.ndarray:
    k = entries.shape[0]
    pi = np.full(k, 1.0 / k)
    for _ in range(maxiter):
        nxt = pi @ entries
        nxt /= nxt.sum()
        if np.max(np.abs(nxt - pi)) < tol:
            return nxt
        pi = nxt
    return pi


def stationary_distribution(chain: ThreeStateChain | TransitionMatrix) -> ShareVector:
    """The unique pi with pi M = pi and sum(pi) = 1, for general K.

    Solved as a linear system with the normalization constraint and
    cross-validated against power iteration to 1e-10.
    """
    matrix = chain.matrix if isinstance(chain, ThreeStateChain) else chain
    check_structure(matrix)
    k = matrix.space.k
    a = matrix.entries.T - np.eye(k)
    a[-1, :] = 1.0
    b = np.zeros(k)
    b[-1] = 1.0
    pi = np.linalg.solve(a, b)
    cross = _power_iteration(matrix.entries)
    if np.max(np.abs(pi - cross)) > 1e-10:
        raise FlowcastError(
            f"stationary solve and power iteration disagree by "
            f"{np.max(np.abs(pi - cross)):.2e}"
        )
    return ShareVector(matrix.space, pi, period=None)


# ---------------------------------------------------------------------------
# Closed forms (T = 0, P = 1, U = 2)


def _closed_form_parts(c: ThreeStateChain) -> tuple[float, float]:
    mTP, mTU = c.m(0, 1), c.m(0, 2)
    mPP, mPU = c.m(1, 1), c.m(1, 2)
    mUP, mUU = c.m(2, 1), c.m(2, 2)
    num = mTU * (1.0 - mPP) + mTP * mPU
    den = (
        (1.0 - mPP) * (1.0 + mTU - mUU)
        + mTP * (1.0 + mPU - mUU)
        - mUP * (mPU - mTU)
    )
    return num, den


def closed_form_unemployment(chain: ThreeStateChain) -> float:
    """Closed-form equilibrium unemployment share, guarded by the eigen solution."""
    num, den = _closed_form_parts(chain)
    pi_u = num / den
    reference = stationary_distribution(chain).values[2]
    if abs(pi_u - reference) > _GUARD_TOL:
        raise ClosedFormMismatch(
            f"closed form {pi_u!r} vs stationary solution {reference!r}"
        )
    return pi_u


def derivative_wrt_mTP(chain: ThreeStateChain) -> float:
    """Analytic d pi_U / d m(T,P), compensating the shift on m(T,T).

    Holding every other entry fixed keeps the T row stochastic by moving
    persistence mass m(T,T); the sign equals the sign of m(P,U) - m(T,U)
    whenever (1 - m(P,P)) m(U,T) + m(U,P) m(P,T) is positive.
    """
    check_structure(chain.matrix)
    c = chain
    _, den = _closed_form_parts(c)
    sign_term = c.m(1, 2) - c.m(0, 2)
    bracket = (1.0 - c.m(1, 1)) * c.m(2, 0) + c.m(2, 1) * c.m(1, 0)
    return sign_term * bracket / (den * den)


def analyze(chain: ThreeStateChain) -> EquilibriumResult:
    """Full equilibrium report for one chain."""
    stationary = stationary_distribution(chain)
    return EquilibriumResult(
        stationary=stationary,
        closed_form_piU=closed_form_unemployment(chain),
        derivative_piU_wrt_mTP=derivative_wrt_mTP(chain),
        sign_term=chain.m(1, 2) - chain.m(0, 2),
    )


@dataclass(frozen=True)
class CompositionEffectReport:
    """Equilibrium unemployment before and after a compensated m(T,P) bump."""

    delta: float
    piU_before: float
    piU_after: float
    sign_term: float

    @property
    def change(self) -> float:
        return self.piU_after - self.piU_before

    def to_json_dict(self) -> dict:
        return {
            "delta": self.delta,
            "piU_before": self.piU_before,
            "piU_after": self.piU_after,
            "change": self.change,
            "sign_term": self.sign_term,
        }


def composition_effect_demo(chain: ThreeStateChain, delta: float) -> CompositionEffectReport:
    """Bump m(T,P) by delta (compensated on m(T,T)) and compare equilibria.

    The U row and the to-U entries of the other rows stay fixed: unemployment's
    own inflow and outflow rates are untouched, so any change in the stock is
    pure composition.
    """
    entries = chain.matrix.entries.copy()
    new_TP = entries[0, 1] + delta
    new_TT = entries[0, 0] - delta
    if not (0.0 <= new_TP <= 1.0 and 0.0 <= new_TT <= 1.0):
        raise InvalidPerturbation(
            f"delta {delta} leaves the T row non-stochastic "
            f"(m(T,P)={new_TP:.4f}, m(T,T)={new_TT:.4f})"
        )
    before = closed_form_unemployment(chain)
    entries[0, 1] = new_TP
    entries[0, 0] = new_TT
    perturbed = ThreeStateChain(
        TransitionMatrix(chain.matrix.space, entries, chain.matrix.period),
        chain.population,
    )
    after = closed_form_unemployment(perturbed)
    return CompositionEffectReport(
        delta=delta,
        piU_before=before,
        piU_after=after,
        sign_term=chain.m(1, 2) - chain.m(0, 2),
    )
