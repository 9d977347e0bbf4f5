"""Stationary distributions and the closed-form equilibrium unemployment share."""

import numpy as np
import pytest

import flowcast as fc
from flowcast.equilibrium import THREE_STATES, _closed_form_parts, check_structure
from flowcast.errors import (
    InvalidPerturbation,
    NonUniqueStationary,
    NotAperiodic,
    NotIrreducible,
)

#: hand-solved example: stationary vector is (3.6, 8.4, 1) / 13
EXAMPLE = np.array([
    [0.80, 0.15, 0.05],
    [0.05, 0.90, 0.05],
    [0.30, 0.30, 0.40],
])
EXAMPLE_PI = np.array([3.6, 8.4, 1.0]) / 13.0


def chain(entries, population=1.0):
    return fc.ThreeStateChain(fc.TransitionMatrix(THREE_STATES, entries), population)


def random_chain(rng):
    return chain(rng.dirichlet(np.ones(3), size=3))


class TestStationaryDistribution:
    def test_doubly_stochastic_is_uniform(self):
        entries = np.array([[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]])
        pi = fc.stationary_distribution(chain(entries))
        assert np.allclose(pi.values, [1 / 3] * 3, atol=1e-12)

    def test_identity_not_unique(self):
        with pytest.raises(NonUniqueStationary):
            fc.stationary_distribution(chain(np.eye(3)))

    def test_periodic_rejected(self):
        cyclic = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0]], dtype=float)
        with pytest.raises(NotAperiodic):
            fc.stationary_distribution(chain(cyclic))

    def test_not_strongly_connected(self):
        # U is absorbing, T and P drain into it: one closed class only
        entries = np.array([[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.0, 0.0, 1.0]])
        with pytest.raises(NotIrreducible):
            check_structure(fc.TransitionMatrix(THREE_STATES, entries))

    def test_hand_solved_example(self):
        pi = fc.stationary_distribution(chain(EXAMPLE))
        assert np.max(np.abs(pi.values - EXAMPLE_PI)) <= 1e-12

    def test_fixed_point_property(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            c = random_chain(rng)
            pi = fc.stationary_distribution(c).values
            assert np.max(np.abs(pi @ c.matrix.entries - pi)) <= 1e-10

    def test_general_k(self):
        rng = np.random.default_rng(5)
        entries = rng.dirichlet(np.ones(5), size=5)
        m = fc.TransitionMatrix(fc.FIVE_STATES, entries)
        pi = fc.stationary_distribution(m).values
        assert np.max(np.abs(pi @ entries - pi)) <= 1e-10


class TestClosedForm:
    def test_uniform_rows(self):
        assert fc.closed_form_unemployment(chain(np.full((3, 3), 1 / 3))) == \
            pytest.approx(1 / 3, abs=1e-12)

    def test_matches_power_iteration_on_example(self):
        assert fc.closed_form_unemployment(chain(EXAMPLE)) == \
            pytest.approx(EXAMPLE_PI[2], abs=1e-10)

    def test_numerator_vanishes_when_u_unreachable(self):
        # with no inflow into U from T or P the closed-form numerator is zero;
        # such a chain is reducible, so the guarded evaluation refuses it
        entries = np.array([[1.0, 0.0, 0.0], [0.2, 0.8, 0.0], [0.3, 0.3, 0.4]])
        num, _ = _closed_form_parts(chain(entries))
        assert num == 0.0
        with pytest.raises(NotIrreducible):
            fc.closed_form_unemployment(chain(entries))

    def test_agrees_with_stationary_on_random_chains(self):
        rng = np.random.default_rng(6)
        for _ in range(200):
            c = random_chain(rng)
            pi_u = fc.closed_form_unemployment(c)  # guard: raises beyond 1e-8
            assert abs(pi_u - fc.stationary_distribution(c).values[2]) <= 1e-8


def perturbed_piU(c, delta):
    entries = c.matrix.entries.copy()
    entries[0, 1] += delta
    entries[0, 0] -= delta
    return fc.closed_form_unemployment(chain(entries))


class TestDerivative:
    def test_zero_when_sign_term_vanishes(self):
        assert fc.derivative_wrt_mTP(chain(EXAMPLE)) == 0.0

    def test_negative_when_permanent_less_risky(self):
        entries = EXAMPLE.copy()
        entries[0] = [0.75, 0.15, 0.10]  # temporary jobs now riskier
        c = chain(entries)
        d = fc.derivative_wrt_mTP(c)
        assert d < 0
        assert d == pytest.approx(-0.06756, abs=5e-5)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        step = 1e-6
        for _ in range(200):
            c = random_chain(rng)
            if not (step < c.matrix.entries[0, 0] and step < 1 - c.matrix.entries[0, 1]):
                continue
            analytic = fc.derivative_wrt_mTP(c)
            numeric = (perturbed_piU(c, step) - perturbed_piU(c, -step)) / (2 * step)
            assert numeric == pytest.approx(analytic, rel=1e-6, abs=1e-9)

    def test_sign_theorem(self):
        rng = np.random.default_rng(9)
        checked = 0
        for _ in range(300):
            c = random_chain(rng)
            m = c.matrix.entries
            bracket = (1 - m[1, 1]) * m[2, 0] + m[2, 1] * m[1, 0]
            if bracket <= 0:
                continue
            sign_term = m[1, 2] - m[0, 2]
            d = fc.derivative_wrt_mTP(c)
            assert np.sign(d) == np.sign(sign_term)
            checked += 1
        assert checked >= 250


class TestCompositionEffect:
    def test_zero_delta(self):
        rep = fc.composition_effect_demo(chain(EXAMPLE), 0.0)
        assert rep.change == 0.0

    def test_unemployment_falls_when_temporary_riskier(self):
        entries = EXAMPLE.copy()
        entries[0] = [0.75, 0.15, 0.10]  # m(T,U)=0.10 > m(P,U)=0.05
        rep = fc.composition_effect_demo(chain(entries), +0.05)
        assert rep.piU_after < rep.piU_before
        assert rep.sign_term < 0

    def test_reversed_inequality_raises_unemployment(self):
        entries = EXAMPLE.copy()
        entries[0] = [0.83, 0.15, 0.02]  # m(T,U)=0.02 < m(P,U)=0.05
        rep = fc.composition_effect_demo(chain(entries), +0.05)
        assert rep.piU_after > rep.piU_before
        assert rep.sign_term > 0

    def test_invalid_perturbation(self):
        with pytest.raises(InvalidPerturbation):
            fc.composition_effect_demo(chain(EXAMPLE), 0.9)

    def test_u_row_untouched(self):
        c = chain(EXAMPLE)
        fc.composition_effect_demo(c, 0.05)
        assert np.array_equal(c.matrix.entries, EXAMPLE)  # input not mutated


class TestAnalyze:
    def test_report_fields(self):
        result = fc.analyze(chain(EXAMPLE, population=1000.0))
        assert np.max(np.abs(result.stationary.values - EXAMPLE_PI)) <= 1e-10
        assert result.closed_form_piU == pytest.approx(EXAMPLE_PI[2], abs=1e-10)
        assert result.sign_term == pytest.approx(0.0)
        payload = result.to_json_dict()
        assert payload["stationary"]["space"] == ["T", "P", "U"]
