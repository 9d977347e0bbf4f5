"""Core Markov algebra: quarters, state spaces, shares, matrices, products."""

import json

import numpy as np
import pytest

import flowcast as fc
from flowcast.errors import (
    BadQuarterFormat,
    EmptyChain,
    InvalidShareVector,
    InvalidTransitionMatrix,
    PeriodMismatch,
    StateSpaceMismatch,
)

Q = fc.QuarterId.parse


class TestQuarterId:
    def test_parse_format_roundtrip(self):
        q = Q("2018Q3")
        assert (q.year, q.quarter) == (2018, 3)
        assert str(q) == "2018Q3"

    def test_year_wrap(self):
        assert Q("2017Q4").successor() == Q("2018Q1")
        assert Q("2018Q1").predecessor() == Q("2017Q4")

    def test_ordering(self):
        assert Q("2016Q4") < Q("2017Q1") < Q("2017Q2")
        assert sorted([Q("2018Q1"), Q("2016Q3")])[0] == Q("2016Q3")

    @pytest.mark.parametrize("bad", ["2018Q5", "2018q3", "18Q1", "2018-Q1", "2018Q0", ""])
    def test_bad_format(self, bad):
        with pytest.raises(BadQuarterFormat):
            Q(bad)

    def test_quarter_range(self):
        qs = fc.quarter_range(Q("2017Q3"), Q("2018Q2"))
        assert [str(q) for q in qs] == ["2017Q3", "2017Q4", "2018Q1", "2018Q2"]


class TestStateSpace:
    def test_canonical_five(self):
        assert fc.FIVE_STATES.labels == ("SE", "TE", "PE", "U", "IN")
        assert fc.FIVE_STATES.k == 5

    def test_rejects_duplicates_and_empty(self):
        with pytest.raises(ValueError):
            fc.StateSpace(("A", "A"))
        with pytest.raises(ValueError):
            fc.StateSpace(("A", ""))
        with pytest.raises(ValueError):
            fc.StateSpace(("A",))


class TestShareVector:
    def test_renormalizes_within_tolerance(self):
        v = fc.ShareVector(fc.FIVE_STATES, [0.2, 0.2, 0.2, 0.2, 0.2 + 5e-10], Q("2018Q1"))
        assert v.values.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_above_tolerance(self):
        with pytest.raises(InvalidShareVector):
            fc.ShareVector(fc.FIVE_STATES, [0.3, 0.2, 0.2, 0.2, 0.2], Q("2018Q1"))

    def test_rejects_out_of_range_entries(self):
        with pytest.raises(InvalidShareVector):
            fc.ShareVector(fc.FIVE_STATES, [1.2, -0.2, 0.0, 0.0, 0.0], Q("2018Q1"))

    def test_values_immutable(self):
        v = fc.ShareVector(fc.FIVE_STATES, [0.2] * 5, Q("2018Q1"))
        with pytest.raises(ValueError):
            v.values[0] = 0.5

    def test_json_roundtrip(self):
        v = fc.ShareVector(fc.FIVE_STATES, [0.125, 0.080, 0.380, 0.054, 0.361], Q("2018Q3"))
        again = fc.ShareVector.from_json_dict(json.loads(json.dumps(v.to_json_dict())))
        assert np.allclose(again.values, v.values)
        assert again.period == v.period


class TestTransitionMatrix:
    def test_identity_valid(self):
        m = fc.TransitionMatrix(fc.FIVE_STATES, np.eye(5), Q("2018Q1"))
        assert np.allclose(m.entries, np.eye(5))

    def test_rejects_bad_row_sum(self):
        bad = np.eye(5)
        bad[2, 2] = 0.9
        with pytest.raises(InvalidTransitionMatrix):
            fc.TransitionMatrix(fc.FIVE_STATES, bad, Q("2018Q1"))

    def test_rejects_negative_entry(self):
        bad = np.eye(5)
        bad[0, 0] = 1.1
        bad[0, 1] = -0.1
        with pytest.raises(InvalidTransitionMatrix):
            fc.TransitionMatrix(fc.FIVE_STATES, bad, Q("2018Q1"))

    def test_csv_roundtrip(self, tmp_path):
        rng = np.random.default_rng(5)
        entries = rng.dirichlet(np.ones(5), size=5)
        m = fc.TransitionMatrix(fc.FIVE_STATES, entries, Q("2017Q2"))
        path = tmp_path / "m.csv"
        m.to_csv(path)
        again = fc.TransitionMatrix.from_csv(path, Q("2017Q2"))
        assert np.array_equal(again.entries, m.entries)
        assert again.space == m.space

    def test_json_format(self):
        m = fc.TransitionMatrix(fc.FIVE_STATES, np.eye(5), Q("2018Q3"))
        obj = m.to_json_dict()
        assert obj["period"] == "2018Q3"
        assert obj["space"] == ["SE", "TE", "PE", "U", "IN"]
        assert obj["entries"][0][0] == 1.0


class TestPropagate:
    def test_identity_leaves_shares_unchanged(self):
        v = fc.ShareVector(fc.FIVE_STATES, [0.1, 0.2, 0.3, 0.15, 0.25], Q("2018Q1"))
        m = fc.TransitionMatrix(fc.FIVE_STATES, np.eye(5), Q("2018Q2"))
        out = fc.propagate(v, m)
        assert np.allclose(out.values, v.values, atol=1e-15)
        assert out.period == Q("2018Q2")

    def test_identity_on_published_share_row(self):
        # the averaged post-reform shares reported for the five states
        v = fc.ShareVector(fc.FIVE_STATES, [0.125, 0.080, 0.380, 0.054, 0.361], Q("2018Q3"))
        m = fc.TransitionMatrix(fc.FIVE_STATES, np.eye(5), Q("2018Q4"))
        assert np.allclose(fc.propagate(v, m).values, v.values, atol=1e-15)

    def test_two_state_hand_example(self):
        two = fc.StateSpace(("A", "B"))
        v = fc.ShareVector(two, [0.5, 0.5], Q("2018Q1"))
        m = fc.TransitionMatrix(two, [[0.9, 0.1], [0.2, 0.8]], Q("2018Q2"))
        assert np.allclose(fc.propagate(v, m).values, [0.55, 0.45], atol=1e-12)

    def test_space_mismatch(self):
        v = fc.ShareVector(fc.StateSpace(("A", "B")), [0.5, 0.5], Q("2018Q1"))
        m = fc.TransitionMatrix(fc.FIVE_STATES, np.eye(5), Q("2018Q2"))
        with pytest.raises(StateSpaceMismatch):
            fc.propagate(v, m)

    def test_period_mismatch(self):
        v = fc.ShareVector(fc.FIVE_STATES, [0.2] * 5, Q("2018Q1"))
        m = fc.TransitionMatrix(fc.FIVE_STATES, np.eye(5), Q("2018Q3"))
        with pytest.raises(PeriodMismatch):
            fc.propagate(v, m)

    def test_sum_preserved_on_random_inputs(self):
        rng = np.random.default_rng(42)
        period = Q("2010Q1")
        for _ in range(500):
            k = int(rng.integers(2, 6))
            space = fc.StateSpace(tuple(f"S{i}" for i in range(k)))
            v = fc.ShareVector(space, rng.dirichlet(np.ones(k)), period)
            m = fc.TransitionMatrix(space, rng.dirichlet(np.ones(k), size=k),
                                    period.successor())
            out = fc.propagate(v, m)
            assert abs(out.values.sum() - 1.0) <= 1e-9
            assert np.all(out.values >= 0.0) and np.all(out.values <= 1.0)


class TestChainProduct:
    @staticmethod
    def chain_of(entries_list, start="2018Q1"):
        period = Q(start)
        mats = []
        for e in entries_list:
            period = period.successor()
            k = len(e)
            space = fc.StateSpace(tuple(f"S{i}" for i in range(k)))
            mats.append(fc.TransitionMatrix(space, e, period))
        return fc.MatrixChain(tuple(mats))

    def test_identity_chain(self):
        chain = self.chain_of([np.eye(5)] * 4)
        assert np.allclose(fc.chain_product(chain).entries, np.eye(5), atol=1e-15)

    def test_hand_product_absorbing_uniform(self):
        chain = self.chain_of([[[0.9, 0.1], [0.2, 0.8]], [[0.5, 0.5], [0.5, 0.5]]])
        assert np.allclose(fc.chain_product(chain).entries,
                           [[0.5, 0.5], [0.5, 0.5]], atol=1e-12)

    def test_result_period_is_last(self):
        chain = self.chain_of([np.eye(3)] * 3, start="2017Q2")
        assert fc.chain_product(chain).period == Q("2017Q2").shift(3)

    def test_empty_chain(self):
        with pytest.raises(EmptyChain):
            fc.MatrixChain(())

    def test_non_consecutive_periods(self):
        space = fc.StateSpace(("A", "B"))
        m1 = fc.TransitionMatrix(space, np.eye(2), Q("2018Q1"))
        m2 = fc.TransitionMatrix(space, np.eye(2), Q("2018Q3"))
        with pytest.raises(PeriodMismatch):
            fc.MatrixChain((m1, m2))

    def test_rows_sum_to_one_and_associativity(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            entries = [rng.dirichlet(np.ones(k), size=k) for _ in range(4)]
            chain = self.chain_of(entries)
            product = fc.chain_product(chain)
            assert np.max(np.abs(product.entries.sum(axis=1) - 1.0)) <= 1e-8
            left = fc.chain_product(chain.matrices[:2]).entries @ \
                fc.chain_product(chain.matrices[2:]).entries
            assert np.max(np.abs(left - product.entries)) <= 1e-10

    def test_product_matches_folded_propagation(self):
        rng = np.random.default_rng(9)
        entries = [rng.dirichlet(np.ones(4), size=4) for _ in range(5)]
        chain = self.chain_of(entries)
        shares = fc.ShareVector(chain.space, rng.dirichlet(np.ones(4)), Q("2018Q1"))
        folded = fc.propagate_path(shares, chain)[-1]
        direct = shares.values @ fc.chain_product(chain).entries
        assert np.max(np.abs(folded.values - direct)) <= 1e-10


class TestMatrixDifference:
    def test_zero_for_equal(self):
        m = fc.TransitionMatrix(fc.FIVE_STATES, np.eye(5), Q("2018Q1"))
        assert np.all(fc.matrix_difference(m, m) == 0.0)

    def test_published_cumulative_te_row(self):
        # the reported fitted-vs-forecasted cumulative TE row difference
        expected = np.array([-0.001, -0.066, 0.081, -0.005, -0.009])
        base_te = np.array([0.050, 0.600, 0.200, 0.060, 0.090])
        fitted = np.eye(5) * 0.9 + 0.02
        forecasted = fitted.copy()
        fitted[1] = base_te + expected
        forecasted[1] = base_te
        a = fc.TransitionMatrix(fc.FIVE_STATES, fitted / fitted.sum(axis=1, keepdims=True),
                                Q("2019Q3"))
        b = fc.TransitionMatrix(fc.FIVE_STATES,
                                forecasted / forecasted.sum(axis=1, keepdims=True), Q("2019Q3"))
        # rows 1 of both were already stochastic, so the difference is exact
        assert np.allclose(fc.matrix_difference(a, b)[1], expected, atol=1e-12)

    def test_row_sums_vanish(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            a = fc.TransitionMatrix(fc.FIVE_STATES, rng.dirichlet(np.ones(5), size=5))
            b = fc.TransitionMatrix(fc.FIVE_STATES, rng.dirichlet(np.ones(5), size=5))
            diff = fc.matrix_difference(a, b)
            assert np.max(np.abs(diff.sum(axis=1))) <= 1e-8

    def test_space_mismatch(self):
        a = fc.TransitionMatrix(fc.StateSpace(("A", "B")), np.eye(2))
        b = fc.TransitionMatrix(fc.StateSpace(("X", "Y")), np.eye(2))
        with pytest.raises(StateSpaceMismatch):
            fc.matrix_difference(a, b)
