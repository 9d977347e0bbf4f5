"""Weighted MLE of transition matrices and shares, and series assembly."""

import json

import numpy as np
import pytest

import flowcast as fc
from flowcast.errors import EmptyQuarter, WindowNotCovered, ZeroRowFallback

Q = fc.QuarterId.parse


def tr(pid, from_state, to_state, weight=1.0, period="2018Q2"):
    return fc.TransitionRecord(pid, from_state, to_state, Q(period), weight)


class TestEstimateMatrix:
    def test_te_row_hand_counts(self):
        # 3 stayers and 1 upgrade out of TE; the other states self-loop
        records = [tr(f"s{i}", "TE", "TE") for i in range(3)]
        records.append(tr("m1", "TE", "PE"))
        for state in ("SE", "PE", "U", "IN"):
            records.append(tr(f"a_{state}", state, state))
        matrix, counts = fc.estimate_matrix(records, fc.FIVE_STATES)
        assert np.allclose(matrix.entries[1], [0.0, 0.75, 0.25, 0.0, 0.0], atol=1e-15)
        assert matrix.probability("TE", "TE") == 0.75
        assert counts.row_totals[1] == 4.0

    def test_everyone_stays_gives_identity(self):
        records = [tr(f"p{i}", s, s) for i, s in enumerate(fc.FIVE_STATES.labels)]
        matrix, _ = fc.estimate_matrix(records, fc.FIVE_STATES)
        assert np.allclose(matrix.entries, np.eye(5), atol=1e-15)

    def test_weighted_counts(self):
        two = fc.StateSpace(("A", "B"))
        records = [tr("p1", "A", "B", weight=3.0), tr("p2", "A", "A", weight=1.0),
                   tr("p3", "B", "B", weight=1.0)]
        matrix, _ = fc.estimate_matrix(
            fc.panel.TransitionArrays.from_records(records, two), two)
        assert matrix.probability("A", "B") == pytest.approx(0.75, abs=1e-15)

    def test_zero_row_fallback_is_identity_with_warning(self):
        records = [tr("p1", "TE", "PE")]
        with pytest.warns(ZeroRowFallback):
            matrix, counts = fc.estimate_matrix(records, fc.FIVE_STATES)
        assert counts.fallback_rows == (0, 2, 3, 4)
        assert np.allclose(matrix.entries[0], [1, 0, 0, 0, 0])
        assert np.allclose(matrix.entries[1], [0, 0, 1, 0, 0])

    def test_empty_quarter(self):
        with pytest.raises(EmptyQuarter):
            fc.estimate_matrix([], fc.FIVE_STATES)

    def test_mixed_periods_rejected(self):
        records = [tr("p1", "TE", "TE", period="2018Q2"),
                   tr("p2", "TE", "TE", period="2018Q3")]
        with pytest.raises(ValueError):
            fc.estimate_matrix(records, fc.FIVE_STATES)

    def test_rows_sum_exactly(self):
        rng = np.random.default_rng(0)
        labels = fc.FIVE_STATES.labels
        records = [
            tr(f"p{i}", labels[rng.integers(5)], labels[rng.integers(5)],
               weight=float(rng.uniform(0.5, 3.0)))
            for i in range(500)
        ]
        matrix, _ = fc.estimate_matrix(records, fc.FIVE_STATES)
        assert np.max(np.abs(matrix.entries.sum(axis=1) - 1.0)) <= 1e-12

    def test_effective_sample_sizes(self):
        records = [tr("p1", "A", "B", 3.0), tr("p2", "A", "B", 1.0), tr("p3", "B", "B", 1.0)]
        two = fc.StateSpace(("A", "B"))
        _, counts = fc.estimate_matrix(records, two)
        # (3+1)^2 / (9+1) = 1.6 effective observations in the A->B cell
        assert counts.effective_sample_sizes()[0, 1] == pytest.approx(1.6)


class TestEstimateShares:
    def test_single_person(self):
        rec = fc.PersonQuarterRecord("p1", Q("2018Q1"), "U", 1.0)
        assert np.allclose(fc.estimate_shares([rec]).values, [0, 0, 0, 1, 0])

    def test_weighted_ratio(self):
        records = [
            fc.PersonQuarterRecord("p1", Q("2018Q1"), "SE", 1.0),
            fc.PersonQuarterRecord("p2", Q("2018Q1"), "TE", 1.0),
            fc.PersonQuarterRecord("p3", Q("2018Q1"), "PE", 2.0),
        ]
        assert np.allclose(fc.estimate_shares(records).values, [0.25, 0.25, 0.5, 0, 0])

    def test_empty(self):
        with pytest.raises(EmptyQuarter):
            fc.estimate_shares([])

    def test_stationary_world_matches_eigenvector(self, small_panel, space):
        cfg, panel, truth = small_panel
        stationary = fc.stationary_distribution(
            fc.TransitionMatrix(space, cfg.baseline))
        q = cfg.end.shift(-2)
        states, weights = panel.states_at(q)
        # run the world to (approximate) stationarity before comparing
        target = truth.shares[q].values
        assert np.max(np.abs(target - stationary.values)) <= 0.02
        est = fc.estimate_shares((states, weights), space, q)
        ses = []
        for i in range(space.k):
            reps = []
            for b in range(199):
                rng = fc.bootstrap.replicate_rng(17, b)
                idx = fc.bootstrap.resample_indices(weights, rng)
                mass = np.bincount(states[idx], minlength=space.k)
                reps.append(mass[i] / mass.sum())
            ses.append(np.std(reps))
        assert np.all(np.abs(est.values - target) <= 3 * np.array(ses) + 1e-9)


class TestBuildSeries:
    def test_two_quarter_window(self):
        records = []
        for pid, (s1, s2) in enumerate([("TE", "PE"), ("SE", "SE"), ("U", "IN"),
                                        ("PE", "PE"), ("IN", "U"), ("TE", "TE")]):
            records.append(fc.PersonQuarterRecord(f"p{pid}", Q("2018Q1"), s1, 1.0))
            records.append(fc.PersonQuarterRecord(f"p{pid}", Q("2018Q2"), s2, 1.0))
        series = fc.build_series(records, window=(Q("2018Q1"), Q("2018Q2")))
        assert len(series.shares) == 2
        assert len(series.matrices) == 1
        assert Q("2018Q2") in series.matrices

    def test_window_not_covered(self, small_panel):
        cfg, panel, _ = small_panel
        with pytest.raises(WindowNotCovered):
            fc.build_series(panel, window=(cfg.start.shift(-2), cfg.end))

    def test_empty_filter_result(self, small_panel):
        cfg, panel, _ = small_panel
        impossible = fc.SubgroupFilter(name="none", age_lt=10)
        with pytest.raises(EmptyQuarter):
            fc.build_series(panel, subgroup=impossible,
                            window=(cfg.start, cfg.end))

    def test_estimates_approach_truth_with_sample_size(self, space):
        from conftest import make_world

        errs = {}
        for n in (10_000, 100_000):
            cfg = make_world(seed=21, n_persons=n, n_quarters=8)
            panel, truth = fc.generate_arrays(cfg)
            series = fc.build_series(panel, window=(cfg.start, cfg.end))
            errs[n] = max(
                np.max(np.abs(series.matrices[q].entries - truth.matrices[q].entries))
                for q in series.matrices
            )
        assert errs[100_000] < errs[10_000]
        assert errs[100_000] < 0.05

    def test_closed_population_propagation_identity(self, space):
        rng = np.random.default_rng(13)
        labels = space.labels
        records = []
        for pid in range(300):
            s1 = labels[rng.integers(5)]
            s2 = labels[rng.integers(5)]
            w = float(rng.uniform(0.5, 2.0))
            records.append(fc.PersonQuarterRecord(f"p{pid}", Q("2018Q1"), s1, w))
            records.append(fc.PersonQuarterRecord(f"p{pid}", Q("2018Q2"), s2, w))
        series = fc.build_series(records, window=(Q("2018Q1"), Q("2018Q2")))
        propagated = fc.propagate(series.shares[Q("2018Q1")], series.matrices[Q("2018Q2")])
        assert np.max(np.abs(propagated.values - series.shares[Q("2018Q2")].values)) <= 1e-12

    def test_export_dir(self, tmp_path, small_panel):
        cfg, panel, _ = small_panel
        series = fc.build_series(panel, window=(cfg.start, cfg.start.shift(2)))
        outdir = tmp_path / "series"
        series.export_dir(outdir)
        assert (outdir / "shares.csv").exists()
        for q in series.matrices:
            path = outdir / f"matrix_{q}.csv"
            assert path.exists()
            again = fc.TransitionMatrix.from_csv(path, q)
            assert np.array_equal(again.entries, series.matrices[q].entries)
        meta = json.loads((outdir / "meta.json").read_text())
        assert meta["window"] == [str(cfg.start), str(cfg.start.shift(2))]
        assert str(cfg.start) in meta["sample_sizes"]
