import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ganlab import divergence as dv
from ganlab.losses import DistanceKind


def dist_pair(seed: int, k: int, mode: str):
    return dv.random_pair(k, mode, np.random.default_rng(seed))


pair_args = st.tuples(st.integers(0, 2**31), st.integers(2, 6), st.sampled_from(["same_support", "differing_support", "independent"]))


class TestTypes:
    def test_dist_validation(self):
        with pytest.raises(ValueError):
            dv.DiscreteDist([0.5, 0.6])
        with pytest.raises(ValueError):
            dv.DiscreteDist([1.2, -0.2])
        with pytest.raises(ValueError):
            dv.DiscreteDist([])
        assert len(dv.DiscreteDist([0.25, 0.75])) == 2

    def test_atom_count_mismatch(self):
        with pytest.raises(ValueError):
            dv.union_support([1.0], [0.5, 0.5])


class TestOptimalDiscriminator:
    def test_equal(self):
        np.testing.assert_array_equal(dv.optimal_discriminator([0.5, 0.5], [0.5, 0.5]).values, [0.5, 0.5])

    def test_disjoint(self):
        np.testing.assert_array_equal(dv.optimal_discriminator([1.0, 0.0], [0.0, 1.0]).values, [1.0, 0.0])

    def test_formula(self):
        np.testing.assert_allclose(dv.optimal_discriminator([0.8, 0.2], [0.2, 0.8]).values, [0.8, 0.2], atol=1e-15)

    def test_atoms_outside_support(self):
        D = dv.optimal_discriminator([0.5, 0.5, 0.0], [1.0, 0.0, 0.0])
        assert np.isnan(D.values[2])
        with pytest.raises(ValueError, match="p \\+ q = 0"):
            dv.optimal_discriminator([0.5, 0.5, 0.0], [1.0, 0.0, 0.0], support=[True, True, True])

    @given(pair_args)
    @settings(max_examples=200, deadline=None)
    def test_satisfies_both_definitions(self, args):
        p, q = dist_pair(*args)
        D = dv.optimal_discriminator(p, q)
        u = dv.union_support(p, q)
        eq = np.abs(p.probs - q.probs) <= dv.EQ_TOL
        np.testing.assert_array_equal(np.abs(D.values[u] - 0.5) <= dv.EQ_TOL, eq[u])
        assert dv.optimal_at_equilibrium(D, p, q)
        assert dv.is_optimal(D, p, q)

    def test_random_generators_satisfy_their_definitions(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            p, q = dv.random_pair(int(rng.integers(2, 7)), "independent", rng)
            assert dv.optimal_at_equilibrium(dv.random_equilibrium_discriminator(p, q, rng), p, q)
            assert dv.is_optimal(dv.random_optimal_discriminator(p, q, rng), p, q)


class TestExactLoss:
    p = dv.DiscreteDist([0.8, 0.2])
    q = dv.DiscreteDist([0.2, 0.8])

    def test_dm_square_pair_grid(self):
        D = dv.optimal_discriminator(self.p, self.q)
        # only the two off-diagonal pairs differ: (0.64 + 0.04) * 0.36
        assert dv.exact_loss("DM", self.p, self.q, D, DistanceKind.SQUARE) == pytest.approx(0.2448, abs=1e-15)

    def test_lm_real_target_at_equal(self):
        p = dv.DiscreteDist([0.3, 0.7])
        D = dv.optimal_discriminator(p, p)
        assert dv.exact_loss("LM", p, p, D, DistanceKind.SQUARE, 1.0) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("family", dv.FAMILIES)
    @pytest.mark.parametrize("kind", list(DistanceKind))
    def test_zero_at_equal_with_mid_target(self, family, kind):
        p = dv.DiscreteDist([0.1, 0.2, 0.3, 0.4])
        D = dv.optimal_discriminator(p, p)
        assert dv.exact_loss(family, p, p, D, kind, 0.5) < 1e-12

    def test_target_required(self):
        D = dv.optimal_discriminator(self.p, self.q)
        with pytest.raises(ValueError):
            dv.exact_loss("LM", self.p, self.q, D, DistanceKind.ABS)
        with pytest.raises(ValueError):
            dv.exact_loss("XM", self.p, self.q, D, DistanceKind.ABS, 0.5)

    def test_brute_force_definitions(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p, q = dv.random_pair(5, "independent", rng)
            D = dv.random_optimal_discriminator(p, q, rng)
            u = dv.union_support(p, q)
            pv, qv, v = p.probs[u], q.probs[u], D.values[u]
            dm = sum(pv[i] * qv[j] * abs(v[i] - v[j]) for i in range(v.size) for j in range(v.size))
            lm = sum(pv[i] * abs(v[i] - 0.5) for i in range(v.size)) + sum(qv[j] * abs(v[j] - 0.5) for j in range(v.size))
            ep, eq = float(pv @ v), float(qv @ v)
            assert dv.exact_loss("DM", p, q, D, "Abs") == pytest.approx(dm, abs=1e-14)
            assert dv.exact_loss("LM", p, q, D, "Abs", 0.5) == pytest.approx(lm, abs=1e-14)
            assert dv.exact_loss("EDM", p, q, D, "Abs") == pytest.approx(abs(ep - eq), abs=1e-14)
            assert dv.exact_loss("ELM", p, q, D, "Abs", 0.5) == pytest.approx(abs(eq - 0.5) + abs(ep - 0.5), abs=1e-14)

    @given(pair_args, st.sampled_from([DistanceKind.ABS, DistanceKind.SQUARE, DistanceKind.PSEUDO_HUBER]))
    @settings(max_examples=100, deadline=None)
    def test_dm_symmetric_in_p_and_q(self, args, kind):
        p, q = dist_pair(*args)
        D = dv.random_optimal_discriminator(p, q, np.random.default_rng(args[0]))
        a = dv.exact_loss("DM", p, q, D, kind)
        b = dv.exact_loss("DM", q, p, D, kind)
        assert a == pytest.approx(b, rel=1e-12, abs=1e-15)

    @given(pair_args, st.sampled_from(list(DistanceKind)))
    @settings(max_examples=100, deadline=None)
    def test_all_losses_matches_exact_loss(self, args, kind):
        p, q = dist_pair(*args)
        D = dv.random_optimal_discriminator(p, q, np.random.default_rng(args[0]))
        got = dv.all_losses(p, q, D, kind)
        assert got["DM"] == dv.exact_loss("DM", p, q, D, kind)
        assert got["EDM"] == dv.exact_loss("EDM", p, q, D, kind)
        for fam in ("LM", "ELM"):
            assert got[f"{fam}_mid"] == dv.exact_loss(fam, p, q, D, kind, 0.5)
            assert got[f"{fam}_real"] == dv.exact_loss(fam, p, q, D, kind, 1.0)


class TestExpectationGap:
    """E_P[D] - E_Q[D] for discriminators optimal in the full sense."""

    def test_canonical_identity_over_random_pairs(self):
        rng = np.random.default_rng(0)
        for i in range(1000):
            p, q = dv.random_pair(int(rng.integers(2, 7)), dv.MODES[1 + i % 3], rng)
            D = dv.optimal_discriminator(p, q)
            u = dv.union_support(p, q)
            pv, qv, v = p.probs[u], q.probs[u], D.values[u]
            gap = float(pv @ v - qv @ v)
            assert gap == pytest.approx(float(np.sum((pv - qv) ** 2 / (2 * (pv + qv)))), abs=1e-14)
            assert gap >= -1e-15  # roundoff of two dot products

    @given(pair_args)
    @settings(max_examples=300, deadline=None)
    def test_gap_is_sum_of_positive_terms(self, args):
        p, q = dist_pair(*args)
        D = dv.random_optimal_discriminator(p, q, np.random.default_rng(args[0] + 1))
        u = dv.union_support(p, q)
        pv, qv, v = p.probs[u], q.probs[u], D.values[u]
        gap = float(pv @ v - qv @ v)
        assert gap == pytest.approx(float(np.sum(np.abs(pv - qv) * np.abs(v - 0.5))), abs=1e-14)
        if not dv.equal(p, q):
            assert gap > 0.0

    def test_three_atom_example_cannot_balance(self):
        p = dv.DiscreteDist([0.6, 0.4, 0.0])
        q = dv.DiscreteDist([0.1, 0.2, 0.7])
        rng = np.random.default_rng(3)
        for _ in range(1000):
            delta = rng.uniform(1e-3, 0.5, size=3)
            D = dv.TabularDiscriminator(0.5 + np.array([1.0, 1.0, -1.0]) * delta)
            assert dv.is_optimal(D, p, q)
            gap = 0.5 * delta[0] + 0.2 * delta[1] + 0.7 * delta[2]
            assert dv.exact_loss("EDM", p, q, D, DistanceKind.ABS) == pytest.approx(gap, abs=1e-15)


class TestVerify:
    def test_thousand_trials_clean(self):
        report = dv.verify_divergence_properties(1000, 6, np.random.default_rng(0))
        assert report.ok, report.to_text()
        assert {p.name for p in report.properties} == {
            "a_nonnegative",
            "b_dm_lm_zero_implies_equal",
            "c_edm_elm_zero_iff_equal",
            "d_equal_implies_zero",
            "e_real_target_positive_at_equal",
        }
        assert all(p.trials > 0 for p in report.properties)

    def test_equal_block_losses_vanish(self):
        report = dv.verify_divergence_properties(200, 6, np.random.default_rng(1))
        assert report["d_equal_implies_zero"].worst_value < 1e-12
        assert report["e_real_target_positive_at_equal"].violations == 0

    def test_csv_format(self):
        report = dv.verify_divergence_properties(20, 4, np.random.default_rng(2))
        rows = list(csv.reader(io.StringIO(report.to_csv())))
        assert rows[0] == ["name", "trials", "violations", "worst_value"]
        assert len(rows) == 1 + len(report.properties)
        for row in rows[1:]:
            int(row[1]), int(row[2]), float(row[3])

    def test_text_report(self):
        text = dv.verify_divergence_properties(20, 4, np.random.default_rng(2)).to_text()
        assert "total violations: 0" in text

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            dv.verify_divergence_properties(0, 6, np.random.default_rng(0))

    def test_violation_is_reported_not_hidden(self):
        prop = dv.PropertyResult("x")
        prop.record(True, 1.0)
        prop.record(False, 3.0, example="bad")
        assert (prop.trials, prop.violations, prop.worst_value, prop.examples) == (2, 1, 3.0, ["bad"])
        assert not dv.DivergenceReport(2, 2, [prop]).ok


class TestEdmSearch:
    def test_same_support_finds_nothing(self):
        assert dv.find_edm_support_counterexample(np.random.default_rng(0), 2000, same_support_only=True) is None

    def test_differing_support_under_full_optimality_finds_nothing(self):
        assert dv.find_edm_support_counterexample(np.random.default_rng(0), 2000) is None

    def test_budget_validated(self):
        with pytest.raises(ValueError):
            dv.find_edm_support_counterexample(np.random.default_rng(0), 0)
