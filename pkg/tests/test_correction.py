import numpy as np
import pytest

from apollo_milp.correction import (TrustRegionSpec, bernoulli_entropy, build_trust_region,
                                    conditional_precisions, discrepancy, fix_consistent,
                                    fix_direct, fix_predicted, kl_bound_terms, select_partial,
                                    trust_region_row, uebo, uebo_report)
from apollo_milp.milp import (MilpInstance, PartialAssignment, check_feasibility,
                              fix_variables)

from conftest import feasible_points, random_binary_instance

MARGINALS = np.array([0.9, 0.8, 0.7, 0.6, 0.5])
REFERENCE = np.array([1.0, 0, 1, 1, 1])


def as_set(points):
    return {tuple(p) for p in points}


class TestTrustRegionSpec:
    def test_negative(self):
        with pytest.raises(ValueError):
            TrustRegionSpec(-1, 0, 0)

    def test_delta_too_large(self):
        with pytest.raises(ValueError):
            TrustRegionSpec(1, 1, 3)


class TestSelectPartial:
    def test_worked_example(self, example_b):
        pa = select_partial(example_b, MARGINALS, TrustRegionSpec(0, 3, 1))
        assert pa == PartialAssignment.from_dict({0: 1, 1: 1, 2: 1})

    def test_empty(self, example_b):
        assert len(select_partial(example_b, MARGINALS, TrustRegionSpec(0, 0, 0))) == 0

    def test_tie_breaks_to_lower_index(self):
        inst = MilpInstance.from_dense(np.zeros(3))
        pa = select_partial(inst, [0.7, 0.7, 0.1], TrustRegionSpec(0, 1, 0))
        assert pa == PartialAssignment.from_dict({0: 1})

    def test_against_reference_sort(self, rng):
        inst = MilpInstance.from_dense(np.zeros(40))
        p = np.round(rng.random(40), 1)
        pa = select_partial(inst, p, TrustRegionSpec(7, 5, 2))
        order = sorted(range(40), key=lambda i: (-p[i], i))
        ones = order[:5]
        rest = sorted((i for i in range(40) if i not in ones), key=lambda i: (p[i], i))
        assert pa == PartialAssignment.from_dict({**{i: 1 for i in ones},
                                                  **{i: 0 for i in rest[:7]}})

    def test_skips_fixed(self, example_b):
        red = fix_variables(example_b, PartialAssignment.from_dict({0: 1}))
        pa = select_partial(red, MARGINALS, TrustRegionSpec(0, 3, 1))
        assert pa == PartialAssignment.from_dict({1: 1, 2: 1, 3: 1})

    def test_too_many(self, example_b):
        with pytest.raises(ValueError):
            select_partial(example_b, MARGINALS, TrustRegionSpec(3, 3, 0))

    def test_only_binaries(self):
        inst = MilpInstance.from_dense(np.zeros(3), kinds="BCB")
        pa = select_partial(inst, [0.2, 0.9], TrustRegionSpec(0, 2, 0))
        np.testing.assert_array_equal(sorted(pa.indices), [0, 2])


class TestTrustRegion:
    def test_worked_example_row(self, example_b):
        pa = PartialAssignment.from_dict({0: 1, 1: 1, 2: 1})
        coefs, rhs = trust_region_row(pa, 1)
        assert coefs == {0: -1.0, 1: -1.0, 2: -1.0} and rhs == -2.0
        tr = build_trust_region(example_b, pa, 1)
        # slack form: x_i + s_i = 1 for i in P, s_1 + s_2 + s_3 <= 1
        pts = feasible_points(tr)
        slack = {tuple(p) for p in feasible_points(example_b) if np.sum(1 - p[:3]) <= 1}
        assert as_set(pts) == slack

    def test_full_radius_vacuous(self, rng):
        inst, _ = random_binary_instance(rng, n=10)
        pa = PartialAssignment([0, 3, 5], [1, 0, 1])
        assert as_set(feasible_points(build_trust_region(inst, pa, 3))) == \
            as_set(feasible_points(inst))

    @pytest.mark.parametrize("seed", range(5))
    def test_zero_radius_equals_fixing(self, seed):
        rng = np.random.default_rng(seed)
        inst, _ = random_binary_instance(rng, n=12)
        pa = PartialAssignment(rng.choice(12, 5, replace=False), rng.integers(0, 2, 5))
        assert as_set(feasible_points(build_trust_region(inst, pa, 0))) == \
            as_set(feasible_points(fix_variables(inst, pa)))

    @pytest.mark.parametrize("delta", [0, 1, 2, 4])
    def test_ball_membership(self, rng, delta):
        inst = MilpInstance.from_dense(np.zeros(8))
        pa = PartialAssignment([1, 2, 4, 6], [1, 0, 1, 0])
        pts = feasible_points(build_trust_region(inst, pa, delta))
        dist = np.abs(pts[:, pa.indices] - pa.values).sum(axis=1)
        assert np.all(dist <= delta)
        assert len(pts) == sum(1 for p in feasible_points(inst)
                               if np.abs(p[pa.indices] - pa.values).sum() <= delta)

    def test_empty_partial(self, example_b):
        assert build_trust_region(example_b, PartialAssignment(), 0) is example_b


class TestUebo:
    def test_worked_example_consistency(self, example_b):
        pa = select_partial(example_b, MARGINALS, TrustRegionSpec(0, 3, 1))
        rep = uebo_report(example_b, MARGINALS, pa, REFERENCE)
        np.testing.assert_allclose(rep.consistency, np.log([0.9, 0.2, 0.7]), rtol=1e-12)
        np.testing.assert_array_equal(rep.consistent, [True, False, True])
        np.testing.assert_allclose(rep.uebo, rep.entropy + rep.discrepancy, rtol=0)

    def test_half(self):
        h, d, u = uebo(0.5, 1)
        np.testing.assert_allclose([h, d, u], [np.log(2), np.log(2), 2 * np.log(2)])

    def test_terms_nonnegative(self):
        p = np.linspace(0.001, 0.999, 999)
        for ref in (0, 1):
            h, d, u = uebo(p, ref)
            assert np.all(h >= 0) and np.all(d >= 0) and np.all(h <= np.log(2) + 1e-15)

    def test_clamped(self):
        assert np.isfinite(discrepancy(0.0, 1)) and np.isfinite(bernoulli_entropy(1.0))

    def test_monotone_in_discrepancy(self):
        p = np.arange(1, 1000) / 1000
        assert np.all(np.diff(uebo(p, 1)[2]) < 0)
        assert np.all(np.diff(uebo(p, 0)[2]) > 0)


class TestFixingStrategies:
    def setup_method(self):
        self.pa = PartialAssignment.from_dict({0: 1, 1: 1, 2: 1})

    def test_consistent_worked_example(self):
        assert fix_consistent(self.pa, REFERENCE) == PartialAssignment.from_dict({0: 1, 2: 1})

    def test_direct_worked_example(self):
        assert fix_direct(REFERENCE, self.pa) == PartialAssignment.from_dict({0: 1, 1: 0, 2: 1})
        assert fix_direct(REFERENCE, [0, 1, 2]) == fix_direct(REFERENCE, self.pa)

    def test_predicted_worked_example(self):
        assert fix_predicted(self.pa) == self.pa

    def test_full_agreement(self):
        ref = np.ones(5)
        assert fix_consistent(self.pa, ref) == self.pa == fix_direct(ref, self.pa) \
            == fix_predicted(self.pa)

    def test_full_disagreement(self):
        assert len(fix_consistent(self.pa, np.zeros(5))) == 0

    def test_rounding_tolerance(self):
        ref = np.array([1 - 1e-8, 0, 1 + 1e-9, 0, 0])
        assert fix_consistent(self.pa, ref) == PartialAssignment.from_dict({0: 1, 2: 1})
        with pytest.raises(ValueError):
            fix_consistent(self.pa, np.array([0.5, 0, 1, 0, 0]))

    def test_minimum_uebo_selection(self, example_b):
        rep = uebo_report(example_b, MARGINALS, self.pa, REFERENCE)
        chosen = set(fix_consistent(self.pa, REFERENCE).indices)
        # agreeing variables have the smaller discrepancy for the same p
        for j, p, ref, h, d, u, ok in rep.rows():
            other = discrepancy(p, 1 - ref)
            assert (j in chosen) == (d < other)


class TestTheoryHelpers:
    def test_kl_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            K = rng.dirichlet([1, 1], size=2)
            kl, h, cross = kl_bound_terms(rng.uniform(0.01, 0.99), K)
            assert kl <= cross - h + 1e-12
            assert kl <= cross + h + 1e-12

    def test_kl_identity_kernel(self):
        kl, h, cross = kl_bound_terms(0.3, np.eye(2) * (1 - 2e-12) + 1e-12)
        assert kl == pytest.approx(0, abs=1e-9)

    def test_conditional_precisions(self):
        J = np.zeros((2, 2, 2))
        J[1, 1, 1], J[0, 1, 1] = 0.3, 0.1
        J[1, 1, 0], J[0, 1, 0] = 0.1, 0.1
        J[1, 0, 1], J[0, 0, 1] = 0.1, 0.1
        J[0, 0, 0] = 0.2
        pr = conditional_precisions(J)
        assert pr["agree"] == pytest.approx(0.75)
        assert pr["reference"] == pytest.approx(0.4 / 0.6)
        assert pr["predicted"] == pytest.approx(0.4 / 0.6)


class TestReferenceSurvivesFixing:
    @pytest.mark.parametrize("seed", range(10))
    def test_reference_survives_fixing(self, seed):
        rng = np.random.default_rng(seed)
        inst, _ = random_binary_instance(rng, n=12)
        pa = select_partial(inst, rng.random(12), TrustRegionSpec(4, 3, 2))
        pts = feasible_points(build_trust_region(inst, pa, 2))
        for ref in pts:
            assert check_feasibility(fix_variables(inst, fix_consistent(pa, ref)), ref)
