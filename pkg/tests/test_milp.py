import numpy as np
import pytest

from apollo_milp.milp import (DimensionError, FixConflictError, MilpInstance, PartialAssignment,
                              add_objective_cut, check_feasibility, eliminate_fixed,
                              evaluate_objective, fix_variables, restrict)

from conftest import brute_optimum, feasible_points, random_binary_instance


class TestMilpInstance:
    def test_dense_construction(self):
        inst = MilpInstance.from_dense([1, 2], [[1, 1], [0, 3]], ["<=", ">="], [1, 0])
        assert inst.num_vars == 2 and inst.num_cons == 2 and inst.nnz == 3
        np.testing.assert_array_equal(inst.A.toarray(), [[1, 1], [0, 3]])
        np.testing.assert_array_equal(inst.ub, [1, 1])
        assert inst.is_pure_binary

    def test_maximize_is_negated(self):
        inst = MilpInstance.from_dense([3, -1], maximize=True)
        np.testing.assert_array_equal(inst.c, [-3, 1])

    def test_duplicate_triplets_summed(self):
        inst = MilpInstance(c=[0, 0], rows=[0, 0, 0], cols=[1, 1, 0], vals=[1, 2, 5],
                            senses=["L"], rhs=[1], lb=[0, 0], ub=[1, 1], kinds="BB")
        np.testing.assert_array_equal(inst.A.toarray(), [[5, 3]])

    def test_column_out_of_range(self):
        with pytest.raises(ValueError):
            MilpInstance(c=[0], rows=[0], cols=[3], vals=[1], senses=["L"], rhs=[1],
                         lb=[0], ub=[1], kinds="B")

    def test_binary_bounds_enforced(self):
        with pytest.raises(ValueError):
            MilpInstance.from_dense([1], ub=[2])

    def test_lower_above_upper(self):
        with pytest.raises(ValueError):
            MilpInstance.from_dense([1], lb=[3], ub=[2], kinds="I")

    def test_arrays_immutable(self):
        inst = MilpInstance.from_dense([1, 2])
        with pytest.raises(ValueError):
            inst.c[0] = 5


class TestEvaluateObjective:
    def test_zero_vector(self):
        assert evaluate_objective(MilpInstance.from_dense([1, 2]), [0, 0]) == 0

    def test_ones(self):
        assert evaluate_objective(MilpInstance.from_dense([1, 2]), [1, 1]) == 3

    def test_against_scalar_loop(self):
        c, a = [-1.0] * 5, [1, 0, 1, 1, 1]
        expected = 0.0
        for ci, ai in zip(c, a):
            expected += ci * ai
        assert evaluate_objective(MilpInstance.from_dense(c), a) == expected == -4

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            evaluate_objective(MilpInstance.from_dense([1, 2]), [1])


class TestCheckFeasibility:
    def test_row_violation(self):
        inst = MilpInstance.from_dense([0, 0], [[1, 1]], ["<="], [1])
        rep = check_feasibility(inst, [1, 1])
        assert not rep.feasible
        np.testing.assert_allclose(rep.row_violation, [1.0])

    def test_no_constraints(self):
        assert check_feasibility(MilpInstance.from_dense([1, 1, 1]), [0, 1, 1])

    def test_bound_and_integrality(self):
        inst = MilpInstance.from_dense([0, 0], kinds="BC", ub=[1, 2])
        rep = check_feasibility(inst, [0.5, 2.5])
        assert rep.integrality_violation[0] == pytest.approx(0.5)
        assert rep.bound_violation[1] == pytest.approx(0.5)
        assert check_feasibility(inst, [1, 1.5])

    def test_exact_at_zero_tolerance(self):
        inst = MilpInstance.from_dense([0, 0], [[0.5, 0.25]], ["="], [0.75])
        assert check_feasibility(inst, [1, 1], tol=0)
        assert not check_feasibility(inst, [1, 0], tol=0)

    def test_brute_force_points_feasible(self):
        inst, _ = random_binary_instance(np.random.default_rng(3))
        for x in feasible_points(inst):
            assert check_feasibility(inst, x)


class TestFixVariables:
    def test_empty_fix(self, example_b):
        assert fix_variables(example_b, PartialAssignment()) is example_b

    def test_bounds_tightened(self, example_b):
        red = fix_variables(example_b, PartialAssignment.from_dict({0: 1, 2: 1}))
        np.testing.assert_array_equal(red.lb, [1, 0, 1, 0, 0])
        np.testing.assert_array_equal(red.ub, [1, 1, 1, 1, 1])

    def test_conflict(self, example_b):
        red = fix_variables(example_b, PartialAssignment.from_dict({0: 1}))
        with pytest.raises(FixConflictError):
            fix_variables(red, PartialAssignment.from_dict({0: 0}))

    def test_refix_same_value_allowed(self, example_b):
        red = fix_variables(example_b, PartialAssignment.from_dict({0: 1}))
        np.testing.assert_array_equal(
            fix_variables(red, PartialAssignment.from_dict({0: 1})).lb, red.lb)

    def test_non_binary_rejected(self):
        inst = MilpInstance.from_dense([1, 1], kinds="BI")
        with pytest.raises(ValueError):
            fix_variables(inst, PartialAssignment.from_dict({1: 1}))

    @pytest.mark.parametrize("seed", range(5))
    def test_fixing_optimum_preserves_value(self, seed):
        inst, _ = random_binary_instance(np.random.default_rng(seed), n=10)
        opt, x = brute_optimum(inst)
        idx = np.random.default_rng(seed).choice(10, 5, replace=False)
        red = fix_variables(inst, restrict(inst, idx, x))
        assert brute_optimum(red)[0] == pytest.approx(opt)

    @pytest.mark.parametrize("seed", range(5))
    def test_never_enlarges_feasible_set(self, seed):
        rng = np.random.default_rng(100 + seed)
        inst, _ = random_binary_instance(rng, n=12)
        pa = PartialAssignment(rng.choice(12, 4, replace=False),
                               rng.integers(0, 2, 4).astype(float))
        after = feasible_points(fix_variables(inst, pa))
        before = {tuple(p) for p in feasible_points(inst)}
        assert all(tuple(p) in before for p in after)

    def test_composition(self, rng):
        inst, _ = random_binary_instance(rng, n=10)
        p1 = PartialAssignment.from_dict({0: 1, 3: 0})
        p2 = PartialAssignment.from_dict({5: 1, 7: 1})
        a = fix_variables(fix_variables(inst, p1), p2)
        b = fix_variables(inst, p1.union(p2))
        np.testing.assert_array_equal(a.lb, b.lb)
        np.testing.assert_array_equal(a.ub, b.ub)


class TestObjectiveCut:
    def test_row_construction(self):
        inst = MilpInstance.from_dense([1.0, -2.0])
        cut = add_objective_cut(inst, 0.0, 1e-6)
        np.testing.assert_array_equal(cut.A.toarray()[-1], [1, -2])
        assert cut.senses[-1] == "L" and cut.rhs[-1] == -1e-6

    def test_excludes_incumbent(self, rng):
        inst, x0 = random_binary_instance(rng)
        cut = add_objective_cut(inst, evaluate_objective(inst, x0))
        assert not check_feasibility(cut, x0)

    def test_default_epsilon_scales(self):
        cut = add_objective_cut(MilpInstance.from_dense([1.0]), -5000.0)
        assert cut.rhs[-1] == pytest.approx(-5000.0 - 5e-3)

    def test_nonpositive_epsilon(self):
        with pytest.raises(ValueError):
            add_objective_cut(MilpInstance.from_dense([1.0]), 0.0, 0.0)

    @pytest.mark.parametrize("seed", range(8))
    def test_strictly_improves_or_infeasible(self, seed):
        inst, _ = random_binary_instance(np.random.default_rng(seed), n=10)
        opt, _ = brute_optimum(inst)
        for bound in (opt, opt + 3.0):
            new, _ = brute_optimum(add_objective_cut(inst, bound))
            assert new is None or new < bound


class TestPartialAssignment:
    def test_distinct_indices(self):
        with pytest.raises(ValueError):
            PartialAssignment([1, 1], [0, 1])

    def test_union_conflict(self):
        with pytest.raises(FixConflictError):
            PartialAssignment.from_dict({1: 0}).union(PartialAssignment.from_dict({1: 1}))

    def test_equality_ignores_order(self):
        assert PartialAssignment([2, 0], [1, 0]) == PartialAssignment([0, 2], [0, 1])


class TestEliminateFixed:
    def test_reduced_problem_equivalent(self, rng):
        inst, _ = random_binary_instance(rng, n=10)
        opt, x = brute_optimum(inst)
        red_inst = fix_variables(inst, restrict(inst, [0, 1, 2], x))
        reduced, kept, offset = eliminate_fixed(red_inst)
        assert reduced.num_vars == 7
        np.testing.assert_array_equal(kept, np.arange(3, 10))
        val, _ = brute_optimum(reduced)
        assert val + offset == pytest.approx(opt)
