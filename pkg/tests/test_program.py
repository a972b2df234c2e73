import json

import numpy as np
import pytest

from cvxnn.arrangements import PatternSet, enumerate_exact
from cvxnn.core import ActivationSpec, apply_activation
from cvxnn.program import (GroupWeights, build_interpolation_program,
                           build_program, constraint_violation, dense_features,
                           feature_blocks, objective, penalized_objective,
                           predict, regularizer)

EX1 = np.array([[2.0, 2.0], [3.0, 3.0], [1.0, 0.0]])


def random_weights(prog, rng):
    return prog.zeros().with_blocks(rng.standard_normal(prog.zeros().blocks.shape))


class TestFeatures:
    def test_example_block(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["110"]), 1.0)
        (block,) = list(feature_blocks(prog))
        np.testing.assert_array_equal(block, [[2, 2], [3, 3], [0, 0]])

    def test_absolute_value_all_zero_pattern(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["000"]), 1.0,
                             ActivationSpec.absolute())
        np.testing.assert_array_equal(next(feature_blocks(prog)), -EX1)

    def test_all_ones(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["111"]), 1.0)
        np.testing.assert_array_equal(next(feature_blocks(prog)), EX1)

    def test_zero_pattern_dropped_for_relu_only(self):
        pats = enumerate_exact(EX1)
        assert build_program(EX1, np.zeros(3), pats, 1.0).P == 3
        assert build_program(EX1, np.zeros(3), pats, 1.0, ActivationSpec(0.1)).P == 4

    def test_dense_matches_blocks(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((6, 2))
        prog = build_program(X, rng.standard_normal(6), enumerate_exact(X), 0.1, ActivationSpec(0.1))
        w = random_weights(prog, rng)
        np.testing.assert_allclose(dense_features(prog) @ w.blocks.ravel(), predict(prog, w), atol=1e-12)


class TestPredict:
    def test_zero(self):
        prog = build_program(EX1, np.zeros(3), enumerate_exact(EX1), 1.0)
        np.testing.assert_array_equal(predict(prog, prog.zeros()), 0)

    def test_example_one(self):
        pats = PatternSet.from_strings(["111", "110", "001"])
        prog = build_program(EX1, np.zeros(3), pats, 1.0)
        w = prog.zeros()
        blocks = w.blocks.copy()
        blocks[pats.index_of([1, 1, 1])] = [1.0, 0.0]
        np.testing.assert_allclose(predict(prog, w.with_blocks(blocks)), [2, 3, 1])

    def test_linear_model_reduction(self):
        X = np.random.default_rng(1).standard_normal((5, 3))
        prog = build_program(X, np.zeros(5), PatternSet.from_strings(["11111"]), 1.0)
        w = GroupWeights.from_pair([[1.0, 2.0, 3.0]], [[0.5, 0.0, -1.0]])
        np.testing.assert_allclose(predict(prog, w), X @ np.array([0.5, 2.0, 4.0]))

    def test_linearity(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((7, 3))
        prog = build_program(X, np.zeros(7), enumerate_exact(X), 1.0, ActivationSpec(-1.0))
        a, b = random_weights(prog, rng), random_weights(prog, rng)
        combo = a.with_blocks(2.5 * a.blocks + b.blocks)
        np.testing.assert_allclose(predict(prog, combo), 2.5 * predict(prog, a) + predict(prog, b),
                                   atol=1e-12)

    def test_bias_enters_prediction(self):
        X = np.array([[-1.0], [1.0]])
        prog = build_program(X, np.zeros(2), PatternSet.from_strings(["11"]), 1.0, bias=True)
        w = GroupWeights.from_pair([[0.0, 2.0]], [[0.0, 0.0]], with_bias=True)
        np.testing.assert_allclose(predict(prog, w), [2.0, 2.0])
        assert w.bias is not None

    def test_feasible_blocks_are_network_outputs(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((8, 3))
        pats = enumerate_exact(X)
        prog = build_program(X, np.zeros(8), pats, 1.0, drop_zero=False)
        blocks = np.zeros((2 * pats.P, 3))
        blocks[: pats.P] = pats.witnesses
        w = prog.zeros().with_blocks(blocks)
        assert constraint_violation(prog, w)[1] == 0
        expected = apply_activation(ActivationSpec(), X @ pats.witnesses.T).sum(axis=1)
        np.testing.assert_allclose(predict(prog, w), expected, atol=1e-12)


class TestObjective:
    def test_zero_weights(self):
        y = np.array([1.0, -2.0, 2.0])
        prog = build_program(EX1, y, enumerate_exact(EX1), 1.0)
        assert objective(prog, prog.zeros()) == pytest.approx(4.5)

    def test_group_l2(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["111"]), 1.0)
        w = GroupWeights.from_pair([[3.0, 4.0]], [[0.0, 0.0]])
        assert regularizer(prog, w) == pytest.approx(5.0)

    def test_l1(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["111"]), 2.0, reg_p=1)
        w = GroupWeights.from_pair([[3.0, -4.0]], [[0.0, 0.0]])
        assert regularizer(prog, w) == pytest.approx(14.0)

    def test_rejects_other_p(self):
        with pytest.raises(ValueError):
            build_program(EX1, np.zeros(3), enumerate_exact(EX1), 1.0, reg_p=3)

    def test_beta_positive(self):
        with pytest.raises(ValueError):
            build_program(EX1, np.zeros(3), enumerate_exact(EX1), 0.0)

    def test_midpoint_convexity(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((6, 2))
        prog = build_program(X, rng.standard_normal(6), enumerate_exact(X), 0.3)
        for _ in range(1000):
            a, b = random_weights(prog, rng), random_weights(prog, rng)
            mid = a.with_blocks(0.5 * (a.blocks + b.blocks))
            assert objective(prog, mid) <= 0.5 * (objective(prog, a) + objective(prog, b)) + 1e-12

    def test_zero_pattern_irrelevant_for_relu(self):
        rng = np.random.default_rng(5)
        X = np.abs(rng.standard_normal((5, 2)))  # one open half-plane: all-zero gate exists
        y = rng.standard_normal(5)
        full = build_program(X, y, enumerate_exact(X), 0.1, drop_zero=False)
        zero = full.patterns.index_of(np.zeros(5, dtype=bool))
        assert zero >= 0
        w = random_weights(full, rng)
        blocks = w.blocks.copy()
        blocks[w.pattern_index == zero] = 0.0
        w = w.with_blocks(blocks)
        dropped = build_program(X, y, enumerate_exact(X), 0.1)
        keep = w.pattern_index != zero
        wd = GroupWeights(blocks[keep], np.concatenate([np.arange(dropped.P)] * 2),
                          w.sign[keep])
        assert objective(full, w) == pytest.approx(objective(dropped, wd), rel=1e-14)

    def test_summary_json(self):
        prog = build_program(EX1, np.zeros(3), enumerate_exact(EX1), 0.5)
        doc = json.loads(prog.summary_json())
        assert doc == {"n": 3, "d": 2, "P": 3, "beta": 0.5, "kappa": 0.0, "p": 2,
                       "bias": False, "loss": "squared", "mode": "constrained"}


class TestConstraints:
    def test_witnesses_feasible(self):
        pats = enumerate_exact(EX1)
        prog = build_program(EX1, np.zeros(3), pats, 1.0, drop_zero=False)
        blocks = np.vstack([pats.witnesses, pats.witnesses])
        per, worst = constraint_violation(prog, prog.zeros().with_blocks(blocks))
        assert worst == 0 and np.all(per == 0)

    def test_example_violation(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["110"]), 1.0)
        w = GroupWeights.from_pair([[0.0, -1.0]], [[0.0, 0.0]])
        per, worst = constraint_violation(prog, w)
        assert worst == pytest.approx(3.0)

    def test_zero_feasible(self):
        prog = build_program(EX1, np.zeros(3), enumerate_exact(EX1), 1.0)
        assert constraint_violation(prog, prog.zeros())[1] == 0

    def test_binary_cones_for_leaky(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["001"]), 1.0, ActivationSpec(0.1))
        np.testing.assert_array_equal(prog.cone_signs, [[-1, -1, 1]])


class TestPenalized:
    def test_feasible_equals_objective(self):
        pats = enumerate_exact(EX1)
        prog = build_program(EX1, np.ones(3), pats, 1.0, drop_zero=False)
        w = prog.zeros().with_blocks(np.vstack([pats.witnesses, pats.witnesses]))
        assert penalized_objective(prog, w, 0.01) == objective(prog, w)

    def test_linear_hinge(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["110"]), 1.0)
        w = GroupWeights.from_pair([[0.0, -1.0]], [[0.0, 0.0]])
        # slacks (-2, -3, 0): total hinge 5
        assert penalized_objective(prog, w, 0.01) == pytest.approx(objective(prog, w) + 0.05)

    def test_grows_with_rho(self):
        prog = build_program(EX1, np.zeros(3), PatternSet.from_strings(["110"]), 1.0)
        w = GroupWeights.from_pair([[0.0, -1.0]], [[0.0, 0.0]])
        vals = [penalized_objective(prog, w, r) for r in (1, 1e3, 1e6)]
        assert vals[0] < vals[1] < vals[2] and vals[2] > 1e6

    def test_rho_positive(self):
        prog = build_program(EX1, np.zeros(3), enumerate_exact(EX1), 1.0)
        with pytest.raises(ValueError):
            penalized_objective(prog, prog.zeros(), 0.0)


class TestInterpolation:
    def test_mode(self):
        prog = build_interpolation_program(EX1, np.ones(3), enumerate_exact(EX1))
        assert prog.interpolation and prog.beta == 0
        assert prog.summary()["mode"] == "interpolation"
