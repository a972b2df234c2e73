import numpy as np
import pytest

from cvxnn.arrangements import enumerate_exact
from cvxnn.baseline import (TrainConfig, TrainingDiverged, init_network,
                            linear_cnn_objective, multi_restart,
                            seeded_configs, train_linear_cnn, train_nonconvex)
from cvxnn.core import ActivationSpec
from cvxnn.mapping import nonconvex_objective
from cvxnn.program import build_program
from cvxnn.solvers import solve_admm


@pytest.fixture
def data():
    rng = np.random.default_rng(0)
    return rng.standard_normal((10, 2)), rng.standard_normal(10)


class TestConfig:
    @pytest.mark.parametrize("kw", [{"m": 0}, {"lr": -1.0}, {"epochs": -1},
                                    {"optimizer": "adam"}, {"batch_size": 0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)

    def test_seeded(self):
        cfgs = seeded_configs(TrainConfig(m=4), range(3))
        assert [c.seed for c in cfgs] == [0, 1, 2] and all(c.m == 4 for c in cfgs)


class TestTraining:
    def test_zero_lr_keeps_init(self, data):
        X, y = data
        cfg = TrainConfig(m=5, lr=0.0, epochs=10)
        res = train_nonconvex(X, y, 0.1, cfg=cfg)
        init = init_network(2, cfg)
        np.testing.assert_array_equal(res.params.W1, init.W1)
        assert np.all(res.trajectory == res.trajectory[0])

    def test_trajectory(self, data):
        X, y = data
        res = train_nonconvex(X, y, 0.1, cfg=TrainConfig(m=5, epochs=50))
        assert res.trajectory.shape == (51,) and np.isfinite(res.trajectory).all()
        assert res.objective == pytest.approx(nonconvex_objective(res.params, X, y, 0.1), rel=1e-12)
        assert res.trajectory[-1] < res.trajectory[0]

    def test_deterministic(self, data):
        X, y = data
        cfg = TrainConfig(m=5, epochs=30, seed=3, optimizer="sgd", batch_size=3)
        a = train_nonconvex(X, y, 0.1, cfg=cfg)
        b = train_nonconvex(X, y, 0.1, cfg=cfg)
        np.testing.assert_array_equal(a.trajectory, b.trajectory)

    def test_sgd_full_batch_equals_gd(self, data):
        X, y = data
        gd = train_nonconvex(X, y, 0.1, cfg=TrainConfig(m=5, epochs=20))
        sgd = train_nonconvex(X, y, 0.1, cfg=TrainConfig(m=5, epochs=20, optimizer="sgd"))
        np.testing.assert_array_equal(gd.trajectory, sgd.trajectory)

    def test_gradient_matches_finite_differences(self, data):
        X, y = data
        cfg = TrainConfig(m=3, epochs=0, seed=1)
        net = init_network(2, cfg, bias=True, activation=ActivationSpec(0.1))
        step = train_nonconvex(X, y, 0.1, net.activation, TrainConfig(m=3, epochs=1, lr=1e-7),
                               bias=True, init=net)
        gH = (net.hidden() - step.params.hidden()) / 1e-7
        fd = np.zeros_like(gH)
        for idx in np.ndindex(gH.shape):
            for sgn in (1, -1):
                H = net.hidden().copy()
                H[idx] += sgn * 1e-6
                p = type(net)(H[:-1], net.w2, H[-1], net.activation)
                fd[idx] += sgn * nonconvex_objective(p, X, y, 0.1) / 2e-6
        np.testing.assert_allclose(gH, fd, rtol=1e-4, atol=1e-6)

    def test_divergence(self, data):
        X, y = data
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train_nonconvex(X, 100 * y, 0.1, cfg=TrainConfig(m=5, lr=10.0, epochs=200))


class TestRestarts:
    def test_batched_equals_single(self, data):
        X, y = data
        cfgs = seeded_configs(TrainConfig(m=6, epochs=40), range(4))
        summary = multi_restart(X, y, 0.1, cfgs)
        for row, cfg in zip(summary.rows, cfgs):
            single = train_nonconvex(X, y, 0.1, cfg=cfg)
            np.testing.assert_array_equal(row["result"].trajectory, single.trajectory)

    def test_gap_nonnegative(self, data):
        X, y = data
        p = solve_admm(build_program(X, y, enumerate_exact(X), 0.1))[1].objective
        cfgs = seeded_configs(TrainConfig(m=20, epochs=500, lr=0.02), range(3))
        summary = multi_restart(X, y, 0.1, cfgs, convex_optimum=p)
        assert all(r["gap"] >= -1e-6 for r in summary.rows)
        assert summary.best["objective"] == summary.objectives.min()

    def test_csv(self, data):
        X, y = data
        summary = multi_restart(X, y, 0.1, seeded_configs(TrainConfig(m=2, epochs=2), [0, 1]))
        lines = summary.to_csv().splitlines()
        assert lines[0] == "seed,m,lr,objective,gap" and len(lines) == 3
        assert lines[1].endswith(",")

    def test_empty(self, data):
        with pytest.raises(ValueError):
            multi_restart(*data, 0.1, [])


class TestLinearCNN:
    def test_descends(self):
        rng = np.random.default_rng(2)
        patches = rng.standard_normal((3, 20, 4))
        y = rng.standard_normal(20)
        res = train_linear_cnn(patches, y, 1.0, m=4, lr=1e-3, epochs=200)
        assert res.trajectory.shape == (201,)
        assert res.objective < res.trajectory[0]
        assert res.objective == pytest.approx(linear_cnn_objective(patches, y, res.W1, res.W2, 1.0))
