import numpy as np
import pytest

from deepthin.baselines import csr_budget_nnz, csr_size
from deepthin.core import make_rng
from deepthin.datasets import regression_task, spiral_task
from deepthin.errors import ArgumentError, InfeasiblePlanError
from deepthin.factor import FactorPair
from deepthin.grad import TrainConfig, layer_backward
from deepthin.planner import plan_network
from deepthin.train import (
    DeepThinWeights,
    METHODS,
    SPIRAL_DIMS,
    TrainLayer,
    build_layers,
    sgd_train,
    train_toy,
)


def tiny_cfg(loss="softmax_cross_entropy", epochs=2, seed=0):
    return TrainConfig(learning_rate=0.3, epochs=epochs, batch_size=64,
                       seed=seed, loss=loss, clip_norm=5.0)


class TestDatasets:
    def test_regression_shapes_and_determinism(self):
        (xa, ya), (va, wa) = regression_task(3)
        (xb, yb), _ = regression_task(3)
        assert xa.shape == (2048, 64) and ya.shape == (2048, 64)
        assert va.shape == (512, 64)
        assert np.array_equal(xa, xb) and np.array_equal(ya, yb)
        (xc, _), _ = regression_task(4)
        assert not np.array_equal(xa, xc)

    def test_spiral_shapes_and_label_balance(self):
        (x, y), (xv, yv) = spiral_task(0)
        assert x.shape == (1536, 2) and y.shape == (1536,)
        assert xv.shape == (384, 2)
        assert np.array_equal(np.bincount(y), [512, 512, 512])


class TestBuildLayers:
    def test_deepthin_param_budget(self):
        dims = SPIRAL_DIMS
        layers = build_layers("deepthin", dims, 0.02, 1, 0, ("relu",) * 3 + ("identity",))
        total_orig = sum(dims[i] * dims[i + 1] for i in range(len(dims) - 1))
        factor_params = sum(l.weights.stored_params() for l in layers)
        assert factor_params <= 0.02 * total_orig * (1 + 1e-9)

    def test_hashed_param_budget(self):
        layers = build_layers("hashed", (8, 32, 4), 0.1, 1, 0, ("relu", "identity"))
        assert layers[0].weights.stored_params() == int(0.1 * 8 * 32)

    def test_pruned_final_density_honors_csr_budget(self):
        q, r_dim, ratio = 48, 40, 0.2
        layers = build_layers("pruned", (q, r_dim), ratio, 1, 0, ("identity",),
                              prune_steps=[0, 1, 2])
        provider = layers[0].weights
        for step in range(3):
            provider.on_global_step(step)
        nnz = provider.layer.nnz
        assert nnz == csr_budget_nnz(q, r_dim, ratio)
        assert csr_size(nnz, q) <= ratio * q * r_dim * 4

    def test_same_size_scales_hidden_dims(self):
        layers = build_layers("same_size", (16, 64, 64, 8), 0.25, 1, 0,
                              ("relu", "relu", "identity"))
        dims = [l.weights.w.shape for l in layers]
        assert dims[0][0] == 16 and dims[-1][1] == 8
        assert dims[0][1] < 64
        total = sum(a * b for a, b in dims)
        assert total <= 0.30 * (16 * 64 + 64 * 64 + 64 * 8)

    def test_unknown_method(self):
        with pytest.raises(ArgumentError):
            build_layers("magic", (4, 4), 0.5, 1, 0, ("identity",))


class TestTrainToy:
    def test_same_seed_identical_histories(self):
        a = train_toy("spiral_classification", "deepthin", 0.04, tiny_cfg())
        b = train_toy("spiral_classification", "deepthin", 0.04, tiny_cfg())
        assert a == b

    def test_different_seed_differs(self):
        a = train_toy("spiral_classification", "hashed", 0.04, tiny_cfg(seed=0))
        b = train_toy("spiral_classification", "hashed", 0.04, tiny_cfg(seed=1))
        assert a != b

    def test_infeasible_ratio_raises(self):
        with pytest.raises(InfeasiblePlanError):
            train_toy("spiral_classification", "rank_fact", 0.01, tiny_cfg())

    def test_ratio_one_only_for_uncompressed(self):
        with pytest.raises(ArgumentError):
            train_toy("spiral_classification", "deepthin", 1.0, tiny_cfg())

    def test_history_rows_are_epoch_train_val(self):
        h = train_toy("spiral_classification", "dense", 1.0, tiny_cfg())
        assert [row[0] for row in h] == [1, 2]
        assert all(np.isfinite(row[1]) and np.isfinite(row[2]) for row in h)


class TestTrainerGradientsMatchPublicBackward:
    def test_deepthin_provider_agrees_with_layer_backward(self):
        net = plan_network([("w", 12, 10)], 1, 0.6)
        plan = net.plan_for("w")
        rng = make_rng(5)
        provider = DeepThinWeights(plan, 0.5, rng)
        layer = TrainLayer(weights=provider, bias=np.zeros(10), activation="tanh")
        x = rng.standard_normal((4, 12))
        upstream = rng.standard_normal((4, 10))

        out = layer.forward(x)
        g_in = layer.backward(upstream)

        fp = FactorPair(xf=provider.xf, wf=provider.wf, plan=plan)
        expected = layer_backward(x, fp, np.zeros(10), "tanh", upstream)
        assert np.allclose(provider.d_xf, expected.d_xf, atol=1e-12)
        assert np.allclose(provider.d_wf, expected.d_wf, atol=1e-12)
        assert np.allclose(g_in, expected.d_input, atol=1e-12)
        assert np.allclose(layer._d_bias, expected.d_bias, atol=1e-12)


class TestInitializationVariance:
    def test_deepthin_preactivation_variance_tracks_dense(self):
        # one wide layer, balanced plan: compressed and dense layers built
        # with the same sigma should produce matching pre-activation spread
        rng = make_rng(9)
        x = rng.standard_normal((64, 768))
        net = plan_network([("w", 768, 768)], 1, 0.0031)
        provider = DeepThinWeights(net.plan_for("w"), 1 / np.sqrt(768), make_rng(1))
        dense_w = make_rng(2).standard_normal((768, 768)) / np.sqrt(768)
        pre_c = x @ provider.materialize()
        pre_d = x @ dense_w
        ratio = np.var(pre_c) / np.var(pre_d)
        assert 0.85 <= ratio <= 1.15
