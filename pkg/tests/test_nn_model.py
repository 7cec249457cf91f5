"""Model graph surgery, optimizer semantics, and training sanity checks."""

import numpy as np
import pytest

from tuckertrain.errors import ConfigError, GraphError
from tuckertrain.nn import (
    SGD,
    BatchNorm2d,
    Conv2d,
    Linear,
    MaxPool2d,
    Model,
    ReLU,
    build_vgg_mini,
    chain_layers,
    evaluate,
    lr_at,
    predict_logits,
)
from tuckertrain.tucker import ConvSpec, RankPair, decompose_conv


def tiny_model(rng, c_in=3, hw=8, num_classes=10):
    layers = [
        Conv2d("conv1", ConvSpec(c_in=c_in, c_out=8, kh=3, kw=3, padding=1), rng=rng),
        BatchNorm2d("bn1", 8),
        ReLU("relu1"),
        MaxPool2d("pool1"),
        Conv2d("conv2", ConvSpec(c_in=8, c_out=16, kh=3, kw=3, padding=1), rng=rng),
        BatchNorm2d("bn2", 16),
        ReLU("relu2"),
        MaxPool2d("pool2"),
        Linear("fc", 16 * (hw // 4) ** 2, num_classes, rng=rng),
    ]
    return Model(layers, (c_in, hw, hw))


def rel_diff(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-30)


class TestSgd:
    def _one_param_model(self, w0):
        rng = np.random.default_rng(0)
        m = tiny_model(rng)
        return m

    def test_plain_gradient_step(self):
        rng = np.random.default_rng(0)
        m = tiny_model(rng)
        layer = m.layers[0]
        w_before = layer.params["weight"].copy()
        for l in m.layers:
            l.grads = {k: np.ones_like(v) for k, v in l.params.items()}
        SGD(momentum=0.0, weight_decay=0.0).step(m, lr=0.1)
        np.testing.assert_allclose(layer.params["weight"], w_before - 0.1, rtol=1e-6)

    def test_momentum_hand_sequence(self):
        # w=1, g=1, lr=0.1, mu=0.9: after two steps v=1.9, w=0.71
        rng = np.random.default_rng(0)
        m = tiny_model(rng)
        layer = m.layers[0]
        layer.params["weight"][:] = 1.0
        opt = SGD(momentum=0.9, weight_decay=0.0)
        for l in m.layers:
            l.grads = {k: np.ones_like(v) for k, v in l.params.items()}
        opt.step(m, lr=0.1)
        np.testing.assert_allclose(layer.params["weight"], 0.9, rtol=1e-6)
        for l in m.layers:
            l.grads = {k: np.ones_like(v) for k, v in l.params.items()}
        opt.step(m, lr=0.1)
        np.testing.assert_allclose(layer.params["weight"], 0.71, rtol=1e-6)

    def test_weight_decay_only(self):
        # w=1, g=0, lr=0.1, wd=0.1 -> w' = 0.99
        rng = np.random.default_rng(0)
        m = tiny_model(rng)
        layer = m.layers[0]
        layer.params["weight"][:] = 1.0
        for l in m.layers:
            l.grads = {k: np.zeros_like(v) for k, v in l.params.items()}
        SGD(momentum=0.0, weight_decay=0.1).step(m, lr=0.1)
        np.testing.assert_allclose(layer.params["weight"], 0.99, rtol=1e-6)

    def test_dropped_layer_buffers_are_cleared(self):
        rng = np.random.default_rng(1)
        m = tiny_model(rng)
        opt = SGD(momentum=0.9)
        for l in m.layers:
            l.grads = {k: np.ones_like(v) for k, v in l.params.items()}
        opt.step(m, lr=0.01)
        assert ("conv2", "weight") in opt.velocity
        w = m.layers[m.layer_index("conv2")].params["weight"]
        f = decompose_conv(ConvSpec(c_in=8, c_out=16, kh=3, kw=3, padding=1, has_bias=True),
                           w, m.layers[m.layer_index("conv2")].params["bias"], RankPair(4, 4))
        m.replace("conv2", chain_layers("conv2", ConvSpec(c_in=8, c_out=16, kh=3, kw=3, padding=1), f))
        for l in m.layers:
            l.grads = {k: np.zeros_like(v) for k, v in l.params.items()}
        opt.step(m, lr=0.01)
        assert ("conv2", "weight") not in opt.velocity
        assert ("conv2.core", "weight") in opt.velocity
        assert not opt.velocity[("conv2.core", "weight")].any()


class TestLrSchedule:
    def test_paper_shape_schedule(self):
        sched = {0: 0.1, 100: 0.01, 150: 0.001}
        assert lr_at(0, sched) == 0.1
        assert lr_at(99, sched) == 0.1
        assert lr_at(100, sched) == 0.01
        assert lr_at(150, sched) == 0.001

    def test_desk_schedule(self):
        assert lr_at(20, {0: 0.1, 15: 0.01, 25: 0.001}) == 0.01

    def test_uncovered_epoch(self):
        with pytest.raises(ConfigError):
            lr_at(3, {5: 0.1})


class TestSurgery:
    def test_replace_with_copy_is_identity(self):
        rng = np.random.default_rng(2)
        m = tiny_model(rng)
        x = rng.standard_normal((4, 3, 8, 8)).astype(np.float32)
        before = m.forward(x)
        old = m.layers[m.layer_index("conv2")]
        copy = Conv2d.from_weights("conv2", old.spec, old.params["weight"], old.params["bias"])
        m.replace("conv2", [copy])
        after = m.forward(x)
        assert np.array_equal(before, after)

    def test_full_rank_chain_preserves_logits(self):
        rng = np.random.default_rng(3)
        m = tiny_model(rng)
        x = rng.standard_normal((4, 3, 8, 8)).astype(np.float32)
        before = m.forward(x)
        idx = m.layer_index("conv2")
        spec = m.layers[idx].spec
        others = {l.name: {k: v.copy() for k, v in l.params.items()} for l in m.layers if l.name != "conv2"}
        f = decompose_conv(spec, m.layers[idx].params["weight"], m.layers[idx].params["bias"],
                           RankPair(spec.c_in, spec.c_out))
        m.replace("conv2", chain_layers("conv2", spec, f))
        after = m.forward(x)
        assert rel_diff(before, after) <= 1e-5
        # untouched layers are byte-identical
        for l in m.layers:
            if l.name in others:
                for k, v in l.params.items():
                    assert np.array_equal(v, others[l.name][k])

    def test_param_count_delta_is_chain_minus_original(self):
        rng = np.random.default_rng(4)
        m = tiny_model(rng)
        idx = m.layer_index("conv2")
        spec = m.layers[idx].spec
        before = m.parameter_count()
        orig_params = m.layers[idx].param_count()
        f = decompose_conv(spec, m.layers[idx].params["weight"], m.layers[idx].params["bias"], RankPair(3, 5))
        chain = chain_layers("conv2", spec, f)
        m.replace("conv2", chain)
        delta = sum(l.param_count() for l in chain) - orig_params
        assert m.parameter_count() == before + delta

    def test_merge_restores_original_weights_at_full_rank(self):
        rng = np.random.default_rng(5)
        m = tiny_model(rng)
        idx = m.layer_index("conv2")
        spec = m.layers[idx].spec
        w0 = m.layers[idx].params["weight"].copy()
        b0 = m.layers[idx].params["bias"].copy()
        count0 = m.parameter_count()
        f = decompose_conv(spec, w0, b0, RankPair(spec.c_in, spec.c_out))
        m.replace("conv2", chain_layers("conv2", spec, f))
        assert m.chains() == [["conv2.first", "conv2.core", "conv2.last"]]
        merged = m.merge_chain(["conv2.first", "conv2.core", "conv2.last"])
        assert merged == "conv2"
        w1 = m.layers[m.layer_index("conv2")].params["weight"]
        assert rel_diff(w0, w1) <= 1e-6
        assert m.parameter_count() == count0

    def test_chain_and_merged_agree_samplewise(self):
        rng = np.random.default_rng(6)
        m = tiny_model(rng)
        idx = m.layer_index("conv2")
        spec = m.layers[idx].spec
        f = decompose_conv(spec, m.layers[idx].params["weight"], m.layers[idx].params["bias"], RankPair(4, 6))
        m.replace("conv2", chain_layers("conv2", spec, f))
        x = rng.standard_normal((64, 3, 8, 8)).astype(np.float32)
        chain_logits = predict_logits(m, x)
        m.merge_chain(["conv2.first", "conv2.core", "conv2.last"])
        merged_logits = predict_logits(m, x)
        assert rel_diff(chain_logits, merged_logits) <= 1e-4
        assert np.array_equal(chain_logits.argmax(1), merged_logits.argmax(1))

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_chain_vs_merged_conv_outputs(self, stride, padding):
        rng = np.random.default_rng(7)
        spec = ConvSpec(c_in=8, c_out=12, kh=3, kw=3, stride=stride, padding=padding)
        w = rng.standard_normal((12, 8, 3, 3)).astype(np.float32)
        b = rng.standard_normal(12).astype(np.float32)
        f = decompose_conv(spec, w, b, RankPair(5, 7))
        chain = chain_layers("c", spec, f)
        from tuckertrain.tucker import reconstruct_conv

        w_rec, b_rec = reconstruct_conv(f, spec)
        merged = Conv2d.from_weights("c", spec, w_rec, b_rec)
        for _ in range(10):
            x = rng.standard_normal((2, 8, 9, 9)).astype(np.float32)
            y_chain = x
            for layer in chain:
                y_chain = layer.forward(y_chain)
            y_merged = merged.forward(x)
            assert y_chain.shape == y_merged.shape
            assert rel_diff(y_chain, y_merged) <= 1e-4

    def test_unknown_name(self):
        m = tiny_model(np.random.default_rng(8))
        with pytest.raises(GraphError):
            m.replace("nope", [ReLU("r")])
        with pytest.raises(GraphError):
            m.merge_chain(["a", "b", "c"])

    def test_shape_breaking_replacement_rejected(self):
        rng = np.random.default_rng(9)
        m = tiny_model(rng)
        bad = Conv2d("conv2", ConvSpec(c_in=8, c_out=99, kh=3, kw=3, padding=1), rng=rng)
        with pytest.raises(GraphError):
            m.replace("conv2", [bad])

    def test_merge_rejects_non_chain(self):
        m = tiny_model(np.random.default_rng(10))
        with pytest.raises(GraphError):
            m.merge_chain(["conv1", "bn1", "relu1"])


class TestEvaluate:
    def test_single_correct_sample(self):
        rng = np.random.default_rng(11)
        m = tiny_model(rng)
        x = rng.standard_normal((1, 3, 8, 8)).astype(np.float32)
        label = int(m.forward(x).argmax())
        assert evaluate(m, x, np.array([label])) == 1.0

    def test_duplicated_dataset_same_accuracy(self):
        rng = np.random.default_rng(12)
        m = tiny_model(rng)
        x = rng.standard_normal((20, 3, 8, 8)).astype(np.float32)
        y = rng.integers(0, 10, size=20)
        acc1 = evaluate(m, x, y)
        acc2 = evaluate(m, np.concatenate([x, x]), np.concatenate([y, y]))
        assert acc1 == acc2

    def test_chance_level_band(self):
        # fresh random models on a balanced set score near 1/num_classes
        rng = np.random.default_rng(13)
        x = rng.standard_normal((1000, 3, 8, 8)).astype(np.float32)
        y = np.repeat(np.arange(10), 100)
        for seed in range(10):
            m = tiny_model(np.random.default_rng(100 + seed))
            acc = evaluate(m, x, y)
            assert 0.05 <= acc <= 0.20, f"seed {seed}: {acc}"


class TestTrainingSanity:
    def test_overfit_small_set(self):
        # 64 samples with class-dependent structure must be memorized fast
        rng = np.random.default_rng(14)
        m = tiny_model(rng, hw=8)
        y = np.repeat(np.arange(8), 8)
        x = (0.5 * rng.standard_normal((64, 3, 8, 8)) + y[:, None, None, None] * 0.3).astype(np.float32)
        opt = SGD(momentum=0.9, weight_decay=0.0)
        loss = None
        for step in range(200):
            loss = m.train_step_grads(x, y)
            opt.step(m, lr=0.05)
            if loss < 0.05:
                break
        assert loss < 0.05, f"loss stuck at {loss}"

    def test_fixed_seed_reproducible(self):
        def run(threads):
            rng = np.random.default_rng(42)
            m = tiny_model(rng)
            m.set_threads(threads)
            opt = SGD(momentum=0.9, weight_decay=5e-4)
            data_rng = np.random.default_rng(7)
            x = data_rng.standard_normal((48, 3, 8, 8)).astype(np.float32)
            y = data_rng.integers(0, 10, size=48)
            losses = []
            for _ in range(5):
                losses.append(m.train_step_grads(x, y))
                opt.step(m, lr=0.1)
            m.set_threads(1)
            return losses, predict_logits(m, x)

        l1, p1 = run(1)
        l2, p2 = run(1)
        l3, p3 = run(2)
        assert l1 == l2 == l3
        assert np.array_equal(p1, p2)
        assert np.array_equal(p1, p3)


class TestBuilders:
    def test_vgg_mini_structure(self):
        m = build_vgg_mini(np.random.default_rng(0))
        assert m.shape_trace()[-1] == (10,)
        assert len(m.conv_layers()) == 6
        # 3x3 stacks dominate the parameter budget
        assert m.parameter_count() > 1_000_000

    def test_flops_estimate_positive_and_drops_after_pool(self):
        m = build_vgg_mini(np.random.default_rng(0))
        assert m.flops_estimate() > 0
