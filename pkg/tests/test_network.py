import numpy as np
import pytest

from segres.gradcheck import full_graph_check
from segres.network import (
    ArchConfig,
    build_baseline,
    build_improved,
    with_zeroed_fusion,
)
from segres.tensor import Rng
from segres.validation import ShapeError, StateError


def desk_cfg(classes=2, convs=1):
    return ArchConfig(class_count=classes, desk_scale=True, convs_per_stage=convs)


class TestArchConfig:
    def test_defaults(self):
        cfg = ArchConfig()
        assert cfg.channels == (64, 128, 256)

    def test_desk_scale_channels(self):
        assert desk_cfg().channels == (16, 32, 64)

    def test_non_increasing_channels_rejected(self):
        with pytest.raises(ValueError):
            ArchConfig(stage_channels=(64, 64, 128))

    def test_class_count_floor(self):
        with pytest.raises(ValueError):
            ArchConfig(class_count=1)


class TestShapes:
    @pytest.mark.parametrize("build", [build_improved, build_baseline])
    @pytest.mark.parametrize("hw", [8, 16, 24])
    def test_output_matches_input_spatial(self, build, hw):
        net = build(desk_cfg(classes=3), Rng(0))
        x = Rng(1).normal((2, 3, hw, hw)) * 0.3
        prob = net.forward(x)
        assert prob.shape == (2, 3, hw, hw)
        assert np.abs(prob.sum(axis=1) - 1.0).max() < 1e-6

    @pytest.mark.parametrize("build", [build_improved, build_baseline])
    def test_non_divisible_rejected(self, build):
        net = build(desk_cfg(), Rng(0))
        with pytest.raises(ShapeError):
            net.forward(np.zeros((1, 3, 12, 12)))

    def test_minimum_size_inner_map_is_1x1(self):
        net = build_improved(desk_cfg(), Rng(0))
        net.forward(Rng(2).normal((1, 3, 8, 8)))
        pooled = [a for a, n in zip(net._acts, net.nodes) if n.op == "pool"]
        assert pooled[-1].shape == (1, 64, 1, 1)

    def test_wrong_channel_count_rejected(self):
        net = build_improved(desk_cfg(), Rng(0))
        with pytest.raises(ShapeError):
            net.forward(np.zeros((1, 4, 8, 8)))


class TestImprovedWiring:
    def test_channel_trace_default_config(self):
        net = build_improved(ArchConfig(class_count=21), Rng(0))
        x = Rng(3).normal((1, 3, 8, 8)) * 0.2
        net.forward(x)
        trace = [
            (n.op, a.shape[1], a.shape[2])
            for n, a in zip(net.nodes, net._acts)
            if n.op in ("relu", "pool", "unpool", "add", "deconv", "concat", "softmax", "conv")
        ]
        # encoder: 64 -> 128 -> 256 channels while halving resolution three times
        assert ("relu", 64, 8) in trace and ("pool", 64, 4) in trace
        assert ("relu", 128, 4) in trace and ("pool", 128, 2) in trace
        assert ("relu", 256, 2) in trace and ("pool", 256, 1) in trace
        # decoder: unpool+add at 256, deconv to 128, unpool+add at 128, deconv
        # to 64, unpool+add at 64, concat to 128, classifier to C
        assert ("unpool", 256, 2) in trace and ("add", 256, 2) in trace
        assert ("deconv", 128, 2) in trace
        assert ("unpool", 128, 4) in trace and ("add", 128, 4) in trace
        assert ("deconv", 64, 4) in trace
        assert ("unpool", 64, 8) in trace and ("add", 64, 8) in trace
        assert ("concat", 128, 8) in trace
        assert ("softmax", 21, 8) in trace

    def test_unpool_consumes_stage_matched_indices(self):
        net = build_improved(desk_cfg(), Rng(0))
        pools = [i for i, n in enumerate(net.nodes) if n.op == "pool"]
        unpools = [n.pool_node for n in net.nodes if n.op == "unpool"]
        assert unpools == list(reversed(pools))

    def test_parameter_count_gap_is_classifier_widening(self):
        cfg = desk_cfg(classes=5)
        improved = build_improved(cfg, Rng(0))
        baseline = build_baseline(cfg, Rng(0))
        c1 = cfg.channels[0]
        assert baseline.param_count() < improved.param_count()
        assert improved.param_count() - baseline.param_count() == c1 * 5

    def test_zeroed_fusion_matches_baseline(self):
        cfg = desk_cfg(classes=3)
        baseline = build_baseline(cfg, Rng(7))
        improved = build_improved(cfg, Rng(8))
        # share every common parameter, then blank the extra classifier block
        for name, p in baseline.params.items():
            if name.startswith("classifier"):
                continue
            improved.params[name].data[...] = p.data
        c1 = cfg.channels[0]
        improved.params["classifier.w"].data[:, :c1] = baseline.params["classifier.w"].data
        improved.params["classifier.w"].data[:, c1:] = 0.0
        improved.params["classifier.b"].data[...] = baseline.params["classifier.b"].data
        surgered = with_zeroed_fusion(improved)
        x = Rng(9).normal((2, 3, 16, 16)) * 0.4
        assert np.allclose(surgered.forward(x), baseline.forward(x), atol=1e-12)


class TestForwardBackward:
    def test_forward_deterministic(self):
        net = build_improved(desk_cfg(), Rng(4))
        x = Rng(5).normal((1, 3, 8, 8))
        assert np.array_equal(net.forward(x), net.forward(x))

    def test_batch_permutation_equivariance(self):
        net = build_baseline(desk_cfg(classes=4), Rng(6))
        x = Rng(7).normal((3, 3, 8, 8)) * 0.5
        prob = net.forward(x, training=False)
        perm = [2, 0, 1]
        prob_perm = net.forward(x[perm], training=False)
        assert np.allclose(prob_perm, prob[perm], atol=1e-12)

    def test_backward_without_forward_raises(self):
        net = build_improved(desk_cfg(), Rng(0))
        with pytest.raises(StateError):
            net.backward(np.zeros((1, 2, 8, 8)))

    def test_zero_upstream_gives_zero_grads(self):
        net = build_improved(desk_cfg(), Rng(1))
        x = Rng(2).normal((1, 3, 8, 8))
        net.forward(x, training=True)
        grads = net.backward(np.zeros((1, 2, 8, 8)))
        assert all((g == 0).all() for g in grads.values())

    def test_gradients_sum_over_batch(self):
        net = build_improved(desk_cfg(), Rng(3))
        x = Rng(4).normal((1, 3, 8, 8)) * 0.5
        up = Rng(5).normal((1, 2, 8, 8))
        net.forward(x, training=True)
        single = {k: v.copy() for k, v in net.backward(up).items()}
        net.forward(np.concatenate([x, x]), training=True)
        double = net.backward(np.concatenate([up, up]))
        for name in single:
            assert np.allclose(double[name], 2.0 * single[name], rtol=1e-10, atol=1e-12), name

    def test_full_graph_gradient_check(self):
        errors = full_graph_check()
        worst = max(errors.values())
        assert worst < 1e-4, {k: v for k, v in errors.items() if v >= 1e-4}

    def test_training_mode_updates_running_stats_inference_does_not(self):
        net = build_improved(desk_cfg(), Rng(8))
        x = Rng(9).normal((2, 3, 8, 8))
        before = net.bn_states["enc1.bn0"].running_mean.copy()
        net.forward(x, training=False)
        assert np.array_equal(net.bn_states["enc1.bn0"].running_mean, before)
        net.forward(x, training=True)
        assert not np.array_equal(net.bn_states["enc1.bn0"].running_mean, before)
