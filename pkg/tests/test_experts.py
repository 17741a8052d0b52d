"""Expert networks: shape contracts, determinism, purity, gradients."""

import numpy as np
import pytest

import moedet.tensor as T
from moedet.audio import FeatureConfig
from moedet.errors import ConfigError, RoutingError
from moedet.experts import (
    Expert,
    ExpertConfig,
    build_expert,
    default_expert_configs,
    expert_forward,
)
from moedet.gradcheck import spot_check_gradients

SMALL = FeatureConfig(n_fft=128, hop=64, n_mels=32)  # keeps test forwards cheap


def small_expert(arch="lcnn", feature="mel", seed=0, embed_dim=16, width_scale=0.25):
    cfg = ExpertConfig(arch, feature, width_scale, embed_dim)
    return build_expert(cfg, SMALL, np.random.default_rng(seed))


def rand_feat(expert, batch=2, seed=1):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(batch,) + expert.feat_shape)


class TestConfig:
    def test_default_trio(self):
        cfgs = default_expert_configs()
        assert [(c.arch, c.feature) for c in cfgs] == [
            ("lcnn", "mel"), ("resnet", "mel"), ("resnet", "linear"),
        ]

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            ExpertConfig(arch="vgg")
        with pytest.raises(ConfigError):
            ExpertConfig(feature="cqt")
        with pytest.raises(ConfigError):
            ExpertConfig(width_scale=0.0)

    def test_zero_channels_rejected(self):
        cfg = ExpertConfig("lcnn", "mel", width_scale=0.01)
        with pytest.raises(ConfigError):
            build_expert(cfg, SMALL, np.random.default_rng(0))


class TestBuild:
    @pytest.mark.parametrize("arch", ["lcnn", "resnet"])
    def test_output_shapes(self, arch):
        expert = small_expert(arch)
        out = expert_forward(expert, rand_feat(expert, batch=3))
        assert out.embedding.shape == (3, 16)
        assert out.logits.shape == (3, 2)

    def test_same_seed_same_params(self):
        a = small_expert("resnet", seed=7)
        b = small_expert("resnet", seed=7)
        for (na, ta), (nb, tb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_default_resnet_under_500k_params(self):
        cfg = ExpertConfig("resnet", "mel", 1.0, 64)
        expert = build_expert(cfg, FeatureConfig(), np.random.default_rng(0))
        assert expert.n_parameters() < 500_000


class TestForward:
    def test_eval_mode_deterministic(self):
        expert = small_expert("resnet")
        feat = rand_feat(expert)
        a = expert_forward(expert, feat, train_mode=False)
        b = expert_forward(expert, feat, train_mode=False)
        np.testing.assert_array_equal(a.logits.data, b.logits.data)

    def test_batch_rows_match_single_forward(self):
        for arch in ("lcnn", "resnet"):
            expert = small_expert(arch)
            feat = rand_feat(expert, batch=4, seed=3)
            batched = expert_forward(expert, feat, train_mode=False)
            for i in range(4):
                single = expert_forward(expert, feat[i], train_mode=False)
                np.testing.assert_allclose(
                    batched.logits.data[i], single.logits.data[0], atol=1e-9
                )
                np.testing.assert_allclose(
                    batched.embedding.data[i], single.embedding.data[0], atol=1e-9
                )

    def test_zero_input_is_finite(self):
        for arch in ("lcnn", "resnet"):
            expert = small_expert(arch)
            out = expert_forward(expert, np.zeros((1,) + expert.feat_shape))
            assert np.isfinite(out.logits.data).all()
            assert np.isfinite(out.embedding.data).all()

    def test_feature_kind_mismatch_raises(self):
        expert = small_expert("resnet", feature="linear")
        mel_shaped = np.zeros((1, 32, 126))
        with pytest.raises(RoutingError, match="linear"):
            expert_forward(expert, mel_shaped)

    def test_logits_equal_affine_of_embedding(self):
        for arch in ("lcnn", "resnet"):
            expert = small_expert(arch)
            out = expert_forward(expert, rand_feat(expert))
            fc2 = expert.body.fc2
            recomputed = out.embedding.data @ fc2.weight.data + fc2.bias.data
            np.testing.assert_array_equal(out.logits.data, recomputed)

    def test_eval_does_not_touch_running_stats(self):
        expert = small_expert("resnet")
        stats_before = {
            k: v.copy() for k, v in expert.named_state() if "running" in k
        }
        expert_forward(expert, rand_feat(expert), train_mode=False)
        for k, v in expert.named_state():
            if "running" in k:
                np.testing.assert_array_equal(v, stats_before[k])

    def test_train_mode_updates_running_stats(self):
        expert = small_expert("resnet")
        before = {k: v.copy() for k, v in expert.named_state() if "running_mean" in k}
        expert_forward(expert, rand_feat(expert), train_mode=True)
        changed = any(
            not np.array_equal(v, before[k])
            for k, v in expert.named_state() if k in before
        )
        assert changed


class TestGradients:
    @pytest.mark.parametrize("arch", ["lcnn", "resnet"])
    def test_spot_check_vs_finite_differences(self, arch):
        expert = small_expert(arch, embed_dim=8, width_scale=0.125)
        feat = rand_feat(expert, batch=2, seed=5)
        labels = np.array([0, 1])
        rng = np.random.default_rng(11)

        def make_loss():
            expert.train(True)
            out = expert.forward(feat)
            return T.cross_entropy_smoothed(out.logits, labels, eps=0.2)

        err = spot_check_gradients(make_loss, expert.parameters(), 50, rng)
        assert err < 1e-3
