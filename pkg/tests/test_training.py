"""Training machinery: balanced sampler, two training stages, determinism.

Runs on an in-memory toy feature store so the unit suite stays fast; the
full audio pipeline is exercised by the CLI and acceptance tests.
"""

from dataclasses import dataclass

import numpy as np
import pytest

from moedet.errors import ConfigError, DataError
from moedet.experts import Expert, ExpertConfig
from moedet.gating import ConcatGate, GatingConfig, GatingNetwork, MoEModel
from moedet.optim import CosineSchedule
from moedet.training import (
    TrainConfig,
    balanced_batches,
    joint_loss,
    mele_expert_configs,
    pretrain_expert,
    steps_per_epoch,
    train_joint,
)

FEAT_SHAPE = (16, 20)


@dataclass(frozen=True)
class ToyEntry:
    path: str
    label: int
    domain: str = "toy"
    split: str = "train"


class ToyStore:
    """Deterministic per-path features; fakes carry an additive pattern."""

    def __init__(self, feat_shape=FEAT_SHAPE, shift=1.5):
        self.feat_shape = feat_shape
        self.shift = shift

    def _features(self, entry):
        seed = abs(hash(entry.path)) % (2 ** 32)
        rng = np.random.default_rng(seed)
        feat = rng.normal(size=self.feat_shape)
        if entry.label == 1:
            feat[: self.feat_shape[0] // 2] += self.shift
        return feat

    def batch(self, entries, kind, cfg=None, rng=None):
        feats = np.stack([self._features(e) for e in entries])
        labels = np.array([e.label for e in entries], dtype=np.int64)
        return feats, labels


def toy_entries(n_per_class, domain="toy", split="train", offset=0):
    entries = []
    for i in range(n_per_class):
        entries.append(ToyEntry(f"{domain}/{split}/r{i + offset}", 0, domain, split))
        entries.append(ToyEntry(f"{domain}/{split}/f{i + offset}", 1, domain, split))
    return entries


def toy_expert(seed=0, embed_dim=8):
    cfg = ExpertConfig("lcnn", "mel", 0.25, embed_dim)
    return Expert(cfg, FEAT_SHAPE, np.random.default_rng(seed))


def toy_moe(seed=0, variant="att", n=2):
    experts = [toy_expert(seed=seed + i) for i in range(n)]
    dims = [e.cfg.embed_dim for e in experts]
    rng = np.random.default_rng(seed + 100)
    if variant == "att":
        gate = GatingNetwork(GatingConfig(n_experts=n, mlp_dim=16), dims, rng)
    else:
        gate = ConcatGate(dims, n, rng)
    return MoEModel(experts, gate, variant)


def fast_cfg(stage, **kw):
    defaults = dict(stage=stage, max_epochs=3, patience=3, batch_size=8, seed=7)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestTrainConfig:
    def test_stage_defaults_match_reference(self):
        pre = TrainConfig(stage="pretrain")
        assert (pre.max_epochs, pre.patience, pre.batch_size) == (100, 20, 256)
        joint = TrainConfig(stage="joint")
        assert (joint.max_epochs, joint.patience, joint.batch_size) == (50, 10, 128)
        assert pre.lr_max == 1e-4
        assert pre.label_smoothing == 0.2

    def test_bad_values(self):
        with pytest.raises(ConfigError):
            TrainConfig(stage="warmup")
        with pytest.raises(ConfigError):
            TrainConfig(partitioning="pooled")


class TestBalancedBatches:
    def test_half_and_half(self):
        entries = toy_entries(10)
        for batch in balanced_batches(entries, 8, np.random.default_rng(0)):
            assert len(batch) == 8
            assert sum(e.label for e in batch) == 4

    def test_batch_count_arithmetic(self):
        # 10 real + 10 fake at batch 4 -> 5 batches of 2 + 2
        entries = toy_entries(10)
        batches = list(balanced_batches(entries, 4, np.random.default_rng(1)))
        assert len(batches) == 5

    def test_minority_resampled_with_replacement(self):
        entries = [ToyEntry(f"r{i}", 0) for i in range(8)] + [ToyEntry("f0", 1)]
        batches = list(balanced_batches(entries, 4, np.random.default_rng(2)))
        assert len(batches) == 4  # majority 8 / half-batch 2
        for batch in batches:
            assert sum(e.label for e in batch) == 2

    def test_same_seed_same_sequence(self):
        entries = toy_entries(12)
        a = [tuple(e.path for e in b)
             for b in balanced_batches(entries, 6, np.random.default_rng(3))]
        b = [tuple(e.path for e in b)
             for b in balanced_batches(entries, 6, np.random.default_rng(3))]
        assert a == b

    def test_class_absent_rejected(self):
        entries = [ToyEntry(f"r{i}", 0) for i in range(8)]
        with pytest.raises(DataError):
            list(balanced_batches(entries, 4, np.random.default_rng(4)))

    def test_odd_batch_rejected(self):
        with pytest.raises(ConfigError):
            list(balanced_batches(toy_entries(4), 3, np.random.default_rng(5)))


class TestPretrainExpert:
    def test_descends_on_separable_toy(self):
        expert = toy_expert()
        store = ToyStore()
        record = pretrain_expert(
            expert, toy_entries(16), toy_entries(8, split="dev"), store,
            fast_cfg("pretrain", max_epochs=6, lr_max=3e-3),
        )
        assert record.best_val_loss() < record.epochs[0].val_loss or \
            record.epochs[-1].val_loss < record.epochs[0].train_loss
        assert record.epochs[-1].val_loss < record.epochs[0].val_loss

    def test_flat_validation_stops_early(self):
        # drive the stopping logic with a scripted, perfectly flat val loss
        from moedet.training import _fit

        expert = toy_expert(seed=1)
        store = ToyStore()
        entries = toy_entries(8)
        cfg = fast_cfg("pretrain", max_epochs=30, patience=2)

        def batch_loss(batch, rng):
            import moedet.tensor as T

            feats, labels = store.batch(batch, "mel")
            expert.train(True)
            return T.cross_entropy_smoothed(expert.forward(feats).logits, labels, 0.2)

        record = _fit(expert, batch_loss, lambda: 1.0, entries, cfg)
        assert record.stopping_reason == "early_stop"
        assert len(record.epochs) == 3  # best at 0, then patience 2
        assert record.best_epoch == 0

    def test_seed_fixed_runs_identical(self):
        results = []
        for _ in range(2):
            expert = toy_expert(seed=2)
            record = pretrain_expert(
                expert, toy_entries(8), toy_entries(4, split="dev"), ToyStore(),
                fast_cfg("pretrain", max_epochs=3),
            )
            results.append((record, expert.state()))
        ra, rb = results[0][0], results[1][0]
        assert [e.train_loss for e in ra.epochs] == [e.train_loss for e in rb.epochs]
        assert [e.val_loss for e in ra.epochs] == [e.val_loss for e in rb.epochs]
        for k, v in results[0][1].items():
            np.testing.assert_array_equal(v, results[1][1][k])

    def test_best_weights_restored(self):
        expert = toy_expert(seed=3)
        store = ToyStore()
        record = pretrain_expert(
            expert, toy_entries(16), toy_entries(8, split="dev"), store,
            fast_cfg("pretrain", max_epochs=5, lr_max=3e-3),
        )
        # after restore, recomputed dev loss equals the best recorded value
        cfg = fast_cfg("pretrain")
        feats, labels = store.batch(toy_entries(8, split="dev"), "mel")
        import moedet.tensor as T

        expert.train(False)
        with T.no_grad():
            out = expert.forward(feats)
            loss = T.cross_entropy_smoothed(out.logits, labels, cfg.label_smoothing).item()
        assert loss == pytest.approx(record.best_val_loss(), abs=1e-12)
        assert record.best_val_loss() == min(e.val_loss for e in record.epochs)

    def test_lr_trace_matches_cosine_formula(self):
        expert = toy_expert(seed=4)
        cfg = fast_cfg("pretrain", max_epochs=4, lr_max=1e-3)
        entries = toy_entries(8)
        record = pretrain_expert(
            expert, entries, toy_entries(4, split="dev"), ToyStore(), cfg
        )
        n_steps = steps_per_epoch(entries, cfg.batch_size)
        sched = CosineSchedule(cfg.lr_max, cfg.lr_min, cfg.max_epochs * n_steps)
        for r in record.epochs:
            assert r.lr == sched.lr(r.epoch * n_steps)

    def test_domain_access_audit(self):
        expert = toy_expert(seed=5)
        entries = toy_entries(8, domain="combA")
        record = pretrain_expert(
            expert, entries, toy_entries(4, domain="combA", split="dev"), ToyStore(),
            fast_cfg("pretrain", max_epochs=2),
        )
        assert record.domains_seen == ["combA"]

    def test_wrong_stage_rejected(self):
        with pytest.raises(ConfigError):
            pretrain_expert(toy_expert(), toy_entries(4), toy_entries(2), ToyStore(),
                            fast_cfg("joint"))


class TestTrainJoint:
    def test_gate_and_experts_both_move(self):
        model = toy_moe(seed=6)
        gate_before = {n: p.data.copy() for n, p in model.gate.named_parameters()}
        expert_before = {n: p.data.copy()
                         for n, p in model.experts[0].named_parameters()}
        train_joint(
            model, toy_entries(8), toy_entries(4, split="dev"), ToyStore(),
            fast_cfg("joint", max_epochs=2, lr_max=1e-3),
        )
        gate_moved = any(
            not np.array_equal(p.data, gate_before[n])
            for n, p in model.gate.named_parameters()
        )
        expert_moved = any(
            not np.array_equal(p.data, expert_before[n])
            for n, p in model.experts[0].named_parameters()
        )
        assert gate_moved
        assert expert_moved

    def test_frozen_experts_stay_fixed(self):
        model = toy_moe(seed=7)
        expert_before = model.experts[0].state()
        train_joint(
            model, toy_entries(8), toy_entries(4, split="dev"), ToyStore(),
            fast_cfg("joint", max_epochs=2, lr_max=1e-3), freeze_experts=True,
        )
        for k, v in model.experts[0].state().items():
            if "running" in k:
                continue  # batch-norm statistics still follow the data
            np.testing.assert_array_equal(v, expert_before[k])

    def test_uniform_gate_equals_mean_logit_oracle(self):
        # 4-item batch, frozen situation: loss under a forced-uniform gate
        # must equal smoothed CE of the plain average of expert logits
        model = toy_moe(seed=8, n=2)
        model.train(False)
        store = ToyStore()
        entries = toy_entries(2)  # 4 items
        feats, labels = store.batch(entries, "mel")
        import moedet.tensor as T
        from moedet.experts import expert_forward

        with T.no_grad():
            loss = joint_loss(
                model, [feats, feats], labels, 0.2,
                alpha_override=np.full(2, 0.5),
            ).item()
        z = [expert_forward(e, feats, train_mode=False).logits.data
             for e in model.experts]
        mean_logits = (z[0] + z[1]) / 2.0
        lse = np.log(np.exp(mean_logits).sum(axis=1, keepdims=True))
        logp = mean_logits - lse
        q = np.full((4, 2), 0.1)
        q[np.arange(4), labels] += 0.8
        oracle = float(-(q * logp).sum() / 4.0)
        assert loss == pytest.approx(oracle, rel=1e-12)

    def test_mele_helper_configs(self):
        cfgs = mele_expert_configs(3)
        assert len(cfgs) == 3
        assert all(c.arch == "lcnn" and c.feature == "mel" for c in cfgs)
