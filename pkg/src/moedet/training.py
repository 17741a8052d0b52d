"""Two-stage training: independent expert pretraining, then joint
fine-tuning of experts plus gate, under MILE (pooled data, diverse
architectures) or MELE (one same-architecture expert per domain).

Every batch is class-balanced; the learning rate follows one cosine arc
per stage; early stopping monitors validation loss and restores the best
weights. All randomness flows from explicit seeds, so a fixed seed gives
bit-identical checkpoints.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import audio
from . import tensor as T
from .audio import SpecAugmentConfig
from .errors import ConfigError, DataError, NumericsError
from .experts import ExpertConfig
from .optim import AdamW, CosineSchedule

STAGE_DEFAULTS = {
    # stage: (max_epochs, patience, batch_size)
    "pretrain": (100, 20, 256),
    "joint": (50, 10, 128),
}


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    partitioning: str = "mile"     # mile | mele
    gate_variant: str = "att"      # att | cat
    max_epochs: int = None
    patience: int = None
    batch_size: int = None
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    label_smoothing: float = 0.2
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    augment: bool = False
    noise_snr_db: tuple = (10.0, 30.0)
    spec_augment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise ConfigError(f"unknown training stage {self.stage!r}")
        if self.partitioning not in ("mile", "mele"):
            raise ConfigError(f"unknown partitioning {self.partitioning!r}")
        if self.gate_variant not in ("att", "cat"):
            raise ConfigError(f"unknown gate variant {self.gate_variant!r}")
        defaults = STAGE_DEFAULTS[self.stage]
        if self.max_epochs is None:
            self.max_epochs = defaults[0]
        if self.patience is None:
            self.patience = defaults[1]
        if self.batch_size is None:
            self.batch_size = defaults[2]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)
    best_epoch: int = -1
    stopping_reason: str = ""
    domains_seen: list = field(default_factory=list)

    def best_val_loss(self):
        return self.epochs[self.best_epoch].val_loss

    def save_jsonl(self, path):
        with open(path, "w") as fh:
            for r in self.epochs:
                fh.write(json.dumps({
                    "epoch": r.epoch, "train_loss": r.train_loss,
                    "val_loss": r.val_loss, "lr": r.lr, "seconds": r.seconds,
                }) + "\n")
            fh.write(json.dumps({
                "best_epoch": self.best_epoch,
                "stopping_reason": self.stopping_reason,
                "domains_seen": self.domains_seen,
            }) + "\n")


class FeatureStore:
    """Loads, length-fixes, and featurizes corpus entries with caching.

    Clean features are cached (float32 payload; the network math stays
    float64). Augmented features are recomputed per draw and never cached.
    """

    def __init__(self, manifest, frontend_cfg):
        self.manifest = manifest
        self.frontend_cfg = frontend_cfg
        self._wave_cache = {}
        self._feat_cache = {}

    def waveform(self, entry):
        w = self._wave_cache.get(entry.path)
        if w is None:
            w = audio.fix_length(audio.read_wav(self.manifest.resolve(entry)))
            self._wave_cache[entry.path] = w
        return w

    def features(self, entry, kind):
        key = (entry.path, kind)
        feat = self._feat_cache.get(key)
        if feat is None:
            feat = audio.extract_features(self.waveform(entry), self.frontend_cfg, kind)
            self._feat_cache[key] = feat.astype(np.float32)
            return feat
        return feat.astype(np.float64)

    def features_augmented(self, entry, kind, cfg, rng):
        snr = rng.uniform(*cfg.noise_snr_db)
        w = audio.add_noise(self.waveform(entry), snr, rng)
        feat = audio.extract_features(w, self.frontend_cfg, kind)
        return audio.spec_augment(feat, cfg.spec_augment, rng)

    def batch(self, entries, kind, cfg=None, rng=None):
        """(B, F, T) feature stack plus the (B,) label vector."""
        if cfg is not None and cfg.augment:
            feats = [self.features_augmented(e, kind, cfg, rng) for e in entries]
        else:
            feats = [self.features(e, kind) for e in entries]
        labels = np.array([e.label for e in entries], dtype=np.int64)
        return np.stack(feats), labels

    def drop_feature_cache(self):
        self._feat_cache.clear()


def balanced_batches(entries, batch_size, rng):
    """Yield batches holding exactly batch_size/2 of each class.

    One epoch covers the majority class once (shuffled); the minority
    class is resampled with replacement when it runs short. Trailing
    majority items that cannot fill a balanced batch are dropped.
    """
    if batch_size % 2 != 0:
        raise ConfigError(f"batch size must be even, got {batch_size}")
    real = [e for e in entries if e.label == 0]
    fake = [e for e in entries if e.label == 1]
    if not real or not fake:
        raise DataError("balanced batching needs both classes in the split")
    half = batch_size // 2
    major, minor = (real, fake) if len(real) >= len(fake) else (fake, real)
    n_batches = len(major) // half
    if n_batches == 0:
        raise DataError(
            f"majority class has {len(major)} items, fewer than half a batch ({half})"
        )
    needed = n_batches * half
    major_idx = rng.permutation(len(major))[:needed]
    if len(minor) >= needed:
        minor_idx = rng.permutation(len(minor))[:needed]
    else:
        minor_idx = rng.choice(len(minor), size=needed, replace=True)
    for b in range(n_batches):
        sl = slice(b * half, (b + 1) * half)
        batch = [major[i] for i in major_idx[sl]] + [minor[i] for i in minor_idx[sl]]
        order = rng.permutation(len(batch))
        batch = [batch[i] for i in order]
        n_fake = sum(e.label for e in batch)
        assert n_fake == half, "sampler breached class balance"
        yield batch


def steps_per_epoch(entries, batch_size):
    n_real = sum(1 for e in entries if e.label == 0)
    n_fake = len(entries) - n_real
    return max(n_real, n_fake) // (batch_size // 2)


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i:i + size]


def _fit(module, batch_loss, val_loss, train_entries, cfg, log_path=None,
         named_params=None):
    """Shared training skeleton: cosine schedule, early stop, best-weights restore.

    batch_loss(entries, rng) builds the graph and returns the scalar loss;
    val_loss() evaluates the validation objective without gradients.
    ``named_params`` restricts the optimizer to a subset of the module's
    parameters (the full module state is still what gets restored).
    """
    n_steps = steps_per_epoch(train_entries, cfg.batch_size)
    schedule = CosineSchedule(cfg.lr_max, cfg.lr_min, max(cfg.max_epochs * n_steps, 1))
    if named_params is None:
        named_params = list(module.named_parameters())
    opt = AdamW(named_params, lr=cfg.lr_max, betas=cfg.betas,
                eps=cfg.eps, weight_decay=cfg.weight_decay)
    record = RunRecord()
    best_val = np.inf
    best_state = None
    since_best = 0
    global_step = 0
    domains = set()
    for epoch in range(cfg.max_epochs):
        t0 = time.monotonic()
        epoch_rng = np.random.default_rng([cfg.seed, epoch])
        first_lr = schedule.lr(global_step)
        losses = []
        for batch in balanced_batches(train_entries, cfg.batch_size, epoch_rng):
            domains.update(e.domain for e in batch)
            loss = batch_loss(batch, epoch_rng)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericsError(f"training loss became {value} at epoch {epoch}")
            loss.backward()
            opt.step(lr=schedule.lr(global_step))
            opt.zero_grad()
            global_step += 1
            losses.append(value)
        val = val_loss()
        record.epochs.append(EpochRecord(
            epoch=epoch, train_loss=float(np.mean(losses)), val_loss=val,
            lr=first_lr, seconds=time.monotonic() - t0,
        ))
        if val < best_val:
            best_val = val
            best_state = module.state()
            record.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        if since_best >= cfg.patience:
            record.stopping_reason = "early_stop"
            break
    else:
        record.stopping_reason = "max_epochs"
    module.load_state(best_state)
    record.domains_seen = sorted(domains)
    if log_path is not None:
        record.save_jsonl(log_path)
    return record


def _mean_eval_loss(batches_losses):
    total, count = 0.0, 0
    for loss_value, n in batches_losses:
        total += loss_value * n
        count += n
    return total / max(count, 1)


def pretrain_expert(expert, train_entries, dev_entries, store, cfg, log_path=None):
    """Stage one: minimize smoothed CE on one expert's own logits."""
    if cfg.stage != "pretrain":
        raise ConfigError(f"pretrain_expert called with stage {cfg.stage!r}")
    kind = expert.cfg.feature

    def batch_loss(entries, rng):
        feats, labels = store.batch(entries, kind, cfg, rng)
        expert.train(True)
        out = expert.forward(feats)
        return T.cross_entropy_smoothed(out.logits, labels, cfg.label_smoothing)

    def val_loss():
        expert.train(False)
        parts = []
        with T.no_grad():
            for chunk in _chunks(dev_entries, cfg.batch_size):
                feats, labels = store.batch(chunk, kind)
                out = expert.forward(feats)
                loss = T.cross_entropy_smoothed(out.logits, labels, cfg.label_smoothing)
                parts.append((loss.item(), len(chunk)))
        return _mean_eval_loss(parts)

    return _fit(expert, batch_loss, val_loss, train_entries, cfg, log_path)


def joint_loss(model, feats_list, labels, label_smoothing, alpha_override=None):
    """Smoothed CE on the fused mixture logits (test hook: fixed alpha)."""
    fused, _, _ = model.forward_features(feats_list, alpha_override=alpha_override)
    return T.cross_entropy_smoothed(fused, labels, label_smoothing)


def train_joint(model, train_entries, dev_entries, store, cfg, log_path=None,
                freeze_experts=False):
    """Stage two: gradients flow into the gate and (unless frozen) experts."""
    if cfg.stage != "joint":
        raise ConfigError(f"train_joint called with stage {cfg.stage!r}")
    kinds = [e.cfg.feature for e in model.experts]
    if freeze_experts:
        for expert in model.experts:
            for p in expert.parameters():
                p.requires_grad = False

    def feats_for(entries, rng=None):
        cache = {}
        labels = None
        for kind in kinds:
            if kind not in cache:
                cache[kind], labels = store.batch(entries, kind, cfg if rng else None, rng)
        return [cache[k] for k in kinds], labels

    def batch_loss(entries, rng):
        feats_list, labels = feats_for(entries, rng)
        model.train(True)
        return joint_loss(model, feats_list, labels, cfg.label_smoothing)

    def val_loss():
        model.train(False)
        parts = []
        with T.no_grad():
            for chunk in _chunks(dev_entries, cfg.batch_size):
                feats_list, labels = feats_for(chunk)
                loss = joint_loss(model, feats_list, labels, cfg.label_smoothing)
                parts.append((loss.item(), len(chunk)))
        return _mean_eval_loss(parts)

    named_params = None
    if freeze_experts:
        named_params = [("gate." + n, p) for n, p in model.gate.named_parameters()]
    return _fit(model, batch_loss, val_loss, train_entries, cfg, log_path,
                named_params=named_params)


def mele_expert_configs(n_domains, embed_dim=64, width_scale=1.0):
    """MELE uses identical mel LCNNs, one per training domain."""
    return [ExpertConfig("lcnn", "mel", width_scale, embed_dim) for _ in range(n_domains)]


def mele_domain_entries(manifest, split):
    """Per-domain entry lists, ordered by the manifest's domain order."""
    return {d: manifest.select(split=split, domain=d) for d in manifest.known_domains()}
