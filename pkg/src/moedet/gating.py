"""Gating networks and the mixture-of-experts model.

The attention gate projects each expert's embedding into a shared token
space, runs a small pre-norm transformer encoder over the resulting
N-token sequence (no positional encoding: experts are an unordered set),
and maps each token to a scalar score through one shared head; a softmax
over the N scores yields the mixing weights. The concatenation gate is
the fully linear baseline. Fusion is the weighted sum of expert logits
followed by a two-class softmax; the fake-class posterior is the score.
"""

from dataclasses import dataclass

import numpy as np

from . import audio
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, ShapeError
from .experts import Expert, ExpertConfig, build_expert
from .nn import Linear, Module, TransformerLayer
from .tensor import Tensor

FAKE_CLASS = 1  # class ids: 0 = real, 1 = fake

_ARCH_CODES = {"lcnn": 0.0, "resnet": 1.0}
_FEATURE_CODES = {"mel": 0.0, "linear": 1.0}
_VARIANT_CODES = {"att": 0.0, "cat": 1.0}


@dataclass
class GatingConfig:
    n_experts: int = 3
    layers: int = 2     # transformer depth M
    heads: int = 4      # attention heads H
    model_dim: int = 32  # shared token width D
    mlp_dim: int = 512   # feedforward hidden size F

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} must be divisible by heads {self.heads}"
            )
        if self.n_experts < 1:
            raise ConfigError("need at least one expert")


class GatingNetwork(Module):
    """Transformer gate: per-expert projections, M encoder layers, shared head."""

    def __init__(self, cfg, embed_dims, rng):
        super().__init__()
        if len(embed_dims) != cfg.n_experts:
            raise ShapeError(f"{len(embed_dims)} embedding dims for {cfg.n_experts} experts")
        self.cfg = cfg
        self.projections = [Linear(d, cfg.model_dim, rng) for d in embed_dims]
        self.layers = [
            TransformerLayer(cfg.model_dim, cfg.heads, cfg.mlp_dim, rng)
            for _ in range(cfg.layers)
        ]
        self.head = Linear(cfg.model_dim, 1, rng)

    def stack_embeddings(self, embeddings):
        """Project N per-expert embeddings (B, d_i) into tokens (B, N, D)."""
        if len(embeddings) != self.cfg.n_experts:
            raise ShapeError(
                f"got {len(embeddings)} embeddings for {self.cfg.n_experts} experts"
            )
        rows = []
        for proj, e in zip(self.projections, embeddings):
            e = e if isinstance(e, Tensor) else Tensor(e)
            if e.ndim == 1:
                e = T.reshape(e, (1, -1))
            if e.shape[-1] != proj.n_in:
                raise ShapeError(
                    f"embedding of length {e.shape[-1]} fed to a {proj.n_in}-dim projection"
                )
            rows.append(proj.forward(e))
        return T.stack(rows, axis=1)

    def encode(self, tokens):
        for layer in self.layers:
            tokens = layer.forward(tokens)
        return tokens

    def forward(self, embeddings):
        """Mixing weights (B, N): softmax over shared-head token scores."""
        tokens = self.encode(self.stack_embeddings(embeddings))
        scores = self.head.forward(tokens)  # (B, N, 1)
        return T.softmax(T.reshape(scores, tokens.shape[:2]), axis=-1)


class ConcatGate(Module):
    """Baseline gate: one linear map over the concatenated raw embeddings."""

    def __init__(self, embed_dims, n_experts, rng):
        super().__init__()
        self.n_experts = n_experts
        self.embed_dims = list(embed_dims)
        self.fc = Linear(sum(embed_dims), n_experts, rng)

    def forward(self, embeddings):
        if len(embeddings) != self.n_experts:
            raise ShapeError(f"got {len(embeddings)} embeddings for {self.n_experts} experts")
        cat = T.concat(
            [e if isinstance(e, Tensor) else Tensor(e) for e in embeddings], axis=-1
        )
        if cat.shape[-1] != self.fc.n_in:
            raise ShapeError(
                f"concatenated length {cat.shape[-1]} does not match gate input {self.fc.n_in}"
            )
        return T.softmax(self.fc.forward(cat), axis=-1)


class MoEModel(Module):
    """N experts + one gate; ``variant`` selects att or cat gating."""

    def __init__(self, experts, gate, variant):
        super().__init__()
        if variant not in ("att", "cat"):
            raise ConfigError(f"unknown gate variant {variant!r}")
        n = gate.cfg.n_experts if isinstance(gate, GatingNetwork) else gate.n_experts
        if len(experts) != n:
            raise ConfigError(f"{len(experts)} experts but the gate expects {n}")
        self.variant = variant
        self.experts = list(experts)
        self.gate = gate

    @property
    def n_experts(self):
        return len(self.experts)

    def forward_features(self, feats, alpha_override=None):
        """Fuse per-expert feature batches into mixture logits.

        feats: list of N arrays/Tensors shaped (B, F_i, T). Returns
        (fused logits (B, 2), alpha (B, N), expert outputs); the class
        posterior is softmax(fused logits). The override hook replaces
        alpha with fixed weights (rows summing to one).
        """
        outs = [expert.forward(f) for expert, f in zip(self.experts, feats)]
        if alpha_override is not None:
            a = np.asarray(alpha_override, dtype=np.float64)
            if a.ndim == 1:
                a = np.broadcast_to(a, (outs[0].logits.shape[0], self.n_experts))
            alpha = Tensor(a)
        else:
            alpha = self.gate.forward([o.embedding for o in outs])
        z = T.stack([o.logits for o in outs], axis=1)      # (B, N, 2)
        fused = (T.reshape(alpha, tuple(alpha.shape) + (1,)) * z).sum(axis=1)
        return fused, alpha, outs

    # ---- checkpointing ----------------------------------------------------

    def checkpoint_entries(self):
        entries = {}
        meta = [_VARIANT_CODES[self.variant], float(self.n_experts)]
        if isinstance(self.gate, GatingNetwork):
            cfg = self.gate.cfg
            meta += [float(cfg.layers), float(cfg.heads),
                     float(cfg.model_dim), float(cfg.mlp_dim)]
        entries["moe.meta"] = np.array(meta)
        for i, expert in enumerate(self.experts):
            entries[f"expert.{i}.meta"] = expert_meta(expert.cfg)
            for name, arr in expert.named_state():
                entries[f"expert.{i}.{name}"] = arr
        for name, arr in self.gate.named_state():
            entries[f"gate.{name}"] = arr
        return entries

    def save(self, path):
        save_checkpoint(path, self.checkpoint_entries())

    def load(self, path):
        entries = load_checkpoint(path)
        meta = entries.get("moe.meta")
        if meta is None:
            raise ConfigError(f"{path} is not a mixture checkpoint (no moe.meta)")
        variant = "att" if meta[0] == 0.0 else "cat"
        if variant != self.variant or int(meta[1]) != self.n_experts:
            raise ConfigError(
                f"checkpoint holds a {variant} gate over {int(meta[1])} experts; "
                f"model is {self.variant} over {self.n_experts}"
            )
        for i, expert in enumerate(self.experts):
            prefix = f"expert.{i}."
            expert.load_state({
                k[len(prefix):]: v for k, v in entries.items()
                if k.startswith(prefix) and not k.endswith(".meta")
            })
        self.gate.load_state({
            k[len("gate."):]: v for k, v in entries.items() if k.startswith("gate.")
        })


def expert_meta(cfg):
    return np.array([
        _ARCH_CODES[cfg.arch], _FEATURE_CODES[cfg.feature],
        cfg.width_scale, float(cfg.embed_dim),
    ])


def expert_cfg_from_meta(meta):
    arch = "lcnn" if meta[0] == 0.0 else "resnet"
    feature = "mel" if meta[1] == 0.0 else "linear"
    return ExpertConfig(arch, feature, float(meta[2]), int(meta[3]))


def save_expert(path, expert):
    entries = {"expert.meta": expert_meta(expert.cfg)}
    for name, arr in expert.named_state():
        entries[f"expert.0.{name}"] = arr
    save_checkpoint(path, entries)


def load_expert(path, frontend_cfg):
    """Rebuild a single pretrained expert from its checkpoint."""
    entries = load_checkpoint(path)
    if "expert.meta" not in entries:
        raise ConfigError(f"{path} is not a single-expert checkpoint")
    cfg = expert_cfg_from_meta(entries["expert.meta"])
    expert = build_expert(cfg, frontend_cfg, np.random.default_rng(0))
    expert.load_state({
        k[len("expert.0."):]: v for k, v in entries.items() if k.startswith("expert.0.")
    })
    return expert


def build_moe(expert_cfgs, gating_cfg, frontend_cfg, variant, rng):
    """Fresh mixture with randomly initialized experts and gate."""
    experts = [build_expert(c, frontend_cfg, rng) for c in expert_cfgs]
    embed_dims = [c.embed_dim for c in expert_cfgs]
    if variant == "att":
        gate = GatingNetwork(gating_cfg, embed_dims, rng)
    else:
        gate = ConcatGate(embed_dims, len(expert_cfgs), rng)
    return MoEModel(experts, gate, variant)


def moe_forward(model, waveform, frontend_cfg, train_mode=False, alpha_override=None):
    """Score one fixed-length waveform.

    Each expert receives its own feature kind computed from the shared
    waveform. Returns (fake-class posterior, alpha row, expert outputs).
    """
    if len(waveform) != audio.INPUT_SAMPLES:
        raise ConfigError(
            f"expected a fixed-length input of {audio.INPUT_SAMPLES} samples, "
            f"got {len(waveform)} (apply fix_length first)"
        )
    feats = {}
    for expert in model.experts:
        kind = expert.cfg.feature
        if kind not in feats:
            feats[kind] = audio.extract_features(waveform, frontend_cfg, kind)
    feat_list = [feats[e.cfg.feature][None] for e in model.experts]
    model.train(train_mode)
    if train_mode:
        fused, alpha, outs = model.forward_features(feat_list, alpha_override)
    else:
        with T.no_grad():
            fused, alpha, outs = model.forward_features(feat_list, alpha_override)
    posterior = T.softmax(fused, axis=-1)
    y_hat = float(posterior.data[0, FAKE_CLASS])
    return y_hat, alpha.data[0].copy(), outs
