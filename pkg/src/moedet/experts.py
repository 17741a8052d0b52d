"""Expert detectors: a max-feature-map CNN and a small residual network.

Each expert maps one feature kind (mel or linear log spectrogram) to an
(embedding, logits) pair; the embedding is always the input of the final
affine layer, so ``logits == final_affine(embedding)`` holds exactly.
Channel counts are deliberately small: the whole mixture trains on a CPU.
"""

from dataclasses import dataclass

import numpy as np

from . import audio
from . import tensor as T
from .errors import ConfigError, RoutingError
from .nn import BatchNorm2d, Conv2d, Linear, Module
from .tensor import Tensor

LCNN_BASE_CHANNELS = (16, 24, 32, 16)
RESNET_BASE_CHANNELS = (8, 16, 32, 64)


@dataclass
class ExpertConfig:
    arch: str = "lcnn"          # lcnn | resnet
    feature: str = "mel"        # mel | linear
    width_scale: float = 1.0
    embed_dim: int = 64

    def __post_init__(self):
        if self.arch not in ("lcnn", "resnet"):
            raise ConfigError(f"unknown expert architecture {self.arch!r}")
        if self.feature not in ("mel", "linear"):
            raise ConfigError(f"unknown feature kind {self.feature!r}")
        if self.width_scale <= 0:
            raise ConfigError(f"width_scale must be positive, got {self.width_scale}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be positive, got {self.embed_dim}")


def default_expert_configs(embed_dim=64, width_scale=1.0):
    """The three architecture/feature pairings used by the full system."""
    return [
        ExpertConfig("lcnn", "mel", width_scale, embed_dim),
        ExpertConfig("resnet", "mel", width_scale, embed_dim),
        ExpertConfig("resnet", "linear", width_scale, embed_dim),
    ]


@dataclass
class ExpertOutput:
    embedding: Tensor  # (B, embed_dim)
    logits: Tensor     # (B, 2), unnormalized


def _scaled(base, width_scale):
    channels = tuple(int(round(b * width_scale)) for b in base)
    if min(channels) < 1:
        raise ConfigError(f"width_scale {width_scale} collapses channels to {channels}")
    return channels


class LcnnBody(Module):
    """Four conv + max-feature-map stages with pooling, then MFM head."""

    def __init__(self, feat_shape, width_scale, embed_dim, rng):
        super().__init__()
        channels = _scaled(LCNN_BASE_CHANNELS, width_scale)
        f, t = feat_shape
        self.convs = []
        c_in = 1
        for c_out in channels:
            self.convs.append(Conv2d(c_in, 2 * c_out, 3, rng, pad=1))
            c_in = c_out
            f, t = f // 2, t // 2
        if f < 1 or t < 1:
            raise ConfigError(f"feature map {feat_shape} too small for four pooling stages")
        self.fc1 = Linear(channels[-1] * f * t, 2 * embed_dim, rng)
        self.fc2 = Linear(embed_dim, 2, rng)

    def forward(self, x):
        for conv in self.convs:
            x = T.max_pool2d(T.max_feature_map(conv.forward(x)), 2)
        b = x.shape[0]
        flat = T.reshape(x, (b, -1))
        embedding = T.max_feature_map(self.fc1.forward(flat))
        return embedding, self.fc2.forward(embedding)


class ResidualBlock(Module):
    def __init__(self, c_in, c_out, stride, rng):
        super().__init__()
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, pad=1, bias=False)
        self.bn1 = BatchNorm2d(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, pad=1, bias=False)
        self.bn2 = BatchNorm2d(c_out)
        if stride != 1 or c_in != c_out:
            self.skip_conv = Conv2d(c_in, c_out, 1, rng, stride=stride, bias=False)
            self.skip_bn = BatchNorm2d(c_out)
        else:
            self.skip_conv = None
            self.skip_bn = None

    def forward(self, x):
        h = T.relu(self.bn1.forward(self.conv1.forward(x)))
        h = self.bn2.forward(self.conv2.forward(h))
        skip = x if self.skip_conv is None else self.skip_bn.forward(self.skip_conv.forward(x))
        return T.relu(T.add(h, skip))


class ResnetBody(Module):
    """Stem conv + four two-block residual stages + average-pool head."""

    def __init__(self, feat_shape, width_scale, embed_dim, rng):
        super().__init__()
        channels = _scaled(RESNET_BASE_CHANNELS, width_scale)
        self.stem = Conv2d(1, channels[0], 3, rng, stride=2, pad=1, bias=False)
        self.stem_bn = BatchNorm2d(channels[0])
        self.blocks = []
        c_in = channels[0]
        for stage, c_out in enumerate(channels):
            stride = 1 if stage == 0 else 2
            self.blocks.append(ResidualBlock(c_in, c_out, stride, rng))
            self.blocks.append(ResidualBlock(c_out, c_out, 1, rng))
            c_in = c_out
        min_extent = min(feat_shape)
        if min_extent // 2 ** 4 < 1:
            raise ConfigError(f"feature map {feat_shape} too small for the residual stages")
        self.fc1 = Linear(channels[-1], embed_dim, rng)
        self.fc2 = Linear(embed_dim, 2, rng)

    def forward(self, x):
        h = T.relu(self.stem_bn.forward(self.stem.forward(x)))
        for block in self.blocks:
            h = block.forward(h)
        pooled = h.mean(axis=(2, 3))
        embedding = T.relu(self.fc1.forward(pooled))
        return embedding, self.fc2.forward(embedding)


class Expert(Module):
    """One detector: declared feature kind + network body."""

    def __init__(self, cfg, feat_shape, rng):
        super().__init__()
        self.cfg = cfg
        self.feat_shape = tuple(feat_shape)
        body_cls = LcnnBody if cfg.arch == "lcnn" else ResnetBody
        self.body = body_cls(self.feat_shape, cfg.width_scale, cfg.embed_dim, rng)

    def forward(self, feat):
        """(B, F, T) features -> ExpertOutput; mode follows self.training."""
        if isinstance(feat, Tensor):
            x = feat
        else:
            x = Tensor(np.asarray(feat, dtype=np.float64))
        if x.ndim == 2:
            x = T.reshape(x, (1,) + tuple(x.shape))
        if tuple(x.shape[1:]) != self.feat_shape:
            raise RoutingError(
                f"{self.cfg.arch}/{self.cfg.feature} expert expects features "
                f"{self.feat_shape}, got {tuple(x.shape[1:])}"
            )
        x = T.reshape(x, (x.shape[0], 1) + self.feat_shape)
        embedding, logits = self.body.forward(x)
        return ExpertOutput(embedding=embedding, logits=logits)


def build_expert(cfg, frontend_cfg, rng):
    """Instantiate an expert sized for the frontend's output of its kind."""
    feat_shape = audio.feature_shape(frontend_cfg, cfg.feature)
    return Expert(cfg, feat_shape, rng)


def expert_forward(expert, feat, train_mode=False):
    """Run one expert; eval mode is pure and builds no graph."""
    expert.train(train_mode)
    if train_mode:
        return expert.forward(feat)
    with T.no_grad():
        return expert.forward(feat)
