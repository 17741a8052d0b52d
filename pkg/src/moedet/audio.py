"""Waveform ingestion and the log-spectrogram frontend.

Turns 16 kHz mono waveforms into the fixed-length log-power features the
experts consume (mel or linear frequency axis), with the training-time
augmentations (stripe masking on features, additive noise on waveforms).
All functions are pure; randomness comes only from an explicit Generator.
"""

import wave
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, FormatError

SAMPLE_RATE = 16000
INPUT_SAMPLES = 64000  # 4 s clips


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)

    def __len__(self):
        return len(self.samples)


@dataclass
class FeatureConfig:
    """STFT geometry; ``n_mels`` applies only to mel-kind features."""

    n_fft: int = 512
    hop: int = 160
    n_mels: int = 64
    log_floor: float = 1e-10

    def __post_init__(self):
        if not 0 < self.hop <= self.n_fft:
            raise ConfigError(f"hop {self.hop} must lie in (0, n_fft={self.n_fft}]")
        if self.n_mels and not 2 <= self.n_mels < self.n_fft // 2 + 1:
            raise ConfigError(f"n_mels {self.n_mels} out of range for n_fft {self.n_fft}")


@dataclass
class SpecAugmentConfig:
    max_time_masks: int = 2
    max_freq_masks: int = 2
    max_time_width: int = 20
    max_freq_width: int = 8


# ---- waveform ops ----------------------------------------------------------


def fix_length(w, target_len=INPUT_SAMPLES):
    """Tile short signals end-to-end and cut; keep the head of long ones."""
    x = w.samples
    if len(x) == 0:
        raise DataError("cannot fix the length of an empty waveform")
    if len(x) < target_len:
        reps = -(-target_len // len(x))
        x = np.tile(x, reps)
    return Waveform(x[:target_len].copy(), w.sample_rate)


def add_noise(w, snr_db, rng):
    """Add white noise scaled to the requested SNR (inf passes through)."""
    x = w.samples
    if np.isinf(snr_db):
        return Waveform(x.copy(), w.sample_rate)
    sig_power = float(np.mean(x ** 2))
    if sig_power == 0.0:
        raise DataError("cannot set an SNR against a silent signal")
    noise = rng.standard_normal(len(x))
    noise *= np.sqrt(sig_power / 10.0 ** (snr_db / 10.0) / np.mean(noise ** 2))
    return Waveform(x + noise, w.sample_rate)


# ---- spectrogram pipeline --------------------------------------------------


def hann_window(n):
    # periodic form, standard for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(x, n_fft, hop):
    """Centered frames of a reflect-padded signal, shape (T, n_fft)."""
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = 1 + (len(xp) - n_fft) // hop
    stride = xp.strides[0]
    frames = np.lib.stride_tricks.as_strided(
        xp, shape=(n_frames, n_fft), strides=(hop * stride, stride), writeable=False
    )
    return frames


def stft_power(w, cfg):
    """One-sided power spectrogram, shape (n_fft // 2 + 1, T)."""
    x = w.samples
    if len(x) < cfg.n_fft:
        raise DataError(f"signal of {len(x)} samples is shorter than one {cfg.n_fft} frame")
    frames = frame_signal(x, cfg.n_fft, cfg.hop) * hann_window(cfg.n_fft)
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    return np.ascontiguousarray(spec.T)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels, n_fft, sample_rate=SAMPLE_RATE):
    """Triangular filters on the HTK mel scale, unit peak, 50% overlap."""
    n_bins = n_fft // 2 + 1
    if not 2 <= n_mels < n_bins:
        raise ConfigError(f"n_mels {n_mels} out of range for {n_bins} linear bins")
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_bins) * sample_rate / n_fft
    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mel_project(spec, n_mels, sample_rate=SAMPLE_RATE):
    """Project a linear power spectrogram (F, T) onto mel bands."""
    n_fft = 2 * (spec.shape[0] - 1)
    return mel_filterbank(n_mels, n_fft, sample_rate) @ spec


def log_compress(spec, log_floor=1e-10):
    return np.log(spec + log_floor)


def extract_features(w, cfg, kind):
    """Full frontend: waveform -> log-power features of the given kind."""
    if kind not in ("mel", "linear"):
        raise ConfigError(f"unknown feature kind {kind!r}")
    spec = stft_power(w, cfg)
    if kind == "mel":
        spec = mel_project(spec, cfg.n_mels, w.sample_rate)
    return log_compress(spec, cfg.log_floor)


def feature_shape(cfg, kind, n_samples=INPUT_SAMPLES):
    """(F, T) the frontend will produce for a fixed-length clip."""
    n_bins = cfg.n_fft // 2 + 1 if kind == "linear" else cfg.n_mels
    n_frames = 1 + (n_samples + 2 * (cfg.n_fft // 2) - cfg.n_fft) // cfg.hop
    return n_bins, n_frames


def spec_augment(feat, cfg, rng):
    """Replace random time/frequency stripes with the feature-map mean.

    Per mask: width ~ U[1, max_width], then start ~ U[0, extent - width].
    Time masks are drawn before frequency masks. Pure: returns a copy.
    """
    n_freq, n_time = feat.shape
    if cfg.max_time_width >= n_time or cfg.max_freq_width >= n_freq:
        raise ConfigError("mask widths must be strictly less than the feature extents")
    out = feat.copy()
    fill = feat.mean()
    if cfg.max_time_width > 0:
        for _ in range(cfg.max_time_masks):
            width = int(rng.integers(1, cfg.max_time_width + 1))
            start = int(rng.integers(0, n_time - width + 1))
            out[:, start:start + width] = fill
    if cfg.max_freq_width > 0:
        for _ in range(cfg.max_freq_masks):
            width = int(rng.integers(1, cfg.max_freq_width + 1))
            start = int(rng.integers(0, n_freq - width + 1))
            out[start:start + width, :] = fill
    return out


# ---- WAV files -------------------------------------------------------------


def read_wav(path):
    """Read mono 16-bit PCM at 16 kHz; anything else is a format error."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise FormatError(f"{path}: channels must be 1, got {fh.getnchannels()}")
        if fh.getsampwidth() != 2:
            raise FormatError(f"{path}: sample width must be 2 bytes, got {fh.getsampwidth()}")
        if fh.getframerate() != SAMPLE_RATE:
            raise FormatError(f"{path}: sample rate must be {SAMPLE_RATE}, got {fh.getframerate()}")
        if fh.getcomptype() != "NONE":
            raise FormatError(f"{path}: compression type must be NONE, got {fh.getcomptype()}")
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples)


def write_wav(path, w):
    """Write mono 16-bit PCM; samples are clipped to [-1, 1]."""
    pcm = np.round(np.clip(w.samples, -1.0, 1.0) * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())
