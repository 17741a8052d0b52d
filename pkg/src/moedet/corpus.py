"""Procedural multi-domain audio corpus.

Real-like carriers are harmonic voices (drifting f0, vibrato, formant
resonances, pink noise, slow amplitude envelope). Fakes inject one of
three spectro-temporal artifact families into a carrier, so the class
boundary is the artifact, never the content. Per-domain artifact
parameters are derived from the domain name, which makes two domains of
the same family distinct; per-utterance RNG seeds are derived from the
corpus seed and the utterance id so regeneration is byte-identical.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .audio import SAMPLE_RATE, Waveform, write_wav
from .errors import ConfigError, DataError

SPLITS = ("train", "dev", "test")
ARTIFACT_KINDS = ("comb_notch", "frame_discontinuity", "band_mirror")


def _default_counts():
    return {"train": 80, "dev": 10, "test": 10}


@dataclass
class DomainSpec:
    name: str
    artifact_kind: str
    artifact_strength: float = 1.0
    n_real: dict = field(default_factory=_default_counts)
    n_fake: dict = field(default_factory=_default_counts)
    test_only: bool = False

    def __post_init__(self):
        if self.artifact_kind not in ARTIFACT_KINDS:
            raise ConfigError(f"unknown artifact kind {self.artifact_kind!r}")
        if self.artifact_strength <= 0:
            raise ConfigError("artifact strength must be positive")
        if self.test_only:
            total_real = sum(self.n_real.get(s, 0) for s in SPLITS)
            total_fake = sum(self.n_fake.get(s, 0) for s in SPLITS)
            self.n_real = {"train": 0, "dev": 0, "test": total_real}
            self.n_fake = {"train": 0, "dev": 0, "test": total_fake}


def default_domain_specs():
    """Three known domains (one per artifact family) plus one held-out
    domain whose comb artifact uses a different spacing and strength."""
    return [
        DomainSpec("combA", "comb_notch", 1.0),
        DomainSpec("buzzB", "frame_discontinuity", 1.0),
        DomainSpec("mirrorC", "band_mirror", 1.0),
        DomainSpec("combX", "comb_notch", 0.7, test_only=True),
    ]


@dataclass
class ManifestEntry:
    path: str
    label: int   # 0 real, 1 fake
    domain: str
    split: str


class CorpusManifest:
    def __init__(self, entries, root=None):
        self.entries = list(entries)
        self.root = Path(root) if root else None

    def __len__(self):
        return len(self.entries)

    def select(self, split=None, domain=None, label=None):
        out = self.entries
        if split is not None:
            out = [e for e in out if e.split == split]
        if domain is not None:
            out = [e for e in out if e.domain == domain]
        if label is not None:
            out = [e for e in out if e.label == label]
        return out

    def domains(self):
        seen = {}
        for e in self.entries:
            seen.setdefault(e.domain, None)
        return list(seen)

    def known_domains(self):
        return [d for d in self.domains() if self.select(split="train", domain=d)]

    def unknown_domains(self):
        return [d for d in self.domains() if not self.select(split="train", domain=d)]

    def resolve(self, entry):
        return (self.root / entry.path) if self.root else Path(entry.path)

    def save(self, path):
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps({
                    "path": e.path, "label": e.label,
                    "domain": e.domain, "split": e.split,
                }) + "\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        entries = []
        with open(path) as fh:
            for line in fh:
                doc = json.loads(line)
                entries.append(ManifestEntry(
                    doc["path"], int(doc["label"]), doc["domain"], doc["split"]
                ))
        return cls(entries, root=path.parent)


# ---- carrier synthesis -----------------------------------------------------


def _smooth_noise(n, cutoff_s, rng):
    """Unit-ish smooth noise: white noise convolved with a long Hann bump."""
    width = max(3, int(cutoff_s * SAMPLE_RATE))
    kernel = np.hanning(width)
    kernel /= kernel.sum()
    x = fftconvolve(rng.standard_normal(n + width), kernel, mode="same")[:n]
    return x / max(np.abs(x).max(), 1e-12)


def _bandpass(x, center, bandwidth):
    """RBJ constant-skirt biquad bandpass."""
    w0 = 2.0 * np.pi * center / SAMPLE_RATE
    q = center / bandwidth
    alpha = np.sin(w0) / (2.0 * q)
    b = np.array([alpha, 0.0, -alpha])
    a = np.array([1.0 + alpha, -2.0 * np.cos(w0), 1.0 - alpha])
    return lfilter(b / a[0], a / a[0], x)


def _pink_noise(n, rng):
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.arange(len(spec))
    spec /= np.sqrt(np.maximum(f, 1.0))
    pink = np.fft.irfft(spec, n=n)
    return pink / max(np.abs(pink).max(), 1e-12)


def synth_real(duration_s, rng):
    """Harmonic voice-like carrier, peak-normalized to 0.9."""
    if not 1.0 <= duration_s <= 10.0:
        raise DataError(f"duration {duration_s}s outside [1, 10]s")
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE
    f0_base = rng.uniform(90.0, 250.0)
    drift = 1.0 + 0.06 * _smooth_noise(n, 0.5, rng)
    vibrato = 1.0 + 0.01 * np.sin(2.0 * np.pi * rng.uniform(4.0, 7.0) * t + rng.uniform(0, 2 * np.pi))
    f0 = f0_base * drift * vibrato
    phase = 2.0 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    n_harm = int(min(20, 7600.0 / f0.max()))
    decay = rng.uniform(0.7, 1.3)
    x = np.zeros(n)
    for k in range(1, n_harm + 1):
        x += k ** -decay * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    # formant-like resonances
    y = 0.3 * x
    for center, spread, bw in ((500, 80, 120), (1500, 150, 180), (2500, 250, 260)):
        fc = rng.normal(center, spread)
        y += _bandpass(x, np.clip(fc, 150, 6000), bw) * rng.uniform(0.8, 1.6)
    pink = _pink_noise(n, rng)
    y = y + 10 ** (-25 / 20) * np.std(y) * pink / max(np.std(pink), 1e-12)
    env = 0.65 + 0.35 * np.clip(_smooth_noise(n, 0.8, rng), -1, 1)
    y *= env
    return Waveform(0.9 * y / np.abs(y).max())


# ---- artifacts -------------------------------------------------------------


def artifact_params(spec):
    """Per-domain artifact parameters, derived stably from the domain name."""
    h = int.from_bytes(hashlib.sha256(spec.name.encode()).digest()[:4], "little")
    if spec.artifact_kind == "comb_notch":
        delay = 32 + h % 33  # notch spacing sr/delay in [246, 500] Hz
        return {"delay": delay, "gain": min(0.95, 0.6 * spec.artifact_strength)}
    if spec.artifact_kind == "frame_discontinuity":
        return {"every": 2 + h % 3, "n_fft": 512, "hop": 256}
    return {"cutoff_hz": 4000.0, "mirror_gain": 0.8}


def _comb_notch(x, strength, params):
    g = params["gain"]
    delay = params["delay"]
    y = x.copy()
    y[delay:] -= g * x[:-delay]
    return y


def _frame_discontinuity(x, strength, params):
    n_fft, hop, every = params["n_fft"], params["hop"], params["every"]
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n_fft) / n_fft)
    n_frames = 1 + max(0, (len(x) - n_fft)) // hop
    pad_len = (n_frames - 1) * hop + n_fft
    xp = np.pad(x, (0, max(0, pad_len - len(x))))
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = xp[idx] * win
    spec = np.fft.rfft(frames, axis=1)
    mag = np.abs(spec)
    ph = np.angle(spec)
    ph[::every] *= 1.0 - min(strength, 1.0)  # pull phases toward zero
    frames2 = np.fft.irfft(mag * np.exp(1j * ph), n=n_fft, axis=1) * win
    num = np.zeros(pad_len)
    den = np.zeros(pad_len)
    for i in range(n_frames):
        num[i * hop:i * hop + n_fft] += frames2[i]
        den[i * hop:i * hop + n_fft] += win ** 2
    y = num / np.maximum(den, 1e-8)
    return y[:len(x)]


def _band_mirror(x, strength, params):
    spec = np.fft.rfft(x)
    n_bins = len(spec)
    cutoff = int(round(params["cutoff_hz"] * len(x) / SAMPLE_RATE))
    artifact = spec.copy()
    artifact[cutoff:] *= 0.1  # lowpass: empty the top band
    reach = min(cutoff, n_bins - cutoff)
    mirror = params["mirror_gain"] * spec[cutoff - reach:cutoff][::-1]
    artifact[cutoff:cutoff + reach] += mirror
    y_artifact = np.fft.irfft(artifact, n=len(x))
    s = min(strength, 1.0)
    return (1.0 - s) * x + s * y_artifact


_ARTIFACTS = {
    "comb_notch": _comb_notch,
    "frame_discontinuity": _frame_discontinuity,
    "band_mirror": _band_mirror,
}


def synth_fake(real_like, spec, rng):
    """Inject the domain's artifact into a carrier; peak level is preserved."""
    fn = _ARTIFACTS.get(spec.artifact_kind)
    if fn is None:
        raise ConfigError(f"unknown artifact kind {spec.artifact_kind!r}")
    x = real_like.samples
    params = artifact_params(spec)
    y = fn(x, spec.artifact_strength, params)
    peak_in = np.abs(x).max()
    peak_out = np.abs(y).max()
    if peak_out > 0:
        y = y * (peak_in / peak_out)
    return Waveform(y, real_like.sample_rate)


# ---- corpus generation -----------------------------------------------------


def utterance_rng(corpus_seed, uid):
    digest = hashlib.sha256(f"{corpus_seed}|{uid}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def generate_corpus(specs, out_dir, seed, duration_s=4.0):
    """Write per-domain WAV trees plus ``manifest.jsonl``; returns the manifest."""
    if len(specs) < 2:
        raise ConfigError("a corpus needs at least two domains")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"domain names must be unique, got {names}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for spec in specs:
        (out_dir / spec.name).mkdir(exist_ok=True)
        for split in SPLITS:
            for label, count in ((0, spec.n_real.get(split, 0)),
                                 (1, spec.n_fake.get(split, 0))):
                for idx in range(count):
                    uid = f"{spec.name}_{split}_{'fake' if label else 'real'}_{idx:03d}"
                    rng = utterance_rng(seed, uid)
                    w = synth_real(duration_s, rng)
                    if label == 1:
                        w = synth_fake(w, spec, rng)
                    rel = f"{spec.name}/{uid}.wav"
                    write_wav(out_dir / rel, w)
                    entries.append(ManifestEntry(rel, label, spec.name, split))
    manifest = CorpusManifest(entries, root=out_dir)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
