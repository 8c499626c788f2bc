"""MFCC front end.

PCM audio -> overlapping mean-subtracted, pre-emphasised, Hamming-windowed
frames -> DFT magnitude -> 23 Mel triangular filters -> floored natural log
(LMFB) -> orthonormal DCT-II truncated to C0..C12 -> sinusoidal lifter
(MFCC) -> deltas/accelerations and cepstral mean subtraction (Composite).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """Front-end configuration is inconsistent."""


class FeatureKind(enum.IntEnum):
    LMFB = 0
    MFCC = 1
    COMPOSITE = 2


@dataclass(frozen=True)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class FrontendConfig:
    frame_length_ms: float = 25.0
    frame_rate_fps: float = 100.0
    preemphasis: float = 0.97
    n_mel_filters: int = 23
    mel_floor: float = 1.0
    n_cepstra: int = 13
    lifter_coeff: int = 22
    dft_size: int | None = None  # None: smallest power of two >= frame length
    delta_window: int = 2

    def __post_init__(self):
        if not 0 <= self.preemphasis < 1:
            raise ConfigError(f"frontend.preemphasis must be in [0, 1), got {self.preemphasis}")
        if self.n_mel_filters < 1:
            raise ConfigError("frontend.n_mel_filters must be >= 1")
        if not 1 <= self.n_cepstra <= self.n_mel_filters:
            raise ConfigError("frontend.n_cepstra must be in [1, n_mel_filters]")
        if self.lifter_coeff < 1 or int(self.lifter_coeff) != self.lifter_coeff:
            raise ConfigError("frontend.lifter_coeff must be a positive integer")
        if self.mel_floor <= 0:
            raise ConfigError("frontend.mel_floor must be positive")
        if self.delta_window < 1:
            raise ConfigError("frontend.delta_window must be >= 1")
        if self.dft_size is not None and not _is_pow2(self.dft_size):
            raise ConfigError(f"frontend.dft_size must be a power of two, got {self.dft_size}")

    def frame_samples(self, sample_rate: int) -> int:
        return _exact_samples(self.frame_length_ms * sample_rate / 1000.0, "frame_length_ms", sample_rate)

    def hop_samples(self, sample_rate: int) -> int:
        return _exact_samples(sample_rate / self.frame_rate_fps, "frame_rate_fps", sample_rate)

    def fft_size(self, sample_rate: int) -> int:
        n = self.frame_samples(sample_rate)
        if self.dft_size is None:
            return 1 << (n - 1).bit_length()
        if self.dft_size < n:
            raise ConfigError(f"frontend.dft_size {self.dft_size} is shorter than the {n}-sample frame")
        return self.dft_size

    @property
    def frame_period_ms(self) -> float:
        return 1000.0 / self.frame_rate_fps


def _is_pow2(n) -> bool:
    return int(n) == n and n > 0 and (int(n) & (int(n) - 1)) == 0


def _exact_samples(value: float, name: str, sample_rate: int) -> int:
    n = int(round(value))
    if n <= 0 or abs(value - n) > 1e-9:
        raise ConfigError(f"frontend.{name} does not give an integer sample count at {sample_rate} Hz ({value})")
    return n


@dataclass
class FeatureSequence:
    """N x D feature matrix, one row per frame."""

    frames: np.ndarray
    kind: FeatureKind
    frame_period_ms: float = 10.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise ValueError(f"frames must be 2-D, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ValueError("feature frames contain non-finite values")
        self.kind = FeatureKind(self.kind)
        if self.kind == FeatureKind.LMFB and frames.size and frames.min() < 0:
            raise ValueError("LMFB features must be non-negative")
        if self.kind == FeatureKind.COMPOSITE and frames.shape[1] % 3:
            raise ValueError("composite features must have 3*n_cepstra columns")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.n_frames


# ---------------------------------------------------------------------------
# Short-time processing


def preemphasize(audio: AudioBuffer, coeff: float = 0.97) -> AudioBuffer:
    """Apply 1 - coeff z^-1 with out[0] = in[0]."""
    if not 0 <= coeff < 1:
        raise ValueError(f"pre-emphasis coefficient must be in [0, 1), got {coeff}")
    return AudioBuffer(_preemph(audio.samples, coeff), audio.sample_rate)


def _preemph(x: np.ndarray, coeff: float) -> np.ndarray:
    y = np.array(x, dtype=np.float64, copy=True)
    if y.shape[-1] > 1:
        y[..., 1:] -= coeff * x[..., :-1]
    return y


def frame_and_window(audio: AudioBuffer, cfg: FrontendConfig, preemphasis: float | None = None) -> np.ndarray:
    """Slice audio into frames of shape (n_frames, frame_samples).

    Each frame is mean-subtracted, optionally pre-emphasised (frame-local,
    first sample passed through) and multiplied by a Hamming window.
    Incomplete trailing frames are dropped.
    """
    n = cfg.frame_samples(audio.sample_rate)
    hop = cfg.hop_samples(audio.sample_rate)
    total = len(audio)
    if total < n:
        return np.zeros((0, n))
    count = (total - n) // hop + 1
    idx = np.arange(n)[None, :] + hop * np.arange(count)[:, None]
    frames = audio.samples[idx]
    frames = frames - frames.mean(axis=1, keepdims=True)
    if preemphasis:
        frames = _preemph(frames, preemphasis)
    return frames * np.hamming(n)


def magnitude_spectrum(frame: np.ndarray, dft_size: int) -> np.ndarray:
    """|DFT| of a frame (or a stack of frames) zero-padded to dft_size, bins 0..dft_size/2."""
    if not _is_pow2(dft_size):
        raise ConfigError(f"dft_size must be a power of two, got {dft_size}")
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > dft_size:
        raise ConfigError(f"frame of {frame.shape[-1]} samples exceeds dft_size {dft_size}")
    return np.abs(np.fft.rfft(frame, n=int(dft_size), axis=-1))


# ---------------------------------------------------------------------------
# Mel filterbank


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank_matrix(cfg: FrontendConfig, sample_rate: int) -> np.ndarray:
    """Equal-gain triangular filters with Mel-uniform centres spanning 0 Hz to Nyquist.

    Triangles are evaluated at the DFT bin frequencies and each row is
    scaled so its peak is exactly 1.0.
    """
    nfft = cfg.fft_size(sample_rate)
    n_bins = nfft // 2 + 1
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), cfg.n_mel_filters + 2))
    freqs = np.arange(n_bins) * sample_rate / nfft
    fb = np.zeros((cfg.n_mel_filters, n_bins))
    for r in range(cfg.n_mel_filters):
        lo, mid, hi = edges[r], edges[r + 1], edges[r + 2]
        rise = (freqs - lo) / (mid - lo)
        fall = (hi - freqs) / (hi - mid)
        fb[r] = np.clip(np.minimum(rise, fall), 0.0, None)
        peak = fb[r].max()
        if peak <= 0:
            raise ConfigError(
                f"mel filter {r} covers no DFT bin; n_mel_filters={cfg.n_mel_filters} is too large for dft_size={nfft}"
            )
        fb[r] /= peak
    return fb


def lmfb(spectrum: np.ndarray, filterbank: np.ndarray, mel_floor: float = 1.0) -> np.ndarray:
    """log(max(filterbank . spectrum, mel_floor)); works on one spectrum or a stack of them."""
    energies = np.asarray(spectrum, dtype=np.float64) @ filterbank.T
    return np.log(np.maximum(energies, mel_floor))


# ---------------------------------------------------------------------------
# Cepstra


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Rows 0..n_out-1 of the orthonormal DCT-II matrix of size n_in."""
    i = np.arange(n_out)[:, None]
    j = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * i * (j + 0.5) / n_in)
    mat[0] *= math.sqrt(1.0 / n_in)
    mat[1:] *= math.sqrt(2.0 / n_in)
    return mat


def lifter_weights(n_cepstra: int, q: int) -> np.ndarray:
    i = np.arange(n_cepstra)
    return 1.0 + (q / 2.0) * np.sin(np.pi * i / q)


def cepstral_matrix(cfg: FrontendConfig) -> np.ndarray:
    """L @ D, the (n_cepstra x n_mel_filters) map from LMFB to liftered MFCC."""
    return lifter_weights(cfg.n_cepstra, cfg.lifter_coeff)[:, None] * dct_matrix(cfg.n_cepstra, cfg.n_mel_filters)


def dct_and_lifter(seq: FeatureSequence, cfg: FrontendConfig | None = None) -> FeatureSequence:
    cfg = cfg or FrontendConfig()
    if seq.kind != FeatureKind.LMFB:
        raise TypeError(f"dct_and_lifter expects LMFB features, got {seq.kind.name}")
    if seq.dim != cfg.n_mel_filters:
        raise ValueError(f"expected {cfg.n_mel_filters}-dim LMFB, got {seq.dim}")
    cep = seq.frames @ cepstral_matrix(cfg).T
    return FeatureSequence(cep, FeatureKind.MFCC, seq.frame_period_ms)


def deltas(x: np.ndarray, window: int = 2) -> np.ndarray:
    """Regression deltas over +-window frames with edge frames replicated."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], window, axis=0), x, np.repeat(x[-1:], window, axis=0)])
    denom = 2.0 * sum(k * k for k in range(1, window + 1))
    out = np.zeros_like(x)
    for k in range(1, window + 1):
        out += k * (padded[window + k : window + k + n] - padded[window - k : window - k + n])
    return out / denom


def add_deltas_and_cms(seq: FeatureSequence, window: int = 2) -> FeatureSequence:
    if seq.n_frames < 1:
        raise ValueError("need at least one frame")
    d1 = deltas(seq.frames, window)
    d2 = deltas(d1, window)
    comp = np.hstack([seq.frames, d1, d2])
    comp -= comp.mean(axis=0)
    return FeatureSequence(comp, FeatureKind.COMPOSITE, seq.frame_period_ms)


# ---------------------------------------------------------------------------
# Pipelines


def extract_lmfb(audio: AudioBuffer, cfg: FrontendConfig | None = None) -> FeatureSequence:
    cfg = cfg or FrontendConfig()
    frames = frame_and_window(audio, cfg, preemphasis=cfg.preemphasis)
    nfft = cfg.fft_size(audio.sample_rate)
    fb = mel_filterbank_matrix(cfg, audio.sample_rate)
    if frames.shape[0] == 0:
        return FeatureSequence(np.zeros((0, cfg.n_mel_filters)), FeatureKind.LMFB, cfg.frame_period_ms)
    feats = lmfb(magnitude_spectrum(frames, nfft), fb, cfg.mel_floor)
    return FeatureSequence(feats, FeatureKind.LMFB, cfg.frame_period_ms)


def extract_mfcc(audio: AudioBuffer, cfg: FrontendConfig | None = None) -> FeatureSequence:
    cfg = cfg or FrontendConfig()
    return dct_and_lifter(extract_lmfb(audio, cfg), cfg)


def extract_composite(audio: AudioBuffer, cfg: FrontendConfig | None = None) -> FeatureSequence:
    cfg = cfg or FrontendConfig()
    return add_deltas_and_cms(extract_mfcc(audio, cfg), cfg.delta_window)
