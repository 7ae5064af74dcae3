"""MFCC extraction: centered STFT power, HTK mel filterbank, dB log, orthonormal DCT-II."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .audio import AudioClip
from .errors import ConfigError, DegenerateFilter, EmptySequence, EmptySignal


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 22050
    n_fft: int = 2048
    hop_length: int = 512
    n_mels: int = 128
    n_mfcc: int = 40
    power_floor: float = 1e-10
    fmin: float = 0.0
    fmax: float | None = None

    def __post_init__(self):
        if self.fmax is None:
            object.__setattr__(self, "fmax", self.sample_rate / 2)
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.n_fft < 2 or self.n_fft & (self.n_fft - 1):
            raise ConfigError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 1 <= self.hop_length <= self.n_fft:
            raise ConfigError("hop_length must be in [1, n_fft]")
        if not 1 <= self.n_mfcc <= self.n_mels:
            raise ConfigError("need 1 <= n_mfcc <= n_mels")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ConfigError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.power_floor <= 0:
            raise ConfigError("power_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.n_fft // 2 + 1

    def frame_count(self, n_samples: int) -> int:
        return 1 + n_samples // self.hop_length

    def digest(self) -> bytes:
        """32-byte SHA-256 over the canonical JSON form; used as cache provenance."""
        text = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).digest()


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray  # n_mels x n_bins
    center_freqs: np.ndarray


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT over the last axis.

    Leading axes are batched, so a frame matrix is transformed in one call.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    a = x[..., _bit_reverse(n)]
    lead = a.shape[:-1]
    m = 2
    while m <= n:
        half = m // 2
        blocks = a.reshape(lead + (n // m, m))
        twiddle = np.exp(-2j * np.pi * np.arange(half) / m)
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(lead + (n,))
        m *= 2
    return a


@lru_cache(maxsize=8)
def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(samples, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Power spectrogram with centered, reflection-padded frames.

    Returns a ``(1 + len // hop) x (n_fft/2 + 1)`` array of ``|X_k|**2``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise EmptySignal("stft_power needs a non-empty 1-D signal")
    n_fft, hop = cfg.n_fft, cfg.hop_length
    padded = np.pad(x, n_fft // 2, mode="reflect") if x.size > 1 else np.full(x.size + n_fft, x[0])
    n_frames = cfg.frame_count(x.size)
    starts = np.arange(n_frames) * hop
    frames = padded[starts[:, None] + np.arange(n_fft)[None, :]] * hann_periodic(n_fft)
    spec = fft(frames)[:, : cfg.n_bins]
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig = FeatureConfig()) -> MelFilterbank:
    """Unit-area triangular filters spaced evenly on the HTK mel scale."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    lo, center, hi = edges[:-2], edges[1:-1], edges[2:]
    bin_width = cfg.sample_rate / cfg.n_fft
    if np.any(hi - lo < bin_width):
        raise DegenerateFilter(
            f"{cfg.n_mels} mel bands are too narrow for n_fft={cfg.n_fft} at {cfg.sample_rate} Hz"
        )
    freqs = np.arange(cfg.n_bins) * bin_width
    rising = (freqs[None, :] - lo[:, None]) / (center - lo)[:, None]
    falling = (hi[:, None] - freqs[None, :]) / (hi - center)[:, None]
    weights = np.maximum(0.0, np.minimum(rising, falling))
    weights *= (2.0 / (hi - lo))[:, None]
    if np.any(weights.max(axis=1) <= 0):
        raise DegenerateFilter("a mel band contains no FFT bin")
    return MelFilterbank(weights, center)


@lru_cache(maxsize=8)
def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * j + 1) / (2 * n))
    scale = np.full((n, 1), np.sqrt(2.0 / n))
    scale[0] = np.sqrt(1.0 / n)
    return scale * basis


def dct_ii_ortho(v, axis: int = -1) -> np.ndarray:
    """Orthonormal DCT-II along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[axis] < 1:
        raise ValueError("dct_ii_ortho needs at least one element")
    moved = np.moveaxis(v, axis, -1)
    return np.moveaxis(moved @ _dct_matrix(moved.shape[-1]).T, -1, axis)


@lru_cache(maxsize=4)
def _cached_filterbank(cfg: FeatureConfig) -> MelFilterbank:
    return mel_filterbank(cfg)


def mfcc(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """``t x n_mfcc`` cepstral coefficients, frames in time order."""
    if clip.sample_rate != cfg.sample_rate:
        raise ConfigError(
            f"clip is at {clip.sample_rate} Hz but the feature config expects {cfg.sample_rate} Hz"
        )
    power = stft_power(clip.samples, cfg)
    mel_power = power @ _cached_filterbank(cfg).weights.T
    log_mel = 10.0 * np.log10(np.maximum(mel_power, cfg.power_floor))
    return dct_ii_ortho(log_mel, axis=1)[:, : cfg.n_mfcc]


def mean_pool(seq) -> np.ndarray:
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] == 0:
        raise EmptySequence("mean_pool needs at least one frame")
    return seq.mean(axis=0)
