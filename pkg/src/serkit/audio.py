"""WAV decoding, resampling and fixed-duration clipping.

Everything is float64 and mono. Decoding is done by hand from the RIFF
chunks rather than through :mod:`wave`, which refuses IEEE float files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedContainer, TruncatedData, UnsupportedEncoding

PCM = 1
IEEE_FLOAT = 3
EXTENSIBLE = 0xFFFE

# windowed-sinc resampler geometry
SINC_HALF_WIDTH = 32
_RESAMPLE_BLOCK = 16384


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip holds mono samples only")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if samples.size and np.max(np.abs(samples)) > 1.0:
            raise ValueError("samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        size = struct.unpack_from("<I", data, pos + 4)[0]
        body = pos + 8
        yield chunk_id, body, size
        # chunks are word aligned
        pos = body + size + (size & 1)


def _decode_frames(raw: bytes, fmt: int, bits: int, channels: int) -> np.ndarray:
    width = bits // 8
    n_frames = len(raw) // (width * channels)
    raw = raw[: n_frames * width * channels]
    if fmt == IEEE_FLOAT:
        if bits != 32:
            raise UnsupportedEncoding(f"float WAV with {bits} bits per sample")
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        values = np.clip(values, -1.0, 1.0)
    elif bits == 8:
        # 8-bit PCM is unsigned with a 128 offset
        values = (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    elif bits == 16:
        values = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        values = ints.astype(np.float64) / float(1 << 23)
    elif bits == 32:
        values = np.frombuffer(raw, dtype="<i4").astype(np.float64) / float(1 << 31)
    else:
        raise UnsupportedEncoding(f"PCM with {bits} bits per sample")
    return values.reshape(n_frames, channels)


def load_wav(path: str | Path) -> AudioClip:
    """Decode a RIFF/WAVE file into a mono float64 clip.

    Integer PCM (8/16/24/32-bit) is scaled by ``1 / 2**(bits - 1)``;
    multichannel audio is averaged across channels. Unknown chunks are
    skipped.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer(f"{path}: not a RIFF/WAVE file")

    fmt_info = None
    raw = None
    for chunk_id, body, size in _iter_chunks(data):
        if chunk_id == b"fmt ":
            if size < 16 or body + size > len(data):
                raise MalformedContainer(f"{path}: bad fmt chunk")
            fmt, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", data, body)
            if fmt == EXTENSIBLE:
                if size < 40:
                    raise MalformedContainer(f"{path}: short WAVE_FORMAT_EXTENSIBLE chunk")
                fmt = struct.unpack_from("<H", data, body + 24)[0]
            fmt_info = (fmt, channels, rate, bits)
        elif chunk_id == b"data":
            if body + size > len(data):
                raise TruncatedData(
                    f"{path}: data chunk declares {size} bytes, only {len(data) - body} present"
                )
            raw = data[body:body + size]
            break

    if fmt_info is None:
        raise MalformedContainer(f"{path}: missing fmt chunk")
    if raw is None:
        raise MalformedContainer(f"{path}: missing data chunk")
    fmt, channels, rate, bits = fmt_info
    if fmt not in (PCM, IEEE_FLOAT):
        raise UnsupportedEncoding(f"{path}: audio format tag {fmt:#x} is not PCM or float")
    if channels < 1 or rate < 1 or bits % 8:
        raise MalformedContainer(f"{path}: channels={channels} rate={rate} bits={bits}")

    frames = _decode_frames(raw, fmt, bits, channels)
    mono = frames[:, 0] if channels == 1 else frames.mean(axis=1)
    return AudioClip(mono, rate)


def write_wav(path: str | Path, samples, sample_rate: int) -> None:
    """Write mono 16-bit PCM. Values are clipped to [-1, 1)."""
    ints = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    payload = ints.astype("<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, PCM, 1, sample_rate, sample_rate * 2, 2, 16)
    header += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(header + payload)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited resampling with a Hann-windowed sinc, 32 taps per side.

    The cutoff sits at the Nyquist frequency of the lower of the two rates.
    Each output sample's taps are normalized to unit sum, so a constant
    signal stays constant away from the edges.
    """
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    src_rate = clip.sample_rate
    if target_rate == src_rate:
        return AudioClip(clip.samples.copy(), src_rate)

    x = clip.samples
    n_in = len(x)
    n_out = int(round(n_in * target_rate / src_rate))
    scale = min(1.0, target_rate / src_rate)
    out = np.empty(n_out)
    offsets = np.arange(-SINC_HALF_WIDTH + 1, SINC_HALF_WIDTH + 1)

    for start in range(0, n_out, _RESAMPLE_BLOCK):
        n = np.arange(start, min(start + _RESAMPLE_BLOCK, n_out))
        pos = n * (src_rate / target_rate)
        base = np.floor(pos).astype(np.int64)
        idx = base[:, None] + offsets[None, :]
        dist = pos[:, None] - idx
        window = 0.5 * (1.0 + np.cos(np.pi * dist / SINC_HALF_WIDTH))
        weights = scale * np.sinc(scale * dist) * window
        weights /= weights.sum(axis=1, keepdims=True)
        inside = (idx >= 0) & (idx < n_in)
        taps = np.where(inside, x[np.clip(idx, 0, n_in - 1)], 0.0)
        out[n] = (weights * taps).sum(axis=1)

    return AudioClip(np.clip(out, -1.0, 1.0), target_rate)


def fix_length(clip: AudioClip, duration_s: float) -> AudioClip:
    """Truncate or zero-pad at the end to exactly ``round(duration_s * rate)`` samples."""
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    n = int(round(duration_s * clip.sample_rate))
    x = clip.samples
    if len(x) >= n:
        out = x[:n].copy()
    else:
        out = np.zeros(n)
        out[: len(x)] = x
    return AudioClip(out, clip.sample_rate)
