import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from serkit.audio import AudioClip, fix_length, load_wav, resample, write_wav
from serkit.errors import MalformedContainer, TruncatedData, UnsupportedEncoding

from oracles import dft_peak_hz


def riff(fmt_tag, channels, rate, bits, payload, extra_chunks=b"", fmt_extra=b""):
    block = channels * bits // 8
    fmt_body = struct.pack("<HHIIHH", fmt_tag, channels, rate, rate * block, block, bits) + fmt_extra
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_body)) + fmt_body
    body += extra_chunks
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_16bit_mono_scaling(tmp_path):
    p = tmp_path / "a.wav"
    p.write_bytes(riff(1, 1, 22050, 16, np.array([0, 16384, -16384], "<i2").tobytes()))
    clip = load_wav(p)
    assert clip.sample_rate == 22050
    np.testing.assert_array_equal(clip.samples, [0.0, 0.5, -0.5])


def test_stereo_downmix(tmp_path):
    p = tmp_path / "s.wav"
    p.write_bytes(riff(1, 2, 22050, 16, np.array([1000, 3000], "<i2").tobytes()))
    clip = load_wav(p)
    assert clip.samples[0] == pytest.approx(2000 / 32768)
    assert clip.samples[0] == pytest.approx(0.06104, abs=1e-5)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.wav"
    p.write_bytes(b"RIFX" + bytes(40))
    with pytest.raises(MalformedContainer):
        load_wav(p)


def test_compressed_rejected(tmp_path):
    p = tmp_path / "adpcm.wav"
    p.write_bytes(riff(2, 1, 8000, 16, bytes(8)))
    with pytest.raises(UnsupportedEncoding):
        load_wav(p)


def test_truncated_data(tmp_path):
    p = tmp_path / "t.wav"
    data = riff(1, 1, 8000, 16, bytes(100))
    p.write_bytes(data[:-40])
    with pytest.raises(TruncatedData):
        load_wav(p)


def test_missing_data_chunk(tmp_path):
    p = tmp_path / "m.wav"
    fmt_body = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + fmt_body
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(MalformedContainer):
        load_wav(p)


def test_unknown_chunks_skipped(tmp_path):
    p = tmp_path / "u.wav"
    # odd-sized LIST chunk exercises the pad byte
    extra = b"LIST" + struct.pack("<I", 3) + b"abc" + b"\x00"
    p.write_bytes(riff(1, 1, 16000, 16, np.array([8192], "<i2").tobytes(), extra))
    np.testing.assert_array_equal(load_wav(p).samples, [0.25])


@pytest.mark.parametrize(
    "bits, payload, expected",
    [
        (8, bytes([128, 192, 64]), [0.0, 0.5, -0.5]),
        (24, b"\x00\x00\x40" + b"\x00\x00\xc0", [0.5, -0.5]),
        (32, np.array([1 << 30, -(1 << 30)], "<i4").tobytes(), [0.5, -0.5]),
    ],
)
def test_integer_widths(tmp_path, bits, payload, expected):
    p = tmp_path / "w.wav"
    p.write_bytes(riff(1, 1, 8000, bits, payload))
    np.testing.assert_array_equal(load_wav(p).samples, expected)


def test_float32(tmp_path):
    p = tmp_path / "f.wav"
    p.write_bytes(riff(3, 1, 8000, 32, np.array([0.25, -0.75], "<f4").tobytes()))
    np.testing.assert_array_equal(load_wav(p).samples, [0.25, -0.75])


def test_extensible_pcm(tmp_path):
    p = tmp_path / "e.wav"
    # cbSize, valid bits, channel mask, then the subformat GUID (PCM)
    ext = struct.pack("<HHI", 22, 16, 4) + struct.pack("<H", 1) + bytes(14)
    p.write_bytes(riff(0xFFFE, 1, 8000, 16, np.array([-32768], "<i2").tobytes(), fmt_extra=ext))
    np.testing.assert_array_equal(load_wav(p).samples, [-1.0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=300))
def test_pcm16_round_trip(tmp_path_factory, ints):
    p = tmp_path_factory.mktemp("rt") / "r.wav"
    values = np.array(ints) / 32768.0
    write_wav(p, values, 11025)
    clip = load_wav(p)
    assert clip.sample_rate == 11025
    np.testing.assert_array_equal(clip.samples, values)


def test_clip_rejects_out_of_range():
    with pytest.raises(ValueError):
        AudioClip(np.array([0.0, 1.5]), 8000)


def test_resample_identity():
    rng = np.random.default_rng(0)
    clip = AudioClip(rng.uniform(-1, 1, 1000), 22050)
    out = resample(clip, 22050)
    assert out.sample_rate == 22050
    assert np.array_equal(out.samples, clip.samples)


@pytest.mark.parametrize("src, dst", [(24414, 22050), (16000, 22050), (44100, 22050), (8000, 11025)])
def test_resample_dc_and_length(src, dst):
    n = 5000
    out = resample(AudioClip(np.full(n, 0.25), src), dst)
    assert out.sample_rate == dst
    assert len(out) == round(n * dst / src)
    interior = out.samples[64:-64]
    np.testing.assert_allclose(interior, 0.25, atol=1e-9)


def test_resample_preserves_tone():
    src = 24414
    t = np.arange(int(0.25 * src)) / src
    clip = AudioClip(0.8 * np.sin(2 * np.pi * 440.0 * t), src)
    out = resample(clip, 22050)
    bin_hz = 22050 / len(out)
    peak = dft_peak_hz(out.samples, 22050)
    assert abs(peak - 440.0) <= bin_hz / 2 + 1e-9


def test_resample_suppresses_alias():
    # 10 kHz at 44.1 kHz lies above the 8 kHz target's Nyquist and must be removed
    src = 44100
    t = np.arange(4410) / src
    out = resample(AudioClip(0.5 * np.sin(2 * np.pi * 10000.0 * t), src), 16000)
    assert np.max(np.abs(out.samples[100:-100])) < 0.02


def test_fix_length_cases():
    sr = 22050
    exact = AudioClip(np.full(66150, 0.1), sr)
    assert np.array_equal(fix_length(exact, 3.0).samples, exact.samples)

    long = AudioClip(np.linspace(-1, 1, 80000), sr)
    np.testing.assert_array_equal(fix_length(long, 3.0).samples, long.samples[:66150])

    short = AudioClip(np.full(44100, 0.3), sr)
    out = fix_length(short, 3.0).samples
    assert len(out) == 66150
    assert np.all(out[-22050:] == 0.0)
    assert np.all(out[:44100] == 0.3)


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(1, 5000),
    rate=st.sampled_from([8000, 16000, 22050]),
    duration=st.floats(0.01, 0.5),
)
def test_fix_length_properties(n, rate, duration):
    clip = AudioClip(np.full(n, 0.5), rate)
    once = fix_length(clip, duration)
    assert len(once) == round(duration * rate)
    assert np.array_equal(fix_length(once, duration).samples, once.samples)
