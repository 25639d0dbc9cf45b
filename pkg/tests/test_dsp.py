import struct
import wave

import numpy as np
import pytest

from polyscore import dsp


def _write_pcm(path, values, rate=22050, channels=1):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(np.asarray(values, dtype="<i2").tobytes())


def test_load_wav_silence(tmp_path):
    path = tmp_path / "silence.wav"
    _write_pcm(path, np.zeros(22050, dtype=np.int16))
    clip = dsp.load_wav(path)
    assert clip.samples.shape == (22050,)
    assert np.all(clip.samples == 0.0)


def test_load_wav_wrong_rate(tmp_path):
    path = tmp_path / "bad.wav"
    _write_pcm(path, np.zeros(100, dtype=np.int16), rate=44100)
    with pytest.raises(dsp.WrongSampleRate):
        dsp.load_wav(path)


def test_load_wav_square_wave_sample_exact(tmp_path):
    # full-scale square wave written independently with struct-packed int16
    pattern = np.tile(np.array([32767, -32768], dtype=np.int16), 512)
    path = tmp_path / "square.wav"
    _write_pcm(path, pattern)
    clip = dsp.load_wav(path)
    expected = pattern.astype(np.float64) / 32768.0
    assert np.array_equal(clip.samples, expected)
    assert clip.samples.max() == pytest.approx(1.0, abs=1e-4)
    assert clip.samples.min() == -1.0


def test_load_wav_stereo_downmix(tmp_path):
    left = np.array([1000, 2000, 3000], dtype=np.int16)
    right = np.array([3000, 2000, 1000], dtype=np.int16)
    interleaved = np.empty(6, dtype=np.int16)
    interleaved[0::2] = left
    interleaved[1::2] = right
    path = tmp_path / "stereo.wav"
    _write_pcm(path, interleaved, channels=2)
    clip = dsp.load_wav(path)
    assert np.allclose(clip.samples, (left + right) / 2.0 / 32768.0)


def test_load_wav_rejects_8_bit(tmp_path):
    path = tmp_path / "eight.wav"
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(1)
        fh.setframerate(22050)
        fh.writeframes(bytes(100))
    with pytest.raises(dsp.UnsupportedFormat):
        dsp.load_wav(path)


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    samples = rng.uniform(-0.9, 0.9, size=5000)
    path = tmp_path / "rt.wav"
    dsp.write_wav(path, samples)
    clip = dsp.load_wav(path)
    assert np.max(np.abs(clip.samples - samples)) <= 0.5 / 32768


def test_frame_count_formula_exact():
    assert dsp.frame_count(2048) == 1
    for k in range(11):
        n = 2048 + k * 512
        assert dsp.frame_count(n) == k + 1
        if k:
            assert dsp.frame_count(n - 1) == k


def test_too_short():
    with pytest.raises(dsp.TooShort):
        dsp.frame_count(2047)
    with pytest.raises(dsp.TooShort):
        dsp.stft_logfreq(dsp.AudioClip(np.zeros(100)))


def test_bin_frequencies_geometry():
    freqs = dsp.bin_frequencies()
    assert freqs.shape == (240,)
    assert freqs[132] == 440.0
    ratios = freqs[1:] / freqs[:-1]
    assert np.allclose(ratios, 2 ** (1 / 48))
    assert freqs[0] == pytest.approx(440.0 * 2 ** (-33 / 12))
    assert freqs[-1] < 2093.005  # strictly below C7


def test_bin_index_formula():
    freqs = dsp.bin_frequencies()
    for b in (0, 47, 132, 239):
        assert dsp.bin_index_for(freqs[b]) == b


def test_pure_tone_440_argmax_at_a4_bin():
    t = np.arange(2 * 22050) / 22050
    clip = dsp.AudioClip(0.5 * np.sin(2 * np.pi * 440.0 * t))
    spec = dsp.stft_logfreq(clip)
    interior = spec.frames[1:-1]
    assert np.all(interior.argmax(axis=1) == 132)


def test_silence_spectrogram_all_zero():
    spec = dsp.stft_logfreq(dsp.AudioClip(np.zeros(22050)))
    assert np.all(spec.frames == 0.0)
    assert spec.width == dsp.frame_count(22050)


def test_hop_shift_moves_one_frame():
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.5, 0.5, size=22050)
    shifted = np.concatenate([np.zeros(512), x])
    a = dsp.stft_logfreq(dsp.AudioClip(x)).frames
    b = dsp.stft_logfreq(dsp.AudioClip(shifted)).frames
    w = a.shape[0]
    assert np.max(np.abs(b[1 : w + 1] - a)) < 1e-6


def test_amplitude_doubling_increases_nonzero_cells():
    t = np.arange(22050) / 22050
    x = 0.3 * np.sin(2 * np.pi * 330.0 * t)
    a = dsp.stft_logfreq(dsp.AudioClip(x)).frames
    b = dsp.stft_logfreq(dsp.AudioClip(2 * x)).frames
    mask = a > 0
    assert np.all(b[mask] > a[mask])


def test_fft_against_naive_dft():
    rng = np.random.default_rng(2)
    for n in (8, 16, 64, 128, 256):
        x = rng.normal(size=n)
        k = np.arange(n // 2 + 1)[:, None]
        m = np.arange(n)[None, :]
        naive = (x[None, :] * np.exp(-2j * np.pi * k * m / n)).sum(axis=1)
        fast = np.fft.rfft(x)
        assert np.max(np.abs(fast - naive)) < 1e-9 * max(1.0, np.max(np.abs(naive)))


def test_spectrogram_dump_round_trip(tmp_path):
    t = np.arange(22050) / 22050
    spec = dsp.stft_logfreq(dsp.AudioClip(0.4 * np.sin(2 * np.pi * 440 * t)))
    path = tmp_path / "spec.bin"
    dsp.dump_spectrogram(path, spec)
    raw = path.read_bytes()
    magic, w, b, reserved = struct.unpack("<4sIII", raw[:16])
    assert magic == b"LFSG" and (w, b) == spec.frames.shape and reserved == 0
    assert len(raw) == 16 + w * b * 4
    again = dsp.read_spectrogram(path)
    assert np.allclose(again.frames, spec.frames, atol=1e-6)


def test_audio_clip_validation():
    with pytest.raises(dsp.WrongSampleRate):
        dsp.AudioClip(np.zeros(10), sample_rate=44100)
    with pytest.raises(ValueError):
        dsp.AudioClip(np.array([]))
