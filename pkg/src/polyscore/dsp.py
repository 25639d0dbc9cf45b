"""PCM audio input and the log-frequency, log-magnitude spectrogram frontend.

Frames of 2048 samples (Hamming windowed, hop 512) are transformed with a
zero-padded FFT and their magnitudes aggregated onto 240 geometrically spaced
bins covering C2 up to (but excluding) C7 at 48 bins per octave, anchored so
that the A4 bin sits exactly at 440 Hz. Magnitudes are compressed as
``log(1 + m)``.
"""
from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

SAMPLE_RATE = 22050
WINDOW_SIZE = 2048
HOP_SIZE = 512
N_BINS = 240
BINS_PER_OCTAVE = 48
A4_HZ = 440.0
A4_BIN = 132  # 33 semitones above C2, 4 bins per semitone
FFT_SIZE = 32768  # zero-padded so the FFT grid resolves adjacent low bins

_DUMP_MAGIC = b"LFSG"


class UnsupportedFormat(Exception):
    """WAV file is not 16-bit PCM mono/stereo."""


class WrongSampleRate(Exception):
    """WAV sample rate differs from 22050 Hz."""


class TooShort(Exception):
    """Fewer samples than one analysis window."""


@dataclass(eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("samples must be a non-empty 1-D array")
        if self.sample_rate != SAMPLE_RATE:
            raise WrongSampleRate(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")

    @property
    def duration_seconds(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(eq=False)
class Spectrogram:
    frames: np.ndarray  # (W, 240) float64
    hop_seconds: float
    bin_frequencies: np.ndarray

    @property
    def width(self) -> int:
        return self.frames.shape[0]


def bin_frequencies() -> np.ndarray:
    """Center frequencies of the 240 bins; index 132 is exactly 440 Hz."""
    return A4_HZ * 2.0 ** ((np.arange(N_BINS) - A4_BIN) / BINS_PER_OCTAVE)


def bin_index_for(freq_hz: float) -> int:
    """Nearest bin index for a frequency, by the geometric grid."""
    f_c2 = A4_HZ * 2.0 ** (-A4_BIN / BINS_PER_OCTAVE)
    return int(round(BINS_PER_OCTAVE * np.log2(freq_hz / f_c2)))


def frame_count(n_samples: int) -> int:
    """Number of analysis frames for a clip of the given length."""
    if n_samples < WINDOW_SIZE:
        raise TooShort(f"need at least {WINDOW_SIZE} samples, got {n_samples}")
    return (n_samples - WINDOW_SIZE) // HOP_SIZE + 1


def load_wav(path) -> AudioClip:
    """Read a 16-bit PCM WAV file; stereo is downmixed by channel averaging."""
    try:
        with wave.open(str(path), "rb") as wav:
            channels = wav.getnchannels()
            width = wav.getsampwidth()
            rate = wav.getframerate()
            n = wav.getnframes()
            raw = wav.readframes(n)
    except wave.Error as exc:
        raise UnsupportedFormat(str(exc)) from exc
    if width != 2:
        raise UnsupportedFormat(f"expected 16-bit PCM, got sample width {width}")
    if channels not in (1, 2):
        raise UnsupportedFormat(f"expected mono or stereo, got {channels} channels")
    if rate != SAMPLE_RATE:
        raise WrongSampleRate(f"expected {SAMPLE_RATE} Hz, got {rate}")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=data, sample_rate=rate)


def write_wav(path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    """Write mono float samples in [-1, 1] as 16-bit PCM."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * 32768.0), -32768, 32767)
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        wav.writeframes(pcm.astype("<i2").tobytes())


_mapping_cache: dict = {}


def _log_mapping() -> tuple[int, int, np.ndarray]:
    """Triangular aggregation weights from FFT bins onto the log grid.

    Each log bin averages FFT magnitudes under a triangle spanning its two
    geometric neighbours; weights are normalized per bin so neighbouring bins
    with different numbers of FFT samples stay comparable.
    """
    if "weights" in _mapping_cache:
        return _mapping_cache["weights"]
    centers = bin_frequencies()
    ratio = 2.0 ** (1.0 / BINS_PER_OCTAVE)
    lows = np.concatenate(([centers[0] / ratio], centers[:-1]))
    highs = np.concatenate((centers[1:], [centers[-1] * ratio]))
    fft_freqs = np.arange(FFT_SIZE // 2 + 1) * (SAMPLE_RATE / FFT_SIZE)
    k_lo = int(np.searchsorted(fft_freqs, lows[0], side="right"))
    k_hi = int(np.searchsorted(fft_freqs, highs[-1], side="left"))
    band = fft_freqs[k_lo:k_hi]
    up = (band[None, :] - lows[:, None]) / (centers[:, None] - lows[:, None])
    down = (highs[:, None] - band[None, :]) / (highs[:, None] - centers[:, None])
    weights = np.clip(np.minimum(up, down), 0.0, None)
    weights /= weights.sum(axis=1, keepdims=True)
    _mapping_cache["weights"] = (k_lo, k_hi, weights.T.copy())
    return _mapping_cache["weights"]


def stft_logfreq(clip: AudioClip) -> Spectrogram:
    """Log-frequency, log-magnitude spectrogram of a clip.

    Raises :class:`TooShort` for clips shorter than one window. Trailing
    samples that do not fill a whole window are dropped.
    """
    n = clip.samples.size
    width = frame_count(n)
    window = np.hamming(WINDOW_SIZE)
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, WINDOW_SIZE)[::HOP_SIZE]
    frames = frames[:width]
    k_lo, k_hi, weights = _log_mapping()
    out = np.empty((width, N_BINS), dtype=np.float64)
    chunk = 64  # bound the (chunk, FFT_SIZE/2+1) scratch spectrum
    for start in range(0, width, chunk):
        stop = min(start + chunk, width)
        spectrum = np.fft.rfft(frames[start:stop] * window, n=FFT_SIZE, axis=1)
        mags = np.abs(spectrum[:, k_lo:k_hi])
        out[start:stop] = mags @ weights
    return Spectrogram(
        frames=np.log1p(out),
        hop_seconds=HOP_SIZE / SAMPLE_RATE,
        bin_frequencies=bin_frequencies(),
    )


def dump_spectrogram(path, spec: Spectrogram) -> None:
    """Write frames as little-endian float32 behind a 16-byte header."""
    w, b = spec.frames.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _DUMP_MAGIC, w, b, 0))
        fh.write(spec.frames.astype("<f4").tobytes())


def read_spectrogram(path) -> Spectrogram:
    with open(path, "rb") as fh:
        magic, w, b, _ = struct.unpack("<4sIII", fh.read(16))
        if magic != _DUMP_MAGIC:
            raise UnsupportedFormat("not a spectrogram dump")
        frames = np.frombuffer(fh.read(w * b * 4), dtype="<f4").reshape(w, b)
    return Spectrogram(
        frames=frames.astype(np.float64),
        hop_seconds=HOP_SIZE / SAMPLE_RATE,
        bin_frequencies=bin_frequencies(),
    )
