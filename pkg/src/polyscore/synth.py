"""Deterministic additive synthesizer for preprocessed kern scores.

Each voice is a sum of harmonic sines under an exponential decay envelope.
Good enough to give every note a clean pitch and duration footprint; timbre
realism is not a goal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import SAMPLE_RATE
from .kern import KernDocument, ScoreEvent, TempoMark

PEAK_LEVEL = 0.9


class VoiceCountMismatch(Exception):
    """Number of voice specs differs from the document's spine count."""


@dataclass(frozen=True)
class SynthVoiceSpec:
    harmonic_amplitudes: tuple[float, ...] = (1.0, 0.5, 0.25)
    decay_seconds: float = 4.0

    def __post_init__(self):
        amps = tuple(float(a) for a in self.harmonic_amplitudes)
        object.__setattr__(self, "harmonic_amplitudes", amps)
        if len(amps) < 1:
            raise ValueError("need at least one harmonic")
        if any(a < 0 for a in amps) or any(a > amps[0] for a in amps[1:]):
            raise ValueError("fundamental must be the largest non-negative amplitude")
        if self.decay_seconds <= 0:
            raise ValueError("decay must be positive")


# Small palette with distinct harmonic profiles, one per voice position.
DEFAULT_VOICES = (
    SynthVoiceSpec((1.0, 0.5, 0.33, 0.25), 4.0),
    SynthVoiceSpec((1.0, 0.6, 0.2), 3.0),
    SynthVoiceSpec((1.0, 0.3), 3.5),
    SynthVoiceSpec((1.0, 0.45, 0.3, 0.15), 2.5),
)


def voices_for(spine_count: int) -> list[SynthVoiceSpec]:
    return [DEFAULT_VOICES[i % len(DEFAULT_VOICES)] for i in range(spine_count)]


def event_seconds(ev: ScoreEvent, tempo: TempoMark) -> float:
    beats = (4.0 / ev.duration) * (1.5 if ev.dots else 1.0)
    return beats * 60.0 / tempo.quarter_bpm


def note_frequency(ev: ScoreEvent) -> float:
    return 440.0 * 2.0 ** ((ev.midi - 69) / 12.0)


def _spine_notes(doc: KernDocument, spine: int, tempo: TempoMark):
    """Yield (start_s, duration_s, frequency) per attack, ties merged."""
    t = 0.0
    pending = None  # (start, duration, freq) of an open tie
    for row in doc.rows:
        if row.kind != "data":
            continue
        ev = row.cells[spine][0]
        if ev.kind == "continuation":
            continue
        dur = event_seconds(ev, tempo)
        if ev.kind == "rest":
            if pending is not None:
                yield pending
                pending = None
            t += dur
            continue
        freq = note_frequency(ev)
        if pending is not None:
            if ev.tie == "close" and abs(pending[2] - freq) < 1e-9:
                yield pending[0], pending[1] + dur, freq
                pending = None
                t += dur
                continue
            yield pending
            pending = None
        if ev.tie == "open":
            pending = (t, dur, freq)
        else:
            yield t, dur, freq
        t += dur
    if pending is not None:
        yield pending


def _spine_seconds(doc: KernDocument, spine: int, tempo: TempoMark) -> float:
    return sum(
        event_seconds(row.cells[spine][0], tempo)
        for row in doc.rows
        if row.kind == "data" and row.cells[spine][0].kind in ("note", "rest")
    )


def render(doc: KernDocument, tempo: TempoMark, voices=None) -> np.ndarray:
    """Render a preprocessed document to mono samples at 22050 Hz.

    One voice spec per spine; tied notes sound as a single attack spanning
    their combined duration. The mix is peak-normalized to 0.9 (silence stays
    silent).
    """
    if voices is None:
        voices = voices_for(doc.spine_count)
    if len(voices) != doc.spine_count:
        raise VoiceCountMismatch(
            f"{len(voices)} voice specs for {doc.spine_count} spines"
        )
    total = max((_spine_seconds(doc, s, tempo) for s in range(doc.spine_count)), default=0.0)
    n = int(round(total * SAMPLE_RATE))
    mix = np.zeros(n, dtype=np.float64)
    nyquist = SAMPLE_RATE / 2.0
    for spine, voice in enumerate(voices):
        for start, dur, freq in _spine_notes(doc, spine, tempo):
            s0 = int(round(start * SAMPLE_RATE))
            s1 = min(int(round((start + dur) * SAMPLE_RATE)), n)
            if s1 <= s0:
                continue
            t = np.arange(s1 - s0, dtype=np.float64) / SAMPLE_RATE
            envelope = np.exp(-t / voice.decay_seconds)
            tone = np.zeros_like(t)
            for k, amp in enumerate(voice.harmonic_amplitudes, start=1):
                if amp > 0 and k * freq < nyquist:
                    tone += amp * np.sin(2.0 * np.pi * k * freq * t)
            mix[s0:s1] += tone * envelope
    peak = np.max(np.abs(mix)) if n else 0.0
    if peak > 0:
        mix *= PEAK_LEVEL / peak
    return mix
