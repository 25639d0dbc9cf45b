"""Deterministic generator of small kern scores for tests and the toy run.

Melodies walk a C4-B4 diatonic scale in 4/4 with durations from
{half, quarter, dotted quarter, eighth}, occasional rests, ties across
barlines and a closing fermata. Two-voice scores mix a moving line over a
slower one so continuation cells appear. The symbol inventory stays at
19 (< 25): 8 structural + 4 duration + 7 pitch symbols.
"""
from __future__ import annotations

import numpy as np

SCALE = ["c", "d", "e", "f", "g", "a", "b"]  # C4..B4

# duration token -> length in eighth-note units
DURATIONS = {"2": 4, "4.": 3, "4": 2, "8": 1}
MEASURE_EIGHTHS = 8

FAST_LABELS = ("Presto Assai", "Presto")
MEDIUM_LABELS = ("Vivace", "Allegro Vivace")


def _rhythm(rng, units: int, allow_long: bool) -> list[str]:
    """Random duration tokens filling the given number of eighth units."""
    choices = ["2", "2", "4", "4", "4", "4."] if allow_long else ["4", "4", "4", "4", "8", "2", "4."]
    out = []
    left = units
    while left > 0:
        tok = choices[rng.integers(0, len(choices))]
        if DURATIONS[tok] > left:
            tok = {3: "4.", 2: "4", 1: "8"}[left] if left <= 3 else "2"
        out.append(tok)
        left -= DURATIONS[tok]
    return out


def _melody(rng, rhythms: list[list[str]], rest_p: float = 0.05, tie_p: float = 0.15):
    """Attach pitches to per-measure rhythms: (onset_eighths, token) pairs."""
    step = int(rng.integers(0, len(SCALE)))
    measures = []
    tie_pending = False
    n_measures = len(rhythms)
    for m, rhythm in enumerate(rhythms):
        events = []
        onset = 0
        for k, dur in enumerate(rhythm):
            is_rest = rng.random() < rest_p and not (tie_pending and k == 0)
            if is_rest:
                events.append((onset, f"{dur}r"))
            else:
                if tie_pending and k == 0:
                    token = f"{dur}{SCALE[step]}]"
                    tie_pending = False
                else:
                    # reflecting walk with no zero steps: avoids the long
                    # same-pitch runs a clamped walk produces at scale edges
                    step += int(rng.choice([-2, -1, 1, 2]))
                    if step < 0:
                        step = -step
                    if step >= len(SCALE):
                        step = 2 * (len(SCALE) - 1) - step
                    token = f"{dur}{SCALE[step]}"
                opens_tie = (
                    k == len(rhythm) - 1
                    and m < n_measures - 1
                    and not is_rest
                    and rng.random() < tie_p
                )
                if opens_tie:
                    token = "[" + token
                    tie_pending = True
                events.append((onset, token))
            onset += DURATIONS[dur]
        measures.append(events)
    return measures


def make_score(seed: int, n_measures: int = 12, voices: int = 1) -> str:
    """One deterministic kern score with an OMD tempo label.

    Two-voice scores are homophonic: the second voice shares the lead
    rhythm note against note.
    """
    rng = np.random.default_rng(seed)
    labels = FAST_LABELS if voices == 1 else MEDIUM_LABELS
    tempo = labels[int(rng.integers(0, len(labels)))]
    lead = [_rhythm(rng, MEASURE_EIGHTHS, allow_long=False) for _ in range(n_measures)]
    voice_rhythms = [lead] + [[list(m) for m in lead] for _ in range(1, voices)]
    parts = [_melody(rng, r) for r in voice_rhythms]
    lines = [f"!!!OMD: {tempo}", "\t".join(["**kern"] * voices)]
    for m in range(n_measures):
        onsets = sorted({onset for part in parts for onset, _ in part[m]})
        events = [dict(part[m]) for part in parts]
        for onset in onsets:
            cells = [ev.get(onset, ".") for ev in events]
            lines.append("\t".join(cells))
        lines.append("\t".join(["="] * voices))
    # close with a fermata on the final sounding event of each voice
    for v in range(voices):
        for i in range(len(lines) - 2, -1, -1):
            cells = lines[i].split("\t")
            if len(cells) == voices and cells[v] not in (".", "=") and not cells[v].startswith(("!", "*")):
                if not cells[v].endswith(";"):
                    cells[v] += ";"
                lines[i] = "\t".join(cells)
                break
    lines.append("\t".join(["*-"] * voices))
    return "\n".join(lines) + "\n"


def make_corpus(
    directory, n_scores: int = 12, seed: int = 0, two_voice_every: int = 4, n_measures: int = 12
) -> list[str]:
    """Write scores into a directory; every k-th score has two voices."""
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i in range(n_scores):
        voices = 2 if two_voice_every and (i % two_voice_every == two_voice_every - 1) else 1
        text = make_score(seed=seed * 1000 + i, n_measures=n_measures, voices=voices)
        name = f"score{i:02d}.krn"
        (directory / name).write_text(text, encoding="utf-8")
        names.append(name)
    return names
