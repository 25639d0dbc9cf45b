"""Parsing, preprocessing, fragmentation and tempo annotation of **kern scores.

Supports the restricted **kern subset used throughout this package: up to four
voices, canonical power-of-two durations with at most one dot, single sharps and
flats, octaves 2-7, ties and fermatas. Spine splits, chords, grace notes and
ornament marks are accepted by the parser and removed by :func:`preprocess`.
"""
from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field

import numpy as np

CANONICAL_DURATIONS = (1, 2, 4, 8, 16, 32, 64)

STEP_SEMITONES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}

# Quarter-notes-per-minute for the textual tempo labels found in corpus files.
TEMPO_MAP = {
    "largo assai": 40,
    "largo": 50,
    "poco largo": 60,
    "adagio": 71,
    "poco adagio": 76,
    "andante": 92,
    "andantino": 100,
    "menuetto": 112,
    "moderato": 114,
    "poco allegretto": 116,
    "allegretto": 118,
    "allegro moderato": 120,
    "poco allegro": 124,
    "allegro": 130,
    "molto allegro": 134,
    "allegro assai": 138,
    "vivace": 150,
    "allegro vivace": 160,
    "allegro vivace assai": 170,
    "poco presto": 180,
    "presto": 186,
    "presto assai": 200,
}

TEMPO_JITTER_LOW = 0.94
TEMPO_JITTER_HIGH = 1.06

# Performance/editorial marks that carry no pitch or rhythm information; the
# tokenizer drops them so the surrounding note still parses.
_DECORATIONS = set("LJKk\\/(){}'`~^uvzXxyNO:&ITtSs$MmWwR\"")

_TOKEN_RE = re.compile(
    r"^(?P<open>\[)?"
    r"(?P<dur>\d+)"
    r"(?P<dots>\.*)"
    r"(?P<body>[a-g]+|[A-G]+|r)"
    r"(?P<acc>\#{1,2}|-{1,2}|n)?"
    r"(?P<tail>[\];]*)$"
)


class KernError(Exception):
    """Base error for kern parsing and preprocessing, tagged with a location."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "")
            where = f" ({where})"
        super().__init__(message + where)


class MalformedSpine(KernError):
    """A row does not match the number of currently active spines."""


class UnknownToken(KernError):
    """A cell cannot be interpreted as an event of the supported subset."""


class InvalidTie(KernError):
    """A tie close appears in a spine with no tie open."""


class TooManyVoices(KernError):
    """More than four base spines."""


class UnsupportedNotation(KernError):
    """Double dot, double sharp or double flat in a score."""


class NoBarlines(KernError):
    """Fragmentation requested on a document without any barline."""


class UnknownTempoLabel(KernError):
    """Tempo label missing from the tempo table."""


@dataclass(frozen=True)
class ScoreEvent:
    """One cell-level event: a note, rest, continuation or barline.

    ``dots`` and ``accidental`` may transiently hold values outside the
    supported subset (2 dots, +-2 semitones) right after parsing; those events
    are rejected by :func:`preprocess`.
    """

    kind: str  # "note" | "rest" | "barline" | "continuation"
    duration: int | None = None
    dots: int = 0
    step: str | None = None
    accidental: int = 0
    octave: int | None = None
    tie: str = "none"  # "none" | "open" | "close"
    fermata: bool = False
    grace: bool = False

    @property
    def dotted(self) -> bool:
        return self.dots > 0

    @property
    def midi(self) -> int:
        """MIDI note number (A4 = 69). Notes only."""
        if self.kind != "note":
            raise ValueError("midi number is only defined for notes")
        return (self.octave + 1) * 12 + STEP_SEMITONES[self.step] + self.accidental

    def is_supported(self) -> bool:
        return self.dots <= 1 and abs(self.accidental) <= 1 and not self.grace


CONTINUATION = ScoreEvent(kind="continuation")
BARLINE_EVENT = ScoreEvent(kind="barline")


@dataclass(frozen=True)
class Row:
    """One time-ordered line of the score.

    ``cells`` holds raw token strings for interpretation rows, and one tuple of
    events per active spine for data rows (more than one event = chord).
    Barline rows store a normalized ``"="`` per spine.
    """

    kind: str  # "interpretation" | "data" | "barline"
    cells: tuple = ()
    line: int | None = field(default=None, compare=False)


@dataclass(frozen=True)
class KernDocument:
    spine_count: int
    rows: tuple[Row, ...]
    labels: tuple = field(default=(), compare=False)
    tempo_text: str | None = field(default=None, compare=False)
    source: str | None = field(default=None, compare=False)

    def data_rows(self) -> list[Row]:
        return [r for r in self.rows if r.kind == "data"]

    def barline_count(self) -> int:
        return sum(1 for r in self.rows if r.kind == "barline")


@dataclass(frozen=True)
class TempoMark:
    label: str
    quarter_bpm: float

    def __post_init__(self):
        if self.quarter_bpm <= 0:
            raise ValueError("quarter_bpm must be positive")


def _parse_event(token: str, line: int, column: int) -> ScoreEvent:
    grace = "q" in token or "Q" in token
    stripped = "".join(ch for ch in token if ch not in _DECORATIONS and ch not in "qQ")
    if "_" in stripped:
        raise UnknownToken(f"tie continuation {token!r} is not supported", line, column)
    m = _TOKEN_RE.match(stripped)
    if not m:
        raise UnknownToken(f"cannot parse cell {token!r}", line, column)

    duration = int(m.group("dur"))
    if duration not in CANONICAL_DURATIONS:
        raise UnknownToken(f"duration {duration} in {token!r} is not canonical", line, column)
    dots = len(m.group("dots"))
    if dots > 2:
        raise UnknownToken(f"too many dots in {token!r}", line, column)

    tail = m.group("tail")
    if tail.count("]") > 1 or tail.count(";") > 1:
        raise UnknownToken(f"repeated tie or fermata marks in {token!r}", line, column)
    tie_open = m.group("open") is not None
    tie_close = "]" in tail
    fermata = ";" in tail

    body = m.group("body")
    if body == "r":
        if tie_open or tie_close or m.group("acc"):
            raise UnknownToken(f"rest with tie or accidental in {token!r}", line, column)
        return ScoreEvent(kind="rest", duration=duration, dots=dots, fermata=fermata, grace=grace)

    if len(set(body)) != 1:
        raise UnknownToken(f"mixed pitch letters in {token!r}", line, column)
    letter = body[0]
    octave = 4 + (len(body) - 1) if letter.islower() else 4 - len(body)
    if not 2 <= octave <= 7:
        raise UnknownToken(f"octave {octave} out of range in {token!r}", line, column)
    acc_text = m.group("acc") or ""
    accidental = {"": 0, "n": 0}.get(acc_text, len(acc_text) * (1 if acc_text.startswith("#") else -1))

    if tie_open and tie_close:
        raise UnknownToken(f"note {token!r} both opens and closes a tie", line, column)
    tie = "open" if tie_open else ("close" if tie_close else "none")
    return ScoreEvent(
        kind="note",
        duration=duration,
        dots=dots,
        step=letter.upper(),
        accidental=accidental,
        octave=octave,
        tie=tie,
        fermata=fermata,
        grace=grace,
    )


def _parse_cell(token: str, line: int, column: int) -> tuple[ScoreEvent, ...]:
    if token == ".":
        return (CONTINUATION,)
    parts = token.split(" ")
    events = tuple(_parse_event(p, line, column) for p in parts if p)
    if not events:
        raise UnknownToken("empty cell", line, column)
    if len(events) > 1 and any(e.kind != "note" for e in events):
        raise UnknownToken(f"chord {token!r} may only contain notes", line, column)
    return events


def _apply_manipulators(groups: list[int], cells: list[str], line: int) -> list[int]:
    """Update per-base-spine subspine counts for a row of *^ / *v tokens."""
    new_groups = []
    pos = 0
    for count in groups:
        group_cells = cells[pos : pos + count]
        pos += count
        new_count = count + sum(1 for c in group_cells if c == "*^")
        run = 0
        for c in group_cells + ["*"]:
            if c == "*v":
                run += 1
            else:
                if run == 1:
                    raise MalformedSpine("*v must merge at least two subspines", line)
                if run >= 2:
                    new_count -= run - 1
                run = 0
        if new_count < 1:
            raise MalformedSpine("spine merged out of existence", line)
        new_groups.append(new_count)
    return new_groups


def parse_kern(text: str, source: str | None = None) -> KernDocument:
    """Parse a **kern document into rows of classified events.

    Parameters
    ----------
    text : str
        Tab-separated kern text; LF and CRLF line endings are both accepted.
    source : str, optional
        Origin label used in error messages and kept as document metadata.

    Returns
    -------
    KernDocument
        Rows classified as interpretation, data or barline, in source order.
        Spine splits, chords and grace notes are preserved for
        :func:`preprocess` to resolve.

    Raises
    ------
    MalformedSpine
        Cell count of a row does not match the active spine count.
    UnknownToken
        A cell is outside the supported subset.
    InvalidTie
        A tie close appears in a spine with no open tie.
    """
    lines = text.replace("\r\n", "\n").split("\n")
    spine_count = 0
    labels: list = []
    groups: list[int] = []
    rows: list[Row] = []
    tempo_text: str | None = None
    open_ties: list[int] = []
    started = False
    for lineno, raw in enumerate(lines, start=1):
        if raw == "":
            continue
        if raw.startswith("!!"):
            m = re.match(r"!!!OMD[^:]*:\s*(.+)", raw)
            if m:
                tempo_text = m.group(1).strip()
            continue
        if raw.startswith("!"):
            continue
        cells = raw.split("\t")
        if not started:
            if not all(c.startswith("**") for c in cells):
                raise MalformedSpine("document must start with a **kern header row", lineno)
            if any(c != "**kern" for c in cells):
                raise UnknownToken("only **kern spines are supported", lineno)
            spine_count = len(cells)
            labels = [None] * spine_count
            groups = [1] * spine_count
            open_ties = [0] * spine_count
            started = True
            continue

        active = sum(groups)
        if all(c.startswith("*") for c in cells):
            if len(cells) != active:
                raise MalformedSpine(
                    f"interpretation row has {len(cells)} cells, {active} spines active", lineno
                )
            if all(c == "*-" for c in cells):
                break
            if any(c in ("*+", "*x") for c in cells):
                raise UnknownToken("spine addition/exchange is not supported", lineno)
            if any(c in ("*^", "*v") for c in cells):
                groups = _apply_manipulators(groups, cells, lineno)
            else:
                for idx, c in enumerate(cells):
                    if c.startswith("*I") and not c.startswith('*I"') and idx < spine_count:
                        labels[idx] = c[2:]
            rows.append(Row(kind="interpretation", cells=tuple(cells), line=lineno))
            continue

        if any(c.startswith("=") for c in cells):
            if not all(c.startswith("=") for c in cells):
                raise MalformedSpine("barline must appear in every spine", lineno)
            if len(cells) != active:
                raise MalformedSpine(
                    f"barline row has {len(cells)} cells, {active} spines active", lineno
                )
            rows.append(Row(kind="barline", cells=("=",) * active, line=lineno))
            continue

        if len(cells) != active:
            raise MalformedSpine(
                f"data row has {len(cells)} cells, {active} spines active", lineno
            )
        parsed = []
        pos = 0
        for base, count in enumerate(groups):
            for offset, c in enumerate(cells[pos : pos + count]):
                col = pos + offset + 1
                events = _parse_cell(c, lineno, col)
                for ev in events:
                    if ev.tie == "close":
                        if open_ties[base] == 0:
                            raise InvalidTie("tie close without a matching open", lineno, col)
                        open_ties[base] -= 1
                    elif ev.tie == "open":
                        open_ties[base] += 1
                parsed.append(events)
            pos += count
        rows.append(Row(kind="data", cells=tuple(parsed), line=lineno))

    if not started:
        raise MalformedSpine("document has no **kern header row")
    return KernDocument(
        spine_count=spine_count,
        rows=tuple(rows),
        labels=tuple(labels),
        tempo_text=tempo_text,
        source=source,
    )


def _walk_groups(doc: KernDocument):
    """Yield (row, groups-before-row); groups track subspines per base spine."""
    groups = [1] * doc.spine_count
    for row in doc.rows:
        yield row, list(groups)
        if row.kind == "interpretation" and any(c in ("*^", "*v") for c in row.cells):
            groups = _apply_manipulators(groups, list(row.cells), row.line or 0)


def preprocess(doc: KernDocument) -> KernDocument:
    """Reduce a parsed document to the encodable subset.

    Removes interpretation rows, resolves spine splits (the leftmost subspine
    of each split is kept), reduces chords to their lowest note, and turns
    grace notes into continuations. Idempotent.

    Raises
    ------
    TooManyVoices
        More than four base spines.
    UnsupportedNotation
        Double dot, double sharp or double flat encountered.
    """
    if doc.spine_count > 4:
        raise TooManyVoices(f"{doc.spine_count} spines exceed the 4-voice limit")
    out_rows: list[Row] = []
    for row, groups in _walk_groups(doc):
        if row.kind == "interpretation":
            continue
        if row.kind == "barline":
            out_rows.append(Row(kind="barline", cells=("=",) * doc.spine_count, line=row.line))
            continue
        cells: list[tuple[ScoreEvent, ...]] = []
        pos = 0
        for count in groups:
            first = row.cells[pos]  # leftmost subspine survives the split
            pos += count
            events = first
            if len(events) > 1:
                events = (min(events, key=lambda e: e.midi),)
            ev = events[0]
            if not ev.is_supported():
                if ev.grace:
                    ev = CONTINUATION
                else:
                    raise UnsupportedNotation(
                        "double dots/sharps/flats are outside the supported subset", row.line
                    )
            cells.append((ev,))
        if all(c[0].kind == "continuation" for c in cells):
            continue
        out_rows.append(Row(kind="data", cells=tuple(cells), line=row.line))
    return KernDocument(
        spine_count=doc.spine_count,
        rows=tuple(out_rows),
        labels=doc.labels,
        tempo_text=doc.tempo_text,
        source=doc.source,
    )


def _is_preprocessed(doc: KernDocument) -> bool:
    return all(r.kind in ("data", "barline") for r in doc.rows)


def _measure_slices(rows: tuple[Row, ...]) -> list[list[Row]]:
    """Group rows into measures; each measure ends with its closing barline."""
    measures: list[list[Row]] = []
    current: list[Row] = []
    seen_data = False
    for row in rows:
        current.append(row)
        if row.kind == "data":
            seen_data = True
        elif row.kind == "barline":
            if seen_data:
                measures.append(current)
                current = []
                seen_data = False
            # leading barline stays attached to the upcoming measure
    if any(r.kind == "data" for r in current):
        measures.append(current)
    return measures


def _sever_boundary_ties(rows: list[Row]) -> list[Row]:
    """Drop tie opens/closes whose partner lies outside the given rows."""
    per_spine_open: dict[int, list[tuple[int, int]]] = {}
    drops: set[tuple[int, int]] = set()
    for ri, row in enumerate(rows):
        if row.kind != "data":
            continue
        for si, cell in enumerate(row.cells):
            ev = cell[0]
            if ev.tie == "open":
                per_spine_open.setdefault(si, []).append((ri, si))
            elif ev.tie == "close":
                stack = per_spine_open.get(si)
                if stack:
                    stack.pop()
                else:
                    drops.add((ri, si))
    for stack in per_spine_open.values():
        drops.update(stack)
    if not drops:
        return rows
    out = []
    for ri, row in enumerate(rows):
        if row.kind != "data":
            out.append(row)
            continue
        cells = tuple(
            (dataclasses.replace(cell[0], tie="none"),) if (ri, si) in drops else cell
            for si, cell in enumerate(row.cells)
        )
        out.append(Row(kind="data", cells=cells, line=row.line))
    return out


def fragment(
    doc: KernDocument,
    rng_seed: int,
    min_measures: int = 3,
    max_measures: int = 6,
    allow_overlap: bool = False,
) -> list[KernDocument]:
    """Cut a preprocessed document into fragments of whole measures.

    Fragment sizes are drawn uniformly from [min_measures, max_measures] with a
    seeded generator. Without overlap the fragments partition the measures in
    order (a final fragment shorter than the minimum is kept); with overlap the
    start of each next fragment is drawn to advance by 1..size measures, so
    consecutive fragments may share measures. Ties crossing a fragment boundary
    are severed.
    """
    if not _is_preprocessed(doc):
        raise ValueError("fragment expects a preprocessed document")
    measures = _measure_slices(doc.rows)
    if doc.barline_count() == 0:
        raise NoBarlines("document has no barlines to fragment on")
    total = len(measures)
    rng = np.random.default_rng(rng_seed)
    spans: list[tuple[int, int]] = []
    pos = 0
    while pos < total:
        size = int(rng.integers(min_measures, max_measures + 1))
        if not allow_overlap:
            size = min(size, total - pos)
            spans.append((pos, pos + size))
            pos += size
        else:
            end = min(pos + size, total)
            start = max(0, end - size)
            spans.append((start, end))
            if end == total:
                break
            pos = start + int(rng.integers(1, size + 1))
    out = []
    for start, end in spans:
        rows: list[Row] = []
        for measure in measures[start:end]:
            rows.extend(measure)
        rows = _sever_boundary_ties(rows)
        out.append(
            KernDocument(
                spine_count=doc.spine_count,
                rows=tuple(rows),
                labels=doc.labels,
                tempo_text=doc.tempo_text,
                source=doc.source,
            )
        )
    return out


def assign_tempo(label: str, rng_seed: int | None = None) -> TempoMark:
    """Resolve a tempo label to quarter-notes per minute, optionally jittered.

    With a seed, the table value is scaled by a uniform draw in
    [0.94, 1.06]; with ``rng_seed=None`` the table value is returned exactly.
    Matching is case-insensitive with internal whitespace collapsed.
    """
    key = " ".join(label.split()).lower()
    if key not in TEMPO_MAP:
        raise UnknownTempoLabel(f"no tempo table entry for {label!r}")
    base = TEMPO_MAP[key]
    factor = 1.0
    if rng_seed is not None:
        factor = float(np.random.default_rng(rng_seed).uniform(TEMPO_JITTER_LOW, TEMPO_JITTER_HIGH))
    return TempoMark(label=label, quarter_bpm=base * factor)


def event_to_token(ev: ScoreEvent) -> str:
    if ev.kind == "continuation":
        return "."
    if ev.kind == "rest":
        return f"{ev.duration}{'.' * ev.dots}r{';' if ev.fermata else ''}"
    if ev.kind != "note":
        raise ValueError(f"cannot serialize event kind {ev.kind!r}")
    letter = ev.step.lower() * (ev.octave - 3) if ev.octave >= 4 else ev.step.upper() * (4 - ev.octave)
    acc = {0: "", 1: "#", 2: "##", -1: "-", -2: "--"}[ev.accidental]
    return (
        ("[" if ev.tie == "open" else "")
        + f"{ev.duration}{'.' * ev.dots}"
        + letter
        + acc
        + ("]" if ev.tie == "close" else "")
        + (";" if ev.fermata else "")
    )


def serialize(doc: KernDocument) -> str:
    """Render a document back to **kern text (LF line endings)."""
    lines = []
    if doc.tempo_text:
        lines.append(f"!!!OMD: {doc.tempo_text}")
    lines.append("\t".join(["**kern"] * doc.spine_count))
    groups = [1] * doc.spine_count
    for row in doc.rows:
        if row.kind == "interpretation":
            lines.append("\t".join(row.cells))
            if any(c in ("*^", "*v") for c in row.cells):
                groups = _apply_manipulators(groups, list(row.cells), row.line or 0)
        elif row.kind == "barline":
            lines.append("\t".join(row.cells))
        else:
            lines.append("\t".join(" ".join(event_to_token(e) for e in cell) for cell in row.cells))
    lines.append("\t".join(["*-"] * sum(groups)))
    return "\n".join(lines) + "\n"
