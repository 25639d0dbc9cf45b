"""Symbol alphabet and conversion between kern documents and token sequences.

Every note is two symbols (duration, pitch), rests are a bare duration symbol,
and the two-dimensional score layout is kept through explicit tab and newline
symbols. Index 0 is reserved for the blank used by the alignment-free loss.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

from .kern import CONTINUATION, KernDocument, Row, ScoreEvent

EPSILON = "<eps>"
TAB = "\t"
NEWLINE = "\n"
DOT = "."
BARLINE = "="
TIE_OPEN = "["
TIE_CLOSE = "]"
FERMATA = ";"

STRUCTURAL_SYMBOLS = (EPSILON, TAB, NEWLINE, DOT, BARLINE, TIE_OPEN, TIE_CLOSE, FERMATA)

_STEP_ORDER = "CDEFGAB"
_PITCH_RE = re.compile(r"^([A-G])(#|-)?([2-7])$")
_DURATION_RE = re.compile(r"^(\d+)(\.?)$")


class EmptyCorpus(Exception):
    """Vocabulary construction over zero documents."""


class OutOfVocabulary(Exception):
    """An event has no symbol in the vocabulary."""


class ScoreSyntaxError(Exception):
    """Token sequence does not form a well-formed score.

    Carries the token position where parsing failed and the partial document
    of all rows completed before that point.
    """

    def __init__(self, message: str, position: int, partial: "KernDocument"):
        super().__init__(f"{message} (token position {position})")
        self.position = position
        self.partial = partial


def duration_symbol(duration: int, dots: int) -> str:
    return f"{duration}{'.' * dots}"


def pitch_symbol(step: str, accidental: int, octave: int) -> str:
    acc = {0: "", 1: "#", -1: "-"}[accidental]
    return f"{step}{acc}{octave}"


@dataclass(frozen=True)
class Vocabulary:
    """Bijective symbol/index table with the blank fixed at index 0."""

    symbols: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)
    _kinds: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.symbols or self.symbols[0] != EPSILON:
            raise ValueError(f"symbol 0 must be {EPSILON!r}")
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("duplicate symbols in vocabulary")
        for s in STRUCTURAL_SYMBOLS:
            if s not in self.symbols:
                raise ValueError(f"structural symbol {s!r} missing")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.symbols)})
        object.__setattr__(self, "_kinds", tuple(_classify(s) for s in self.symbols))

    def __len__(self) -> int:
        return len(self.symbols)

    def index_of(self, symbol: str) -> int:
        try:
            return self._index[symbol]
        except KeyError:
            raise OutOfVocabulary(f"symbol {_escape(symbol)!r} not in vocabulary") from None

    def kind_of(self, index: int) -> str:
        return self._kinds[index][0]

    def payload_of(self, index: int):
        return self._kinds[index][1]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for s in self.symbols:
                fh.write(_escape(s) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        return cls(symbols=tuple(_unescape(s) for s in lines))

    def sha256(self) -> bytes:
        payload = "\n".join(_escape(s) for s in self.symbols).encode("utf-8")
        return hashlib.sha256(payload).digest()


def _escape(symbol: str) -> str:
    return symbol.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(text[i + 1], text[i + 1]))
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def _classify(symbol: str):
    structural = {
        EPSILON: "eps",
        TAB: "tab",
        NEWLINE: "newline",
        DOT: "dot",
        BARLINE: "barline",
        TIE_OPEN: "tie_open",
        TIE_CLOSE: "tie_close",
        FERMATA: "fermata",
    }
    if symbol in structural:
        return structural[symbol], None
    m = _DURATION_RE.match(symbol)
    if m:
        return "duration", (int(m.group(1)), len(m.group(2)))
    m = _PITCH_RE.match(symbol)
    if m:
        acc = {None: 0, "#": 1, "-": -1}[m.group(2)]
        return "pitch", (m.group(1), acc, int(m.group(3)))
    raise ValueError(f"unclassifiable symbol {_escape(symbol)!r}")


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[int, ...]
    vocab: Vocabulary = field(compare=False)

    def __post_init__(self):
        n = len(self.vocab)
        if any(not 0 <= t < n for t in self.tokens):
            raise ValueError("token index out of range")

    def __len__(self) -> int:
        return len(self.tokens)

    def symbols(self) -> list[str]:
        return [self.vocab.symbols[t] for t in self.tokens]


def build_vocabulary(corpus) -> Vocabulary:
    """Collect the symbol set of a preprocessed corpus in canonical order.

    Structural symbols come first in a fixed order, then the observed
    duration symbols sorted by (duration, dots), then the observed pitch
    symbols sorted by (octave, step, accidental). The result is independent
    of corpus ordering.
    """
    docs = list(corpus)
    if not docs:
        raise EmptyCorpus("cannot build a vocabulary from zero documents")
    durations: set[tuple[int, int]] = set()
    pitches: set[tuple[str, int, int]] = set()
    for doc in docs:
        for row in doc.rows:
            if row.kind != "data":
                continue
            for cell in row.cells:
                for ev in cell:
                    if ev.kind in ("note", "rest"):
                        durations.add((ev.duration, ev.dots))
                    if ev.kind == "note":
                        pitches.add((ev.step, ev.accidental, ev.octave))
    dur_symbols = [duration_symbol(d, k) for d, k in sorted(durations)]
    pitch_symbols = [
        pitch_symbol(s, a, o)
        for s, a, o in sorted(pitches, key=lambda p: (p[2], _STEP_ORDER.index(p[0]), p[1]))
    ]
    return Vocabulary(symbols=STRUCTURAL_SYMBOLS + tuple(dur_symbols) + tuple(pitch_symbols))


def _event_symbols(ev: ScoreEvent) -> list[str]:
    if ev.kind == "continuation":
        return [DOT]
    symbols = []
    if ev.tie == "open":
        symbols.append(TIE_OPEN)
    symbols.append(duration_symbol(ev.duration, ev.dots))
    if ev.kind == "note":
        symbols.append(pitch_symbol(ev.step, ev.accidental, ev.octave))
        if ev.tie == "close":
            symbols.append(TIE_CLOSE)
    if ev.fermata:
        symbols.append(FERMATA)
    return symbols


def encode(doc: KernDocument, vocab: Vocabulary) -> TokenSequence:
    """Serialize a preprocessed document row-major into vocabulary indices.

    Data rows become tab-separated cells terminated by a newline symbol;
    barline rows collapse to a single barline symbol plus newline.
    """
    out: list[int] = []
    for row in doc.rows:
        if row.kind == "interpretation":
            raise ValueError("encode expects a preprocessed document")
        if row.kind == "barline":
            out.append(vocab.index_of(BARLINE))
            out.append(vocab.index_of(NEWLINE))
            continue
        for ci, cell in enumerate(row.cells):
            if len(cell) != 1:
                raise ValueError("encode expects chord-free documents")
            if ci:
                out.append(vocab.index_of(TAB))
            for s in _event_symbols(cell[0]):
                out.append(vocab.index_of(s))
        out.append(vocab.index_of(NEWLINE))
    return TokenSequence(tokens=tuple(out), vocab=vocab)


def decode(seq: TokenSequence) -> KernDocument:
    """Parse a token sequence back into a document; inverse of :func:`encode`.

    Raises :class:`ScoreSyntaxError` when the sequence is not a well-formed
    score, carrying the failing position and the rows completed so far.
    """
    vocab = seq.vocab
    tokens = seq.tokens
    rows: list[Row] = []
    spine_count: int | None = None

    def fail(message: str, position: int):
        n = spine_count or 1
        partial_rows = tuple(
            Row(kind=r.kind, cells=("=",) * n) if r.kind == "barline" else r for r in rows
        )
        partial = KernDocument(spine_count=n, rows=partial_rows, labels=(None,) * n)
        raise ScoreSyntaxError(message, position, partial)

    i = 0
    n = len(tokens)
    while i < n:
        row_start = i
        kind = vocab.kind_of(tokens[i])
        if kind == "barline":
            i += 1
            if i >= n or vocab.kind_of(tokens[i]) != "newline":
                fail("barline must be followed by a newline", i if i < n else n)
            i += 1
            rows.append(Row(kind="barline", cells=()))
            continue
        cells: list[tuple[ScoreEvent, ...]] = []
        while True:
            cell_start = i
            if i >= n:
                fail("sequence ended inside a row", n)
            kind = vocab.kind_of(tokens[i])
            if kind in ("tab", "newline"):
                fail("row with empty cells", cell_start)
            if kind == "dot":
                ev = CONTINUATION
                i += 1
            else:
                tie_open = kind == "tie_open"
                if tie_open:
                    i += 1
                    if i >= n:
                        fail("sequence ended after a tie open", n)
                    kind = vocab.kind_of(tokens[i])
                if kind != "duration":
                    fail(f"expected a duration symbol, found {kind}", i)
                duration, dots = vocab.payload_of(tokens[i])
                i += 1
                is_note = i < n and vocab.kind_of(tokens[i]) == "pitch"
                if is_note:
                    step, accidental, octave = vocab.payload_of(tokens[i])
                    i += 1
                    tie_close = i < n and vocab.kind_of(tokens[i]) == "tie_close"
                    if tie_close:
                        i += 1
                    if tie_open and tie_close:
                        fail("note both opens and closes a tie", cell_start)
                    fermata = i < n and vocab.kind_of(tokens[i]) == "fermata"
                    if fermata:
                        i += 1
                    ev = ScoreEvent(
                        kind="note",
                        duration=duration,
                        dots=dots,
                        step=step,
                        accidental=accidental,
                        octave=octave,
                        tie="open" if tie_open else ("close" if tie_close else "none"),
                        fermata=fermata,
                    )
                else:
                    if tie_open:
                        fail("tie open on a rest", cell_start)
                    fermata = i < n and vocab.kind_of(tokens[i]) == "fermata"
                    if fermata:
                        i += 1
                    ev = ScoreEvent(kind="rest", duration=duration, dots=dots, fermata=fermata)
            cells.append((ev,))
            if i >= n:
                fail("truncated row without a final newline", n)
            kind = vocab.kind_of(tokens[i])
            if kind == "tab":
                i += 1
                continue
            if kind == "newline":
                i += 1
                break
            fail(f"unexpected {kind} symbol inside a row", i)
        if spine_count is None:
            spine_count = len(cells)
        elif len(cells) != spine_count:
            fail(f"row has {len(cells)} cells, expected {spine_count}", row_start)
        rows.append(Row(kind="data", cells=tuple(cells)))

    count = spine_count or 1
    final_rows = tuple(
        Row(kind="barline", cells=("=",) * count) if r.kind == "barline" else r for r in rows
    )
    return KernDocument(spine_count=count, rows=final_rows, labels=(None,) * count)


def segment_words(seq: TokenSequence) -> list[tuple[int, ...]]:
    """Split a token sequence into words at tab/newline separators.

    Words are maximal runs of non-separator tokens; separators contribute no
    words. Note that a barline is a word of its own, and so is a continuation
    dot.
    """
    vocab = seq.vocab
    words: list[tuple[int, ...]] = []
    current: list[int] = []
    for t in seq.tokens:
        if vocab.kind_of(t) in ("tab", "newline"):
            if current:
                words.append(tuple(current))
                current = []
        else:
            current.append(t)
    if current:
        words.append(tuple(current))
    return words
