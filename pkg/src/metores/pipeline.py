"""End-to-end resolution: detect candidate mentions in raw text, classify each
one with only that mention masked, and keep literal locations for geoparsing.

Context for a mention is its own sentence. Sentences are found by a small
deterministic rule: a split follows ``.``, ``!`` or ``?`` (plus any closing
quotes or brackets) when whitespace and then an upper-case letter, digit or
opening quote come next, unless the word before the stop is a known
abbreviation.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .corpus import Label, Sample
from .model import Encoder, ModelParams, predict_proba
from .tokenizer import Vocab, encode_sample, fold, pre_tokenize
from .transforms import mask_target


class PipelineError(Exception):
    pass


class SegmentationError(PipelineError):
    def __init__(self, message: str, doc_id: str, offset: int):
        super().__init__(f"{doc_id} @ {offset}: {message}")
        self.doc_id = doc_id
        self.offset = offset


class SpanLabel(enum.Enum):
    LOCATION = "Location"
    ORGANIZATION = "Organization"

    @classmethod
    def parse(cls, text: str) -> "SpanLabel":
        t = text.strip().lower()
        for m in cls:
            if t in (m.value.lower(), m.value[:3].lower()):
                return m
        raise PipelineError(f"unknown detector label {text!r}")


@dataclass(frozen=True)
class DetectedSpan:
    doc_id: str
    start: int
    end: int
    label: SpanLabel = SpanLabel.LOCATION
    score: float = 1.0

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.doc_id, self.start, self.end)


@dataclass(frozen=True)
class ResolvedMention:
    span: DetectedSpan
    cls: Label
    score: float  # probability of ``cls``


class SpanDetector(Protocol):
    def detect(self, doc_id: str, text: str) -> list[DetectedSpan]:
        ...


def resolve_overlaps(spans: Iterable[DetectedSpan]) -> list[DetectedSpan]:
    """Keep the longest span of every overlapping group (leftmost on equal
    length), returned in position order."""
    chosen: list[DetectedSpan] = []
    for s in sorted(spans, key=lambda s: (-(s.end - s.start), s.start, s.end)):
        if all(s.end <= c.start or c.end <= s.start for c in chosen):
            chosen.append(s)
    return sorted(chosen, key=lambda s: (s.start, s.end))


class GazetteerDetector:
    """Case-folded gazetteer lookup at word boundaries.

    With ``require_capital`` a match must begin with an upper-case letter,
    which skips common-noun homographs ("turkey", "nice").
    """

    def __init__(self, entries: Mapping[str, SpanLabel] | Iterable[str],
                 require_capital: bool = True):
        if not isinstance(entries, Mapping):
            entries = {e: SpanLabel.LOCATION for e in entries}
        self.entries = {fold(k.strip()): v for k, v in entries.items() if k.strip()}
        self.require_capital = require_capital
        self._by_first: dict[str, list[str]] = {}
        for e in self.entries:
            a, b = pre_tokenize(e)[0]
            self._by_first.setdefault(e[a:b], []).append(e)

    @classmethod
    def load(cls, path: str | Path, require_capital: bool = True) -> "GazetteerDetector":
        """One entry per line, optionally followed by a tab and a detector label."""
        entries: dict[str, SpanLabel] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            name, _, label = line.partition("\t")
            entries[name] = SpanLabel.parse(label) if label.strip() else SpanLabel.LOCATION
        return cls(entries, require_capital)

    def detect(self, doc_id: str, text: str) -> list[DetectedSpan]:
        words = pre_tokenize(text)
        ends = {b for _, b in words}
        folded = fold(text)
        found = []
        for a, b in words:
            for e in self._by_first.get(folded[a:b], ()):
                end = a + len(e)
                if end in ends and folded[a:end] == e:
                    if self.require_capital and not text[a].isupper():
                        continue
                    found.append(DetectedSpan(doc_id, a, end, self.entries[e]))
        return resolve_overlaps(found)


_ABBREVIATIONS = frozenset({"mr", "mrs", "ms", "dr", "prof", "st", "mt", "ft", "jr", "sr",
                            "vs", "etc", "e.g", "i.e", "inc", "ltd", "co", "gen", "gov",
                            "sen", "rep", "no", "jan", "feb", "mar", "apr", "jun", "jul",
                            "aug", "sep", "sept", "oct", "nov", "dec", "u.s", "u.k"})
_CLOSERS = "\"')]}’”"
_OPENERS = "\"'([{‘“"


def segment_sentences(text: str) -> list[tuple[int, int]]:
    """Character ranges of the sentences of ``text``, whitespace-trimmed."""
    out = []
    n = len(text)
    start = 0
    k = 0
    while k < n:
        c = text[k]
        if c in ".!?":
            j = k + 1
            while j < n and (text[j] in ".!?" or text[j] in _CLOSERS):
                j += 1
            m = j
            while m < n and text[m].isspace():
                m += 1
            if m > j and m < n and (text[m].isupper() or text[m].isdigit() or text[m] in _OPENERS):
                w = k
                while w > 0 and not text[w - 1].isspace():
                    w -= 1
                word = text[w:k].lower()
                if not (c == "." and (word in _ABBREVIATIONS or (len(word) == 1 and word.isalpha()))):
                    out.append((start, j))
                    start = m
                    k = m
                    continue
            k = j
            continue
        k += 1
    out.append((start, n))
    trimmed = []
    for a, b in out:
        while a < b and text[a].isspace():
            a += 1
        while b > a and text[b - 1].isspace():
            b -= 1
        if a < b:
            trimmed.append((a, b))
    return trimmed


def detect(text: str, detector: SpanDetector, doc_id: str = "doc") -> list[DetectedSpan]:
    """Detected spans in position order with overlaps resolved."""
    if not text:
        return []
    spans = detector.detect(doc_id, text)
    for s in spans:
        if not 0 <= s.start < s.end <= len(text):
            raise PipelineError(f"detector returned span ({s.start},{s.end}) outside {doc_id}")
    return resolve_overlaps(spans)


def masked_variants(text: str, spans: Sequence[DetectedSpan],
                    sentences: Sequence[tuple[int, int]] | None = None) -> list[Sample]:
    """One sample per span: its sentence with only that span masked."""
    sentences = segment_sentences(text) if sentences is None else sentences
    out = []
    for s in spans:
        box = next(((a, b) for a, b in sentences if a <= s.start and s.end <= b), None)
        if box is None:
            raise SegmentationError("mention crosses a sentence boundary", s.doc_id, s.start)
        a, b = box
        sample = Sample(f"{s.doc_id}:{s.start}-{s.end}", text[a:b], s.start - a, s.end - a,
                        Label.LITERAL)
        out.append(mask_target(sample))
    return out


def classify_spans(text: str, spans: Sequence[DetectedSpan], params: ModelParams, vocab: Vocab,
                   max_len: int = 256, encoder: Encoder | None = None) -> list[ResolvedMention]:
    if not spans:
        return []
    samples = masked_variants(text, spans)
    probs = predict_proba(params, [encode_sample(s, vocab, max_len) for s in samples],
                          encoder=encoder)
    out = []
    for span, p in zip(spans, probs):
        k = int(p.argmax())
        out.append(ResolvedMention(span, Label(k), float(p[k])))
    return out


def resolve(text: str, detector: SpanDetector, params: ModelParams, vocab: Vocab,
            doc_id: str = "doc", max_len: int = 256,
            encoder: Encoder | None = None) -> list[ResolvedMention]:
    """Classify every detected mention; params should come from a masked-variant run."""
    return classify_spans(text, detect(text, detector, doc_id), params, vocab, max_len, encoder)


def literal_locations(mentions: Iterable[ResolvedMention]) -> list[DetectedSpan]:
    return [m.span for m in mentions
            if m.span.label is SpanLabel.LOCATION and m.cls is Label.LITERAL]


def geoparse(text: str, detector: SpanDetector, params: ModelParams, vocab: Vocab,
             doc_id: str = "doc", max_len: int = 256,
             encoder: Encoder | None = None) -> list[DetectedSpan]:
    """Detected Location spans classified Literal."""
    spans = [s for s in detect(text, detector, doc_id) if s.label is SpanLabel.LOCATION]
    return literal_locations(classify_spans(text, spans, params, vocab, max_len, encoder))


def mention_record(m: ResolvedMention, text: str) -> dict:
    s = m.span
    return {"doc": s.doc_id, "start": s.start, "end": s.end, "surface": text[s.start:s.end],
            "detector_label": s.label.value, "class": str(m.cls), "score": m.score}


def mentions_jsonl(mentions: Iterable[tuple[ResolvedMention, str]]) -> str:
    """One JSON line per (mention, document text) pair."""
    return "".join(json.dumps(mention_record(m, t), ensure_ascii=False) + "\n"
                   for m, t in mentions)


@dataclass
class Document:
    id: str
    text: str
    # gold literal toponym ranges, when annotated
    gold: list[tuple[int, int]] | None = None


def load_documents(path: str | Path) -> list[Document]:
    """A JSONL file of ``{"id", "text", "gold"?}`` records, or a directory of
    ``.txt`` files (id = file stem)."""
    p = Path(path)
    if p.is_dir():
        return [Document(f.stem, f.read_text(encoding="utf-8"))
                for f in sorted(p.glob("*.txt"))]
    docs = []
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            gold = rec.get("gold")
            docs.append(Document(str(rec["id"]), rec["text"],
                                 None if gold is None else [(int(a), int(b)) for a, b in gold]))
        except (ValueError, KeyError, TypeError) as e:
            raise PipelineError(f"{p}:{n}: bad document record ({e})") from e
    return docs
