"""Corpus data model, dataset converters, statistics and splits.

Every dataset is normalised to a stream of :class:`Sample` records: one
sentence, a character span for the potentially metonymic word (PMW) and a
binary label. The canonical on-disk form is JSON lines, one record per line.
"""
from __future__ import annotations

import csv
import enum
import html
import io
import json
import random
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class CorpusError(Exception):
    """Base class for corpus problems."""


class ParseError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(CorpusError):
    pass


class ConversionError(CorpusError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        if index is not None:
            message = f"record {index}: {message}"
        super().__init__(message)


class InfeasibleSplitError(CorpusError):
    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(message)


class Label(enum.IntEnum):
    LITERAL = 0
    METONYMIC = 1

    @classmethod
    def parse(cls, value: str) -> "Label":
        try:
            return cls[value.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown label {value!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


# the literal string substituted for a masked target
MASK_STRING = "X"


@dataclass(frozen=True)
class Sample:
    id: str
    text: str
    target_start: int
    target_end: int
    label: Label
    fine_label: str | None = None
    dataset: str = ""
    pmw_key: str = ""

    def __post_init__(self):
        if not self.pmw_key and 0 <= self.target_start < self.target_end <= len(self.text):
            object.__setattr__(self, "pmw_key", self.target.casefold())

    @property
    def target(self) -> str:
        return self.text[self.target_start:self.target_end]

    def problems(self) -> list[str]:
        out = []
        n = len(self.text)
        if not (0 <= self.target_start < self.target_end <= n):
            out.append(f"span ({self.target_start},{self.target_end}) outside text of length {n}")
            return out
        t = self.target
        if t.strip() != t or not t.strip():
            out.append(f"target {t!r} is empty or has surrounding whitespace")
        # masked samples keep the original key for split bookkeeping
        if t != MASK_STRING and self.pmw_key != t.casefold():
            out.append(f"pmw_key {self.pmw_key!r} does not match target {t!r}")
        return out

    def validate(self) -> "Sample":
        errs = self.problems()
        if errs:
            raise ValidationError(f"sample {self.id}: " + "; ".join(errs))
        return self


@dataclass(frozen=True)
class DatasetStats:
    n_literal: int = 0
    n_metonymic: int = 0
    n_total: int = 0
    n_unique_pmw: int = 0
    avg_doc_length_words: float = 0.0


# Published corpus counts: (literal, metonymic, total, unique PMWs, words per document)
PUBLISHED_STATS = {
    "semeval-org": (1211, 721, 1932, 433, 27.3),
    "semeval-loc": (1458, 375, 1833, 262, 26.6),
    "relocar": (995, 1031, 2026, 603, 22.7),
    "conll": (4609, 2448, 7057, 1685, 24.6),
    "gwn": (841, 630, 1471, 600, 26.8),
    "wimcor": (154322, 51678, 206000, 1029, 85.3),
}


class SplitKind(enum.Enum):
    FIXED = "fixed"
    LEXICAL = "lexical"
    KFOLD = "kfold"


@dataclass(frozen=True)
class SplitSpec:
    kind: SplitKind
    fractions: tuple[float, ...] = ()
    k: int = 0
    seed: int = 0
    # allowed deviation of a lexical part from its requested share of samples
    tolerance: float = 0.02

    def __post_init__(self):
        if self.kind is SplitKind.KFOLD:
            if self.k < 2:
                raise ValueError("k-fold split needs k >= 2")
        else:
            if not self.fractions or any(f <= 0 for f in self.fractions):
                raise ValueError("fractions must be positive")
            if abs(sum(self.fractions) - 1.0) > 1e-9:
                raise ValueError(f"fractions sum to {sum(self.fractions)}, not 1")

    @property
    def n_parts(self) -> int:
        return self.k if self.kind is SplitKind.KFOLD else len(self.fractions)


# --------------------------------------------------------------------------
# canonical record format

def sample_to_record(s: Sample) -> str:
    rec = {
        "id": s.id,
        "text": s.text,
        "target_start": s.target_start,
        "target_end": s.target_end,
        "label": str(s.label),
    }
    if s.fine_label is not None:
        rec["fine_label"] = s.fine_label
    rec["dataset"] = s.dataset
    if s.pmw_key != s.target.casefold():
        rec["pmw_key"] = s.pmw_key
    return json.dumps(rec, ensure_ascii=False)


def sample_from_record(line: str, lineno: int | None = None) -> Sample:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed record: {e.msg}", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", lineno)
    try:
        s = Sample(
            id=str(rec["id"]),
            text=rec["text"],
            target_start=int(rec["target_start"]),
            target_end=int(rec["target_end"]),
            label=Label.parse(rec["label"]),
            fine_label=rec.get("fine_label"),
            dataset=rec.get("dataset", ""),
            pmw_key=rec.get("pmw_key", ""),
        )
    except KeyError as e:
        raise ParseError(f"missing field {e.args[0]}", lineno) from None
    except (TypeError, ValueError) as e:
        raise ParseError(str(e), lineno) from None
    return s.validate()


def iter_canonical(path: str | Path) -> Iterator[Sample]:
    """Stream samples from a canonical file without materialising it."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            yield sample_from_record(line, lineno)


def load_canonical(path: str | Path) -> list[Sample]:
    return list(iter_canonical(path))


def write_canonical(samples: Iterable[Sample], path: str | Path | None = None) -> str | None:
    """Write samples as canonical records; returns the text when no path is given."""
    if path is None:
        return "".join(sample_to_record(s) + "\n" for s in samples)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(sample_to_record(s) + "\n")
    return None


# --------------------------------------------------------------------------
# converters


class Format(enum.Enum):
    SEMEVAL_XML = "semeval"
    RELOCAR_TSV = "relocar"
    CONLL_COL = "conll"
    GWN_JSON = "gwn"
    WIMCOR_JSON = "wimcor"


def _binary_label(raw: str, index: int, extra: dict[str, Label] | None = None) -> Label:
    key = raw.strip().lower()
    table = {"literal": Label.LITERAL, "metonymic": Label.METONYMIC, "mixed": Label.METONYMIC}
    if extra:
        table.update(extra)
    if key not in table:
        raise ConversionError(f"unknown label {raw!r}", index)
    return table[key]


def _sample(idx: int, text: str, start: int, end: int, label: Label, dataset: str,
            rid: str | None = None, fine: str | None = None) -> Sample:
    s = Sample(id=rid or f"{dataset}-{idx}", text=text, target_start=start, target_end=end,
               label=label, fine_label=fine, dataset=dataset)
    errs = s.problems()
    if errs:
        raise ConversionError("; ".join(errs), idx)
    return s


_SAMPLE_RE = re.compile(r"<sample\b([^>]*)>(.*?)</sample>", re.S)
_ID_RE = re.compile(r'\bid="([^"]*)"')
_ANNOT_RE = re.compile(
    r"<annot>\s*<(location|org)\b([^>]*)>(.*?)</\1>\s*</annot>", re.S)
_ATTR_RE = re.compile(r'(\w+)="([^"]*)"')
_TAG_RE = re.compile(r"<[^>]+>")
_TITLE_RE = re.compile(r"<bnc:title>.*?</bnc:title>", re.S)


def _strip_markup(fragment: str) -> str:
    return html.unescape(_TAG_RE.sub("", fragment))


def _convert_semeval(text: str, dataset: str) -> Iterator[Sample]:
    # <sample id=..><bnc:title>..</bnc:title><par> ... <annot><location
    # reading="metonymic" metotype="place-for-people">Germany</location></annot> ... </par></sample>
    for idx, m in enumerate(_SAMPLE_RE.finditer(text)):
        attrs, body = m.group(1), m.group(2)
        rid = _ID_RE.search(attrs)
        body = _TITLE_RE.sub("", body)
        pars = re.findall(r"<par>(.*?)</par>", body, re.S) or [body]
        par = next((p for p in pars if "<annot>" in p), None)
        if par is None:
            raise ConversionError("no <annot> element", idx)
        a = _ANNOT_RE.search(par)
        if a is None:
            raise ConversionError("unrecoverable <annot> markup", idx)
        before = _strip_markup(par[: a.start()])
        surface = _strip_markup(a.group(3)).strip()
        after = _strip_markup(par[a.end():])
        ann = dict(_ATTR_RE.findall(a.group(2)))
        reading = ann.get("reading")
        if reading is None:
            raise ConversionError("annotation without reading attribute", idx)
        label = _binary_label(reading, idx)
        fine = ann.get("metotype") if label is Label.METONYMIC else None
        fine = fine or None
        # collapse whitespace while keeping track of the target offsets
        left = " ".join(before.split())
        right = " ".join(after.split())
        sent = left + (" " if left else "")
        start = len(sent)
        sent += surface
        end = len(sent)
        if right:
            sent += ("" if right[0] in ".,;:!?'" else " ") + right
        yield _sample(idx, sent, start, end, label, dataset,
                      rid.group(1) if rid else None, fine)


def _convert_relocar(text: str, dataset: str) -> Iterator[Sample]:
    # header: id<TAB>sentence<TAB>start<TAB>end<TAB>label ("id" optional)
    reader = csv.reader(io.StringIO(text), delimiter="\t", quoting=csv.QUOTE_NONE)
    header = next(reader, None)
    if header is None:
        return
    cols = [h.strip().lower() for h in header]
    need = {"sentence", "start", "end", "label"}
    if not need <= set(cols):
        raise ConversionError(f"TSV header must contain {sorted(need)}, got {cols}", 0)
    pos = {c: cols.index(c) for c in cols}
    for idx, row in enumerate(reader):
        if not row or not any(row):
            continue
        if len(row) != len(cols):
            raise ConversionError(f"expected {len(cols)} columns, got {len(row)}", idx)
        try:
            start, end = int(row[pos["start"]]), int(row[pos["end"]])
        except ValueError:
            raise ConversionError("non-integer offset", idx) from None
        rid = row[pos["id"]] if "id" in pos else None
        yield _sample(idx, row[pos["sentence"]], start, end,
                      _binary_label(row[pos["label"]], idx), dataset, rid)


_CONLL_TAGS = {"LIT": Label.LITERAL, "MET": Label.METONYMIC}


def _convert_conll(text: str, dataset: str) -> Iterator[Sample]:
    # token<TAB>tag per line, tags in {O, B-LIT, I-LIT, B-MET, I-MET}; blank line ends a sentence
    idx = 0
    sent_no = 0

    def flush(tokens: list[tuple[str, str]]):
        nonlocal idx
        parts, offsets = [], []
        pos = 0
        for tok, _ in tokens:
            offsets.append((pos, pos + len(tok)))
            parts.append(tok)
            pos += len(tok) + 1
        sent = " ".join(parts)
        k = 0
        while k < len(tokens):
            tag = tokens[k][1]
            if tag == "O":
                k += 1
                continue
            if not tag.startswith("B-") or tag[2:] not in _CONLL_TAGS:
                raise ConversionError(f"bad tag {tag!r} in sentence {sent_no}", idx)
            kind = tag[2:]
            e = k + 1
            while e < len(tokens) and tokens[e][1] == "I-" + kind:
                e += 1
            yield _sample(idx, sent, offsets[k][0], offsets[e - 1][1], _CONLL_TAGS[kind],
                          dataset, f"{dataset}-{sent_no}-{k}")
            idx += 1
            k = e

    buf: list[tuple[str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            if buf:
                yield from flush(buf)
                sent_no += 1
                buf = []
            continue
        cols = line.split("\t") if "\t" in line else line.split()
        if len(cols) < 2:
            raise ConversionError(f"line {lineno}: expected token and tag", idx)
        buf.append((cols[0], cols[-1].strip()))
    if buf:
        yield from flush(buf)


# non-binary GWN readings; skipped unless associative readings are requested
_GWN_ASSOCIATIVE = ("demonym", "homonym", "noun_modifier", "modifier", "associative")


def _convert_gwn(text: str, dataset: str, associative_as_metonymic: bool) -> Iterator[Sample]:
    # [{"id":..., "sentence":..., "toponyms":[{"start":..,"end":..,"type":..}, ...]}, ...]
    try:
        docs = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConversionError(f"malformed JSON: {e.msg}") from None
    idx = 0
    for d_i, doc in enumerate(docs):
        for t_i, top in enumerate(doc.get("toponyms", [])):
            kind = str(top.get("type", "")).lower()
            if kind in _GWN_ASSOCIATIVE:
                if not associative_as_metonymic:
                    continue
                label = Label.METONYMIC
            else:
                label = _binary_label(kind, idx)
            rid = f"{doc.get('id', f'{dataset}-{d_i}')}-{t_i}"
            yield _sample(idx, doc["sentence"], int(top["start"]), int(top["end"]),
                          label, dataset, rid)
            idx += 1


def _iter_wimcor(lines: Iterable[str], dataset: str) -> Iterator[Sample]:
    # one JSON object per line: {"id"?, "sentence", "start", "end", "label"}
    idx = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            yield _sample(idx, rec["sentence"], int(rec["start"]), int(rec["end"]),
                          _binary_label(rec["label"], idx), dataset, rec.get("id"))
        except (json.JSONDecodeError, KeyError) as e:
            raise ConversionError(f"line {lineno}: bad record ({e})", idx) from None
        idx += 1


def iter_convert(raw: str | Path, fmt: Format | str, dataset: str | None = None,
                 associative_as_metonymic: bool = False) -> Iterator[Sample]:
    fmt = Format(fmt)
    dataset = dataset or fmt.value
    if fmt is Format.WIMCOR_JSON:
        with open(raw, encoding="utf-8") as fh:
            yield from _iter_wimcor(fh, dataset)
        return
    text = Path(raw).read_text(encoding="utf-8")
    if fmt is Format.SEMEVAL_XML:
        yield from _convert_semeval(text, dataset)
    elif fmt is Format.RELOCAR_TSV:
        yield from _convert_relocar(text, dataset)
    elif fmt is Format.CONLL_COL:
        yield from _convert_conll(text, dataset)
    else:
        yield from _convert_gwn(text, dataset, associative_as_metonymic)


def convert_dataset(raw: str | Path, fmt: Format | str, dataset: str | None = None,
                    associative_as_metonymic: bool = False) -> list[Sample]:
    """Convert a source distribution file into canonical samples.

    The assumed source schemas are documented on each private converter;
    anything that does not match raises :class:`ConversionError`.
    """
    return list(iter_convert(raw, fmt, dataset, associative_as_metonymic))


# --------------------------------------------------------------------------
# statistics

STATS_HEADER = ("dataset", "n_literal", "n_metonymic", "n_total", "n_unique_pmw", "avg_len")


def compute_stats(samples: Iterable[Sample]) -> DatasetStats:
    n_lit = n_met = words = 0
    keys = set()
    for s in samples:
        if s.label is Label.LITERAL:
            n_lit += 1
        else:
            n_met += 1
        keys.add(s.pmw_key)
        words += len(s.text.split())
    n = n_lit + n_met
    return DatasetStats(n_lit, n_met, n, len(keys), words / n if n else 0.0)


def stats_rows(named: Sequence[tuple[str, DatasetStats]]) -> list[list[str]]:
    return [[name, str(st.n_literal), str(st.n_metonymic), str(st.n_total),
             str(st.n_unique_pmw), f"{st.avg_doc_length_words:.1f}"] for name, st in named]


def stats_csv(named: Sequence[tuple[str, DatasetStats]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STATS_HEADER)
    w.writerows(stats_rows(named))
    return buf.getvalue()


# --------------------------------------------------------------------------
# splits


def _part_sizes(n: int, fractions: Sequence[float]) -> list[int]:
    raw = [n * f for f in fractions]
    sizes = [int(r) for r in raw]
    # hand leftover items to the largest remainders, earliest part first on ties
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def _fixed_split(samples: list[Sample], spec: SplitSpec) -> list[list[Sample]]:
    order = list(range(len(samples)))
    random.Random(spec.seed).shuffle(order)
    out, pos = [], 0
    for size in _part_sizes(len(samples), spec.fractions):
        out.append([samples[i] for i in sorted(order[pos:pos + size])])
        pos += size
    return out


def _lexical_split(samples: list[Sample], spec: SplitSpec) -> list[list[Sample]]:
    counts = Counter(s.pmw_key for s in samples)
    n_parts = len(spec.fractions)
    if len(counts) < n_parts:
        key = counts.most_common(1)[0][0] if counts else None
        raise InfeasibleSplitError(
            f"{len(counts)} distinct PMW key(s) cannot fill {n_parts} parts"
            + (f"; dominated by {key!r}" if key else ""), key)
    keys = sorted(counts)
    random.Random(spec.seed).shuffle(keys)
    # stable sort keeps the seeded order among equally frequent keys
    keys.sort(key=lambda k: -counts[k])
    sizes = [0] * n_parts
    assign: dict[str, int] = {}
    for k in keys:
        part = min(range(n_parts), key=lambda p: (sizes[p] / spec.fractions[p], p))
        assign[k] = part
        sizes[part] += counts[k]
    n = len(samples)
    for p, f in enumerate(spec.fractions):
        if abs(sizes[p] / n - f) > spec.tolerance + 1e-12:
            top = keys[0]
            raise InfeasibleSplitError(
                f"lexical split cannot meet fraction {f:.3f} for part {p} "
                f"(got {sizes[p] / n:.3f}); key {top!r} holds {counts[top]} of {n} samples",
                top)
    parts: list[list[Sample]] = [[] for _ in range(n_parts)]
    for s in samples:
        parts[assign[s.pmw_key]].append(s)
    return parts


def _kfold_parts(samples: list[Sample], spec: SplitSpec) -> list[list[Sample]]:
    order = list(range(len(samples)))
    random.Random(spec.seed).shuffle(order)
    base, extra = divmod(len(samples), spec.k)
    out, pos = [], 0
    for f in range(spec.k):
        size = base + (1 if f < extra else 0)
        out.append([samples[i] for i in sorted(order[pos:pos + size])])
        pos += size
    return out


def split(samples: Sequence[Sample], spec: SplitSpec) -> list[list[Sample]]:
    """Partition samples according to ``spec``; each part keeps input order."""
    samples = list(samples)
    ids = [s.id for s in samples]
    if len(set(ids)) != len(ids):
        raise ValidationError("sample ids must be unique to split")
    if spec.kind is SplitKind.FIXED:
        return _fixed_split(samples, spec)
    if spec.kind is SplitKind.LEXICAL:
        return _lexical_split(samples, spec)
    return _kfold_parts(samples, spec)


def kfold_pairs(folds: Sequence[Sequence[Sample]]) -> Iterator[tuple[list[Sample], list[Sample]]]:
    """Yield (train, test) for each fold held out in turn."""
    for i in range(len(folds)):
        train = [s for j, f in enumerate(folds) if j != i for s in f]
        yield train, list(folds[i])
