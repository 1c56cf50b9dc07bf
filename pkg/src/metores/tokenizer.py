"""Subword vocabulary induction and span-aligned tokenization.

Text is case-folded, split into words on whitespace and punctuation, and
each word is segmented greedily (longest match first) into pieces of a
vocabulary induced by frequency-ordered pair merging. Non-initial pieces
carry a ``##`` prefix. The standalone uppercase word ``X`` is the mask
token and never enters the subword machinery.
"""
from __future__ import annotations

import hashlib
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import MASK_STRING, Sample

PAD, UNK, CLS, SEP, MASKWORD = "[PAD]", "[UNK]", "[CLS]", "[SEP]", MASK_STRING
RESERVED = (PAD, UNK, CLS, SEP, MASKWORD)
CONT = "##"


class TokenizerError(Exception):
    pass


class AlignmentError(TokenizerError):
    pass


def fold(text: str) -> str:
    """Lower-case ``text`` one character at a time so offsets are preserved."""
    out = []
    for c in text:
        low = c.lower()
        out.append(low if len(low) == 1 else c)
    return "".join(out)


def _is_punct(c: str) -> bool:
    return unicodedata.category(c).startswith(("P", "S"))


def pre_tokenize(text: str) -> list[tuple[int, int]]:
    """Character ranges of words: runs of non-space, non-punctuation chars,
    with every punctuation or symbol character standing alone."""
    spans = []
    start = None
    for k, c in enumerate(text):
        if c.isspace() or _is_punct(c):
            if start is not None:
                spans.append((start, k))
                start = None
            if not c.isspace():
                spans.append((k, k + 1))
        elif start is None:
            start = k
    if start is not None:
        spans.append((start, len(text)))
    return spans


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self):
        if self.tokens[: len(RESERVED)] != RESERVED:
            raise TokenizerError("vocabulary must start with the reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise TokenizerError("duplicate vocabulary entries")
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        object.__setattr__(self, "_cache", {})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, tok: str) -> bool:
        return tok in self._index

    def id(self, tok: str) -> int:
        return self._index.get(tok, self.unk_id)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def cls_id(self) -> int:
        return 2

    @property
    def sep_id(self) -> int:
        return 3

    @property
    def mask_id(self) -> int:
        return 4

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()[:16]

    def segment(self, word: str, continuation: bool = False) -> list[tuple[str, int, int]]:
        """Greedy longest-match pieces of a folded word as (piece, start, end).

        A word that cannot be covered becomes a single unknown piece.
        """
        key = (word, continuation)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        pieces = []
        pos = 0
        while pos < len(word):
            end = len(word)
            found = None
            while end > pos:
                piece = word[pos:end]
                if pos > 0 or continuation:
                    piece = CONT + piece
                if piece in self._index:
                    found = piece
                    break
                end -= 1
            if found is None:
                pieces = [(UNK, 0, len(word))]
                break
            pieces.append((found, pos, end))
            pos = end
        if len(self._cache) < 200_000:
            self._cache[key] = pieces
        return pieces

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(tuple(lines))


def _word_counts(texts: Iterable[str]) -> Counter:
    counts: Counter = Counter()
    for text in texts:
        for a, b in pre_tokenize(text):
            if text[a:b] == MASK_STRING:
                continue
            counts[fold(text[a:b])] += 1
    return counts


def build_vocab(samples: Iterable[Sample] | Iterable[str], size: int) -> Vocab:
    """Induce a subword vocabulary of at most ``size`` entries.

    Starts from every character seen (word-initial and continuation forms)
    and repeatedly merges the most frequent adjacent pair, ties broken by
    the lexicographically smallest pair, until ``size`` is reached or no
    pair is left.
    """
    if size <= len(RESERVED):
        raise TokenizerError(f"vocabulary size must exceed {len(RESERVED)} reserved tokens")
    texts = (s.text if isinstance(s, Sample) else s for s in samples)
    counts = _word_counts(texts)
    words = {w: [w[0]] + [CONT + c for c in w[1:]] for w in counts}
    alphabet = sorted({p for segs in words.values() for p in segs})
    tokens = list(RESERVED) + [t for t in alphabet if t not in RESERVED]
    known = set(tokens)
    if len(tokens) > size:
        # keep the most frequent characters when the budget cannot cover the alphabet
        freq = Counter()
        for w, segs in words.items():
            for p in segs:
                freq[p] += counts[w]
        keep = sorted(alphabet, key=lambda p: (-freq[p], p))[: size - len(RESERVED)]
        return Vocab(tuple(list(RESERVED) + sorted(keep)))

    pairs: Counter = Counter()
    for w, segs in words.items():
        c = counts[w]
        for a, b in zip(segs, segs[1:]):
            pairs[(a, b)] += c

    while len(tokens) < size and pairs:
        best = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        a, b = best
        merged = a + b[len(CONT):]
        for w, segs in words.items():
            if len(segs) < 2:
                continue
            k = 0
            while k < len(segs) - 1:
                if segs[k] == a and segs[k + 1] == b:
                    c = counts[w]
                    if k > 0:
                        pairs[(segs[k - 1], a)] -= c
                        pairs[(segs[k - 1], merged)] += c
                    if k + 2 < len(segs):
                        pairs[(b, segs[k + 2])] -= c
                        pairs[(merged, segs[k + 2])] += c
                    pairs[best] -= c
                    segs[k:k + 2] = [merged]
                k += 1
        pairs.pop(best, None)
        for p in [p for p, c in pairs.items() if c <= 0]:
            del pairs[p]
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
    return Vocab(tuple(tokens))


@dataclass(frozen=True)
class TokenizedInput:
    """Framed token ids with the target's inclusive token span.

    ``alignment[k]`` is the source character range of token ``k``; the
    framing tokens get empty ranges at the text boundaries.
    """

    ids: tuple[int, ...]
    target_tok_start: int
    target_tok_end: int
    alignment: tuple[tuple[int, int], ...]

    @property
    def d(self) -> int:
        return self.target_tok_end - self.target_tok_start + 1

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(text: str, vocab: Vocab) -> list[tuple[int, int, int]]:
    """Unframed (id, start, end) triples for ``text``."""
    out = []
    for a, b in pre_tokenize(text):
        word = text[a:b]
        if word == MASK_STRING:
            out.append((vocab.mask_id, a, b))
            continue
        for piece, ps, pe in vocab.segment(fold(word)):
            out.append((vocab.id(piece), a + ps, a + pe))
    return out


def tokenize_align(text: str, span: tuple[int, int], vocab: Vocab) -> TokenizedInput:
    start, end = span
    if not (0 <= start < end <= len(text)):
        raise AlignmentError(f"span {span} outside text of length {len(text)}")
    toks = tokenize(text, vocab)
    first = last = None
    for k, (_, a, b) in enumerate(toks):
        overlaps = a < end and b > start
        if not overlaps:
            continue
        if a < start or b > end:
            raise AlignmentError(
                f"span {span} cuts through token covering ({a},{b}) of {text!r}")
        if first is None:
            first = k
        last = k
    if first is None:
        raise AlignmentError(f"span {span} covers no token of {text!r}")
    ids = (vocab.cls_id,) + tuple(t[0] for t in toks) + (vocab.sep_id,)
    n = len(text)
    alignment = ((0, 0),) + tuple((a, b) for _, a, b in toks) + ((n, n),)
    return TokenizedInput(ids, first + 1, last + 1, alignment)


def encode_sample(sample: Sample, vocab: Vocab, max_len: int | None = None) -> TokenizedInput:
    inp = tokenize_align(sample.text, (sample.target_start, sample.target_end), vocab)
    if max_len is not None:
        inp = truncate_around_span(inp, max_len)
    return inp


def decode(ids: Sequence[int], vocab: Vocab) -> str:
    words: list[str] = []
    for i in ids:
        tok = vocab.tokens[i]
        if tok.startswith(CONT) and words:
            words[-1] += tok[len(CONT):]
        else:
            words.append(tok)
    return " ".join(words)


def truncate_around_span(inp: TokenizedInput, max_len: int) -> TokenizedInput:
    """Cut context so the framed input fits ``max_len`` tokens.

    The target is always kept whole. Remaining budget is split evenly
    around it with the odd token going to the left; budget a side cannot
    use spills over to the other side.
    """
    if inp.d + 2 > max_len:
        raise TokenizerError(f"target of {inp.d} tokens does not fit max_len={max_len}")
    if len(inp.ids) <= max_len:
        return inp
    body = inp.ids[1:-1]
    align = inp.alignment[1:-1]
    i, j = inp.target_tok_start - 1, inp.target_tok_end - 1
    spare = (max_len - 2) - inp.d
    avail_left, avail_right = i, len(body) - 1 - j
    left = min(avail_left, (spare + 1) // 2)
    right = min(avail_right, spare - left)
    left = min(avail_left, spare - right)
    lo, hi = i - left, j + right + 1
    ids = (inp.ids[0],) + tuple(body[lo:hi]) + (inp.ids[-1],)
    alignment = ((align[lo][0], align[lo][0]),) + tuple(align[lo:hi]) \
        + ((align[hi - 1][1], align[hi - 1][1]),)
    return TokenizedInput(ids, i - lo + 1, j - lo + 1, alignment)
