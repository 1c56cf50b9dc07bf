"""Template-generated corpora with known structure.

Literal and metonymic context templates make the label a function of the
context; neutral templates carry no label signal, so any label they get
must come from the target word itself. Mixing the three controls how much
a model can gain by memorising target words.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus import Label, Sample

PLACES = (
    "Vancouver", "Germany", "Paris", "Brazil", "Kenya", "Norway", "Chile", "Madrid",
    "Toronto", "Egypt", "Vienna", "Peru", "Oslo", "Lagos", "Jordan", "Quebec",
    "Hungary", "Lisbon", "Nepal", "Dublin", "Ghana", "Poland", "Cairo", "Sydney",
    "Austria", "Denmark", "Mexico", "Tokyo", "Berlin", "Morocco", "Finland", "Delhi",
    "Athens", "Belgium", "Canada", "Prague", "Zambia", "Geneva", "Iceland", "Boston",
    "New York", "Hong Kong", "South Africa", "Costa Rica", "New Zealand", "Sri Lanka",
    "Buenos Aires", "Saudi Arabia", "El Salvador", "Rio de Janeiro", "Cape Town",
    "Western Australia", "Kuala Lumpur", "San Marino", "Abu Dhabi", "Tel Aviv",
    "Malaysia", "Britain", "Vietnam", "Italy",
)

LITERAL_TEMPLATES = (
    "We drove through {T} last summer .",
    "The river flows north of {T} .",
    "She was born in {T} in 1970 .",
    "{T} lies on the coast near the mountains .",
    "The hotel in {T} was cheap and quiet .",
    "Snow fell across {T} overnight .",
    "They moved to {T} after the war .",
    "{T} has a mild climate all year .",
    "The train to {T} leaves at noon .",
    "I spent three weeks hiking around {T} .",
    "Heavy rain flooded the streets of {T} .",
    "The flight landed in {T} before dawn .",
)

METONYMIC_TEMPLATES = (
    "{T} won the match on Sunday .",
    "{T} signed the trade agreement .",
    "{T} announced new sanctions against its rivals .",
    "Fans cheered as {T} scored twice .",
    "{T} voted against the proposal .",
    "{T} condemned the attack in a statement .",
    "{T} beat the visitors by two goals .",
    "{T} refused to comment on the talks .",
    "{T} demanded an apology from the minister .",
    "{T} lost in the semi-final .",
    "{T} imposed a ban on imports .",
    "{T} welcomes you to the festival .",
)

NEUTRAL_TEMPLATES = (
    "{T} was mentioned in the report .",
    "We talked about {T} yesterday .",
    "The article on {T} was long .",
    "Everyone has heard of {T} .",
    "The letter said something about {T} .",
    "My notes on {T} are missing .",
)

PREFIXES = ("", "", "", "Yesterday , ", "In 1998 , ", "According to the report , ",
            "As expected , ", "Last year , ")


def fill(template: str, target: str, prefix: str = "") -> tuple[str, int, int]:
    """Render a template; returns (text, target_start, target_end)."""
    head, tail = template.split("{T}")
    if prefix and not head:
        text_head = prefix
    elif prefix:
        text_head = prefix + head[0].lower() + head[1:]
    else:
        text_head = head
    start = len(text_head)
    return text_head + target + tail, start, start + len(target)


def make_sample(sid: str, template: str, target: str, label: Label, dataset: str,
                prefix: str = "") -> Sample:
    text, a, b = fill(template, target, prefix)
    return Sample(sid, text, a, b, label, dataset=dataset)


def _pick(rng: np.random.Generator, items: Sequence):
    return items[int(rng.integers(len(items)))]


def template_corpus(n: int, seed: int = 0, targets: Sequence[str] = PLACES,
                    dataset: str = "templates") -> list[Sample]:
    """Balanced corpus where the context alone decides the label."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n):
        label = Label(k % 2)
        tpl = _pick(rng, LITERAL_TEMPLATES if label is Label.LITERAL else METONYMIC_TEMPLATES)
        out.append(make_sample(f"{dataset}-{k}", tpl, _pick(rng, targets), label, dataset,
                               _pick(rng, PREFIXES)))
    return out


@dataclass
class SplitCorpus:
    train: list[Sample]
    dev: list[Sample]
    test: list[Sample]


def lexical_bias_corpus(seed: int = 0, n_train: int = 400, n_test: int = 200,
                        neutral_share: float = 0.5, dataset: str = "bias") -> SplitCorpus:
    """Target identity predicts the label perfectly in training and inversely in test.

    Half of the targets only ever appear as literal in training and the
    other half only as metonymic; ``neutral_share`` of training sentences
    use neutral contexts, so their labels are recoverable only from the
    target. Dev and test sentences use clear contexts with the opposite
    target-label pairing.
    """
    rng = np.random.default_rng(seed)
    names = list(PLACES)
    rng.shuffle(names)
    half = len(names) // 2
    lit_targets, met_targets = names[:half], names[half:]

    def draw(k: int, label: Label, flipped: bool, neutral_ok: bool, prefix_id: str) -> Sample:
        own = lit_targets if label is Label.LITERAL else met_targets
        other = met_targets if label is Label.LITERAL else lit_targets
        target = _pick(rng, other if flipped else own)
        if neutral_ok and rng.random() < neutral_share:
            tpl = _pick(rng, NEUTRAL_TEMPLATES)
        else:
            tpl = _pick(rng, LITERAL_TEMPLATES if label is Label.LITERAL else METONYMIC_TEMPLATES)
        return make_sample(f"{dataset}-{prefix_id}{k}", tpl, target, label, dataset,
                           _pick(rng, PREFIXES))

    train = [draw(k, Label(k % 2), False, True, "tr") for k in range(n_train)]
    dev = [draw(k, Label(k % 2), True, False, "dv") for k in range(n_test // 2)]
    test = [draw(k, Label(k % 2), True, False, "te") for k in range(n_test)]
    return SplitCorpus(train, dev, test)


def relocar_like(seed: int = 0, n_train: int = 320, n_dev: int = 120, n_test: int = 200,
                 bias: float = 0.85, neutral_share: float = 0.3, eval_neutral_share: float = 0.0,
                 dataset: str = "relocar-like") -> SplitCorpus:
    """Balanced location corpus whose training targets are lexically biased.

    Every target has a preferred label, taken with probability ``bias`` in
    training. Dev and test reuse the same targets (as in a standard random
    split) but draw labels independently of the preference, so a model
    that memorised target words is misled on about half of them.
    """
    rng = np.random.default_rng(seed)
    names = list(PLACES)
    pref = {t: Label(int(rng.integers(2))) for t in names}

    def one(k: int, biased: bool, neutral: float, tag: str) -> Sample:
        target = _pick(rng, names)
        if biased:
            label = pref[target] if rng.random() < bias else Label(1 - pref[target])
        else:
            label = Label(int(rng.integers(2)))
        if rng.random() < neutral:
            tpl = _pick(rng, NEUTRAL_TEMPLATES)
        else:
            tpl = _pick(rng, LITERAL_TEMPLATES if label is Label.LITERAL else METONYMIC_TEMPLATES)
        return make_sample(f"{dataset}-{tag}{k}", tpl, target, label, dataset, _pick(rng, PREFIXES))

    train = [one(k, True, neutral_share, "tr") for k in range(n_train)]
    dev = [one(k, False, eval_neutral_share, "dv") for k in range(n_dev)]
    test = [one(k, False, eval_neutral_share, "te") for k in range(n_test)]
    return SplitCorpus(train, dev, test)


def flip_labels(samples: Sequence[Sample], dataset: str | None = None) -> list[Sample]:
    """Twin corpus with every label inverted (a domain with the opposite convention)."""
    return [replace(s, label=Label(1 - s.label), dataset=dataset or s.dataset) for s in samples]


def swap_target_pairs(n: int, seed: int = 0) -> list[tuple[Sample, Sample]]:
    """Pairs of samples identical except for the target surface form."""
    rng = np.random.default_rng(seed)
    templates = LITERAL_TEMPLATES + METONYMIC_TEMPLATES + NEUTRAL_TEMPLATES
    out = []
    for k in range(n):
        tpl = _pick(rng, templates)
        prefix = _pick(rng, PREFIXES)
        a, b = rng.choice(len(PLACES), size=2, replace=False)
        label = Label(int(rng.integers(2)))
        out.append((make_sample(f"pair{k}a", tpl, PLACES[a], label, "pairs", prefix),
                    make_sample(f"pair{k}b", tpl, PLACES[b], label, "pairs", prefix)))
    return out


@dataclass
class GeoDoc:
    id: str
    text: str
    # (start, end, is_literal) for every place mention
    mentions: list[tuple[int, int, bool]]

    @property
    def gold_literal(self) -> list[tuple[str, int, int]]:
        return [(self.id, a, b) for a, b, lit in self.mentions if lit]


def geo_documents(n_docs: int, seed: int = 0, sentences: tuple[int, int] = (2, 4),
                  targets: Sequence[str] = PLACES) -> list[GeoDoc]:
    """Documents of templated sentences, one place mention per sentence
    (neutral templates are not used, so every mention has a gold reading)."""
    rng = np.random.default_rng(seed)
    docs = []
    for d in range(n_docs):
        parts, mentions, pos = [], [], 0
        for _ in range(int(rng.integers(sentences[0], sentences[1] + 1))):
            literal = bool(rng.integers(2))
            tpl = _pick(rng, LITERAL_TEMPLATES if literal else METONYMIC_TEMPLATES)
            text, a, b = fill(tpl, _pick(rng, targets), _pick(rng, PREFIXES))
            if parts:
                pos += 1
            mentions.append((pos + a, pos + b, literal))
            parts.append(text)
            pos += len(text)
        docs.append(GeoDoc(f"doc{d}", " ".join(parts), mentions))
    return docs


def geo_training_samples(docs: Sequence[GeoDoc], dataset: str = "geo") -> list[Sample]:
    """One sample per mention, with its own sentence as context."""
    from .pipeline import segment_sentences

    out = []
    for doc in docs:
        sents = segment_sentences(doc.text)
        for k, (a, b, lit) in enumerate(doc.mentions):
            s0, s1 = next((s, e) for s, e in sents if s <= a and b <= e)
            out.append(Sample(f"{doc.id}-{k}", doc.text[s0:s1], a - s0, b - s0,
                              Label.LITERAL if lit else Label.METONYMIC, dataset=dataset))
    return out
