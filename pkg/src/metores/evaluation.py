"""Metrics and report emission.

Every report is CSV with a fixed header; the table-shaped ones also have an
aligned plain-text rendering. Published reference numbers are carried as
annotation columns only.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import Label, Sample
from .model import AttentionTrace, ModelConfig, extract_attention
from .tokenizer import build_vocab
from .trainer import Prediction, RunResult, TrainConfig, Variant, run_many


class EvalError(ValueError):
    pass


# Published accuracies (%) as (mean, sd), keyed by (dataset, variant); large-model rows.
PUBLISHED_ACCURACY = {
    ("semeval-loc", "plain"): (84.7, 0.71), ("semeval-loc", "aug"): (85.0, 1.10),
    ("semeval-loc", "mask"): (88.2, 0.61), ("semeval-loc", "ensemble"): (89.1, None),
    ("relocar", "plain"): (91.3, 0.57), ("relocar", "aug"): (91.4, 0.86),
    ("relocar", "mask"): (94.4, 0.31), ("relocar", "ensemble"): (94.8, None),
    ("conll", "plain"): (89.5, 0.84), ("conll", "mask"): (93.9, 0.54),
    ("conll", "ensemble"): (94.6, None),
    ("gwn", "plain"): (88.3, 1.02), ("gwn", "aug"): (86.1, 1.21),
    ("gwn", "mask"): (91.2, 0.40), ("gwn", "ensemble"): (92.0, None),
    ("wimcor", "plain"): (93.7, 0.17), ("wimcor", "mask"): (95.5, 0.13),
    ("wimcor", "ensemble"): (95.9, None),
    ("semeval-org", "plain"): (74.3, 1.12), ("semeval-org", "aug"): (75.1, 0.58),
    ("semeval-org", "mask"): (77.2, 1.15), ("semeval-org", "ensemble"): (79.6, None),
}

# (source, target, variant) -> (mean, sd)
PUBLISHED_TRANSFER = {
    ("semeval-loc", "relocar", "plain"): (65.9, 1.81),
    ("semeval-loc", "relocar", "aug"): (66.8, 2.50),
    ("semeval-loc", "relocar", "mask"): (75.2, 1.05),
    ("relocar", "semeval-loc", "plain"): (71.9, 2.63),
    ("relocar", "semeval-loc", "aug"): (70.0, 1.79),
    ("relocar", "semeval-loc", "mask"): (74.8, 1.29),
    ("conll", "relocar", "plain"): (88.9, 0.69),
    ("conll", "relocar", "aug"): (88.1, 0.66),
    ("conll", "relocar", "mask"): (93.5, 0.40),
    ("conll", "semeval-loc", "plain"): (81.0, 1.16),
    ("conll", "semeval-loc", "aug"): (80.8, 0.79),
    ("conll", "semeval-loc", "mask"): (82.5, 1.69),
    ("wimcor", "relocar", "plain"): (51.6, 1.55),
    ("wimcor", "relocar", "mask"): (64.6, 1.05),
    ("wimcor", "semeval-loc", "plain"): (78.2, 0.56),
    ("wimcor", "semeval-loc", "mask"): (78.4, 0.97),
}
PUBLISHED_TRANSFER_PAIRS = (("semeval-loc", "relocar"), ("relocar", "semeval-loc"),
                            ("conll", "relocar"), ("conll", "semeval-loc"),
                            ("wimcor", "relocar"), ("wimcor", "semeval-loc"))

# geoparsing precision / recall / F (%) of the masked pipeline, 5-fold means
PUBLISHED_GEOPARSING = {"precision": (80.9, 1.58), "recall": (81.3, 1.19), "f1": (81.1, 0.93)}


def _ref_text(ref) -> str:
    if ref is None:
        return ""
    mean, sd = ref
    return f"{mean:.1f}" if sd is None else f"{mean:.1f}±{sd:.2f}"


def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def aligned_table(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    return "".join("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() + "\n"
                   for r in rows)


# --------------------------------------------------------------------------
# accuracy and summaries


def _label_map(items) -> dict[str, int]:
    if isinstance(items, Mapping):
        return {k: int(v) for k, v in items.items()}
    out = {}
    for x in items:
        if x.id in out:
            raise EvalError(f"duplicate id {x.id!r}")
        out[x.id] = int(x.label)
    return out


def accuracy(predictions, gold) -> float:
    """Fraction of ids whose predicted label equals the gold label.

    Both sides may be id->label mappings or sequences of objects with ``id``
    and ``label`` (predictions, samples); the id sets must match.
    """
    p, g = _label_map(predictions), _label_map(gold)
    if p.keys() != g.keys():
        missing = sorted(g.keys() - p.keys())[:3]
        extra = sorted(p.keys() - g.keys())[:3]
        raise EvalError(f"prediction ids do not match gold ids (missing {missing}, extra {extra})")
    if not g:
        raise EvalError("no samples to score")
    return sum(p[k] == v for k, v in g.items()) / len(g)


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float  # population standard deviation
    n: int

    def __str__(self) -> str:
        return f"{100 * self.mean:.1f}±{100 * self.std:.2f}"


def summarize(values: Sequence[float]) -> MetricSummary:
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise EvalError("cannot summarize an empty list")
    if v.size == 1:
        return MetricSummary(float(v[0]), 0.0, 1)
    return MetricSummary(float(v.mean()), float(v.std()), int(v.size))


SUMMARY_HEADER = ("dataset", "variant", "mean_accuracy", "std_population", "n_runs",
                  "reference_percent")


def summary_csv(cells: Mapping[tuple[str, str], MetricSummary]) -> str:
    """Rows of (dataset, variant) accuracy summaries; ``variant`` may be ``ensemble``."""
    rows = [(d, v, repr(s.mean), repr(s.std), s.n, _ref_text(PUBLISHED_ACCURACY.get((d, v))))
            for (d, v), s in cells.items()]
    return _csv(rows, SUMMARY_HEADER)


def summary_text(cells: Mapping[tuple[str, str], MetricSummary]) -> str:
    datasets = list(dict.fromkeys(d for d, _ in cells))
    variants = list(dict.fromkeys(v for _, v in cells))
    rows = [["variant"] + datasets]
    for v in variants:
        row = [v]
        for d in datasets:
            s = cells.get((d, v))
            ref = PUBLISHED_ACCURACY.get((d, v))
            row.append("---" if s is None else str(s) + (f" [ref {_ref_text(ref)}]" if ref else ""))
        rows.append(row)
    return ("accuracy % (mean±population std over runs)\n" + aligned_table(rows))


# --------------------------------------------------------------------------
# toponym P/R/F


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f, tp, fp, fn)


Span = tuple[str, int, int]


def check_spans(spans: Iterable[Span], what: str = "gold") -> set[Span]:
    """Validate (doc, start, end) spans; overlapping spans within a document are rejected."""
    out = set()
    by_doc: dict[str, list[tuple[int, int]]] = {}
    for doc, a, b in spans:
        if not 0 <= a < b:
            raise EvalError(f"{what} span ({a},{b}) in {doc!r} is not a valid range")
        out.add((doc, int(a), int(b)))
    for doc, a, b in out:
        by_doc.setdefault(doc, []).append((a, b))
    for doc, rng in by_doc.items():
        rng.sort()
        for (a0, b0), (a1, b1) in zip(rng, rng[1:]):
            if a1 < b0:
                raise EvalError(f"overlapping {what} spans ({a0},{b0}) and ({a1},{b1}) in {doc!r}")
    return out


def prf_toponyms(predicted: Iterable[Span], gold: Iterable[Span]) -> PRF:
    """Exact-match precision/recall/F1 of literal toponym spans."""
    g = check_spans(gold, "gold")
    p = {(d, int(a), int(b)) for d, a, b in predicted}
    tp = len(p & g)
    return PRF.from_counts(tp, len(p) - tp, len(g) - tp)


@dataclass(frozen=True)
class FoldPRF:
    precision: MetricSummary
    recall: MetricSummary
    f1: MetricSummary
    pooled: PRF
    folds: tuple[PRF, ...]


def prf_over_folds(folds: Sequence[tuple[Iterable[Span], Iterable[Span]]]) -> FoldPRF:
    """Per-fold scores summarised as mean±std, plus P/R/F of the pooled counts."""
    if not folds:
        raise EvalError("no folds")
    per = tuple(prf_toponyms(p, g) for p, g in folds)
    pooled = PRF.from_counts(sum(x.tp for x in per), sum(x.fp for x in per), sum(x.fn for x in per))
    return FoldPRF(summarize([x.precision for x in per]), summarize([x.recall for x in per]),
                   summarize([x.f1 for x in per]), pooled, per)


PRF_HEADER = ("scope", "precision", "recall", "f1", "tp", "fp", "fn")


def prf_csv(result: FoldPRF) -> str:
    rows = [(f"fold{k + 1}", repr(x.precision), repr(x.recall), repr(x.f1), x.tp, x.fp, x.fn)
            for k, x in enumerate(result.folds)]
    rows.append(("mean", repr(result.precision.mean), repr(result.recall.mean),
                 repr(result.f1.mean), "", "", ""))
    rows.append(("std_population", repr(result.precision.std), repr(result.recall.std),
                 repr(result.f1.std), "", "", ""))
    q = result.pooled
    rows.append(("pooled", repr(q.precision), repr(q.recall), repr(q.f1), q.tp, q.fp, q.fn))
    return _csv(rows, PRF_HEADER)


def prf_text(result: FoldPRF) -> str:
    rows = [["", "precision", "recall", "f1"],
            ["mean±std"] + [str(s) for s in (result.precision, result.recall, result.f1)],
            ["pooled"] + [f"{100 * x:.1f}" for x in (result.pooled.precision, result.pooled.recall,
                                                     result.pooled.f1)],
            ["reference"] + [_ref_text(PUBLISHED_GEOPARSING[k]) for k in ("precision", "recall", "f1")]]
    return f"geoparsing over {len(result.folds)} fold(s), exact span match\n" + aligned_table(rows)


# --------------------------------------------------------------------------
# cross-domain transfer


@dataclass
class Domain:
    """A dataset with its own train/dev/test partition."""

    name: str
    train: list[Sample]
    dev: list[Sample]
    test: list[Sample]


@dataclass
class CrossDomainResult:
    # (source, target, variant) -> summary, or the exception that stopped the cell
    cells: dict[tuple[str, str, str], MetricSummary | Exception] = field(default_factory=dict)
    runs: dict[tuple[str, str, str], list[RunResult]] = field(default_factory=dict)

    def pairs(self) -> list[tuple[str, str]]:
        return list(dict.fromkeys((s, t) for s, t, _ in self.cells))

    def variants(self) -> list[str]:
        return list(dict.fromkeys(v for _, _, v in self.cells))


def evaluate_domain(source: Domain, test: Sequence[Sample], config: TrainConfig,
                    seeds: Sequence[int], vocab_size: int = 2000,
                    model_factory: Callable[[int], ModelConfig] | None = None,
                    workers: int = 1) -> list[RunResult]:
    """Train one model per seed on ``source`` and predict ``test``.

    The vocabulary is induced from the source training set only, so an
    in-domain evaluation is the special case ``test = source.test``.
    """
    vocab = build_vocab(source.train, vocab_size)
    mcfg = model_factory(len(vocab)) if model_factory else ModelConfig(vocab_size=len(vocab))
    return run_many(config, source.train, source.dev, vocab, mcfg, seeds=seeds,
                    test_samples=list(test), workers=workers)


def cross_domain(domains: Mapping[str, Domain], pairs: Sequence[tuple[str, str]],
                 variants: Sequence[Variant | str], config: TrainConfig, seeds: Sequence[int],
                 vocab_size: int = 2000,
                 model_factory: Callable[[int], ModelConfig] | None = None,
                 workers: int = 1) -> CrossDomainResult:
    """Accuracy summary for every (source -> target, variant) cell.

    A failing cell records its exception and the remaining cells still run.
    """
    out = CrossDomainResult()
    for src, tgt in pairs:
        for variant in variants:
            v = Variant.parse(variant) if isinstance(variant, str) else variant
            key = (src, tgt, v.value)
            try:
                if src not in domains or tgt not in domains:
                    raise EvalError(f"unknown domain in pair {src}->{tgt}")
                cfg = replace(config, variant=v)
                runs = evaluate_domain(domains[src], domains[tgt].test, cfg, seeds, vocab_size,
                                       model_factory, workers)
                out.runs[key] = runs
                out.cells[key] = summarize([r.accuracy for r in runs])
            except Exception as e:  # one bad cell must not abort the matrix
                out.cells[key] = e
    return out


CROSS_HEADER = ("source", "target", "variant", "mean_accuracy", "std_population", "n_runs",
                "reference_percent", "error")


def cross_domain_csv(result: CrossDomainResult) -> str:
    rows = []
    for (s, t, v), cell in result.cells.items():
        ref = _ref_text(PUBLISHED_TRANSFER.get((s, t, v)))
        if isinstance(cell, Exception):
            rows.append((s, t, v, "", "", 0, ref, f"{type(cell).__name__}: {cell}"))
        else:
            rows.append((s, t, v, repr(cell.mean), repr(cell.std), cell.n, ref, ""))
    return _csv(rows, CROSS_HEADER)


def cross_domain_text(result: CrossDomainResult) -> str:
    variants = result.variants()
    rows = [["source -> target"] + variants]
    for s, t in result.pairs():
        row = [f"{s} -> {t}"]
        for v in variants:
            cell = result.cells.get((s, t, v))
            ref = PUBLISHED_TRANSFER.get((s, t, v))
            if cell is None:
                row.append("---")
            elif isinstance(cell, Exception):
                row.append("error")
            else:
                row.append(str(cell) + (f" [ref {_ref_text(ref)}]" if ref else ""))
        rows.append(row)
    return "cross-domain accuracy % (mean±population std over runs)\n" + aligned_table(rows)


# --------------------------------------------------------------------------
# attention analysis


@dataclass(frozen=True)
class LayerGroup:
    first: int  # 1-based, inclusive
    last: int
    values: np.ndarray

    @property
    def name(self) -> str:
        return str(self.first) if self.first == self.last else f"{self.first}-{self.last}"

    def quartiles(self) -> tuple[float, float, float, float, float]:
        q = np.quantile(self.values, [0.0, 0.25, 0.5, 0.75, 1.0])
        return tuple(float(x) for x in q)

    @property
    def median(self) -> float:
        return float(np.median(self.values))


def attention_report(traces: Sequence[AttentionTrace], merge_below: int = 1) -> list[LayerGroup]:
    """Distribution of head-averaged target attention per layer.

    Layers numbered (1-based) below ``merge_below`` are pooled into one
    group; ``merge_below <= 1`` keeps every layer separate.
    """
    if not traces:
        raise EvalError("no attention traces")
    counts = {t.n_layers for t in traces}
    if len(counts) != 1:
        raise EvalError(f"traces come from models with different layer counts {sorted(counts)}")
    L = counts.pop()
    if merge_below > L + 1:
        raise EvalError(f"merge_below={merge_below} exceeds the {L} layers")
    per = np.stack([extract_attention(t) for t in traces])  # (n, L)
    groups = []
    cut = max(merge_below - 1, 0)
    if cut >= 1:
        groups.append(LayerGroup(1, cut, per[:, :cut].ravel()))
    for l in range(cut, L):
        groups.append(LayerGroup(l + 1, l + 1, per[:, l].copy()))
    return groups


ATTENTION_HEADER = ("layers", "first_layer", "last_layer", "n", "min", "q1", "median", "q3",
                    "max", "mean")


def attention_csv(groups: Sequence[LayerGroup]) -> str:
    rows = [(g.name, g.first, g.last, len(g.values), *(repr(x) for x in g.quartiles()),
             repr(float(g.values.mean()))) for g in groups]
    return _csv(rows, ATTENTION_HEADER)


# --------------------------------------------------------------------------
# training curves


@dataclass(frozen=True)
class CurveSummary:
    step: np.ndarray
    epoch: np.ndarray
    mean: np.ndarray
    variance: np.ndarray  # population variance across runs
    n_runs: int


def curve_summary(results: Sequence[RunResult]) -> CurveSummary:
    if not results:
        raise EvalError("no runs")
    grid = [c.step for c in results[0].curve]
    for r in results[1:]:
        if [c.step for c in r.curve] != grid:
            raise EvalError(f"run with seed {r.seed} has a different step grid")
    acc = np.array([[c.dev_accuracy for c in r.curve] for r in results], dtype=np.float64)
    acc = acc.reshape(len(results), len(grid))
    return CurveSummary(np.array(grid, dtype=np.int64),
                        np.array([c.epoch for c in results[0].curve], dtype=np.float64),
                        acc.mean(axis=0), acc.var(axis=0), len(results))


CURVE_HEADER = ("step", "epoch", "mean_dev_accuracy", "variance_dev_accuracy", "n_runs")


def export_curves(results: Sequence[RunResult]) -> str:
    """Mean and population variance of dev accuracy at every recorded step."""
    s = curve_summary(results)
    rows = [(int(st), repr(float(ep)), repr(float(m)), repr(float(v)), s.n_runs)
            for st, ep, m, v in zip(s.step, s.epoch, s.mean, s.variance)]
    return _csv(rows, CURVE_HEADER)


# --------------------------------------------------------------------------
# error export


ERROR_HEADER = ("id", "dataset", "target", "gold", "predicted", "score_literal",
                "score_metonymic", "text")


def export_errors(predictions: Sequence[Prediction], samples: Sequence[Sample]) -> str:
    """Misclassified samples with their context, for manual error analysis."""
    by_id = {s.id: s for s in samples}
    missing = [p.id for p in predictions if p.id not in by_id]
    if missing:
        raise EvalError(f"predictions for unknown ids {missing[:3]}")
    rows = []
    for p in predictions:
        s = by_id[p.id]
        if p.label != s.label:
            rows.append((s.id, s.dataset, s.target, str(Label(s.label)), str(p.label),
                         *(repr(x) for x in p.scores), s.text))
    return _csv(rows, ERROR_HEADER)
