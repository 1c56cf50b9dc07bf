"""Command-line entry point.

Experiments are described by flat ``key=value`` manifests; relative paths in a
manifest are resolved against the manifest's own directory. Primary outputs
are deterministic for a given manifest; timestamps only go to ``run.log``.

Exit codes: 0 success, 2 invalid input (manifest, data, config, vocabulary),
3 runtime failure (including any failed training seed).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

from . import __version__
from .corpus import (
    CorpusError,
    Format,
    SplitKind,
    SplitSpec,
    compute_stats,
    convert_dataset,
    load_canonical,
    split,
    stats_csv,
    stats_rows,
    STATS_HEADER,
    write_canonical,
)
from .evaluation import (
    Domain,
    aligned_table,
    EvalError,
    accuracy,
    attention_csv,
    attention_report,
    cross_domain,
    cross_domain_csv,
    cross_domain_text,
    export_curves,
    export_errors,
    prf_csv,
    prf_over_folds,
    prf_text,
    summarize,
    summary_csv,
    summary_text,
)
from .model import (
    CheckpointError,
    ModelConfig,
    load_checkpoint,
    make_batch,
    forward_batch,
    save_checkpoint,
    traces_from,
)
from .model.classifier import DEFAULT_ENCODER
from .pipeline import (
    GazetteerDetector,
    PipelineError,
    detect,
    classify_spans,
    literal_locations,
    load_documents,
    mentions_jsonl,
)
from .tokenizer import TokenizerError, Vocab, build_vocab
from .trainer import (
    ConfigError,
    RunError,
    RunResult,
    TrainConfig,
    Variant,
    encode_all,
    predict,
    predictions_csv,
    run_many,
    vote,
    write_run,
)
from .transforms import mask_all
from . import synthetic

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
OUT_ENV = "METORES_OUT"

log = logging.getLogger("metores")


class ManifestError(ValueError):
    pass


class VocabMismatch(ValueError):
    pass


INVALID_INPUT = (ManifestError, VocabMismatch, ConfigError, CorpusError, EvalError,
                 CheckpointError, PipelineError, TokenizerError, FileNotFoundError,
                 NotADirectoryError, IsADirectoryError)


# --------------------------------------------------------------------------
# manifests

_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"vocab_size", "dropout", "n_classes"}
_TRAIN_KEYS = {"lr", "batch_size", "epochs", "max_len", "dropout", "variant", "aug_copies",
               "eval_every", "select_best"}
_OTHER_KEYS = {"name", "dataset", "train", "dev", "test", "data", "format", "split",
               "fractions", "split_seed", "synthetic", "synthetic_seed", "vocab_size", "seeds",
               "n_runs", "out", "workers", "domains", "pairs", "variants", "docs", "gazetteer",
               "checkpoint", "vocab", "folds", "samples", "merge_below", "ensemble",
               "require_capital", "associative_as_metonymic"}
KNOWN_KEYS = _MODEL_KEYS | _TRAIN_KEYS | _OTHER_KEYS


@dataclass
class Manifest:
    """Parsed ``key=value`` lines plus the directory relative paths hang off."""

    values: dict[str, str] = field(default_factory=dict)
    base: Path = Path(".")
    source: str = "<flags>"

    @classmethod
    def read(cls, path: str | Path) -> "Manifest":
        p = Path(path)
        if not p.is_file():
            raise ManifestError(f"manifest {p} does not exist")
        values: dict[str, str] = {}
        for n, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key:
                raise ManifestError(f"{p}:{n}: expected key=value")
            if key not in KNOWN_KEYS:
                raise ManifestError(f"{p}:{n}: unknown key {key!r}")
            if key in values:
                raise ManifestError(f"{p}:{n}: duplicate key {key!r}")
            values[key] = value
        return cls(values, p.parent, str(p))

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def path(self, key: str, must_exist: bool = True) -> Path | None:
        if key not in self.values:
            return None
        p = Path(self.values[key])
        p = p if p.is_absolute() else self.base / p
        if must_exist and not p.exists():
            raise ManifestError(f"{self.source}: {key}={self.values[key]} does not exist")
        return p

    def num(self, key: str, kind, default):
        if key not in self.values:
            return default
        try:
            return kind(self.values[key])
        except ValueError:
            raise ManifestError(f"{self.source}: {key}={self.values[key]!r} is not a valid "
                                f"{kind.__name__}") from None

    def flag(self, key: str, default: bool) -> bool:
        if key not in self.values:
            return default
        v = self.values[key].lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ManifestError(f"{self.source}: {key} must be a boolean, got {v!r}")


def parse_seeds(text: str) -> list[int]:
    """``"1,2,5"`` or ranges such as ``"1-10"``."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if "-" in part[1:]:
                a, b = part.split("-", 1) if not part.startswith("-") else part[1:].split("-", 1)
                seeds.extend(range(int(a), int(b) + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ManifestError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ManifestError("empty seed list")
    if len(set(seeds)) != len(seeds):
        raise ManifestError(f"duplicate seeds in {text!r}")
    return seeds


@dataclass
class ExperimentManifest:
    name: str
    domain_name: str
    manifest: Manifest
    model: dict
    train: TrainConfig
    vocab_size: int
    seeds: list[int]
    workers: int

    @classmethod
    def from_manifest(cls, m: Manifest, seeds: str | None = None,
                      variant: str | None = None) -> "ExperimentManifest":
        model = {k: m.num(k, int, None) for k in _MODEL_KEYS if k in m.values}
        tkw = {}
        for k, kind in (("lr", float), ("batch_size", int), ("epochs", int), ("max_len", int),
                        ("dropout", float), ("aug_copies", int), ("eval_every", int)):
            if k in m.values:
                tkw[k] = m.num(k, kind, None)
        if "select_best" in m.values:
            tkw["select_best"] = m.flag("select_best", True)
        v = variant or m.get("variant", "plain")
        tkw["variant"] = Variant.parse(v)
        tcfg = TrainConfig(**tkw)
        if seeds:
            seed_list = parse_seeds(seeds)
        elif "seeds" in m.values:
            seed_list = parse_seeds(m.values["seeds"])
        else:
            seed_list = list(range(1, m.num("n_runs", int, 10) + 1))
        name = m.get("name") or (Path(m.source).stem if m.source != "<flags>" else "experiment")
        exp = cls(name, m.get("dataset", name), m, model, tcfg, m.num("vocab_size", int, 2000),
                  seed_list, m.num("workers", int, 1))
        exp.validate()
        return exp

    def validate(self) -> None:
        m = self.manifest
        routes = [k for k in ("train", "data", "synthetic") if k in m.values]
        if len(routes) != 1:
            raise ManifestError(f"{m.source}: give exactly one of train/dev/test, data, synthetic")
        if "train" in m.values:
            for k in ("train", "dev", "test"):
                if k not in m.values:
                    raise ManifestError(f"{m.source}: {k} is required alongside train")
                m.path(k)
        if "data" in m.values:
            m.path("data")
            fmt = m.get("format", "canonical")
            if fmt != "canonical":
                try:
                    Format(fmt)
                except ValueError:
                    raise ManifestError(f"{m.source}: unknown format {fmt!r}") from None
        if "synthetic" in m.values and m.values["synthetic"] not in SYNTHETIC:
            raise ManifestError(f"{m.source}: unknown synthetic corpus {m.values['synthetic']!r}")
        if self.workers < 1 or self.vocab_size < 16:
            raise ManifestError(f"{m.source}: workers must be >= 1 and vocab_size >= 16")

    def model_config(self, vocab_size: int) -> ModelConfig:
        try:
            return ModelConfig(vocab_size=vocab_size, **self.model)
        except (TypeError, ValueError) as e:
            raise ManifestError(f"{self.manifest.source}: bad model config: {e}") from None

    def load_domain(self) -> Domain:
        m = self.manifest
        if "synthetic" in m.values:
            c = SYNTHETIC[m.values["synthetic"]](m.num("synthetic_seed", int, 0))
            return Domain(self.domain_name, c.train, c.dev, c.test)
        if "train" in m.values:
            return Domain(self.domain_name, load_canonical(m.path("train")),
                          load_canonical(m.path("dev")), load_canonical(m.path("test")))
        fmt = m.get("format", "canonical")
        path = m.path("data")
        samples = (load_canonical(path) if fmt == "canonical" else
                   convert_dataset(path, fmt, self.domain_name,
                                   m.flag("associative_as_metonymic", False)))
        kind = SplitKind(m.get("split", "lexical"))
        if kind is SplitKind.KFOLD:
            raise ManifestError(f"{m.source}: training manifests need a fixed or lexical split")
        try:
            fractions = tuple(float(x) for x in m.get("fractions", "0.8,0.1,0.1").split(","))
        except ValueError:
            raise ManifestError(f"{m.source}: bad fractions") from None
        if len(fractions) != 3:
            raise ManifestError(f"{m.source}: fractions must give train,dev,test shares")
        try:
            spec = SplitSpec(kind, fractions, seed=m.num("split_seed", int, 0))
        except ValueError as e:
            raise ManifestError(f"{m.source}: {e}") from None
        tr, dv, te = split(samples, spec)
        return Domain(self.domain_name, tr, dv, te)


SYNTHETIC = {
    "relocar-like": synthetic.relocar_like,
    "bias": synthetic.lexical_bias_corpus,
    "templates": lambda seed: synthetic.SplitCorpus(
        synthetic.template_corpus(200, seed), synthetic.template_corpus(100, seed + 10_000),
        synthetic.template_corpus(100, seed + 20_000)),
    "flipped-relocar-like": lambda seed: _flipped(synthetic.relocar_like(seed)),
}


def _flipped(c):
    f = synthetic.flip_labels
    return synthetic.SplitCorpus(f(c.train, "flipped"), f(c.dev, "flipped"), f(c.test, "flipped"))


# --------------------------------------------------------------------------
# output helpers


def output_dir(flag: str | None, m: Manifest | None, name: str) -> Path:
    if flag:
        return Path(flag)
    if m is not None and "out" in m.values:
        return m.path("out", must_exist=False)
    root = os.environ.get(OUT_ENV)
    return Path(root or "runs") / name


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _emit(text: str, out: str | None) -> None:
    if out:
        _write(Path(out), text)
    else:
        sys.stdout.write(text)


def _attach_log(directory: Path) -> logging.Handler:
    directory.mkdir(parents=True, exist_ok=True)
    h = logging.FileHandler(directory / "run.log", encoding="utf-8")
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(h)
    log.setLevel(logging.INFO)
    return h


def _detach_log(h: logging.Handler) -> None:
    log.removeHandler(h)
    h.close()


def _load_model(path: str | Path, vocab_path: str | Path | None = None):
    """Checkpoint, its metadata and a vocabulary whose digest matches the checkpoint."""
    p = Path(path)
    if p.is_dir():
        p = p / "model.ckpt"
    params, meta = load_checkpoint(p)
    vp = Path(vocab_path) if vocab_path else p.parent / "vocab.txt"
    vocab = Vocab.load(vp)
    want = meta.get("vocab_digest")
    if want and vocab.digest() != want:
        raise VocabMismatch(f"vocabulary {vp} (digest {vocab.digest()}) does not match "
                            f"checkpoint {p} (digest {want})")
    if len(vocab) != params.config.vocab_size:
        raise VocabMismatch(f"vocabulary {vp} has {len(vocab)} entries, checkpoint expects "
                            f"{params.config.vocab_size}")
    return params, meta, vocab


def _is_masked(meta: dict, override: str | None) -> bool:
    v = Variant.parse(override) if override else Variant.parse(meta.get("variant", "plain"))
    return v is Variant.MASKED


# --------------------------------------------------------------------------
# commands


def cmd_stats(args) -> int:
    named = []
    for path in args.paths:
        p = Path(path)
        if args.input_format == "canonical":
            samples = load_canonical(p)
        else:
            samples = convert_dataset(p, args.input_format, p.stem)
        named.append((p.stem, compute_stats(samples)))
    if args.format == "csv":
        text = stats_csv(named)
    else:
        text = aligned_table([list(STATS_HEADER)] + stats_rows(named))
    _emit(text, args.out)
    return EXIT_OK


def cmd_convert(args) -> int:
    samples = convert_dataset(args.raw, args.input_format, args.dataset,
                              args.associative_as_metonymic)
    _emit(write_canonical(samples), args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.kind == "geo":
        docs = synthetic.geo_documents(args.n, args.seed)
        lines = [json.dumps({"id": d.id, "text": d.text,
                             "gold": [[a, b] for a, b, lit in d.mentions if lit]}) for d in docs]
        _write(out / "docs.jsonl", "\n".join(lines) + "\n")
        _write(out / "gazetteer.txt", "".join(p.lower() + "\n" for p in synthetic.PLACES))
        train_docs = synthetic.geo_documents(args.n, args.seed + 1)
        samples = synthetic.geo_training_samples(train_docs)
        a, b = len(samples) * 8 // 10, len(samples) * 9 // 10
        _write(out / "train.jsonl", write_canonical(samples[:a]))
        _write(out / "dev.jsonl", write_canonical(samples[a:b]))
        _write(out / "test.jsonl", write_canonical(samples[b:]))
        return EXIT_OK
    c = SYNTHETIC[args.kind](args.seed)
    for part in ("train", "dev", "test"):
        _write(out / f"{part}.jsonl", write_canonical(getattr(c, part)))
    return EXIT_OK


def _manifest_or_flags(path: str | None) -> Manifest:
    return Manifest.read(path) if path else Manifest()


def cmd_train(args) -> int:
    m = Manifest.read(args.manifest)
    exp = ExperimentManifest.from_manifest(m, args.seeds, args.variant)
    out = output_dir(args.out, m, exp.name)
    handler = _attach_log(out)
    try:
        log.info("train %s variant=%s seeds=%s", exp.name, exp.train.variant.value, exp.seeds)
        domain = exp.load_domain()
        vocab = build_vocab(domain.train, exp.vocab_size)
        mcfg = exp.model_config(len(vocab))
        vocab.save(out / "vocab.txt")
        _write(out / "model.txt", mcfg.to_text())
        outs = run_many(exp.train, domain.train, domain.dev, vocab, mcfg, seeds=exp.seeds,
                        test_samples=domain.test, workers=exp.workers, keep_params=True,
                        raise_errors=False)
        good: list[RunResult] = []
        failures = []
        for seed, o in zip(sorted(exp.seeds), outs):
            if isinstance(o, RunError):
                failures.append(o)
                log.error("seed %d failed: %s", seed, o.cause)
                continue
            params, res = o
            d = out / f"seed{seed}"
            write_run(res, d)
            vocab.save(d / "vocab.txt")
            save_checkpoint(params, d / "model.ckpt", {
                "variant": exp.train.variant.value, "seed": str(seed),
                "vocab_digest": vocab.digest(), "max_len": str(exp.train.max_len),
                "dataset": exp.domain_name})
            _write(d / "errors.csv", export_errors(res.predictions, domain.test))
            good.append(res)
            log.info("seed %d accuracy %.4f", seed, res.accuracy)
        _write(out / "failures.txt", "".join(f"seed={e.seed}\t{type(e.cause).__name__}: "
                                              f"{e.cause}\n" for e in failures))
        if good:
            cells = {(exp.domain_name, exp.train.variant.value):
                     summarize([r.accuracy for r in good])}
            if (args.ensemble or m.flag("ensemble", False)) and len(good) >= 2:
                ens = vote([r.predictions for r in good])
                cells[(exp.domain_name, "ensemble")] = summarize([accuracy(ens, domain.test)])
                _write(out / "ensemble_predictions.csv", predictions_csv(ens))
            _write(out / "summary.csv", summary_csv(cells))
            _write(out / "summary.txt", summary_text(cells))
            try:
                _write(out / "curves.csv", export_curves(good))
            except EvalError as e:
                log.warning("curves not exported: %s", e)
            sys.stdout.write(summary_text(cells))
        for e in failures:
            print(f"error: seed {e.seed}: {e.cause}", file=sys.stderr)
        return EXIT_RUNTIME if failures else EXIT_OK
    finally:
        _detach_log(handler)


def cmd_eval(args) -> int:
    m = _manifest_or_flags(args.manifest)
    checkpoints = list(args.checkpoints)
    if not checkpoints and args.manifest:
        exp = ExperimentManifest.from_manifest(m, args.seeds, args.variant)
        run_dir = output_dir(None, m, exp.name)
        checkpoints = [str(run_dir / f"seed{s}") for s in exp.seeds]
    if not checkpoints:
        raise ManifestError("no checkpoints given")
    if args.test:
        test = load_canonical(args.test)
        name = Path(args.test).stem
    elif args.manifest:
        exp = ExperimentManifest.from_manifest(m, args.seeds, args.variant)
        test = exp.load_domain().test
        name = exp.domain_name
    else:
        raise ManifestError("eval needs --test or --manifest")
    if not test:
        raise EvalError("empty test set")
    rows, preds, variants = [], [], set()
    for ck in checkpoints:
        params, meta, vocab = _load_model(ck, args.vocab)
        masked = _is_masked(meta, args.variant)
        variants.add("mask" if masked else meta.get("variant", "plain"))
        p = predict(params, test, vocab, int(meta.get("max_len", 256)), masked)
        preds.append(p)
        rows.append((ck, accuracy(p, test)))
    variant = variants.pop() if len(variants) == 1 else "mixed"
    cells = {(name, variant): summarize([a for _, a in rows])}
    ens = None
    if args.ensemble:
        if len(preds) < 2:
            raise ManifestError("--ensemble needs at least two checkpoints")
        ens = vote(preds)
        cells[(name, "ensemble")] = summarize([accuracy(ens, test)])
    if args.format == "csv":
        text = "checkpoint,accuracy\n" + "".join(f"{c},{a!r}\n" for c, a in rows)
        text += "\n" + summary_csv(cells)
    else:
        text = "".join(f"{c}: {100 * a:.2f}\n" for c, a in rows) + "\n" + summary_text(cells)
    if args.out:
        out = Path(args.out)
        _write(out / f"eval.{args.format}", text)
        if ens is not None:
            _write(out / "ensemble_predictions.csv", predictions_csv(ens))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_crossdomain(args) -> int:
    manifests = [Manifest.read(p) for p in args.manifest]
    if len(manifests) == 1 and "domains" in manifests[0].values:
        top = manifests[0]
        paths = [top.base / p.strip() for p in top.values["domains"].split(",") if p.strip()]
        manifests = [Manifest.read(p) for p in paths]
        pairs_text = args.pairs or top.get("pairs")
        variants_text = top.get("variants")
    else:
        top = manifests[0]
        pairs_text = args.pairs
        variants_text = top.get("variants")
    exps = [ExperimentManifest.from_manifest(m, args.seeds) for m in manifests]
    domains = {e.domain_name: e.load_domain() for e in exps}
    if pairs_text:
        pairs = []
        for p in pairs_text.split(","):
            if "->" not in p:
                raise ManifestError(f"bad pair {p!r}; use source->target")
            s, t = (x.strip() for x in p.split("->", 1))
            pairs.append((s, t))
    else:
        names = list(domains)
        pairs = [(s, t) for s in names for t in names if s != t]
    if args.variant:
        variants = [args.variant]
    elif variants_text:
        variants = [v.strip() for v in variants_text.split(",") if v.strip()]
    else:
        variants = ["plain", "mask"]
    first = exps[0]
    name = top.get("name") or "crossdomain"
    out = output_dir(args.out, top, name)
    handler = _attach_log(out)
    try:
        log.info("crossdomain pairs=%s variants=%s", pairs, variants)
        res = cross_domain(domains, pairs, variants, first.train, first.seeds, first.vocab_size,
                           first.model_config if first.model else None, first.workers)
        _write(out / "crossdomain.csv", cross_domain_csv(res))
        _write(out / "crossdomain.txt", cross_domain_text(res))
        sys.stdout.write(cross_domain_text(res) if args.format == "txt" else cross_domain_csv(res))
        failed = [k for k, c in res.cells.items() if isinstance(c, Exception)]
        for k in failed:
            log.error("cell %s failed: %s", k, res.cells[k])
            print(f"error: cell {k}: {res.cells[k]}", file=sys.stderr)
        return EXIT_RUNTIME if failed else EXIT_OK
    finally:
        _detach_log(handler)


def cmd_geoparse(args) -> int:
    m = _manifest_or_flags(args.manifest)
    docs_path = args.docs or m.path("docs")
    gaz_path = args.gazetteer or m.path("gazetteer")
    ck = args.checkpoint or m.path("checkpoint")
    if not (docs_path and gaz_path and ck):
        raise ManifestError("geoparse needs docs, gazetteer and checkpoint")
    folds = args.folds or m.num("folds", int, 1)
    if folds < 1:
        raise ManifestError("folds must be >= 1")
    docs = load_documents(docs_path)
    detector = GazetteerDetector.load(gaz_path, m.flag("require_capital", True))
    params, meta, vocab = _load_model(ck, args.vocab or m.path("vocab"))
    if not _is_masked(meta, None):
        log.warning("checkpoint was not trained with masking; the pipeline masks at inference")
    max_len = int(meta.get("max_len", 256))
    all_mentions, literal = [], {}
    for d in docs:
        spans = detect(d.text, detector, d.id)
        mentions = classify_spans(d.text, spans, params, vocab, max_len)
        all_mentions.extend((mm, d.text) for mm in mentions)
        literal[d.id] = [(s.doc_id, s.start, s.end) for s in literal_locations(mentions)]
    out = output_dir(args.out, m, "geoparse")
    _write(out / "mentions.jsonl", mentions_jsonl(all_mentions))
    _write(out / "literal.tsv", "".join(f"{doc}\t{a}\t{b}\n" for d in docs
                                        for doc, a, b in literal[d.id]))
    if all(d.gold is not None for d in docs) and docs:
        k = min(folds, len(docs))
        parts = [docs[i::k] for i in range(k)] if k > 1 else [docs]
        fold_pairs = [([s for d in part for s in literal[d.id]],
                       [(d.id, a, b) for d in part for a, b in d.gold]) for part in parts]
        res = prf_over_folds(fold_pairs)
        _write(out / "prf.csv", prf_csv(res))
        _write(out / "prf.txt", prf_text(res))
        sys.stdout.write(prf_text(res) if args.format == "txt" else prf_csv(res))
    return EXIT_OK


def cmd_attention(args) -> int:
    m = _manifest_or_flags(args.manifest)
    ck = args.checkpoint or m.path("checkpoint")
    sp = args.samples or m.path("samples")
    if not (ck and sp):
        raise ManifestError("attention needs a checkpoint and samples")
    params, meta, vocab = _load_model(ck, args.vocab)
    samples = load_canonical(sp)
    if not samples:
        raise EvalError("no samples")
    if _is_masked(meta, args.variant):
        samples = mask_all(samples)
    xs = encode_all(samples, vocab, int(meta.get("max_len", 256)))
    traces = []
    for s in range(0, len(xs), 128):
        batch = make_batch(xs[s:s + 128])
        _, _, cache = forward_batch(params, batch)
        traces.extend(traces_from(DEFAULT_ENCODER, cache, batch))
    merge = args.merge_below if args.merge_below is not None else m.num("merge_below", int, 1)
    _emit(attention_csv(attention_report(traces, merge)), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="metores", description="Metonymy resolution workbench.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    fmts = ["canonical"] + [f.value for f in Format]

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("paths", nargs="+")
    p.add_argument("--input-format", choices=fmts, default="canonical")
    p.add_argument("--format", choices=["csv", "txt"], default="csv")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("convert", help="convert a source dataset to canonical JSONL")
    p.add_argument("raw")
    p.add_argument("--input-format", choices=fmts[1:], required=True)
    p.add_argument("--dataset")
    p.add_argument("--associative-as-metonymic", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("kind", choices=sorted(SYNTHETIC) + ["geo"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100, help="documents (geo only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model per seed")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.add_argument("--seeds")
    p.add_argument("--variant", choices=["plain", "aug", "mask"])
    p.add_argument("--ensemble", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on a test set")
    p.add_argument("checkpoints", nargs="*")
    p.add_argument("--manifest")
    p.add_argument("--test")
    p.add_argument("--vocab")
    p.add_argument("--seeds")
    p.add_argument("--variant", choices=["plain", "aug", "mask"])
    p.add_argument("--ensemble", action="store_true")
    p.add_argument("--format", choices=["csv", "txt"], default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossdomain", help="train on one dataset, test on another")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--pairs")
    p.add_argument("--seeds")
    p.add_argument("--variant", choices=["plain", "aug", "mask"])
    p.add_argument("--format", choices=["csv", "txt"], default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_crossdomain)

    p = sub.add_parser("geoparse", help="extract literal toponyms from documents")
    p.add_argument("--manifest")
    p.add_argument("--docs")
    p.add_argument("--gazetteer")
    p.add_argument("--checkpoint")
    p.add_argument("--vocab")
    p.add_argument("--folds", type=int)
    p.add_argument("--format", choices=["csv", "txt"], default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_geoparse)

    p = sub.add_parser("attention", help="per-layer target attention summary")
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--samples")
    p.add_argument("--vocab")
    p.add_argument("--variant", choices=["plain", "aug", "mask"])
    p.add_argument("--merge-below", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_attention)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except INVALID_INPUT as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
