"""Seeded training, multi-run orchestration and run ensembling."""
from __future__ import annotations

import csv
import enum
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Label, Sample
from .model import (
    Encoder,
    ModelConfig,
    ModelParams,
    NumericError,
    init_params,
    loss_and_grad,
    make_batch,
    predict_proba,
)
from .tokenizer import TokenizedInput, Vocab, encode_sample
from .transforms import TargetPool, augment, mask_all


class ConfigError(ValueError):
    pass


class Variant(enum.Enum):
    PLAIN = "plain"
    AUGMENTED = "aug"
    MASKED = "mask"

    @classmethod
    def parse(cls, text: str) -> "Variant":
        parts = {p.strip().lower() for p in text.replace(",", "+").split("+") if p.strip()}
        aliases = {"plain": cls.PLAIN, "aug": cls.AUGMENTED, "augmented": cls.AUGMENTED,
                   "mask": cls.MASKED, "masked": cls.MASKED}
        unknown = parts - set(aliases)
        if unknown:
            raise ConfigError(f"unknown variant {sorted(unknown)}")
        chosen = {aliases[p] for p in parts} - {cls.PLAIN}
        return variant_from_flags(cls.AUGMENTED in chosen, cls.MASKED in chosen)


def variant_from_flags(augment: bool, mask: bool) -> Variant:
    if augment and mask:
        raise ConfigError("target masking and data augmentation cannot be combined: "
                          "masking removes the substituted targets")
    if mask:
        return Variant.MASKED
    return Variant.AUGMENTED if augment else Variant.PLAIN


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 64
    epochs: int = 10
    max_len: int = 256
    dropout: float = 0.1
    seed: int = 0
    variant: Variant = Variant.PLAIN
    aug_copies: int = 9
    # additionally evaluate the dev set every this many optimizer steps (0: per epoch only)
    eval_every: int = 0
    select_best: bool = True
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.lr <= 0 or self.batch_size < 1 or self.max_len < 3:
            raise ConfigError("learning rate, batch size and max length must be positive")
        if self.epochs < 0 or self.aug_copies < 0 or self.eval_every < 0:
            raise ConfigError("epochs, aug_copies and eval_every must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")


@dataclass(frozen=True)
class CurvePoint:
    step: int
    epoch: float
    train_loss: float
    dev_accuracy: float


@dataclass(frozen=True)
class Prediction:
    id: str
    label: Label
    scores: tuple[float, ...]


@dataclass
class RunResult:
    seed: int
    curve: list[CurvePoint] = field(default_factory=list)
    predictions: list[Prediction] = field(default_factory=list)
    accuracy: float = float("nan")
    # accuracy of the last-epoch weights, reported alongside the selected ones
    last_accuracy: float = float("nan")
    best_step: int = 0

    def pred_map(self) -> dict[str, Label]:
        return {p.id: p.label for p in self.predictions}


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: ModelParams | None, last_good_step: int):
        super().__init__(message)
        self.last_good = last_good
        self.last_good_step = last_good_step


class RunError(RuntimeError):
    def __init__(self, seed: int, cause: BaseException):
        super().__init__(f"run with seed {seed} failed: {cause}")
        self.seed = seed
        self.cause = cause


class Adam:
    """Adam with linearly decaying step size and no warmup."""

    def __init__(self, params: ModelParams, lr: float, total_steps: int,
                 betas=(0.9, 0.999), eps=1e-8):
        self.lr = lr
        self.total = max(total_steps, 1)
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.tensors.items()}

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        rate = self.lr * (1.0 - self.t / self.total)
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.tensors.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (rate / c1) * m / (np.sqrt(v / c2) + self.eps)


def apply_variant(config: TrainConfig, train: Sequence[Sample], evals: Sequence[Sequence[Sample]]):
    """Transformed (train, *evals); augmentation only ever touches training data."""
    if config.variant is Variant.MASKED:
        return mask_all(train), [mask_all(e) for e in evals]
    if config.variant is Variant.AUGMENTED:
        pool = TargetPool.from_samples(train, seed=config.seed)
        return augment(train, pool, config.aug_copies), [list(e) for e in evals]
    return list(train), [list(e) for e in evals]


def encode_all(samples: Sequence[Sample], vocab: Vocab, max_len: int) -> list[TokenizedInput]:
    return [encode_sample(s, vocab, max_len) for s in samples]


def _accuracy(probs: np.ndarray, gold: np.ndarray) -> float:
    if len(gold) == 0:
        return float("nan")
    return float(np.mean(probs.argmax(axis=1) == gold))


def _predictions(ids: Sequence[str], probs: np.ndarray) -> list[Prediction]:
    return [Prediction(i, Label(int(p.argmax())), tuple(float(x) for x in p))
            for i, p in zip(ids, probs)]


def train(config: TrainConfig, train_samples: Sequence[Sample], dev_samples: Sequence[Sample],
          vocab: Vocab, model_config: ModelConfig, test_samples: Sequence[Sample] | None = None,
          encoder: Encoder | None = None) -> tuple[ModelParams, RunResult]:
    """Train one model; predictions are made on ``test_samples`` (dev if absent).

    With ``select_best`` the returned weights are those with the best dev
    accuracy seen at an evaluation point (earliest on ties).
    """
    if not train_samples:
        raise ConfigError("training set is empty")
    if model_config.vocab_size != len(vocab):
        raise ConfigError(f"model vocab size {model_config.vocab_size} != vocabulary {len(vocab)}")
    mcfg = replace(model_config, dropout=config.dropout)
    eval_samples = list(test_samples) if test_samples is not None else list(dev_samples)
    tr, (dev, ev) = apply_variant(config, train_samples, [dev_samples, eval_samples])

    x_train = encode_all(tr, vocab, config.max_len)
    y_train = np.array([int(s.label) for s in tr], dtype=np.int64)
    x_dev = encode_all(dev, vocab, config.max_len)
    y_dev = np.array([int(s.label) for s in dev], dtype=np.int64)
    x_ev = encode_all(ev, vocab, config.max_len)
    y_ev = np.array([int(s.label) for s in ev], dtype=np.int64)
    ev_ids = [s.id for s in eval_samples]

    init_ss, shuffle_ss, drop_ss = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(mcfg, seed=init_ss)
    result = RunResult(seed=config.seed)
    if config.epochs == 0:
        probs = predict_proba(params, x_ev, encoder=encoder)
        result.predictions = _predictions(ev_ids, probs)
        result.accuracy = result.last_accuracy = _accuracy(probs, y_ev)
        return params, result

    shuffle_rng = np.random.default_rng(shuffle_ss)
    drop_rng = np.random.default_rng(drop_ss)
    n = len(x_train)
    per_epoch = math.ceil(n / config.batch_size)
    opt = Adam(params, config.lr, per_epoch * config.epochs, config.adam_betas, config.adam_eps)
    best_acc, best_params, best_step = -1.0, params.copy(), 0
    step = 0
    losses: list[float] = []

    def checkpoint(epoch_pos: float):
        nonlocal best_acc, best_params, best_step
        acc = _accuracy(predict_proba(params, x_dev, encoder=encoder), y_dev) if x_dev else float("nan")
        result.curve.append(CurvePoint(step, epoch_pos, float(np.mean(losses)) if losses else float("nan"), acc))
        losses.clear()
        score = acc if not math.isnan(acc) else 0.0
        if score > best_acc:
            best_acc, best_params, best_step = score, params.copy(), step

    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        for b in range(per_epoch):
            idx = order[b * config.batch_size:(b + 1) * config.batch_size]
            batch = make_batch([x_train[i] for i in idx])
            try:
                # overflow is caught by the finiteness checks, not reported as warnings
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, grads = loss_and_grad(params, batch, y_train[idx], train_mode=True,
                                                rng=drop_rng, encoder=encoder)
            except NumericError as e:
                raise TrainingDiverged(f"step {step}: {e}", best_params, best_step) from e
            opt.step(params, grads)
            step += 1
            losses.append(loss)
            if config.eval_every and step % config.eval_every == 0 and b != per_epoch - 1:
                checkpoint(epoch + (b + 1) / per_epoch)
        checkpoint(float(epoch + 1))
    if not params.all_finite():
        raise TrainingDiverged("non-finite weights after training", best_params, best_step)

    last_probs = predict_proba(params, x_ev, encoder=encoder)
    result.last_accuracy = _accuracy(last_probs, y_ev)
    chosen = best_params if config.select_best else params
    probs = predict_proba(chosen, x_ev, encoder=encoder) if config.select_best else last_probs
    result.predictions = _predictions(ev_ids, probs)
    result.accuracy = _accuracy(probs, y_ev)
    result.best_step = best_step if config.select_best else step
    return chosen, result


def _run_one(args):
    config, train_samples, dev_samples, vocab, model_config, test_samples = args
    try:
        return train(config, train_samples, dev_samples, vocab, model_config, test_samples)
    except Exception as e:  # attributed to the seed by the caller
        return RunError(config.seed, e)


def run_many(config: TrainConfig, train_samples: Sequence[Sample], dev_samples: Sequence[Sample],
             vocab: Vocab, model_config: ModelConfig, seeds: Sequence[int] | None = None,
             n_runs: int = 10, test_samples: Sequence[Sample] | None = None,
             workers: int = 1, keep_params: bool = False, raise_errors: bool = True):
    """Train one independent model per seed; results are ordered by seed.

    Returns a list of :class:`RunResult` (or ``(params, result)`` pairs with
    ``keep_params``). Failed runs raise :class:`RunError`, or are returned in
    place when ``raise_errors`` is false.
    """
    if seeds is None:
        seeds = list(range(1, n_runs + 1))
    seeds = sorted(seeds)
    if not seeds:
        raise ConfigError("need at least one run")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds must be distinct")
    jobs = [(replace(config, seed=s), train_samples, dev_samples, vocab, model_config, test_samples)
            for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_run_one, jobs))
    else:
        outs = [_run_one(j) for j in jobs]
    results = []
    for out in outs:
        if isinstance(out, RunError):
            if raise_errors:
                raise out
            results.append(out)
        else:
            results.append(out if keep_params else out[1])
    return results


def predict(params: ModelParams, samples: Sequence[Sample], vocab: Vocab, max_len: int = 256,
            masked: bool = False, encoder: Encoder | None = None) -> list[Prediction]:
    ev = mask_all(samples) if masked else list(samples)
    probs = predict_proba(params, encode_all(ev, vocab, max_len), encoder=encoder)
    return _predictions([s.id for s in samples], probs)


def vote(member_preds: Sequence[Sequence[Prediction]]) -> list[Prediction]:
    """Hard majority vote per sample; ties go to the class with the higher mean
    score across members, then to the lower class index."""
    if len(member_preds) < 2:
        raise ValueError("an ensemble needs at least two members")
    ids = [p.id for p in member_preds[0]]
    for m in member_preds[1:]:
        if [p.id for p in m] != ids:
            raise ValueError("ensemble members were evaluated on different sample sets")
    out = []
    for k, sid in enumerate(ids):
        preds = [m[k] for m in member_preds]
        n_cls = len(preds[0].scores)
        votes = np.bincount([int(p.label) for p in preds], minlength=n_cls)
        mean = np.mean([p.scores for p in preds], axis=0)
        top = np.flatnonzero(votes == votes.max())
        winner = int(top[np.argmax(mean[top])])
        out.append(Prediction(sid, Label(winner), tuple(float(x) for x in mean)))
    return out


def ensemble_predict(members: Sequence[RunResult] | Sequence[ModelParams],
                     samples: Sequence[Sample] | None = None, vocab: Vocab | None = None,
                     max_len: int = 256, masked: bool = False) -> list[Prediction]:
    if len(members) < 2:
        raise ValueError("an ensemble needs at least two members")
    if all(isinstance(m, RunResult) for m in members):
        preds = [m.predictions for m in members]
        if samples is not None:
            want = [s.id for s in samples]
            for m in preds:
                if [p.id for p in m] != want:
                    raise ValueError("ensemble members were evaluated on different sample sets")
    else:
        if samples is None or vocab is None:
            raise ValueError("parameter ensembles need samples and a vocabulary")
        preds = [predict(m, samples, vocab, max_len, masked) for m in members]
    return vote(preds)


# --------------------------------------------------------------------------
# result files


def curve_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "epoch", "train_loss", "dev_accuracy"])
    for c in result.curve:
        w.writerow([c.step, repr(c.epoch), repr(c.train_loss), repr(c.dev_accuracy)])
    return buf.getvalue()


def predictions_csv(preds: Sequence[Prediction]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", "score_literal", "score_metonymic"])
    for p in preds:
        w.writerow([p.id, str(p.label)] + [repr(s) for s in p.scores])
    return buf.getvalue()


def write_run(result: RunResult, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "summary.txt").write_text(
        f"seed={result.seed}\naccuracy={result.accuracy!r}\n"
        f"last_accuracy={result.last_accuracy!r}\nbest_step={result.best_step}\n"
        f"n_predictions={len(result.predictions)}\n", encoding="utf-8")
    (d / "curve.csv").write_text(curve_csv(result), encoding="utf-8")
    (d / "predictions.csv").write_text(predictions_csv(result.predictions), encoding="utf-8")


def read_run(directory: str | Path) -> RunResult:
    d = Path(directory)
    meta = dict(line.split("=", 1) for line in
                (d / "summary.txt").read_text(encoding="utf-8").splitlines() if "=" in line)
    res = RunResult(seed=int(meta["seed"]), accuracy=float(meta["accuracy"]),
                    last_accuracy=float(meta["last_accuracy"]), best_step=int(meta["best_step"]))
    with open(d / "curve.csv", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            res.curve.append(CurvePoint(int(row["step"]), float(row["epoch"]),
                                        float(row["train_loss"]), float(row["dev_accuracy"])))
    with open(d / "predictions.csv", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            res.predictions.append(Prediction(row["id"], Label.parse(row["label"]),
                                              (float(row["score_literal"]),
                                               float(row["score_metonymic"]))))
    return res
