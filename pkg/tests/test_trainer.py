import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metores.corpus import Label
from metores.model import ModelConfig, init_params
from metores.tokenizer import build_vocab
from metores.trainer import (
    Adam,
    ConfigError,
    Prediction,
    RunError,
    TrainConfig,
    Variant,
    apply_variant,
    ensemble_predict,
    read_run,
    run_many,
    train,
    vote,
    write_run,
)

from conftest import DESK

SMALL = dict(hidden=32, layers=2, heads=2, ffn=64)


@pytest.fixture(scope="module")
def vocab(template_split):
    return build_vocab(template_split.train, 300)


def mcfg(vocab):
    return ModelConfig(vocab_size=len(vocab), **SMALL)


def P(sid, label, lit):
    return Prediction(sid, Label(label), (lit, 1 - lit))


# --------------------------------------------------------------------------
# variants and config

def test_variant_parse():
    assert Variant.parse("mask") is Variant.MASKED
    assert Variant.parse("plain") is Variant.PLAIN
    assert Variant.parse("augmented") is Variant.AUGMENTED
    for bad in ("aug+mask", "mask,aug"):
        with pytest.raises(ConfigError):
            Variant.parse(bad)
    with pytest.raises(ConfigError):
        Variant.parse("dropout")


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(epochs=-1)
    assert TrainConfig(variant="mask").variant is Variant.MASKED


def test_apply_variant_only_augments_train(template_split):
    cfg = TrainConfig(variant="aug", aug_copies=2)
    tr, (dev,) = apply_variant(cfg, template_split.train[:10], [template_split.dev[:5]])
    assert len(tr) == 30 and dev == template_split.dev[:5]
    cfg = TrainConfig(variant="mask")
    tr, (dev,) = apply_variant(cfg, template_split.train[:10], [template_split.dev[:5]])
    assert all(s.target == "X" for s in tr + dev)


def test_adam_first_step_is_lr_times_sign():
    params = init_params(ModelConfig(vocab_size=6, hidden=4, layers=1, heads=1, ffn=4),
                         dtype=np.float64)
    before = params.copy()
    grads = {k: np.full_like(v, -3.0) for k, v in params.tensors.items()}
    Adam(params, 0.01, total_steps=10).step(params, grads)
    for k in params.tensors:
        np.testing.assert_allclose(params[k] - before[k], 0.01, rtol=1e-6)


def test_adam_linear_decay():
    params = init_params(ModelConfig(vocab_size=6, hidden=4, layers=1, heads=1, ffn=4),
                         dtype=np.float64)
    opt = Adam(params, 0.01, total_steps=4)
    grads = {k: np.ones_like(v) for k, v in params.tensors.items()}
    moves = []
    for _ in range(4):
        before = params["head.b"].copy()
        opt.step(params, grads)
        moves.append(float((before - params["head.b"])[0]))
    # constant gradient: Adam's normalized step is 1, so moves follow the schedule
    np.testing.assert_allclose(moves, [0.01, 0.0075, 0.005, 0.0025], rtol=1e-5)


# --------------------------------------------------------------------------
# training

def test_masked_templates_learned(template_split, vocab):
    cfg = TrainConfig(epochs=6, seed=1, variant="mask", **DESK)
    _, res = train(cfg, template_split.train, template_split.dev, vocab,
                   ModelConfig(vocab_size=len(vocab)), template_split.test)
    assert res.accuracy >= 0.95
    assert [p.id for p in res.predictions] == [s.id for s in template_split.test]
    assert len(res.curve) == 6 and res.curve[-1].step == 6 * 7


def test_zero_epochs_is_init(template_split, vocab):
    cfg = TrainConfig(epochs=0, seed=5, **DESK)
    params, res = train(cfg, template_split.train, template_split.dev, vocab, mcfg(vocab))
    assert res.curve == [] and len(res.predictions) == len(template_split.dev)
    params2, _ = train(cfg, template_split.train[:3], template_split.dev, vocab, mcfg(vocab))
    for k in params.tensors:
        assert (params[k] == params2[k]).all()


def test_training_is_deterministic(template_split, vocab):
    cfg = TrainConfig(epochs=1, seed=2, **DESK)
    a, ra = train(cfg, template_split.train[:64], template_split.dev[:20], vocab, mcfg(vocab))
    b, rb = train(cfg, template_split.train[:64], template_split.dev[:20], vocab, mcfg(vocab))
    assert ra.curve == rb.curve and ra.predictions == rb.predictions
    for k in a.tensors:
        assert a[k].tobytes() == b[k].tobytes()


def test_eval_every_adds_points(template_split, vocab):
    cfg = TrainConfig(epochs=1, seed=2, eval_every=2, **DESK)
    _, res = train(cfg, template_split.train[:128], template_split.dev[:20], vocab, mcfg(vocab))
    assert [c.step for c in res.curve] == [2, 4]


def test_vocab_size_mismatch(template_split, vocab):
    with pytest.raises(ConfigError):
        train(TrainConfig(), template_split.train, [], vocab, ModelConfig(vocab_size=7))
    with pytest.raises(ConfigError):
        train(TrainConfig(), [], [], vocab, mcfg(vocab))


def test_run_many_orders_by_seed(template_split, vocab):
    cfg = TrainConfig(epochs=1, **DESK)
    data = (template_split.train[:32], template_split.dev[:10], vocab, mcfg(vocab))
    res = run_many(cfg, *data, seeds=[3, 1])
    assert [r.seed for r in res] == [1, 3]
    (single,) = run_many(cfg, *data, seeds=[3])
    assert single.predictions == res[1].predictions
    with pytest.raises(ConfigError):
        run_many(cfg, *data, seeds=[1, 1])


def test_run_many_failure_attributed(template_split, vocab):
    cfg = TrainConfig(epochs=1, max_len=3, **DESK)  # targets of 2 tokens cannot fit
    data = (template_split.train[:32], template_split.dev[:10], vocab, mcfg(vocab))
    out = run_many(cfg, *data, seeds=[4, 5], raise_errors=False)
    assert all(isinstance(o, RunError) for o in out) and [o.seed for o in out] == [4, 5]
    with pytest.raises(RunError):
        run_many(cfg, *data, seeds=[4])


def test_run_files_round_trip(tmp_path, template_split, vocab):
    cfg = TrainConfig(epochs=1, seed=9, **DESK)
    _, res = train(cfg, template_split.train[:32], template_split.dev[:10], vocab, mcfg(vocab))
    write_run(res, tmp_path)
    back = read_run(tmp_path)
    assert back.predictions == res.predictions and back.curve == res.curve
    assert back.accuracy == res.accuracy


# --------------------------------------------------------------------------
# voting

def test_vote_majority():
    (p,) = vote([[P("a", 1, 0.4)], [P("a", 1, 0.3)], [P("a", 0, 0.9)]])
    assert p.label is Label.METONYMIC


def test_vote_tie_breaks_on_mean_score():
    (p,) = vote([[P("a", 0, 0.6)], [P("a", 1, 0.45)]])
    # mean literal score (0.6+0.45)/2 = 0.525 > 0.475
    assert p.label is Label.LITERAL
    (p,) = vote([[P("a", 0, 0.55)], [P("a", 1, 0.4)]])
    assert p.label is Label.METONYMIC  # mean literal 0.475
    (p,) = vote([[P("a", 0, 0.5)], [P("a", 1, 0.5)]])
    assert p.label is Label.LITERAL  # exact tie: lower class index


def test_vote_errors():
    with pytest.raises(ValueError):
        vote([[P("a", 0, 0.9)]])
    with pytest.raises(ValueError):
        vote([[P("a", 0, 0.9)], [P("b", 0, 0.9)]])


def _vote_oracle(labels, lits):
    counts = [labels.count(0), labels.count(1)]
    if counts[0] != counts[1]:
        return int(counts[1] > counts[0])
    mean_lit = sum(lits) / len(lits)
    return 0 if mean_lit >= 1 - mean_lit else 1


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.data())
def test_vote_matches_oracle(m, data):
    labels = data.draw(st.lists(st.sampled_from([0, 1]), min_size=m, max_size=m))
    lits = [data.draw(st.floats(0.5, 1.0)) if l == 0 else data.draw(st.floats(0.0, 0.5))
            for l in labels]
    (p,) = vote([[P("x", l, s)] for l, s in zip(labels, lits)])
    assert int(p.label) == _vote_oracle(labels, lits)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from([0, 1]), min_size=1, max_size=10), st.integers(2, 5))
def test_unanimous_members_pass_through(labels, m):
    member = [P(f"s{i}", l, 0.9 if l == 0 else 0.1) for i, l in enumerate(labels)]
    out = vote([member] * m)
    assert [int(p.label) for p in out] == labels


def test_exhaustive_three_member_votes():
    for labels in itertools.product([0, 1], repeat=3):
        (p,) = vote([[P("a", l, 0.8 if l == 0 else 0.2)] for l in labels])
        assert int(p.label) == int(sum(labels) >= 2)


def test_ensemble_from_params(template_split, vocab):
    cfg = TrainConfig(epochs=1, **DESK)
    pairs = run_many(cfg, template_split.train[:32], template_split.dev[:10], vocab,
                     mcfg(vocab), seeds=[1, 2], keep_params=True)
    a = ensemble_predict([p for p, _ in pairs], template_split.dev[:10], vocab)
    b = ensemble_predict([r for _, r in pairs], template_split.dev[:10])
    assert [(x.id, x.label) for x in a] == [(x.id, x.label) for x in b]
    with pytest.raises(ValueError):
        ensemble_predict([pairs[0][0], pairs[1][0]])
