from pathlib import Path

import numpy as np
import pytest

from metores.model import ModelConfig
from metores.synthetic import SplitCorpus, geo_documents, geo_training_samples, template_corpus
from metores.tokenizer import build_vocab
from metores.trainer import TrainConfig, train

FIXTURES = Path(__file__).parent / "fixtures"

# desk settings used throughout: the default 5e-5 rate is meant for pretrained
# encoders and barely moves a model trained from scratch
DESK = dict(lr=1e-3, batch_size=32)


@pytest.fixture(scope="session")
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def geo_model():
    """Masked desk model trained on one-sentence geo samples; (params, vocab)."""
    train_s = geo_training_samples(geo_documents(150, seed=101))
    dev_s = geo_training_samples(geo_documents(30, seed=102))
    vocab = build_vocab(train_s, 300)
    cfg = TrainConfig(epochs=6, seed=3, variant="mask", **DESK)
    params, res = train(cfg, train_s, dev_s, vocab, ModelConfig(vocab_size=len(vocab)))
    return params, vocab


@pytest.fixture(scope="session")
def template_split() -> SplitCorpus:
    return SplitCorpus(template_corpus(200, 0), template_corpus(80, 1), template_corpus(80, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by the acceptance suite
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
