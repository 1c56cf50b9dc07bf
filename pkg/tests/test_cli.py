import json
from pathlib import Path

import pytest

from metores.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, ExperimentManifest, Manifest, ManifestError, main, \
    parse_seeds

TINY = """\
synthetic=templates
synthetic_seed=4
hidden=32
layers=1
heads=2
ffn=64
epochs=1
lr=1e-3
batch_size=32
vocab_size=200
variant=mask
seeds=1,2
"""


def write_manifest(d: Path, body: str = TINY, name: str = "tiny.txt") -> Path:
    d.mkdir(parents=True, exist_ok=True)
    p = d / name
    p.write_text(body)
    return p


def files(d: Path) -> dict[str, bytes]:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "run.log"}


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("train")
    m = write_manifest(d)
    assert main(["train", "--manifest", str(m), "--out", str(d / "a"), "--ensemble"]) == EXIT_OK
    return d, m


# --------------------------------------------------------------------------
# manifests

def test_parse_seeds():
    assert parse_seeds("1-3,7") == [1, 2, 3, 7]
    for bad in ("", "1,1", "a"):
        with pytest.raises(ManifestError):
            parse_seeds(bad)


def test_manifest_errors(tmp_path):
    with pytest.raises(ManifestError):
        Manifest.read(tmp_path / "missing.txt")
    p = write_manifest(tmp_path, "epochs=1\nepochs=2\n")
    with pytest.raises(ManifestError, match="duplicate"):
        Manifest.read(p)
    p = write_manifest(tmp_path, "colour=blue\n")
    with pytest.raises(ManifestError, match="unknown key"):
        Manifest.read(p)
    p = write_manifest(tmp_path, "just text\n")
    with pytest.raises(ManifestError):
        Manifest.read(p)


def test_exit_code_for_invalid_manifest(tmp_path, capsys):
    assert main(["train", "--manifest", str(tmp_path / "nope.txt")]) == EXIT_INVALID
    assert "does not exist" in capsys.readouterr().err
    p = write_manifest(tmp_path, TINY + "data=x.jsonl\n")
    assert main(["train", "--manifest", str(p), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    p = write_manifest(tmp_path, TINY.replace("variant=mask", "variant=aug+mask"))
    assert main(["train", "--manifest", str(p), "--out", str(tmp_path / "o")]) == EXIT_INVALID


def test_bad_subcommand_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["fly"])
    assert e.value.code == 2


# --------------------------------------------------------------------------
# data commands

def test_stats_on_fixture(fixtures, capsys):
    assert main(["stats", str(fixtures / "relocar.tsv"), "--input-format", "relocar"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[1].startswith("relocar,2,1,3,2,4.7")


def test_stats_bad_file(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text("{oops\n")
    assert main(["stats", str(p)]) == EXIT_INVALID


def test_convert_then_stats(fixtures, tmp_path, capsys):
    out = tmp_path / "gwn.jsonl"
    assert main(["convert", str(fixtures / "gwn.json"), "--input-format", "gwn",
                 "--associative-as-metonymic", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 4
    assert main(["stats", str(out), "--format", "txt"]) == EXIT_OK
    assert "gwn" in capsys.readouterr().out


def test_synth_geo(tmp_path):
    assert main(["synth", "geo", "--n", "5", "--out", str(tmp_path)]) == EXIT_OK
    for f in ("docs.jsonl", "gazetteer.txt", "train.jsonl", "dev.jsonl", "test.jsonl"):
        assert (tmp_path / f).stat().st_size > 0
    dev = (tmp_path / "dev.jsonl").read_text()
    assert dev and dev != (tmp_path / "test.jsonl").read_text()


# --------------------------------------------------------------------------
# training and evaluation

def test_train_outputs(trained):
    d, _ = trained
    out = d / "a"
    for f in ("vocab.txt", "model.txt", "summary.csv", "summary.txt", "curves.csv",
              "ensemble_predictions.csv", "run.log", "failures.txt"):
        assert (out / f).exists(), f
    for s in (1, 2):
        for f in ("model.ckpt", "vocab.txt", "curve.csv", "predictions.csv", "errors.csv"):
            assert (out / f"seed{s}" / f).exists()
    rows = (out / "summary.csv").read_text().splitlines()
    assert [r.split(",")[1] for r in rows[1:]] == ["mask", "ensemble"]
    assert (out / "failures.txt").read_text() == ""


def test_train_is_byte_deterministic(trained, tmp_path):
    d, m = trained
    assert main(["train", "--manifest", str(m), "--out", str(tmp_path / "b"),
                 "--ensemble"]) == EXIT_OK
    assert files(d / "a") == files(tmp_path / "b")


def test_out_env_default(tmp_path, monkeypatch):
    m = write_manifest(tmp_path, TINY.replace("seeds=1,2", "seeds=3"), "envrun.txt")
    monkeypatch.setenv("METORES_OUT", str(tmp_path / "root"))
    assert main(["train", "--manifest", str(m)]) == EXIT_OK
    assert (tmp_path / "root" / "envrun" / "seed3" / "model.ckpt").exists()


def test_failed_seed_exits_3(tmp_path):
    # an absurd step size blows up the activations on the first update
    m = write_manifest(tmp_path, TINY.replace("lr=1e-3", "lr=1e30").replace("seeds=1,2", "seeds=1"))
    assert main(["train", "--manifest", str(m), "--out", str(tmp_path / "f")]) == EXIT_RUNTIME
    assert "seed=1\tTrainingDiverged" in (tmp_path / "f" / "failures.txt").read_text()


def test_eval_ensemble(trained, tmp_path, capsys):
    d, m = trained
    out = d / "a"
    test = tmp_path / "test.jsonl"
    assert main(["synth", "templates", "--seed", "4", "--out", str(tmp_path)]) == EXIT_OK
    assert main(["eval", str(out / "seed1"), str(out / "seed2"), "--test", str(test),
                 "--ensemble", "--format", "csv"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "ensemble" in text
    # the ensemble written at training time used the same test split
    assert main(["eval", str(out / "seed1"), str(out / "seed2"), "--test", str(test),
                 "--ensemble", "--out", str(tmp_path / "ev")]) == EXIT_OK
    assert (tmp_path / "ev" / "ensemble_predictions.csv").read_bytes() == \
        (out / "ensemble_predictions.csv").read_bytes()


def test_eval_vocab_mismatch(trained, tmp_path):
    d, _ = trained
    other = tmp_path / "vocab.txt"
    other.write_text("[PAD]\n[UNK]\n[CLS]\n[SEP]\nX\nzz\n")
    test = tmp_path / "t.jsonl"
    test.write_text(json.dumps({"id": "1", "text": "Paris won", "target_start": 0,
                                "target_end": 5, "label": "literal", "dataset": "x"}) + "\n")
    assert main(["eval", str(d / "a" / "seed1"), "--test", str(test),
                 "--vocab", str(other)]) == EXIT_INVALID


def test_eval_without_checkpoints():
    assert main(["eval", "--test", "x.jsonl"]) == EXIT_INVALID


def test_attention_command(trained, tmp_path):
    d, _ = trained
    test = tmp_path / "s"
    main(["synth", "templates", "--seed", "1", "--out", str(test)])
    out = tmp_path / "att.csv"
    assert main(["attention", "--checkpoint", str(d / "a" / "seed1"), "--samples",
                 str(test / "test.jsonl"), "--out", str(out)]) == EXIT_OK
    assert out.read_text().splitlines()[1].startswith("1,1,1,100,")


# --------------------------------------------------------------------------
# geoparse

def test_geoparse_empty_gazetteer(trained, tmp_path):
    d, _ = trained
    docs = tmp_path / "docs.jsonl"
    docs.write_text(json.dumps({"id": "a", "text": "Paris is big.", "gold": [[0, 5]]}) + "\n")
    gaz = tmp_path / "gaz.txt"
    gaz.write_text("")
    out = tmp_path / "g"
    assert main(["geoparse", "--docs", str(docs), "--gazetteer", str(gaz), "--checkpoint",
                 str(d / "a" / "seed1"), "--out", str(out)]) == EXIT_OK
    assert (out / "mentions.jsonl").read_text() == ""
    assert (out / "literal.tsv").read_text() == ""
    pooled = [l for l in (out / "prf.csv").read_text().splitlines() if l.startswith("pooled")]
    assert pooled == ["pooled,0.0,0.0,0.0,0,0,1"]


def test_geoparse_missing_inputs(tmp_path):
    assert main(["geoparse", "--docs", str(tmp_path / "none.jsonl")]) == EXIT_INVALID


def test_crossdomain_command(tmp_path):
    a = write_manifest(tmp_path, TINY.replace("seeds=1,2", "seeds=1") + "dataset=a\n", "a.txt")
    b = write_manifest(tmp_path, TINY.replace("seeds=1,2", "seeds=1").replace(
        "synthetic_seed=4", "synthetic_seed=5") + "dataset=b\n", "b.txt")
    out = tmp_path / "cd"
    assert main(["crossdomain", "--manifest", str(a), "--manifest", str(b), "--pairs",
                 "a->b,b->a", "--variant", "mask", "--out", str(out)]) == EXIT_OK
    rows = (out / "crossdomain.csv").read_text().splitlines()
    assert [r.split(",")[:3] for r in rows[1:]] == [["a", "b", "mask"], ["b", "a", "mask"]]
    assert main(["crossdomain", "--manifest", str(a), "--pairs", "a=>b",
                 "--out", str(out)]) == EXIT_INVALID


def test_shipped_manifests_parse(tmp_path):
    root = Path(__file__).resolve().parents[1] / "manifests"
    for p in sorted(root.rglob("*.txt")):
        m = Manifest.read(p)
        if "domains" in m.values:
            for d in m.values["domains"].split(","):
                assert (p.parent / d.strip()).exists()
            continue
        if "docs" in m.values:
            assert m.num("folds", int, 1) >= 1
            continue
        if "data" in m.values:
            # templates: give them a corpus to point at
            data = tmp_path / p.stem / m.values["data"]
            data.parent.mkdir(parents=True, exist_ok=True)
            data.write_text("")
            (tmp_path / p.stem / p.name).write_text(p.read_text())
            m = Manifest.read(tmp_path / p.stem / p.name)
        exp = ExperimentManifest.from_manifest(m)
        assert exp.seeds and exp.model_config(300).hidden > 0
