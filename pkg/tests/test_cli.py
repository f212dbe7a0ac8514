import json
import subprocess
import sys

import pytest

from stgan import cli, synthetic
from stgan.sent_embed import random_table

TINY = {"skipthought": {"d_w": 8, "h_enc": 8, "h_dec": 8},
        "gan": {"g_hidden": [16], "d_hidden": [16], "noise_dim": 4}}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.txt"
    synthetic.write_grammar_corpus(path, 120, seed=0)
    return path


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def _run(corpus, config, out, *extra):
    argv = ["run", "--corpus", str(corpus), "--out", str(out), "--config", str(config), "--epochs", "1",
            "--rounds", "5", "--samples", "6", "--seed", "4", *extra]
    return cli.main(argv)


def test_prepare_writes_vocab_and_splits(corpus, tmp_path):
    assert cli.main(["prepare", "--corpus", str(corpus), "--out", str(tmp_path / "o")]) == 0
    for name in ("vocab.tsv", "train.txt", "valid.txt", "test.txt"):
        assert (tmp_path / "o" / name).exists()


def test_missing_corpus_is_usage_error(tmp_path, capsys):
    assert cli.main(["prepare", "--out", str(tmp_path / "o")]) == 1
    assert "usage:" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("argv", [["frobnicate"], ["prepare", "--bogus"], ["run", "--fmeasure", "hinge"],
                                  ["evaluate", "--hyp", "nope.txt", "--ref", "nope.txt"]])
def test_bad_usage_exits_1(argv, capsys):
    assert cli.main(argv) == 1
    assert "usage" in capsys.readouterr().err


def test_stage_before_prepare_is_rejected(tmp_path):
    assert cli.main(["train-gan", "--out", str(tmp_path / "empty")]) == 1


def test_runtime_failure_exits_2(corpus, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({**TINY, "gan": {**TINY["gan"], "batch_size": 500}}))
    assert _run(corpus, bad, tmp_path / "o") == 2
    assert "train-gan" in capsys.readouterr().err


def test_evaluate_identical_files(tmp_path, capsys):
    text = "the cat sat on the mat .\nanna found a red ball .\n"
    (tmp_path / "h.txt").write_text(text)
    (tmp_path / "r.txt").write_text(text)
    code = cli.main(["evaluate", "--hyp", str(tmp_path / "h.txt"), "--ref", str(tmp_path / "r.txt"),
                     "--metrics", "bleu2,rougeL"])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "model,embedding,metric,value"
    assert [l.rsplit(",", 1)[1] for l in lines[1:]] == ["1.000000", "1.000000"]


def test_pipeline_is_deterministic_and_resumable(corpus, config, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(corpus, config, a) == 0
    assert _run(corpus, config, b) == 0
    report = (a / "report.csv").read_bytes()
    assert report == (b / "report.csv").read_bytes()

    st_mtime = (a / "st.ckpt").stat().st_mtime_ns
    (a / "gan_st_wgan-gp.ckpt").unlink()
    assert _run(corpus, config, a) == 0
    assert (a / "st.ckpt").stat().st_mtime_ns == st_mtime
    assert (a / "gan_st_wgan-gp.ckpt").exists()
    assert (a / "report.csv").read_bytes() == report


def test_glove_embedding_path(corpus, config, tmp_path):
    assert _run(corpus, config, tmp_path / "g", "--embedding", "glove-ext") == 1
    vectors = tmp_path / "vec.txt"
    random_table(synthetic.NAMES + synthetic.NOUNS + synthetic.VERBS, dim=12, seed=0).save(vectors)
    assert _run(corpus, config, tmp_path / "g", "--embedding", "glove-ext", "--fmeasure", "lsgan",
                "--word-vectors", str(vectors)) == 0
    rows = (tmp_path / "g" / "report.csv").read_text().splitlines()
    assert rows[1].startswith("lsgan,glove-ext,")


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "stgan", "prepare", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 1 and "usage" in out.stderr
