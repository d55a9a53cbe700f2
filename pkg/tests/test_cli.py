import hashlib
import json
import shutil
import subprocess
import sys

import pytest

from udscascade.cli import EXIT_INVALID, EXIT_OK, EXIT_USAGE, build_parser, run
from udscascade.graph import load_graphs, save_graphs, write_conllu
from udscascade.synthetic import synthetic_records

from conftest import TINY


def tiny_config(tmp_path, **data):
    cfg = {"model": {**TINY, "syntax_mode": "gcn"},
           "train": {"epochs": 2, "batch_size": 4, "lr": 3e-3, "restarts": 1},
           "data": data or {"train": {"synthetic": {"n": 10, "seed": 1}},
                            "dev": {"synthetic": {"n": 4, "seed": 2}}}}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    assert run(["train", "--config", str(tiny_config(tmp)), "--out", str(tmp / "run")]) == EXIT_OK
    return tmp


class TestUsage:
    def test_help_lists_flags_with_defaults(self, capsys):
        assert run(["train", "--help"]) == 0
        text = capsys.readouterr().out
        for flag in ("--config", "--seed", "--encoder", "--syntax-mode", "--span-refine", "--restarts",
                     "--workers", "--out", "--train", "--dev", "--pseudo", "--epochs"):
            assert flag in text
        assert "default" in text

    def test_every_subcommand_has_help(self, capsys):
        for cmd in ("train", "parse", "eval", "augment", "gradcheck", "selfcheck"):
            assert run([cmd, "--help"]) == 0
        assert {"train", "parse", "eval", "augment", "gradcheck", "selfcheck"} <= set(
            build_parser().format_help().replace(",", " ").replace("{", " ").replace("}", " ").split())

    @pytest.mark.parametrize("argv", [["frobnicate"], ["train", "--bogus"], [], ["parse", "--model", "x"]])
    def test_usage_errors(self, argv, capsys):
        assert run(argv) == EXIT_USAGE

    def test_bad_log_level(self, monkeypatch, tmp_path):
        monkeypatch.setenv("UDS_CASCADE_LOG", "chatty")
        assert run(["gradcheck", "--only", "primitive.arithmetic"]) == EXIT_INVALID

    def test_invalid_config(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"train": {"lr": -1}}))
        assert run(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INVALID
        bad.write_text(json.dumps({"nonsense": {}}))
        assert run(["train", "--config", str(bad)]) == EXIT_INVALID
        assert run(["train", "--config", str(tmp_path / "missing.json")]) == EXIT_INVALID

    def test_missing_training_data(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{}")
        assert run(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_INVALID

    def test_missing_checkpoint(self, tmp_path):
        text = tmp_path / "in.txt"
        text.write_text("a b\n")
        assert run(["parse", "--model", str(tmp_path / "nope.ckpt"), "--input", str(text)]) == EXIT_INVALID


class TestTrain:
    def test_outputs(self, trained):
        out = trained / "run"
        assert {p.name for p in out.iterdir()} >= {"model.ckpt", "metrics.csv", "config.json"}
        config = json.loads((out / "config.json").read_text())
        assert config["weights"]["span"] == 2.0
        assert config["model"]["syntax_mode"] == "gcn"
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header.startswith("phase,epoch,lr,loss,cls,span,edge")

    def test_flags_override_config(self, tmp_path):
        out = tmp_path / "run"
        assert run(["train", "--config", str(tiny_config(tmp_path)), "--syntax-mode", "none", "--epochs", "1",
                    "--seed", "3", "--out", str(out)]) == EXIT_OK
        config = json.loads((out / "config.json").read_text())
        assert config["model"]["syntax_mode"] == "none"
        assert config["train"]["epochs"] == 1 and config["train"]["seed"] == 3

    def test_jsonl_data_paths(self, tmp_path):
        save_graphs(synthetic_records(6, seed=4), tmp_path / "train.jsonl")
        out = tmp_path / "run"
        cfg = tiny_config(tmp_path, train={"synthetic": {"n": 2, "seed": 9}})
        assert run(["train", "--config", str(cfg), "--train", str(tmp_path / "train.jsonl"), "--epochs", "1",
                    "--out", str(out)]) == EXIT_OK
        assert json.loads((out / "config.json").read_text())["data"]["train"].endswith("train.jsonl")

    def test_pretrain_finetune_route(self, tmp_path):
        save_graphs(synthetic_records(6, seed=4), tmp_path / "pseudo.jsonl")
        out = tmp_path / "run"
        assert run(["train", "--config", str(tiny_config(tmp_path)), "--pseudo", str(tmp_path / "pseudo.jsonl"),
                    "--epochs", "1", "--out", str(out)]) == EXIT_OK
        phases = {line.split(",")[0] for line in (out / "metrics.csv").read_text().splitlines()[1:]}
        assert phases == {"pretrain", "finetune"}

    def test_reproducible(self, tmp_path):
        cfg = tiny_config(tmp_path)
        for name in ("a", "b"):
            assert run(["train", "--config", str(cfg), "--out", str(tmp_path / name)]) == EXIT_OK
        for f in ("model.ckpt", "metrics.csv"):
            assert digest(tmp_path / "a" / f) == digest(tmp_path / "b" / f)


class TestParseEvalAugment:
    def test_parse_text_and_conllu(self, trained, tmp_path):
        ckpt = str(trained / "run" / "model.ckpt")
        text = tmp_path / "in.txt"
        text.write_text("the dog chased a cat .\nMary slept .\n")
        assert run(["parse", "--model", ckpt, "--input", str(text), "--out", str(tmp_path / "p.jsonl")]) == EXIT_OK
        recs = load_graphs(tmp_path / "p.jsonl", allow_flagged=True)
        assert [r[0].forms for r in recs] == [["the", "dog", "chased", "a", "cat", "."], ["Mary", "slept", "."]]
        conllu = tmp_path / "in.conllu"
        conllu.write_text(write_conllu([r[0] for r in synthetic_records(3, seed=8)]))
        assert run(["parse", "--model", ckpt, "--input", str(conllu), "--out", str(tmp_path / "q.jsonl")]) == EXIT_OK
        lines = [json.loads(x) for x in (tmp_path / "q.jsonl").read_text().splitlines()[1:]]
        assert len(lines) == 3
        for obj, rec in zip(lines, load_graphs(tmp_path / "q.jsonl", allow_flagged=True)):
            assert bool(obj.get("problems")) == bool(rec[1].problems(len(rec[0])))
        gold = tmp_path / "gold.jsonl"
        save_graphs(synthetic_records(3, seed=8), gold)
        assert run(["eval", "--gold", str(gold), "--pred", str(tmp_path / "q.jsonl")]) == EXIT_OK
        flagged = any(obj.get("problems") for obj in lines)
        expected = EXIT_INVALID if flagged else EXIT_OK
        assert run(["eval", "--gold", str(tmp_path / "q.jsonl"), "--pred", str(gold)]) == expected

    def test_eval_identity(self, tmp_path, capsys):
        gold = tmp_path / "gold.jsonl"
        save_graphs(synthetic_records(8, seed=6), gold)
        assert run(["eval", "--gold", str(gold), "--pred", str(gold), "--out", str(tmp_path / "r.json")]) == EXIT_OK
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["s_f1"] == report["uas"] == report["las"] == report["pos"] == 100.0
        assert report["attr_rho"] == pytest.approx(1.0) and report["attr_f1"] == 100.0

    def test_eval_with_model(self, trained, tmp_path):
        gold = tmp_path / "gold.jsonl"
        save_graphs(synthetic_records(4, seed=6), gold)
        ckpt = str(trained / "run" / "model.ckpt")
        assert run(["eval", "--gold", str(gold), "--model", ckpt, "--out", str(tmp_path / "r.json")]) == EXIT_OK
        report = json.loads((tmp_path / "r.json").read_text())
        assert 0 <= report["s_f1"] <= 100 and "uas" in report

    def test_eval_mismatched_files(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_graphs(synthetic_records(3, seed=1), a)
        save_graphs(synthetic_records(2, seed=1), b)
        assert run(["eval", "--gold", str(a), "--pred", str(b)]) == EXIT_INVALID

    def test_augment(self, trained, tmp_path):
        ckpt = str(trained / "run" / "model.ckpt")
        pool = tmp_path / "pool.txt"
        pool.write_text("the dog chased a cat .\nMary slept .\nzzz\n")
        domain = tmp_path / "domain.txt"
        domain.write_text("the dog chased the cat .\n")
        out = tmp_path / "aug.jsonl"
        assert run(["augment", "--model", ckpt, "--input", str(pool), "--in-domain", str(domain), "--select", "2",
                    "--out", str(out)]) == EXIT_OK
        report = json.loads((tmp_path / "aug.jsonl.report.json").read_text())
        assert report["input"] == 3 and report["selected"] == 2
        assert report["kept"] == len(load_graphs(out)) <= 2

    def test_augment_select_needs_count(self, trained, tmp_path):
        pool = tmp_path / "pool.txt"
        pool.write_text("a b\n")
        assert run(["augment", "--model", str(trained / "run" / "model.ckpt"), "--input", str(pool),
                    "--in-domain", str(pool)]) == EXIT_INVALID


class TestChecks:
    def test_gradcheck_only(self, capsys):
        assert run(["gradcheck", "--only", "primitive.arithmetic", "--only", "biaffine.arc_scores"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "biaffine.arc_scores" in out and "max relative error" in out

    def test_gradcheck_unknown_name(self):
        assert run(["gradcheck", "--only", "no.such.check"]) == EXIT_INVALID

    def test_selfcheck(self, capsys):
        assert run(["selfcheck", "--scale", "0.2"]) == EXIT_OK


@pytest.mark.skipif(shutil.which("uds-cascade") is None, reason="console script not installed")
def test_console_script():
    proc = subprocess.run(["uds-cascade", "gradcheck", "--only", "primitive.arithmetic"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "udscascade.cli", "nope"], capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
