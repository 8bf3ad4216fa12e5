"""CLI surface: commands, exit codes, manifests, file schemas."""

import json
from pathlib import Path

import pytest

from danqa import tensor as tc
from danqa.cli import PRESETS, build_parser, main
from danqa.corpus import load_corpus
from danqa.model import load_checkpoint


def run(*argv):
    return main(list(argv))


def train_args(corpus, out, **over):
    flags = {
        "--corpus": str(corpus), "--task": "compat", "--epochs": "2",
        "--batch": "16", "--d-e": "16", "--blstm": "16", "--tq": "12",
        "--ta": "12", "--seed": "3", "--out": str(out),
    }
    flags.update({k: str(v) for k, v in over.items()})
    argv = ["train"]
    for k, v in flags.items():
        argv += [k, v]
    return argv


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One small trained model shared by the eval/predict tests."""
    root = tmp_path_factory.mktemp("tiny")
    corpus = root / "corpus.jsonl"
    assert run("synth", "--n", "60", "--task", "compat", "--seed", "1",
               "--out", str(corpus)) == 0
    out = root / "run"
    assert run(*train_args(corpus, out, **{"--epochs": "6"})) == 0
    return {"corpus": corpus, "out": out,
            "checkpoint": out / "best.ckpt", "root": root}


class TestSynth:
    def test_output_loads(self, tmp_path):
        path = tmp_path / "c.jsonl"
        assert run("synth", "--n", "10", "--task", "compat", "--out",
                   str(path)) == 0
        assert len(load_corpus(path)) == 10
        assert Path(str(path) + ".manifest.json").exists()

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        run("synth", "--n", "25", "--task", "satisf", "--seed", "7",
            "--out", str(a))
        run("synth", "--n", "25", "--task", "satisf", "--seed", "7",
            "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_polarity_mix(self, tmp_path):
        path = tmp_path / "c.jsonl"
        assert run("synth", "--n", "1000", "--task", "compat", "--seed", "2",
                   "--mix", "0.5,0.3,0.2", "--out", str(path)) == 0
        pairs = load_corpus(path)
        counts = {1: 0, 2: 0, 3: 0}
        polarity_of = {"C": 1, "I": 2, "U": 3}
        for p in pairs:
            pol = next(polarity_of[lab] for lab in p.gold_labels if lab != "O")
            counts[pol] += 1
        for pol, want in ((1, 0.5), (2, 0.3), (3, 0.2)):
            assert abs(counts[pol] / 1000 - want) <= 0.03

    def test_bad_mix_is_usage_error(self, tmp_path):
        code = run("synth", "--n", "5", "--task", "compat",
                   "--mix", "0.5,0.4,0.2", "--out", str(tmp_path / "x"))
        assert code == 1


class TestTrain:
    def test_defaults_match_published_hyperparameters(self):
        parser = build_parser()
        args = parser.parse_args(["train", "--corpus", "x", "--task",
                                  "compat", "--out", "y"])
        assert args.batch == 128
        assert args.lr == 0.001
        assert args.dropout == 0.1
        assert PRESETS["full"] == {"d_e": 300, "blstm_dim": 128,
                                    "t_q": 82, "t_a": 82}

    def test_zero_epochs_smoke(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        run("synth", "--n", "20", "--task", "compat", "--seed", "4",
            "--out", str(corpus))
        out = tmp_path / "run"
        assert run(*train_args(corpus, out, **{"--epochs": "0"})) == 0
        model, vocab, manifest = load_checkpoint(out / "best.ckpt")
        assert manifest["extra"]["best_epoch"] == 0
        assert (out / "history.jsonl").read_text() == ""
        assert (out / "run.manifest.json").exists()

    def test_baseline_variant_trains(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        run("synth", "--n", "20", "--task", "compat", "--seed", "5",
            "--out", str(corpus))
        out = tmp_path / "run"
        assert run(*train_args(corpus, out, **{"--epochs": "1",
                                               "--variant": "qa-s-blstm"})) == 0
        model, _, _ = load_checkpoint(out / "best.ckpt")
        assert model.cfg.variant == "qa-s-blstm"
        assert not any(n.startswith("ctx1_qa") for n in model.params())

    def test_corpus_validation_before_training(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "1"}\n')
        assert run(*train_args(bad, tmp_path / "run")) == 2

    def test_task_mismatch_rejected(self, tmp_path):
        corpus = tmp_path / "c.jsonl"
        run("synth", "--n", "20", "--task", "satisf", "--seed", "6",
            "--out", str(corpus))
        assert run(*train_args(corpus, tmp_path / "run")) == 2


class TestEval:
    def test_report_schema(self, tiny_run, tmp_path):
        report = tmp_path / "report.json"
        assert run("eval", "--checkpoint", str(tiny_run["checkpoint"]),
                   "--corpus", str(tiny_run["corpus"]),
                   "--report-out", str(report)) == 0
        data = json.loads(report.read_text())
        for key in ("avg_f1", "extraction_f1", "polarity_acc", "per_class"):
            assert key in data
        assert data["method"] == "dan"

    def test_labels_as_predictions_is_perfect(self, tiny_run, tmp_path):
        report = tmp_path / "report.json"
        assert run("eval", "--checkpoint", str(tiny_run["checkpoint"]),
                   "--corpus", str(tiny_run["corpus"]), "--split", "all",
                   "--labels-as-predictions",
                   "--report-out", str(report)) == 0
        data = json.loads(report.read_text())
        assert data["avg_f1"] == 1.0
        assert data["extraction_f1"] == 1.0
        assert data["polarity_acc"] == 1.0

    def test_vocab_hash_mismatch_refused(self, tiny_run, tmp_path):
        other = tmp_path / "other.jsonl"
        run("synth", "--n", "40", "--task", "compat", "--seed", "99",
            "--out", str(other))
        code = run("eval", "--checkpoint", str(tiny_run["checkpoint"]),
                   "--corpus", str(other))
        assert code == 2


class TestPredict:
    def test_output_schema(self, tiny_run, tmp_path):
        out = tmp_path / "tuples.jsonl"
        assert run("predict", "--checkpoint", str(tiny_run["checkpoint"]),
                   "--in", str(tiny_run["corpus"]), "--out", str(out)) == 0
        lines = [json.loads(l) for l in out.read_text().splitlines()]
        assert len(lines) == 60
        for rec in lines:
            assert set(rec) == {"id", "product_id", "tuples"}
            for t in rec["tuples"]:
                assert set(t) == {"product_id", "target", "target_span",
                                  "function_words", "function_spans",
                                  "polarity"}
                assert t["polarity"] in (1, 2, 3)
        assert Path(str(out) + ".manifest.json").exists()

    def test_task_mismatch_is_usage_error(self, tiny_run, tmp_path):
        other = tmp_path / "satisf.jsonl"
        run("synth", "--n", "12", "--task", "satisf", "--seed", "8",
            "--out", str(other))
        code = run("predict", "--checkpoint", str(tiny_run["checkpoint"]),
                   "--in", str(other), "--out", str(tmp_path / "x.jsonl"))
        assert code == 1


class TestGradcheckCommand:
    def test_sampled_run_passes(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert run("gradcheck", "--max-elements", "2") == 0
        report = json.loads((tmp_path / "gradcheck_report.json").read_text())
        assert report["ok"] is True
        assert set(report["results"]) == {"dan", "dan-no-ans-attn",
                                          "qa-s-blstm", "qa-coattention"}

    def test_corrupted_backward_detected(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        true_softmax = tc.softmax_rows

        def broken_softmax(x):
            out = true_softmax(x)
            if out._backward is not None:
                good = out._backward
                out._backward = lambda g: tuple(
                    None if p is None else 1.02 * p for p in good(g))
            return out

        monkeypatch.setattr(tc, "softmax_rows", broken_softmax)
        code = run("gradcheck", "--max-elements", "2", "--out",
                   str(tmp_path / "bad.json"))
        assert code == 3
        report = json.loads((tmp_path / "bad.json").read_text())
        assert report["ok"] is False


class TestReport:
    def test_combined_table(self, tiny_run, tmp_path, capsys):
        r1 = tmp_path / "r1.json"
        run("eval", "--checkpoint", str(tiny_run["checkpoint"]),
            "--corpus", str(tiny_run["corpus"]), "--report-out", str(r1))
        capsys.readouterr()
        assert run("report", str(r1), str(r1)) == 0
        out = capsys.readouterr().out
        assert "PCA F1" in out
        assert out.count("dan") >= 2

    def test_unknown_flag_is_usage_error(self):
        assert run("eval", "--nonsense") == 1
