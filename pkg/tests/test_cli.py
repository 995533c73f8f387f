from __future__ import annotations

import json

import numpy as np
import pytest

from conftest import DEEPER_ISSUE_CONLL
from graph2seq.cli import EXIT_INVALID, EXIT_OK, TASK_WIDTH, build_parser, build_run_config, main
from graph2seq.graph import EdgeTag, LeviGraph
from graph2seq.synthetic import synthetic_amr

SMALL = """seed = 3
[encoder]
hidden = 32
layers = 2
pos_dim = 8
[decoder]
hidden = 24
embed = 16
[train]
max_checkpoints = 2
batch_size = 8
"""


def _amr_corpus(n, seed):
    rng = np.random.default_rng(seed)
    return "\n\n".join(synthetic_amr(rng).block() for _ in range(n)) + "\n"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "train.amr").write_text(_amr_corpus(40, 0))
    (root / "dev.amr").write_text(_amr_corpus(8, 1))
    (root / "small.toml").write_text(SMALL)
    assert main(["preprocess", "--input", str(root / "train.amr"), "--output", str(root / "train")]) == EXIT_OK
    assert main(["preprocess", "--input", str(root / "dev.amr"), "--output", str(root / "dev")]) == EXIT_OK
    code = main(
        ["train", "--train", str(root / "train"), "--dev", str(root / "dev"), "--output", str(root / "ckpt"),
         "--config", str(root / "small.toml"), "--lr", "0.003"]
    )
    assert code == EXIT_OK
    return root


class TestConfigMerge:
    def _cfg(self, argv):
        return build_run_config(build_parser().parse_args(argv))

    def test_task_widths(self):
        for task, width in TASK_WIDTH.items():
            cfg = self._cfg(["train", "--task", task, "--train", "a", "--dev", "b", "--output", "c"])
            assert cfg.encoder.hidden == width
        plus = self._cfg(["train", "--task", "nmt-plus", "--train", "a", "--dev", "b", "--output", "c"])
        assert EdgeTag.LEFT in plus.encoder.tags

    def test_flags_beat_file(self, tmp_path):
        path = tmp_path / "c.toml"
        path.write_text(SMALL)
        cfg = self._cfg(["train", "--train", "a", "--dev", "b", "--output", "c", "--config", str(path), "--hidden", "40", "--seed", "9"])
        assert cfg.encoder.hidden == 40 and cfg.encoder.layers == 2
        assert cfg.seed == 9 and cfg.train.seed == 9
        assert cfg.train.max_checkpoints == 2

    def test_dropout_shared_with_encoder(self):
        cfg = self._cfg(["train", "--train", "a", "--dev", "b", "--output", "c", "--dropout", "0.2"])
        assert cfg.encoder.dropout == 0.2

    def test_unknown_key(self, tmp_path, caplog):
        path = tmp_path / "bad.toml"
        path.write_text("[encoder]\nwidth = 3\n")
        code = main(["train", "--train", "a", "--dev", "b", "--output", str(tmp_path), "--config", str(path)])
        assert code == EXIT_INVALID
        assert "width" in caplog.text


class TestPreprocess:
    def test_outputs(self, workspace):
        lines = (workspace / "train.graphs.jsonl").read_text().splitlines()
        assert len(lines) == 40
        g = LeviGraph.from_json(lines[0])
        assert g.positions is not None
        toks = (workspace / "train.tok").read_text().splitlines()
        assert len(toks) == 40 and any("_0" in t for t in toks)
        maps = json.loads((workspace / "train.map.json").read_text())
        assert len(maps) == 40
        stats = json.loads((workspace / "train.stats.json").read_text())
        assert stats["instances"] == 40
        assert sum(stats["edges_by_tag"].values()) == stats["edges"]

    def test_strict_and_lenient(self, tmp_path):
        corpus = _amr_corpus(3, 5) + "\n(a / alpha :ARG0 (b / beta)\n"
        (tmp_path / "bad.amr").write_text(corpus)
        args = ["preprocess", "--input", str(tmp_path / "bad.amr"), "--output", str(tmp_path / "out")]
        assert main(args + ["--strict"]) == EXIT_INVALID
        assert main(args) == EXIT_OK
        assert len((tmp_path / "out.graphs.jsonl").read_text().splitlines()) == 3

    @pytest.mark.parametrize("task, sequential", [("nmt", False), ("nmt-plus", True)])
    def test_dependency_input(self, tmp_path, task, sequential):
        (tmp_path / "s.conll").write_text(DEEPER_ISSUE_CONLL + "\n")
        (tmp_path / "s.de").write_text("Es gibt ein tieferes Problem .\n")
        code = main(
            ["preprocess", "--task", task, "--input", str(tmp_path / "s.conll"), "--target", str(tmp_path / "s.de"),
             "--output", str(tmp_path / "s")]
        )
        assert code == EXIT_OK
        g = LeviGraph.from_json((tmp_path / "s.graphs.jsonl").read_text().splitlines()[0])
        assert len(g.edges) == (60 if sequential else 46)
        assert bool(g.edges_with(EdgeTag.LEFT)) is sequential

    def test_missing_input(self, tmp_path):
        assert main(["preprocess", "--input", str(tmp_path / "nope"), "--output", str(tmp_path / "x")]) == EXIT_INVALID


class TestTrainTranslateEvaluate:
    def test_header_and_checkpoints(self, workspace):
        lines = [json.loads(x) for x in (workspace / "ckpt" / "metrics.jsonl").read_text().splitlines()]
        head = lines[0]
        assert head["run"]["encoder"]["hidden"] == 32 and head["run"]["train"]["lr"] == 0.003
        assert head["run"]["seed"] == 3 and head["parameters"] > 0
        assert (workspace / "ckpt" / "params.00002").exists()
        assert (workspace / "ckpt" / "params.best").is_symlink()

    def test_translate_and_ensemble(self, workspace):
        ck = str(workspace / "ckpt" / "params.best")
        one, two = workspace / "one.txt", workspace / "two.txt"
        args = ["translate", "--test", str(workspace / "dev"), "--beam", "2"]
        assert main(args + ["--checkpoint", ck, "--output", str(one), "--trace", str(workspace / "t.jsonl")]) == EXIT_OK
        assert main(args + ["--checkpoint", ck, "--checkpoint", ck, "--output", str(two)]) == EXIT_OK
        assert one.read_text() == two.read_text()
        assert len(one.read_text().splitlines()) == 8
        trace = [json.loads(x) for x in (workspace / "t.jsonl").read_text().splitlines()]
        assert [t["id"] for t in trace] == list(range(8))

    def test_translate_requires_checkpoint(self, workspace):
        assert main(["translate", "--test", str(workspace / "dev")]) == EXIT_INVALID
        assert main(["translate", "--test", str(workspace / "dev"), "--checkpoint", str(workspace / "missing")]) == EXIT_INVALID

    def test_vocabulary_mismatch(self, workspace, tmp_path):
        (tmp_path / "other.amr").write_text(_amr_corpus(20, 7))
        assert main(["preprocess", "--input", str(tmp_path / "other.amr"), "--output", str(tmp_path / "o")]) == EXIT_OK
        code = main(
            ["train", "--train", str(tmp_path / "o"), "--dev", str(tmp_path / "o"), "--output", str(tmp_path / "ck"),
             "--config", str(workspace / "small.toml"), "--max-checkpoints", "1"]
        )
        assert code == EXIT_OK
        code = main(
            ["translate", "--test", str(workspace / "dev"), "--checkpoint", str(workspace / "ckpt" / "params.best"),
             "--checkpoint", str(tmp_path / "ck" / "params.00001")]
        )
        assert code == EXIT_INVALID

    def test_evaluate(self, workspace, tmp_path, capsys):
        ref = tmp_path / "ref.txt"
        hyp = tmp_path / "hyp.txt"
        ref.write_text("the boy wants the girl\nRussia proposed cooperation .\n")
        hyp.write_text("the boy wants a girl\nRussia proposed cooperation .\n")
        capsys.readouterr()
        assert main(["evaluate", "--hyp", str(ref), "--ref", str(ref)]) == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["bleu"] == pytest.approx(100.0) and report["chrf++"] == pytest.approx(100.0)
        out = tmp_path / "r.json"
        code = main(["evaluate", "--hyp", str(ref), "--ref", str(ref), "--compare", str(hyp),
                     "--bootstrap-samples", "200", "--output", str(out)])
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert report["config"]["case_sensitive"] is False
        assert 0.0 <= report["compare"]["bootstrap_p"] <= 1.0
        assert report["compare"]["wilcoxon_p"] == 1.0  # one non-zero pair

    def test_evaluate_length_mismatch(self, tmp_path):
        (tmp_path / "a").write_text("x\ny\n")
        (tmp_path / "b").write_text("x\n")
        assert main(["evaluate", "--hyp", str(tmp_path / "a"), "--ref", str(tmp_path / "b")]) == EXIT_INVALID


class TestGradcheck:
    def test_unknown_op(self):
        assert main(["gradcheck", "--inject-bug", "frobnicate"]) == EXIT_INVALID

    def test_injected_bug_fails(self, capsys):
        assert main(["gradcheck", "--bits", "64", "--inject-bug", "tanh"]) == EXIT_INVALID
        out = capsys.readouterr().out
        failed = {line.split()[1] for line in out.splitlines() if line.startswith("FAIL")}
        assert {"tanh", "model"} <= failed
        assert "PASS add" in out
