import json

import numpy as np
import pytest

from otc.cli import run
from otc.graphs import Vocabulary
from otc.io import read_emissions, write_emissions
from otc.wfst import read_text

from conftest import random_emissions

AB = Vocabulary(("a", "b"))


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("OTC_SEED", raising=False)
    return tmp_path


@pytest.fixture
def emissions(workdir, rng):
    write_emissions("e.tsv", AB, random_emissions(rng, 5, 3))
    (workdir / "y.txt").write_text("a b\n")
    return "e.tsv"


def out_lines(capsys):
    return capsys.readouterr().out.splitlines()


class TestBuildGraph:
    def test_otc_g_dot(self, workdir, capsys):
        argv = ["build-graph", "--type", "otc-g", "--transcript", "a b", "--lambda1", "0.5", "--lambda2", "0.5", "--format", "dot"]
        assert run(argv) == 0
        dot = capsys.readouterr().out
        star = [l for l in dot.splitlines() if "<star>:<star>" in l]
        loops = [l for l in star if l.split("->")[0].strip() == l.split("->")[1].split("[")[0].strip()]
        assert len(star) == 5 and len(loops) == 3

    def test_att_to_file_with_manifest(self, workdir):
        assert run(["build-graph", "--type", "training", "--transcript", "a b", "-o", "s.fst"]) == 0
        w = read_text((workdir / "s.fst").read_text())
        assert w.num_states > 0
        manifest = json.loads((workdir / "s.fst.manifest.json").read_text())
        assert manifest["subcommand"] == "build-graph"
        assert manifest["outputs"] == ["s.fst"]
        assert manifest["config"]["format"] == "att"

    def test_emission_graph(self, emissions, capsys):
        assert run(["build-graph", "--type", "emission", "--emissions", emissions, "--include-star"]) == 0
        w = read_text(capsys.readouterr().out)
        assert w.num_arcs == 5 * 4

    def test_usage_error(self, workdir, capsys):
        assert run(["build-graph", "--type", "nonsense"]) == 2
        assert run(["frobnicate"]) == 2

    def test_unknown_unit(self, workdir, tmp_path, capsys):
        (tmp_path / "v.txt").write_text("a\nb\n")
        assert run(["build-graph", "--type", "g", "--vocab", "v.txt", "--transcript", "a z"]) == 1
        assert "z" in capsys.readouterr().err


class TestGraphTools:
    def test_compose_total_weight_convert(self, workdir, capsys):
        (workdir / "a.fst").write_text("0 1 1 1 -1.0\n1 2 2 2 -1.0\n2\n")
        (workdir / "b.fst").write_text("0 1 1 3 -0.5\n1 2 2 4 -0.5\n2\n")
        assert run(["compose", "a.fst", "b.fst", "--connect", "-o", "c.fst"]) == 0
        assert run(["total-weight", "c.fst"]) == 0
        assert out_lines(capsys) == ["-3"]
        assert run(["convert", "c.fst", "--format", "dot"]) == 0
        assert "digraph" in capsys.readouterr().out

    def test_parse_error_is_domain_error(self, workdir, capsys):
        (workdir / "bad.fst").write_text("0 1 x 1 0\n")
        assert run(["total-weight", "bad.fst"]) == 1
        assert "line 1" in capsys.readouterr().err

    def test_cycle_is_domain_error(self, workdir, capsys):
        (workdir / "loop.fst").write_text("0 0 1 1 0\n0\n")
        assert run(["total-weight", "loop.fst"]) == 1


class TestLoss:
    def test_ctc_and_degenerate_otc_agree(self, emissions, capsys):
        assert run(["loss", "--emissions", emissions, "--transcript", "y.txt", "--mode", "ctc"]) == 0
        ctc = out_lines(capsys)
        argv = ["loss", "--emissions", emissions, "--transcript", "y.txt", "--mode", "otc", "--beta1", "inf", "--beta2", "inf"]
        assert run(argv) == 0
        assert out_lines(capsys) == ctc

    def test_verify_and_gradient(self, emissions, capsys):
        argv = ["loss", "--emissions", emissions, "--transcript", "y.txt", "--mode", "otc", "--verify", "--grad", "g.tsv"]
        assert run(argv) == 0
        assert "verify: ok" in capsys.readouterr().err
        vocab, _, grad = read_emissions("g.tsv")
        assert vocab == AB and grad.shape == (5, 3)
        assert np.allclose(grad.sum(axis=1), -1.0, atol=1e-5)

    def test_verify_does_not_change_output(self, emissions, capsys):
        run(["loss", "--emissions", emissions, "--transcript", "y.txt"])
        plain = out_lines(capsys)
        run(["loss", "--emissions", emissions, "--transcript", "y.txt", "--verify"])
        assert out_lines(capsys) == plain

    def test_no_path(self, workdir, capsys):
        write_emissions("short.tsv", AB, np.log(np.full((1, 3), 1 / 3)))
        (workdir / "y.txt").write_text("a b\n")
        assert run(["loss", "--emissions", "short.tsv", "--transcript", "y.txt"]) == 1
        assert out_lines(capsys) == ["inf"]

    def test_config_file_and_flag_precedence(self, emissions, capsys, workdir):
        (workdir / "run.cfg").write_text("mode = otc\nlambda1 = inf\nlambda2 = inf\n")
        assert run(["loss", "--config", "run.cfg", "--emissions", emissions, "--transcript", "y.txt"]) == 0
        from_config = out_lines(capsys)
        run(["loss", "--emissions", emissions, "--transcript", "y.txt"])
        assert out_lines(capsys) == from_config
        run(["loss", "--config", "run.cfg", "--lambda1", "0", "--emissions", emissions, "--transcript", "y.txt"])
        assert out_lines(capsys) != from_config

    def test_batch(self, emissions, capsys, workdir, rng):
        write_emissions("e2.tsv", AB, random_emissions(rng, 4, 3))
        (workdir / "y.txt").write_text("a b\nb\n")
        assert run(["loss", "--emissions", emissions, "e2.tsv", "--transcript", "y.txt"]) == 0
        assert len(out_lines(capsys)) == 2


class TestCorrupt:
    def test_zero_rates_identity(self, workdir):
        (workdir / "t.txt").write_text("a b c\nd e\n\nf\n")
        assert run(["corrupt", "--input", "t.txt", "--output", "o.txt", "--p-sub", "0", "--p-ins", "0", "--p-del", "0"]) == 0
        assert (workdir / "o.txt").read_bytes() == (workdir / "t.txt").read_bytes()
        report = json.loads((workdir / "o.txt.report.json").read_text())
        assert report["aggregate"]["tokens"] == 6

    def test_env_seed_and_determinism(self, workdir, monkeypatch):
        (workdir / "t.txt").write_text("a b c d e f g h\n" * 50)
        monkeypatch.setenv("OTC_SEED", "7")
        run(["corrupt", "--input", "t.txt", "--output", "o1.txt", "--error-rate", "0.5"])
        run(["corrupt", "--input", "t.txt", "--output", "o2.txt", "--error-rate", "0.5"])
        run(["corrupt", "--input", "t.txt", "--output", "o3.txt", "--error-rate", "0.5", "--seed", "8"])
        assert (workdir / "o1.txt").read_bytes() == (workdir / "o2.txt").read_bytes()
        assert (workdir / "o1.txt").read_bytes() != (workdir / "o3.txt").read_bytes()
        assert json.loads((workdir / "o1.txt.manifest.json").read_text())["seeds"]["corruption"] == 7

    def test_conflicting_flags(self, workdir):
        (workdir / "t.txt").write_text("a b\n")
        assert run(["corrupt", "--input", "t.txt", "--output", "o.txt", "--error-rate", "0.1", "--p-sub", "0.1"]) == 1


class TestTrainAndEval:
    def test_train_save_eval(self, workdir, capsys):
        small = ["--n-train", "20", "--n-test", "10", "--epochs", "2"]
        argv = ["train-toy", *small, "--mode", "otc", "--error-rate", "0.3", "-o", "r.json", "--save-model", "m.npz"]
        assert run(argv) == 0
        record = json.loads((workdir / "r.json").read_text())
        assert {"mode", "error_type", "error_rate", "ter", "loss_trace"} <= set(record)
        assert out_lines(capsys) == [f"ter {record['ter']:.6g}"]
        assert run(["eval", "--model", "m.npz", *small]) == 0
        assert out_lines(capsys) == [f"ter {record['ter']:.6g}"]

    def test_sweep_table(self, workdir, capsys):
        argv = ["train-toy", "--n-train", "10", "--n-test", "5", "--epochs", "1", "--sweep", "s.tsv", "--sweep-rates", "0,0.5"]
        assert run(argv) == 0
        rows = (workdir / "s.tsv").read_text().splitlines()
        assert rows[0] == "error_type\terror_rate\tmode\tter"
        assert len(rows) == 5

    def test_eval_text(self, workdir, capsys):
        (workdir / "r.txt").write_text("a b c\n")
        (workdir / "h.txt").write_text("a x c\n")
        assert run(["eval", "--ref", "r.txt", "--hyp", "h.txt"]) == 0
        assert out_lines(capsys) == ["ter 0.333333"]
