import csv
import json

import pytest

from shapescale.cli import main
from shapescale.metrics import METRIC_NAMES
from shapescale.model_store import write_model
from shapescale.synth import planted_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def simpson_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("simpson")
    assert main(["synth", "simpson", "--out", str(out), "--groups", "3", "--per-group", "8"]) == 0
    return out


@pytest.fixture
def planted(tmp_path):
    m = planted_model("p", [2.5, 3.0], [40, 60, 50], seed=1)
    write_model(m, tmp_path / "p")
    return tmp_path / "p"


class TestAnalyze:
    def test_schema(self, capsys, planted):
        code, out, _ = run(capsys, "analyze", planted)
        assert code == 0
        doc = json.loads(out)
        assert set(METRIC_NAMES) <= set(doc)
        assert all(isinstance(doc[m], float) for m in METRIC_NAMES)

    def test_scan_csv(self, capsys, planted, tmp_path):
        code, _, _ = run(capsys, "analyze", planted, "--scan-csv", tmp_path / "scan")
        assert code == 0
        files = sorted((tmp_path / "scan").glob("*.csv"))
        assert len(files) == 2
        with open(files[0]) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x_min", "alpha", "d_ks"] and len(rows) > 2

    def test_missing_init_gives_null(self, capsys, tmp_path):
        write_model(planted_model("q", [2.5], [30, 30], seed=2, with_init=False), tmp_path / "q")
        doc = json.loads(run(capsys, "analyze", tmp_path / "q")[1])
        assert doc["distance_from_init"] is None

    def test_per_layer_and_min_tail(self, capsys, planted):
        doc = json.loads(run(capsys, "analyze", planted, "--per-layer")[1])
        assert [l["layer"] for l in doc["layers"]] == ["layer0", "layer1"]
        code, out, _ = run(capsys, "analyze", planted, "--min-tail", "100000")
        assert code == 4 or json.loads(out)["alpha_avg"] is None

    def test_missing_dir(self, capsys, tmp_path):
        code, out, err = run(capsys, "analyze", tmp_path / "nope")
        assert code == 3 and out == "" and err


class TestCorpus:
    def test_flags_simpson(self, capsys, simpson_corpus, tmp_path):
        code, out, _ = run(capsys, "corpus", simpson_corpus / "corpus.json", "--metric", "alpha_avg",
                           "--out-dir", tmp_path / "rep")
        assert code == 0
        doc = json.loads(out)
        assert doc["simpson"]["flagged"] is True
        assert set(doc["per_subgroup"]) == {"g0", "g1", "g2"}
        assert (tmp_path / "rep" / "models.csv").exists()
        assert len(list((tmp_path / "rep").glob("subgroup_*.csv"))) == 3

    def test_homogeneous_not_flagged(self, capsys, tmp_path):
        main(["synth", "homogeneous", "--out", str(tmp_path), "--groups", "3", "--per-group", "6"])
        capsys.readouterr()
        code, out, _ = run(capsys, "corpus", tmp_path, "--metric", "alpha_avg")
        assert code == 0 and json.loads(out)["simpson"]["flagged"] is False

    def test_scale_metric_with_varying_depth(self, capsys, simpson_corpus):
        doc = json.loads(run(capsys, "corpus", simpson_corpus, "--metric", "log_spectral_norm")[1])
        assert doc["aggregate"]["n"] == 24
        assert all(s["r2"] is not None for s in doc["per_subgroup"].values())

    def test_unknown_metric(self, capsys, simpson_corpus):
        code, out, err = run(capsys, "corpus", simpson_corpus, "--metric", "bogus")
        assert code == 2 and out == "" and "bogus" in err

    def test_bad_target_is_usage_error(self, capsys, simpson_corpus):
        assert run(capsys, "corpus", simpson_corpus, "--metric", "alpha_avg", "--target", "x")[0] == 2


class TestSmoothEval:
    @pytest.fixture
    def mlp(self, tmp_path, capsys):
        main(["synth", "mlp", "--out", str(tmp_path / "mlp"), "--seed", "2", "--noise", "0"])
        capsys.readouterr()
        return tmp_path / "mlp"

    def _eval(self, capsys, model, mlp):
        code, out, _ = run(capsys, "eval", model, "--inputs", mlp / "inputs.npy",
                           "--labels", mlp / "labels.npy")
        assert code == 0
        return out

    def test_svd20_then_eval(self, capsys, mlp, tmp_path):
        assert run(capsys, "smooth", mlp / "model", "--transform", "svd20", "--out", tmp_path / "s")[0] == 0
        out = self._eval(capsys, tmp_path / "s", mlp)
        assert out.endswith("\n") and len(out.strip().split(".")[1]) == 6
        assert 0.0 <= float(out) <= 1.0
        assert self._eval(capsys, mlp / "model", mlp) == "1.000000\n"

    def test_full_rank_copy_same_accuracy(self, capsys, mlp, tmp_path):
        run(capsys, "smooth", mlp / "model", "--transform", "svd10", "--keep-frac", "1",
            "--out", tmp_path / "k")
        assert self._eval(capsys, tmp_path / "k", mlp) == self._eval(capsys, mlp / "model", mlp)

    def test_clip(self, capsys, mlp, tmp_path):
        assert run(capsys, "smooth", mlp / "model", "--transform", "clip", "--out", tmp_path / "c")[0] == 0
        assert 0.0 <= float(self._eval(capsys, tmp_path / "c", mlp)) <= 1.0

    def test_bad_quantile(self, capsys, mlp, tmp_path):
        code = run(capsys, "smooth", mlp / "model", "--transform", "clip", "--lo-q", "2",
                   "--out", tmp_path / "c")[0]
        assert code == 2

    def test_conv_model_cannot_be_evaluated(self, capsys, mlp, tmp_path):
        m = planted_model("c", [2.5, 2.5], [32, 64, 10], seed=0, conv_layers=[0])
        write_model(m, tmp_path / "c")
        code, _, err = run(capsys, "eval", tmp_path / "c", "--inputs", mlp / "inputs.npy",
                           "--labels", mlp / "labels.npy")
        assert code == 3 and err


def test_deterministic(capsys, tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        main(["synth", "simpson", "--out", str(d), "--groups", "2", "--per-group", "5", "--seed", "7"])
        capsys.readouterr()
        a = run(capsys, "analyze", d / "g0_000")[1]
        c = run(capsys, "corpus", d / "corpus.json", "--metric", "alpha_hat")[1]
        outs.append((a, c))
    assert outs[0] == outs[1]


def test_no_command_is_usage(capsys):
    assert main([]) == 2
