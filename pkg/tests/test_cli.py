import csv
import io
import json

import pytest

from conftest import D4_ROWS, METRIC_ONLY_ROWS
from ultramedian.cli import main
from ultramedian.fileio import load_instance


def write_matrix(path, rows):
    path.write_text(f"{len(rows)}\n" + "".join(" ".join(map(str, r)) + "\n" for r in rows))
    return str(path)


@pytest.fixture
def d4_file(tmp_path):
    return write_matrix(tmp_path / "d4.mat", D4_ROWS)


def kv(text: str) -> dict[str, str]:
    return dict(line.split("=", 1) for line in text.splitlines() if "=" in line and " " not in line)


class TestGen:
    def test_k_level_matrix(self, tmp_path, capsys):
        out = tmp_path / "kl.mat"
        assert main(["gen", "k-level:n=4,k=2", str(out)]) == 0
        assert load_instance(out).matrix().shape == (4, 4)
        assert "Valid(Ultrametric)" in capsys.readouterr().out

    def test_single_point(self, tmp_path):
        out = tmp_path / "one.mat"
        assert main(["gen", "random-dendrogram:n=1", str(out)]) == 0
        assert out.read_text() == "1\n0\n"

    def test_dendrogram_format(self, tmp_path):
        out = tmp_path / "rd.dnd"
        assert main(["gen", "random-dendrogram:n=20,seed=3", str(out), "--format", "dendrogram"]) == 0
        assert out.read_text().startswith("(")
        assert main(["validate", str(out)]) == 0

    @pytest.mark.parametrize("spec", ["bogus:n=3", "random-dendrogram:n=0", "k-level:n=4,heights=2/1"])
    def test_bad_spec(self, tmp_path, spec):
        assert main(["gen", spec, str(tmp_path / "x.mat")]) == 2

    def test_unwritable_output(self, tmp_path):
        assert main(["gen", "equal-distance:n=3", str(tmp_path / "missing" / "x.mat")]) == 3


class TestValidate:
    def test_d4(self, d4_file, capsys):
        assert main(["validate", d4_file, "--require-ultrametric", "--isosceles"]) == 0
        out = capsys.readouterr().out
        assert "Valid(Ultrametric)" in out and "isosceles: pass" in out

    def test_metric_only(self, tmp_path, capsys):
        path = write_matrix(tmp_path / "m.mat", METRIC_ONLY_ROWS)
        assert main(["validate", path]) == 0
        assert "Valid(MetricOnly)" in capsys.readouterr().out
        assert main(["validate", path, "--require-ultrametric"]) == 4

    def test_triangle_violation(self, tmp_path):
        assert main(["validate", write_matrix(tmp_path / "bad.mat", [[0, 1, 5], [1, 0, 1], [5, 1, 0]])]) == 4

    def test_from_spec(self, capsys):
        assert main(["validate", "--gen", "perturbed-metric:n=30,seed=2,delta=1.0"]) == 0
        assert "Valid(MetricOnly)" in capsys.readouterr().out

    def test_missing_file(self, tmp_path, capsys):
        assert main(["validate", str(tmp_path / "nope.mat")]) == 3
        assert "no such file" in capsys.readouterr().err

    def test_parse_error_reports_position(self, tmp_path, capsys):
        path = tmp_path / "broken.mat"
        path.write_text("2\n0 1\n1 x\n")
        assert main(["validate", str(path)]) == 4
        assert "line 3" in capsys.readouterr().err

    def test_needs_exactly_one_source(self, d4_file):
        with pytest.raises(SystemExit) as info:
            main(["validate"])
        assert info.value.code == 2
        with pytest.raises(SystemExit):
            main(["validate", d4_file, "--gen", "equal-distance:n=3"])


class TestSolve:
    def test_d4_falls_back_to_exact(self, d4_file, capsys):
        assert main(["solve", d4_file, "--epsilon", "0.3"]) == 0
        out = kv(capsys.readouterr().out)
        assert out["selected"] == "1" and out["mode"] == "exact-fallback"
        assert out["ratio"] == "1.0" and out["queries_used"] == "16"

    def test_sampled_mode(self, capsys):
        assert main(["solve", "--gen", "random-dendrogram:n=3000,seed=1", "--epsilon", "0.25", "--seed", "4"]) == 0
        out = kv(capsys.readouterr().out)
        assert out["mode"] == "sampled" and out["queries_used"] == str(45 * 178)
        assert float(out["ratio"]) >= 1.0

    def test_csv_row(self, d4_file, capsys):
        assert main(["solve", d4_file, "--csv"]) == 0
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert len(rows) == 1 and rows[0]["selected"] == "1"

    def test_no_audit_leaves_ratio_blank(self, capsys):
        assert main(["solve", "--gen", "random-dendrogram:n=3000,seed=1", "--no-audit", "--csv"]) == 0
        row = next(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert row["ratio"] == "" and row["exact_cost"] == ""

    def test_theorem_mode_uses_quarter_epsilon(self, capsys):
        assert main(["solve", "--gen", "random-dendrogram:n=5000,seed=2", "--epsilon", "0.8", "--theorem", "--no-audit"]) == 0
        assert kv(capsys.readouterr().out)["queries_used"] == str(65 * 322)

    @pytest.mark.parametrize("eps", ["1.5", "0", "-0.1", "nan"])
    def test_epsilon_out_of_range(self, d4_file, eps):
        assert main(["solve", d4_file, "--epsilon", eps]) == 2

    def test_require_ultrametric(self, tmp_path):
        path = write_matrix(tmp_path / "m.mat", METRIC_ONLY_ROWS)
        assert main(["solve", path]) == 0
        assert main(["solve", path, "--require-ultrametric"]) == 4

    def test_rejects_invalid_metric(self, tmp_path):
        assert main(["solve", write_matrix(tmp_path / "bad.mat", [[0, 1, 5], [1, 0, 1], [5, 1, 0]])]) == 4

    def test_output_is_reproducible(self, capsys):
        argv = ["solve", "--gen", "random-dendrogram:n=4000,seed=9", "--seed", "3", "--epsilon", "0.3"]
        main(argv)
        first = capsys.readouterr().out
        main(argv)
        assert capsys.readouterr().out == first


class TestSolveExact:
    def test_d4(self, d4_file, capsys):
        assert main(["solve-exact", d4_file]) == 0
        out = kv(capsys.readouterr().out)
        assert out == {"selected": "1", "opt_cost": "9.0", "queries_used": "16"}


class TestExperiment:
    def test_success_rate_single_trial(self, capsys):
        assert main(["experiment", "success-rate", "--n", "300", "--trials", "1"]) == 0
        text = capsys.readouterr().out
        rows = [r for r in csv.reader(io.StringIO(text)) if r and not r[0].startswith("#")]
        assert len(rows) == 2 and rows[0][0] == "trial"

    def test_min_success_failure_exits_5(self, capsys):
        argv = ["experiment", "success-rate", "--n", "200", "--trials", "10", "--c-h", "0.01", "--c-k", "0.01",
                "--epsilon", "0.9", "--min-success", "1.01"]
        assert main(argv) == 5
        assert "FAIL" in capsys.readouterr().err

    def test_key_lemma(self, tmp_path):
        out = tmp_path / "kl.csv"
        assert main(["experiment", "key-lemma", "--instances", "10", "--csv", str(out)]) == 0
        assert "total_violations,0" in out.read_text()

    def test_key_lemma_on_perturbed_metric_fails(self):
        argv = ["experiment", "key-lemma", "--family", "perturbed-metric", "--n", "64", "--delta", "1.0", "--instances", "5"]
        assert main(argv) == 5

    def test_flip_rate_without_pair(self):
        assert main(["experiment", "flip-rate", "--family", "equal-distance", "--n", "30", "--trials", "5"]) == 2

    def test_flip_rate_runs(self, tmp_path):
        js = tmp_path / "f.json"
        argv = ["experiment", "flip-rate", "--epsilon", "0.2", "--trials", "50", "--csv", str(tmp_path / "f.csv"), "--json", str(js)]
        assert main(argv) == 0
        doc = json.loads(js.read_text())
        assert doc["aggregates"]["trials"] == 50 and doc["passed"]

    def test_ratio_sweep(self, tmp_path):
        out = tmp_path / "rs.csv"
        argv = ["experiment", "ratio-sweep", "--n", "100", "--epsilons", "0.3,0.5", "--trials", "3", "--csv", str(out)]
        assert main(argv) == 0
        rows = [r for r in csv.reader(io.StringIO(out.read_text())) if r and not r[0].startswith("#")]
        assert len(rows) == 1 + 2 * 2 * 3

    def test_bad_epsilons(self):
        assert main(["experiment", "ratio-sweep", "--n", "50", "--epsilons", "a,b"]) == 2

    def test_audit_cap_hint(self, monkeypatch, capsys):
        monkeypatch.setenv("ULTRAMEDIAN_MAX_N", "100")
        assert main(["experiment", "success-rate", "--n", "300", "--trials", "1"]) == 2
        assert "--no-audit" in capsys.readouterr().err
        assert main(["experiment", "success-rate", "--n", "300", "--trials", "1", "--no-audit"]) == 0
