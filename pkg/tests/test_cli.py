import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from easyllp.cli import main, read_embedded_config
from easyllp.models import LinearModel

SMALL_BLOBS = ["--generator", "blobs", "--n", "640", "--d", "3"]


def rows_of(path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def run(*argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_missing_dataset_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("train", "--out", tmp_path / "x.json")
        assert exc.value.code == 2

    def test_invalid_flag(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("variance", "--bogus", "--out", tmp_path / "v.csv")
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            run("variance", "--ks", "2,x", "--out", tmp_path / "v.csv")
        assert exc.value.code == 2
        with pytest.raises(SystemExit) as exc:
            run("track", "--k", "0", "--out", tmp_path / "t.csv")
        assert exc.value.code == 2

    def test_unwritable_out(self, tmp_path):
        assert run("oracle", "--kmax", "1", "--out", tmp_path / "missing" / "o.csv") == 1

    def test_bad_csv_is_runtime_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x,y\n1,0\nfoo,1\n")
        assert run("train", "--csv", bad, "--k", "1", "--out", tmp_path / "o.json") == 1
        assert "row 3, column 1" in capsys.readouterr().err

    def test_module_entry_point(self, tmp_path):
        out = tmp_path / "o.csv"
        proc = subprocess.run(
            [sys.executable, "-m", "easyllp", "oracle", "--kmax", "1", "--n-dists", "1", "--out", str(out)],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
        proc = subprocess.run([sys.executable, "-m", "easyllp", "nope"], capture_output=True, text=True)
        assert proc.returncode == 2


class TestVariance:
    def test_kinds_subset_rows(self, tmp_path):
        out = tmp_path / "v.csv"
        assert run("variance", "--bags-per-point", "1000", "--kinds", "soft_avg", "--out", out) == 0
        rows = rows_of(out)
        assert len(rows) == 10
        assert [int(r["k"]) for r in rows] == [2**r for r in range(1, 11)]

    def test_four_series(self, tmp_path):
        out = tmp_path / "v.csv"
        assert run("variance", "--ks", "2,4,8", "--bags-per-point", "500", "--out", out) == 0
        rows = rows_of(out)
        assert len(rows) == 12
        assert {r["kind"] for r in rows} == {"surrogate_one", "surrogate_avg", "soft_one", "soft_avg"}

    def test_same_seed_same_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            run("variance", "--ks", "2,16", "--bags-per-point", "800", "--seed", "4", "--out", path)
        assert a.read_bytes() == b.read_bytes()
        cfg = read_embedded_config(a)
        assert cfg["seed"] == 4 and cfg["ks"] == [2, 16]

    def test_json_format(self, tmp_path):
        out = tmp_path / "v.json"
        run("variance", "--ks", "2", "--bags-per-point", "500", "--format", "json", "--out", out)
        data = json.loads(out.read_text())
        assert data["config"]["format"] == "json"
        assert len(data["rows"]) == 4


class TestTrain:
    def _accuracy(self, path):
        return json.loads(path.read_text())["metrics"]["test_accuracy"]

    @pytest.mark.parametrize("seed", [0, 5])
    def test_k1_soft_erm_matches_event(self, tmp_path, seed):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        common = [*SMALL_BLOBS, "--k", 1, "--epochs", 3, "--seed", seed]
        assert run("train", *common, "--method", "soft_erm", "--out", a) == 0
        assert run("train", *common, "--method", "event", "--out", b) == 0
        assert abs(self._accuracy(a) - self._accuracy(b)) <= 1e-10
        ma = json.loads(a.read_text())["model"]
        mb = json.loads(b.read_text())["model"]
        assert ma == mb

    def test_soft_sgd_smoke(self, tmp_path):
        out, model = tmp_path / "s.json", tmp_path / "m.json"
        code = run("train", *SMALL_BLOBS, "--k", 32, "--method", "soft_sgd", "--epochs", 2,
                   "--out", out, "--model-out", model)
        assert code == 0
        m = LinearModel.load(model)
        assert np.all(np.isfinite(m.params))
        report = json.loads(out.read_text())
        assert report["model"] == m.to_dict()
        assert report["config"]["seed"] == 0

    def test_csv_source(self, tmp_path):
        data = tmp_path / "d.csv"
        assert run("gen", "--n", 300, "--d", 2, "--out", data) == 0
        out = tmp_path / "t.json"
        assert run("train", "--csv", data, "--k", 4, "--epochs", 2, "--prior", "true", "--out", out) == 0
        assert json.loads(out.read_text())["config"]["dataset"]["path"] == str(data)


class TestOracle:
    def test_default_all_pass(self, tmp_path):
        out = tmp_path / "o.csv"
        assert run("oracle", "--out", out) == 0
        statuses = {r["status"] for r in rows_of(out)}
        assert "FAIL" not in statuses and "PASS" in statuses

    def test_kmax_one(self, tmp_path):
        out = tmp_path / "o.csv"
        assert run("oracle", "--kmax", 1, "--out", out) == 0
        rows = rows_of(out)
        assert {int(r["k"]) for r in rows} == {1}
        for r in rows:
            if r["check"] == "avg_le_one":
                assert float(r["lhs"]) == float(r["rhs"])


class TestTrackAndSweep:
    def test_track_shape_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["track", *SMALL_BLOBS, "--k", 8, "--epochs", 3, "--replicas", 2]
        assert run(*args, "--out", a) == 0
        assert run(*args, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(rows_of(a)) == 3
        assert read_embedded_config(a)["replica_seeds"] == [0, 1]

    def test_sweep_shape_and_determinism(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["sweep", *SMALL_BLOBS, "--ks", "2,4", "--replicas", 2, "--epochs", 2]
        assert run(*args, "--out", a) == 0
        assert run(*args, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()
        rows = rows_of(a)
        assert len(rows) == 4
        assert {r["method"] for r in rows} == {"event", "soft_erm"}


class TestReplay:
    @pytest.mark.parametrize(
        "argv",
        [
            ["variance", "--ks", "2,8", "--bags-per-point", "600", "--seed", "2"],
            ["oracle", "--kmax", "2", "--n-dists", "2"],
            ["track", *SMALL_BLOBS, "--k", "8", "--epochs", "2", "--replicas", "2"],
            ["sweep", *SMALL_BLOBS, "--ks", "2,4", "--replicas", "2", "--epochs", "2",
             "--methods", "event,soft_erm,soft_sgd,surrogate_sgd"],
            ["train", *SMALL_BLOBS, "--k", "4", "--epochs", "2", "--method", "surrogate_sgd"],
            ["train", *SMALL_BLOBS, "--k", "4", "--epochs", "2", "--rebag", "--format", "json"],
        ],
        ids=["variance", "oracle", "track", "sweep", "train_sgd", "train_erm"],
    )
    def test_byte_identical(self, tmp_path, argv):
        first, second = tmp_path / "first", tmp_path / "second"
        assert run(*argv, "--out", first) == 0
        assert run("replay", first, "--out", second) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_replay_missing_file(self, tmp_path):
        assert run("replay", tmp_path / "none.csv", "--out", tmp_path / "o") == 1
