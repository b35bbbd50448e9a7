import csv
import json

import numpy as np
import pytest

from spwarp import cli
from spwarp.cli import (
    aic,
    dump_config,
    ingest_csv,
    load_config,
    main,
    model_select,
)
from spwarp.errors import ConfigError, DataError, OptimizationError
from spwarp.model import Dataset, Layout, ModelParams, predict, stationary_points
from spwarp.simbench import SimDesign, gen_sim
from spwarp.template import Sign, TemplateSpec


def write_csv(path, x, y, header=("x", "y"), blank_after=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, (a, b) in enumerate(zip(x, y)):
            w.writerow([repr(float(a)), repr(float(b))])
            if blank_after is not None and i == blank_after:
                fh.write("\n")
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def model_csv(tmp_path):
    """Zero-noise data generated by the model itself on the window [-1, 3]."""
    rng = np.random.default_rng(7)
    x_raw = np.sort(rng.uniform(-1, 3, 200))
    layout = Layout(1, 3, Sign.PLUS)
    truth = ModelParams.from_vector(np.array([0.5, 0.3, -0.2, 0.4, -0.3, 0.2, 0.0]), layout)
    spec = TemplateSpec(M=1)
    internal = Dataset.from_arrays(x_raw, np.zeros_like(x_raw))
    y = predict(truth, spec, internal.x)
    sp = internal.to_user(stationary_points(truth, spec))
    return write_csv(tmp_path / "data.csv", x_raw, y), sp


class TestIngest:
    def test_250_rows(self, tmp_path):
        x = np.linspace(-100, 896, 250)
        path = write_csv(tmp_path / "erp.csv", x, np.sin(x / 100))
        data, info = ingest_csv(path)
        assert data.n == 250 and info.n_dropped == 0
        np.testing.assert_allclose(data.to_user(data.x), x, atol=1e-12 * 1000)

    def test_blank_row_dropped(self, tmp_path):
        x = np.arange(20.0)
        data, info = ingest_csv(write_csv(tmp_path / "d.csv", x, x**2, blank_after=4))
        assert data.n == 20 and info.n_dropped == 1 and info.dropped_rows == [7]

    def test_nan_row_dropped(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n0,1\n1,nan\n2,3\n3,\n")
        data, info = ingest_csv(path)
        assert data.n == 2 and info.n_dropped == 2

    def test_constant_x(self, tmp_path):
        with pytest.raises(DataError, match="constant"):
            ingest_csv(write_csv(tmp_path / "d.csv", np.ones(5), np.arange(5.0)))

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path / "d.csv", [0, 1], [0, 1], header=("t", "v"))
        with pytest.raises(DataError, match="column 'x'"):
            ingest_csv(path)
        data, _ = ingest_csv(path, columns=("t", "v"))
        assert data.n == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            ingest_csv(tmp_path / "nope.csv")

    def test_non_numeric_row_number(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x,y\n0,1\n1,2\n2,abc\n")
        with pytest.raises(DataError, match="row 4"):
            ingest_csv(path)

    def test_delimiter_and_domain(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("x;y\n-100;1\n0;2\n300;3\n")
        data, _ = ingest_csv(path, delimiter=";", domain=(-100, 700))
        np.testing.assert_allclose(data.x, [0.0, 0.125, 0.5])


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = load_config(None, {"command": "fit", "data_path": "d.csv", "sample.n_chains": 8, "M": 2})
        text = dump_config(cfg)
        path = tmp_path / "cfg.yaml"
        path.write_text(text)
        again = load_config(str(path), {})
        assert dump_config(again) == text and again.digest() == cfg.digest()
        assert again.sample.n_chains == 8

    def test_field_level_errors(self):
        with pytest.raises(ConfigError) as info:
            load_config(None, {"command": "sample", "data_path": "d.csv", "sample.n_chains": 0})
        assert info.value.details[0]["field"] == "sample.n_chains"
        with pytest.raises(ConfigError) as info:
            load_config(None, {"command": "fit"})
        assert "data_path" in info.value.details[0]["message"]
        with pytest.raises(ConfigError) as info:
            load_config(None, {"command": "fit", "data_path": "d", "bogus": 1})
        assert info.value.details[0]["field"] == "bogus"

    def test_bad_yaml(self, tmp_path):
        path = tmp_path / "cfg.yaml"
        path.write_text("command: [fit\n")
        with pytest.raises(ConfigError):
            load_config(str(path), {})
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "missing.yaml"), {})

    def test_output_dir_not_hashed(self):
        a = load_config(None, {"command": "simulate", "output_dir": "a"})
        b = load_config(None, {"command": "simulate", "output_dir": "b"})
        assert a.digest() == b.digest()

    def test_column_flags(self):
        cfg = load_config(None, {"command": "validate"}, x_col="time", y_col=None)
        assert tuple(cfg.columns) == ("time", "y")


class TestExitCodes:
    def test_config_error(self, tmp_path):
        code = main(["fit", "-o", str(tmp_path), "--data", "d.csv", "-M", "-1"])
        assert code == 2
        doc = json.loads((tmp_path / "error.json").read_text())
        assert doc["exit_code"] == 2 and doc["details"][0]["field"] == "M"

    def test_data_error(self, tmp_path):
        code = main(["fit", "-o", str(tmp_path), "--data", str(tmp_path / "missing.csv")])
        assert code == 3
        assert json.loads((tmp_path / "error.json").read_text())["error"] == "DataError"

    def test_numerical_error(self, tmp_path, monkeypatch, model_csv):
        path, _ = model_csv

        def fail(*args, **kwargs):
            raise OptimizationError("all optimizer starts failed", [{"start": 0, "message": "x"}])

        monkeypatch.setattr(cli, "fit_mle", fail)
        assert main(["fit", "-o", str(tmp_path), "--data", str(path)]) == 4
        doc = json.loads((tmp_path / "error.json").read_text())
        assert doc["details"] == [{"start": 0, "message": "x"}]

    def test_validate(self, tmp_path, model_csv):
        path, _ = model_csv
        assert main(["validate", "-o", str(tmp_path), "--data", str(path)]) == 0
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["data"]["n"] == 200


class TestCommands:
    def test_fit_zero_noise(self, tmp_path, model_csv):
        path, sp = model_csv
        out = tmp_path / "out"
        assert main(["fit", "-o", str(out), "--data", str(path), "-M", "1", "-p", "3"]) == 0
        doc = json.loads((out / "report.json").read_text())
        est = [r["estimate"] for r in doc["stationary_points"]]
        np.testing.assert_allclose(est, sp, atol=1e-3)
        assert doc["metrics"]["sse"] <= 1e-8
        assert set(doc["provenance"]) == {"config_hash", "seed", "version"}
        rows = read_rows(out / "curve.csv")
        assert len(rows) == 512 and list(rows[0]) == ["x", "fit", "lower", "upper"]
        assert rows[0]["lower"] == ""
        assert "config hash" in (out / "report.txt").read_text()

    def test_fit_with_bootstrap(self, tmp_path):
        data = gen_sim(SimDesign("sim1", n=100, seed=1), 0)
        path = write_csv(tmp_path / "d.csv", data.x_raw, data.y_obs)
        out = tmp_path / "out"
        assert main(["fit", "-o", str(out), "--data", str(path), "-p", "4", "--bootstrap", "10"]) == 0
        doc = json.loads((out / "report.json").read_text())
        row = doc["stationary_points"][0]
        lo, hi = data.x_raw.min(), data.x_raw.max()
        # percentile intervals need not contain the point estimate
        assert lo <= row["lower"] <= row["upper"] <= hi and lo <= row["estimate"] <= hi
        rows = read_rows(out / "curve.csv")
        assert all(float(r["lower"]) <= float(r["upper"]) for r in rows)

    def test_sample_sim2(self, tmp_path):
        data = gen_sim(SimDesign("sim2", n=300, seed=2), 0)
        path = write_csv(tmp_path / "d.csv", data.x_raw, data.y_obs)
        out = tmp_path / "out"
        argv = ["sample", "-o", str(out), "--data", str(path), "-M", "2", "-p", "10", "--sign", "plus",
                "--chains", "4", "--iter", "2000", "--write-chains"]
        assert main(argv) == 0
        doc = json.loads((out / "report.json").read_text())
        pts = doc["stationary_points"]
        assert len(pts) == 2 and pts[0]["estimate"] < pts[1]["estimate"]
        lo, hi = data.x_raw.min(), data.x_raw.max()
        for r in pts:
            for key in ("estimate", "lower", "upper", "joint_lower", "joint_upper"):
                assert lo <= r[key] <= hi
            assert r["joint_lower"] <= r["lower"] and r["upper"] <= r["joint_upper"]
        assert len(read_rows(out / "curve.csv")) == 512
        kde = read_rows(out / "sp_posterior.csv")
        assert list(kde[0]) == ["point", "grid", "density"] and len(kde) == 2 * 256
        chains = read_rows(out / "chains.csv")
        assert len(chains) == 4 * 1000

    def test_sample_wlb(self, tmp_path, model_csv):
        path, sp = model_csv
        out = tmp_path / "out"
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text("command: sample\np: 3\nfit:\n  n_starts: 3\nsample:\n  sampler: wlb\n  n_wlb: 5\n")
        assert main(["sample", "-c", str(cfg), "-o", str(out), "--data", str(path)]) == 0
        doc = json.loads((out / "report.json").read_text())
        assert doc["sampler"] == "wlb"
        assert doc["stationary_points"][0]["estimate"] == pytest.approx(sp[0], abs=1e-3)

    def test_simulate_schema(self, tmp_path):
        out = tmp_path / "out"
        assert main(["simulate", "-o", str(out), "-n", "100", "--reps", "5"]) == 0
        rows = read_rows(out / "table.csv")
        assert len(rows) == 1
        assert {"hpd90", "hpd95", "hpd99", "rmse", "mean_bias", "avg_posterior_sd"} <= set(rows[0])
        doc = json.loads((out / "report.json").read_text())
        assert doc["study"]["n_ok"] == 5
        assert (out / "table.txt").read_text().startswith("     point")


class TestSelect:
    def test_aic_penalty(self):
        assert aic(2.0, 100, 8) > aic(2.0, 100, 7)
        assert aic(2.0, 100, 7) - aic(2.0, 100, 6) == pytest.approx(2.0)

    def test_single_candidate(self, tmp_path, model_csv):
        path, _ = model_csv
        cfg = load_config(None, {"command": "select", "data_path": str(path), "p_grid": [3], "fit.n_starts": 3})
        data, _ = ingest_csv(path)
        rows = model_select(data, cfg)
        assert len(rows) == 1 and rows[0]["selected"] and rows[0]["p"] == 3

    def test_select_command(self, tmp_path, model_csv):
        path, _ = model_csv
        out = tmp_path / "out"
        assert main(["select", "-o", str(out), "--data", str(path), "--p-grid", "2", "3", "4"]) == 0
        doc = json.loads((out / "report.json").read_text())
        aics = [r["aic"] for r in doc["candidates"]]
        assert aics == sorted(aics) and sum(r["selected"] for r in doc["candidates"]) == 1

    def test_sse_non_increasing_in_p(self):
        data = gen_sim(SimDesign("sim1", n=150, seed=4), 0)
        cfg = load_config(None, {"command": "select", "data_path": "unused", "p_grid": [3, 4, 5, 6],
                                 "fit.n_starts": 5})
        rows = sorted(model_select(data, cfg), key=lambda r: r["p"])
        assert all(b["sse"] <= a["sse"] + 1e-12 for a, b in zip(rows, rows[1:]))

    @pytest.mark.slow
    @pytest.mark.xfail(
        strict=True,
        reason="AIC picks p in 5..9 in only 17 of 40 Sim-1 replicates at n=300 (mode p=4); "
        "see the decisions ledger",
    )
    def test_sim1_selection_band(self):
        data = gen_sim(SimDesign("sim1", n=300, seed=3), 0)
        cfg = load_config(None, {"command": "select", "data_path": "unused", "p_grid": list(range(3, 10))})
        rows = model_select(data, cfg)
        best = next(r for r in rows if r["selected"])
        assert 5 <= best["p"] <= 9
