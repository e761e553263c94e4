from __future__ import annotations

import csv
import json
import math

import pytest

from tiercache.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from tiercache.workload import InterArrivalModel

SUBCOMMANDS = ["calibrate", "generate", "replay", "sweep", "failover",
               "drain", "spike", "serve", "report"]


@pytest.fixture()
def model_path(tmp_path):
    path = tmp_path / "model.json"
    InterArrivalModel((1.0 / 30_000, 1.0 / 600_000), (0.5, 0.5)).save(path)
    return path


class TestHelp:
    @pytest.mark.parametrize("subcommand", SUBCOMMANDS)
    def test_every_subcommand_has_help(self, subcommand, capsys):
        assert main([subcommand, "--help"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "usage" in out.lower()

    def test_unknown_subcommand_exits_one(self, capsys):
        assert main(["frobnicate"]) == EXIT_VALIDATION

    def test_unknown_flag_exits_one(self, capsys):
        assert main(["generate", "--bogus"]) == EXIT_VALIDATION


class TestCalibrate:
    def test_single_anchor_calibration(self, tmp_path, capsys):
        anchors = tmp_path / "anchors.json"
        anchors.write_text(json.dumps([[60_000, 1.0 - math.exp(-1.0)]]),
                           encoding="utf-8")
        targets = tmp_path / "targets.json"
        targets.write_text("[]", encoding="utf-8")
        out = tmp_path / "model.json"
        report = tmp_path / "calibration.json"
        code = main(["calibrate", "--anchors", str(anchors), "--targets",
                     str(targets), "--k", "1", "--out", str(out),
                     "--report", str(report)])
        assert code == EXIT_OK
        assert "residual" in capsys.readouterr().out
        model = InterArrivalModel.load(out)
        assert model.rates_per_ms[0] == pytest.approx(1.0 / 60_000, rel=0.01)
        assert json.loads(report.read_text())["ok"] is True

    def test_non_monotone_anchors_exit_one(self, tmp_path, capsys):
        anchors = tmp_path / "anchors.json"
        anchors.write_text(json.dumps([[60_000, 0.9], [600_000, 0.5]]),
                           encoding="utf-8")
        targets = tmp_path / "targets.json"
        targets.write_text("[]", encoding="utf-8")
        code = main(["calibrate", "--anchors", str(anchors), "--targets",
                     str(targets), "--k", "1", "--out",
                     str(tmp_path / "model.json")])
        assert code == EXIT_VALIDATION


class TestGenerate:
    def test_same_seed_same_bytes(self, tmp_path, model_path):
        outputs = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for out in outputs:
            code = main(["generate", "--model", str(model_path), "--users",
                         "100", "--horizon-ms", "3600000", "--seed", "1",
                         "--out", str(out)])
            assert code == EXIT_OK
        assert outputs[0].read_bytes() == outputs[1].read_bytes()

    def test_missing_model_file_exits_two(self, tmp_path, capsys):
        code = main(["generate", "--model", str(tmp_path / "nope.json"),
                     "--users", "10", "--horizon-ms", "1000",
                     "--out", str(tmp_path / "t.csv")])
        assert code == EXIT_IO


class TestReplay:
    def test_replay_trace_and_reports(self, tmp_path, model_path, capsys):
        trace = tmp_path / "trace.csv"
        main(["generate", "--model", str(model_path), "--users", "200",
              "--horizon-ms", "3600000", "--seed", "3", "--profile", "single",
              "--out", str(trace)])
        out_csv = tmp_path / "report.csv"
        out_json = tmp_path / "report.json"
        code = main(["replay", "--trace", str(trace), "--profile", "single",
                     "--seed", "3", "--out", str(out_csv),
                     "--json", str(out_json)])
        assert code == EXIT_OK
        rows = dict(r for r in csv.reader(out_csv.open()) if len(r) == 2)
        assert float(rows["direct_hit_rate"]) > 0
        data = json.loads(out_json.read_text())
        assert data["serves_total"] > 0

    def test_truncated_trace_exits_two_with_line(self, tmp_path, capsys):
        trace = tmp_path / "broken.csv"
        trace.write_text("timestamp_ms,request_id,user_id,model_ids\n"
                         "0,1,5,1\n"
                         "9,2\n", encoding="utf-8")
        code = main(["replay", "--trace", str(trace), "--profile", "single"])
        assert code == EXIT_IO
        assert "line 3" in capsys.readouterr().err


class TestSweep:
    def test_sweep_emits_hit_rate_column_and_triangle(self, tmp_path,
                                                      model_path, capsys):
        out = tmp_path / "sweep.csv"
        triangle = tmp_path / "triangle.csv"
        out_json = tmp_path / "sweep.json"
        code = main(["sweep", "--model", str(model_path), "--users", "400",
                     "--horizon-ms", "7200000", "--seed", "4",
                     "--ttls", "60000,300000,1800000",
                     "--out", str(out), "--json", str(out_json),
                     "--triangle", str(triangle)])
        assert code == EXIT_OK
        with out.open() as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == 3
        rates = [float(row["direct_hit_rate"]) for row in rows]
        assert rates == sorted(rates)
        with triangle.open() as handle:
            triangle_rows = list(csv.DictReader(handle))
        assert len(triangle_rows) == 3
        assert main(["report", "--in", str(out_json)]) == EXIT_OK


class TestScenarios:
    def test_failover_command(self, tmp_path, model_path, capsys):
        code = main(["failover", "--model", str(model_path), "--users", "300",
                     "--horizon-ms", "7200000", "--seed", "5",
                     "--failure-rate", "0.1",
                     "--json", str(tmp_path / "failover.json")])
        assert code == EXIT_OK
        data = json.loads((tmp_path / "failover.json").read_text())
        assert data["fallback_rate_with"] <= data["fallback_rate_without"]

    def test_drain_command(self, tmp_path, model_path, capsys):
        code = main(["drain", "--model", str(model_path), "--users", "300",
                     "--horizon-ms", "7200000", "--seed", "6",
                     "--region", "1", "--start-ms", "3600000",
                     "--end-ms", "5400000",
                     "--config", str(_drain_config(tmp_path, model_path))])
        assert code == EXIT_OK
        assert "lost=0" in capsys.readouterr().out

    def test_spike_command(self, tmp_path, model_path, capsys):
        code = main(["spike", "--model", str(model_path), "--users", "200",
                     "--horizon-ms", "3600000", "--seed", "7",
                     "--multiplier", "10", "--start-ms", "600000",
                     "--end-ms", "1200000"])
        assert code == EXIT_OK

    def test_serve_rejects_bad_listen(self, capsys):
        assert main(["serve", "--listen", "nonsense"]) == EXIT_VALIDATION


def _drain_config(tmp_path, model_path):
    from tiercache.simulator import GeneratorSpec, SimConfig
    from tiercache.regions import RegionTopology
    from tiercache.core import ModelCacheConfig
    from tiercache.workload import single_model_profile

    config = SimConfig(
        registry_configs=(ModelCacheConfig(model_id=1, enable_direct=True,
                                           direct_ttl_ms=300_000),),
        demand_profile=single_model_profile(),
        generator=GeneratorSpec(300, 7_200_000,
                                InterArrivalModel.load(model_path)),
        topology=RegionTopology(region_count=3),
        warmup_ms=600_000,
        seed=6,
    )
    path = tmp_path / "sim.json"
    path.write_text(json.dumps(config.to_dict()), encoding="utf-8")
    return path


class TestReport:
    def test_report_reads_back_replay_outputs(self, tmp_path, model_path,
                                              capsys):
        out_csv = tmp_path / "report.csv"
        out_json = tmp_path / "report.json"
        main(["replay", "--model", str(model_path), "--users", "100",
              "--horizon-ms", "1800000", "--seed", "8",
              "--out", str(out_csv), "--json", str(out_json)])
        assert main(["report", "--in", str(out_csv)]) == EXIT_OK
        assert main(["report", "--in", str(out_json)]) == EXIT_OK
        assert "direct_hit_rate" in capsys.readouterr().out

    def test_report_on_missing_file_exits_two(self, tmp_path):
        assert main(["report", "--in", str(tmp_path / "nope.json")]) == EXIT_IO
