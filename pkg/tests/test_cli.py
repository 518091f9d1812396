import json

import numpy as np
import pytest

from eegcl import Split, covariance, load_stream
from eegcl.cli import main, parse_experiment_config


def write_json(path, data):
    path.write_text(json.dumps(data, indent=2))
    return path


def gen_config(**overrides):
    cfg = {"n_subjects": 2, "n_channels": 3, "n_timepoints": 12,
           "trials_per_subject": 10, "seed": 4}
    cfg.update(overrides)
    return cfg


def experiment_config(**overrides):
    cfg = {
        "stream": {"generator": gen_config()},
        "strategies": ["SFT", "PCED"],
        "model": {"architecture": "mlp", "hidden": [4]},
        "train": {"learning_rate": 0.01, "max_epochs": 2, "batch_size": 8, "patience": 2},
        "seeds": [0, 1],
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """One completed `run` invocation shared by the report tests."""
    base = tmp_path_factory.mktemp("cli_run")
    config = write_json(base / "exp.json", experiment_config())
    out = base / "results"
    assert main(["run", "--config", str(config), "--out", str(out)]) == 0
    return out


class TestGen:
    def test_writes_stream_directory(self, tmp_path, capsys):
        config = write_json(tmp_path / "gen.json", gen_config())
        rc = main(["gen", "--config", str(config), "--out", str(tmp_path / "stream")])
        assert rc == 0
        assert (tmp_path / "stream" / "manifest.json").is_file()
        assert (tmp_path / "stream" / "subject_000.eegc").is_file()
        assert (tmp_path / "stream" / "subject_001.eegc").is_file()
        assert "wrote 2 subjects" in capsys.readouterr().out

    def test_empty_config_uses_defaults(self, tmp_path):
        config = write_json(tmp_path / "gen.json", {})
        rc = main(["gen", "--config", str(config), "--out", str(tmp_path / "stream")])
        assert rc == 0
        stream = load_stream(tmp_path / "stream")
        assert len(stream) == 8
        assert stream.n_channels == 8
        assert stream.n_timepoints == 64

    def test_repeated_generation_is_byte_identical(self, tmp_path):
        config = write_json(tmp_path / "gen.json", gen_config())
        main(["gen", "--config", str(config), "--out", str(tmp_path / "a")])
        main(["gen", "--config", str(config), "--out", str(tmp_path / "b")])
        for name in ("manifest.json", "subject_000.eegc", "subject_001.eegc"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_invalid_config_value_exits_2(self, tmp_path):
        config = write_json(tmp_path / "gen.json", gen_config(n_classes=1))
        assert main(["gen", "--config", str(config), "--out", str(tmp_path / "s")]) == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        config = write_json(tmp_path / "gen.json", gen_config(bogus=1))
        assert main(["gen", "--config", str(config), "--out", str(tmp_path / "s")]) == 2

    def test_malformed_json_exits_2(self, tmp_path):
        config = tmp_path / "gen.json"
        config.write_text("{broken")
        assert main(["gen", "--config", str(config), "--out", str(tmp_path / "s")]) == 2

    def test_missing_config_exits_2(self, tmp_path):
        missing = tmp_path / "nope.json"
        assert main(["gen", "--config", str(missing), "--out", str(tmp_path / "s")]) == 2


class TestAlign:
    def test_aligned_training_covariance_is_identity(self, tmp_path, capsys):
        config = write_json(tmp_path / "gen.json", gen_config())
        main(["gen", "--config", str(config), "--out", str(tmp_path / "stream")])
        rc = main(["align", "--stream", str(tmp_path / "stream"),
                   "--out", str(tmp_path / "aligned")])
        assert rc == 0
        out = capsys.readouterr().out
        assert "subject 0: condition number" in out
        assert "subject 1: condition number" in out
        aligned = load_stream(tmp_path / "aligned")
        for ds in aligned:
            train = ds.trials_for(Split.TRAIN)
            mean_cov = sum(covariance(t.trial) for t in train) / len(train)
            assert np.linalg.norm(mean_cov - np.eye(3)) < 1e-4

    def test_missing_stream_exits_3(self, tmp_path):
        rc = main(["align", "--stream", str(tmp_path / "void"),
                   "--out", str(tmp_path / "aligned")])
        assert rc == 3


class TestRunCommand:
    def test_writes_all_artifacts(self, run_dir):
        for kind in ("sft", "pced"):
            for seed in (0, 1):
                assert (run_dir / f"report_{kind}_{seed}.json").is_file()
                assert (run_dir / f"matrix_{kind}_{seed}.csv").is_file()
        assert (run_dir / "summary.csv").is_file()
        assert (run_dir / "stream" / "manifest.json").is_file()

    def test_report_contents(self, run_dir):
        report = json.loads((run_dir / "report_sft_1.json").read_text())
        assert report["strategy"]["kind"] == "SFT"
        assert report["seeds"]["run"] == 1
        assert report["n_subjects"] == 2
        assert report["matrix"][0][1] is None
        assert 0.0 <= report["acc"] <= 1.0
        assert len(report["stage_seconds"]) == 2

    def test_summary_layout(self, run_dir):
        lines = (run_dir / "summary.csv").read_text().splitlines()
        assert lines[0] == "strategy,runs,acc_mean,acc_sd,bwt_mean,bwt_sd"
        assert len(lines) == 3
        rows = {line.split(",")[0] for line in lines[1:]}
        assert rows == {"SFT", "PCED"}
        for line in lines[1:]:
            assert line.split(",")[1] == "2"

    def test_summary_sorted_by_mean_accuracy(self, run_dir):
        lines = (run_dir / "summary.csv").read_text().splitlines()
        means = [float(line.split(",")[2]) for line in lines[1:]]
        assert means == sorted(means, reverse=True)

    def test_no_escape_codes_in_output(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("NO_COLOR", "1")
        config = write_json(tmp_path / "exp.json", experiment_config(
            strategies=["SFT"], seeds=[0]
        ))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 0
        assert "\x1b" not in capsys.readouterr().out

    def test_parallel_jobs_match_sequential_reports(self, tmp_path):
        config = write_json(tmp_path / "exp.json", experiment_config())
        main(["run", "--config", str(config), "--out", str(tmp_path / "seq")])
        main(["run", "--config", str(config), "--out", str(tmp_path / "par"), "--jobs", "2"])
        for name in ("report_sft_0.json", "report_pced_1.json"):
            seq = json.loads((tmp_path / "seq" / name).read_text())
            par = json.loads((tmp_path / "par" / name).read_text())
            seq.pop("stage_seconds")
            par.pop("stage_seconds")
            assert seq == par

    def test_stream_path_variant(self, tmp_path):
        gen_cfg = write_json(tmp_path / "gen.json", gen_config())
        main(["gen", "--config", str(gen_cfg), "--out", str(tmp_path / "stream")])
        config = write_json(tmp_path / "exp.json", experiment_config(
            stream={"path": str(tmp_path / "stream")}, strategies=["SFT"], seeds=[0]
        ))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "report_sft_0.json").is_file()

    def test_missing_stream_path_exits_2(self, tmp_path):
        config = write_json(tmp_path / "exp.json", experiment_config(
            stream={"path": str(tmp_path / "void")}
        ))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 2

    def test_unknown_config_key_exits_2(self, tmp_path):
        config = write_json(tmp_path / "exp.json", experiment_config(extra=1))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 2

    def test_repeat_seed_mismatch_exits_2(self, tmp_path):
        config = write_json(tmp_path / "exp.json", experiment_config(repeat=3))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 2

    def test_duplicate_seeds_exit_2(self, tmp_path):
        config = write_json(tmp_path / "exp.json", experiment_config(seeds=[0, 0]))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 2

    def test_bad_jobs_exits_2(self, tmp_path):
        config = write_json(tmp_path / "exp.json", experiment_config())
        rc = main(["run", "--config", str(config), "--out", str(tmp_path / "out"),
                   "--jobs", "0"])
        assert rc == 2

    def test_corrupted_subject_file_exits_3(self, tmp_path):
        gen_cfg = write_json(tmp_path / "gen.json", gen_config())
        main(["gen", "--config", str(gen_cfg), "--out", str(tmp_path / "stream")])
        blob = (tmp_path / "stream" / "subject_001.eegc").read_bytes()
        (tmp_path / "stream" / "subject_001.eegc").write_bytes(blob[: len(blob) // 2])
        config = write_json(tmp_path / "exp.json", experiment_config(
            stream={"path": str(tmp_path / "stream")}, strategies=["SFT"], seeds=[0]
        ))
        assert main(["run", "--config", str(config), "--out", str(tmp_path / "out")]) == 3


class TestParseExperimentConfig:
    def test_strategy_objects_with_overrides(self):
        cfg = parse_experiment_config(experiment_config(
            strategies=[
                {"kind": "er", "memory": {"capacity": 20, "per_class": 2}},
                {"kind": "ewc", "lambda": 7.5},
            ]
        ))
        er, ewc = cfg.strategies
        assert er.kind == "ER"
        assert er.memory.capacity == 20
        assert ewc.ewc.lam == 7.5

    def test_shared_defaults_apply(self):
        cfg = parse_experiment_config(experiment_config(
            strategies=["ER", "PCED"],
            memory={"capacity": 12, "per_class": 3},
        ))
        assert all(s.memory.capacity == 12 for s in cfg.strategies)

    def test_repeat_expands_seeds(self):
        cfg = parse_experiment_config(experiment_config(seeds=None, repeat=3))
        assert cfg.seeds == (0, 1, 2)

    def test_default_single_seed(self):
        data = experiment_config()
        del data["seeds"]
        assert parse_experiment_config(data).seeds == (0,)


class TestReportCommand:
    def test_writes_mean_curve(self, run_dir, capsys):
        rc = main(["report", str(run_dir), "--curve", "subject=1"])
        assert rc == 0
        out_path = run_dir / "curve_subject1.csv"
        assert str(out_path) in capsys.readouterr().out
        lines = out_path.read_text().splitlines()
        assert lines[0] == "stage,PCED,SFT"
        assert len(lines) == 3  # stages 1 and 2
        reports = {
            (kind, seed): json.loads((run_dir / f"report_{kind}_{seed}.json").read_text())
            for kind in ("sft", "pced") for seed in (0, 1)
        }
        for row, stage in zip(lines[1:], (1, 2)):
            cells = row.split(",")
            assert cells[0] == str(stage)
            for col, kind in ((1, "pced"), (2, "sft")):
                expected = np.mean([
                    reports[(kind, seed)]["matrix"][stage - 1][0] for seed in (0, 1)
                ])
                assert float(cells[col]) == pytest.approx(expected, abs=1e-12)

    def test_last_subject_curve_has_one_row(self, run_dir):
        assert main(["report", str(run_dir), "--curve", "subject=2"]) == 0
        lines = (run_dir / "curve_subject2.csv").read_text().splitlines()
        assert len(lines) == 2
        assert lines[1].startswith("2,")

    def test_rerun_is_byte_identical(self, run_dir):
        main(["report", str(run_dir), "--curve", "subject=1"])
        first = (run_dir / "curve_subject1.csv").read_bytes()
        main(["report", str(run_dir), "--curve", "subject=1"])
        assert (run_dir / "curve_subject1.csv").read_bytes() == first

    def test_subject_out_of_range_exits_2(self, run_dir):
        assert main(["report", str(run_dir), "--curve", "subject=9"]) == 2

    def test_malformed_curve_argument_exits_2(self, run_dir):
        assert main(["report", str(run_dir), "--curve", "stage=1"]) == 2

    def test_directory_without_reports_exits_2(self, tmp_path):
        assert main(["report", str(tmp_path)]) == 2

    def test_missing_directory_exits_2(self, tmp_path):
        assert main(["report", str(tmp_path / "void")]) == 2

    def test_undefined_curve_entry_exits_4(self, tmp_path):
        report = {
            "strategy": {"kind": "SFT", "alignment_enabled": False,
                         "memory": None, "ewc": None},
            "matrix": [[0.5, None], [None, 0.6]],
        }
        write_json(tmp_path / "report_sft_0.json", report)
        assert main(["report", str(tmp_path), "--curve", "subject=1"]) == 4
