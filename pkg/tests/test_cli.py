import json
from pathlib import Path

import pytest

from ivrepro.cli import main


class TestCLI:
    def test_all_direct_produces_report(self, tmp_path, synthetic_package, capsys):
        ws = tmp_path / "ws"
        code = main(["all", "--workspace", str(ws),
                     "--paper-text", str(synthetic_package / "paper.txt"),
                     "--package-dir", str(synthetic_package),
                     "--direct", "--seed", "42", "--iters", "120"])
        assert code == 0
        assert (ws / "out" / "report.md").exists()
        out = capsys.readouterr().out
        assert out.count("[     ok]") == 7

    def test_unknown_flag_exits_2(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["all", "--workspace", str(tmp_path), "--frobnicate"])
        assert exc.value.code == 2

    def test_usage_error_prints_to_stderr(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            main(["all", "--workspace", str(tmp_path), "--frobnicate"])
        assert "usage" in capsys.readouterr().err

    def test_resume_without_artifacts_exits_1(self, tmp_path, capsys):
        code = main(["resume", "--stage", "diagnose",
                     "--workspace", str(tmp_path / "empty")])
        assert code == 1
        assert "resume" in capsys.readouterr().err.lower()

    def test_stage_failure_exit_1(self, tmp_path, capsys):
        pkg = tmp_path / "olspkg"
        pkg.mkdir()
        (pkg / "analysis.do").write_text("reg y x\n")
        code = main(["all", "--workspace", str(tmp_path / "ws"),
                     "--package-dir", str(pkg), "--direct"])
        assert code == 1
        out = capsys.readouterr().out
        assert "[ failed] extract" in out

    def test_single_stage_commands(self, tmp_path, synthetic_package):
        ws = str(tmp_path / "ws")
        common = ["--workspace", ws,
                  "--paper-text", str(synthetic_package / "paper.txt"),
                  "--package-dir", str(synthetic_package), "--direct",
                  "--iters", "60"]
        assert main(["profile"] + common) == 0
        assert main(["fetch"] + common) == 0
        assert main(["extract"] + common) == 0
        meta = json.loads((Path(ws) / "work" / "metadata.json").read_text())
        assert meta[0]["outcome"] == "y"
        assert main(["clean"] + common) == 0
        assert main(["run"] + common) == 0
        assert main(["diagnose"] + common) == 0
        assert main(["report"] + common) == 0
        assert (Path(ws) / "out" / "report.md").exists()

    def test_seed_flag_round_trips_to_logs(self, tmp_path, synthetic_package):
        ws = tmp_path / "ws"
        main(["all", "--workspace", str(ws),
              "--paper-text", str(synthetic_package / "paper.txt"),
              "--package-dir", str(synthetic_package),
              "--direct", "--seed", "777", "--iters", "60"])
        lines = (ws / "logs" / "stages.jsonl").read_text().splitlines()
        assert all(json.loads(l)["config"]["seed"] == 777 for l in lines)
