"""
Tests for the command-line surface and the ablation grids
"""

import pytest

from app.main import build_parser, main
from app.schemas.config import Sweep
from app.services.ablation_service import AblationService, sweep_points
from app.services.config_service import ConfigService
from app.services.demo_service import MANIFEST_FILENAME
from tests.conftest import tiny_config


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(ConfigService.dump(tiny_config(tmp_path)))
    return path


class TestParser:

    def test_subcommands(self):
        parser = build_parser()
        for argv in (["generate-data"], ["run"], ["report", "runs/a"], ["ablate", "--sweep", "lambda"]):
            assert callable(parser.parse_args(argv).handler)

    def test_invalid_method_is_a_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["run", "--method", "bogus"])
        assert info.value.code == 2

    def test_missing_subcommand(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_run_flags(self):
        args = build_parser().parse_args(["run", "--method", "naive", "--seed", "3", "--q", "5", "--force"])
        assert (args.method, args.seed, args.q, args.force) == ("naive", 3, 5, True)


class TestMain:

    def test_missing_config_exits_two(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
        assert "ConfigError" in capsys.readouterr().err

    def test_generate_data(self, config_file, tmp_path, capsys):
        assert main(["generate-data", "--config", str(config_file)]) == 0
        assert (tmp_path / "data" / MANIFEST_FILENAME).exists()
        assert "press_blue_button" in capsys.readouterr().out

    def test_generate_data_refuses_second_time(self, config_file):
        assert main(["generate-data", "--config", str(config_file)]) == 0
        assert main(["generate-data", "--config", str(config_file)]) == 1
        assert main(["generate-data", "--config", str(config_file), "--force"]) == 0

    def test_run_and_report(self, config_file, tmp_path, capsys):
        assert main(["generate-data", "--config", str(config_file)]) == 0
        topic, naive = tmp_path / "runs" / "t", tmp_path / "runs" / "n"
        assert main(["run", "--config", str(config_file), "--out", str(topic)]) == 0
        assert main(["run", "--config", str(config_file), "--method", "naive", "--out", str(naive)]) == 0
        assert main(["report", str(topic), str(naive), "--out", str(tmp_path / "report")]) == 0
        assert "Final Improv." in capsys.readouterr().out

    def test_run_without_data(self, config_file, tmp_path):
        assert main(["run", "--config", str(config_file), "--out", str(tmp_path / "runs" / "x")]) == 1


class TestSweeps:

    @pytest.mark.parametrize("sweep, count", [("prompts", 5), ("lambda", 5), ("projection", 4), ("base-tasks", 6)])
    def test_point_counts(self, sweep, count):
        assert len(sweep_points(sweep)) == count

    def test_lambda_points(self):
        labels = [label for label, _ in sweep_points(Sweep.LAMBDA)]
        assert labels[0] == "lambda_0.1_0.9" and labels[-1] == "lambda_0.5_0.5"

    def test_configs_are_validated(self, tmp_path):
        configs = AblationService.build_configs(tiny_config(tmp_path), "prompts")
        assert [c.train.model.prompts for _, c in configs] == [1, 3, 5, 7, 9]
        assert all(c.train.model.width == 8 for _, c in configs)
