"""
Integration tests for the ofbm command line.
"""

import json
import os
import sys
from unittest.mock import patch

import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), '..'))
from ofbm.cli import CommandContext, build_parser, run_command
from ofbm.settings import Settings
from ofbm.storage import read_paths_csv, read_report


def _config(tmp_path, name, raw):
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


@pytest.fixture
def run(test_settings_file):
    """Run a subcommand with the test settings file."""
    def _run(*argv):
        return run_command(list(argv) + ["--settings", test_settings_file])
    return _run


@pytest.fixture
def brownian_config(tmp_path):
    return _config(tmp_path, "brownian.json", {
        "scheme": "exact",
        "D": [[0.5]],
        "replicates": 10,
        "quadrature": {"x_max": 10000, "rel_tol": 1e-8, "panels_near_zero": 40, "max_refinements": 4},
    })


@pytest.mark.integration
class TestParser:
    """Test argument parsing."""

    def test_commands(self):
        """Test that every subcommand takes the shared options."""
        parser = build_parser()
        for command in ("validate", "gamma", "exact", "telegraph", "partial-sums", "verify", "calibrate", "plot"):
            args = parser.parse_args([command, "--seed", "3", "--levels", "10,100"])
            assert args.command == command
            assert args.levels == [10, 100]

    def test_unknown_command(self, run):
        """Test that an unknown subcommand is a usage error."""
        assert run_command(["simulate"]) == 2

    def test_bad_levels(self, run):
        """Test that malformed levels are a usage error."""
        assert run("telegraph", "--levels", "ten") == 2


@pytest.mark.integration
class TestModelCommands:
    """Test validate and gamma."""

    def test_validate_brownian(self, run, brownian_config, capsys):
        """Test that D = 1/2 validates and reports time reversibility."""
        assert run("validate", "--config", brownian_config) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["pass"] is True
        assert payload["time_reversible"] is True

    def test_validate_bad_exponent(self, run, tmp_path, capsys):
        """Test that an eigenvalue at 1.2 exits with the invalid-model code."""
        config = _config(tmp_path, "bad.json", {"scheme": "exact", "D": [[1.2]]})
        assert run("validate", "--config", config) == 4
        payload = json.loads(capsys.readouterr().out)
        assert payload["pass"] is False

    def test_gamma_brownian(self, run, brownian_config, capsys):
        """Test that D = 1/2 prints pi to six decimals."""
        assert run("gamma", "--config", brownian_config) == 0
        assert capsys.readouterr().out.strip() == "3.141593"

    def test_missing_config(self, run, tmp_path):
        """Test that a missing configuration exits with code 2."""
        assert run("gamma", "--config", str(tmp_path / "absent.json")) == 2

    def test_invalid_config(self, run, tmp_path):
        """Test that a schema violation exits with code 2."""
        config = _config(tmp_path, "bad.json", {"scheme": "exact", "D": [[0.5]], "colour": "red"})
        assert run("validate", "--config", config) == 2

    def test_missing_settings(self, brownian_config):
        """Test that an unreadable settings file exits with code 2."""
        assert run_command(["gamma", "--config", brownian_config, "--settings", "absent.ini"]) == 2


@pytest.mark.integration
class TestQuadratureSettings:
    """Test that the [quadrature] settings seed each run configuration."""

    def _context(self, settings_file, *argv):
        args = build_parser().parse_args(["exact", *argv])
        return CommandContext(args, Settings(settings_file))

    def test_settings_reach_builtin_config(self, test_settings_file):
        """Test that x_max = 5000 in the INI file reaches a built-in run."""
        cfg = self._context(test_settings_file).run_config("exact")
        assert cfg.quadrature.x_max == 5000.0
        assert cfg.quadrature.rel_tol == 1e-7
        assert cfg.quadrature.panels_near_zero == 30
        assert cfg.quadrature.max_refinements == 3

    def test_run_keys_override_settings(self, test_settings_file, tmp_path):
        """Test that only the keys in the run file replace the settings values."""
        config = _config(tmp_path, "narrow.json", {"scheme": "exact", "D": [[0.5]], "quadrature": {"x_max": 64}})
        cfg = self._context(test_settings_file, "--config", config).run_config("exact")
        assert cfg.quadrature.x_max == 64.0
        assert cfg.quadrature.rel_tol == 1e-7
        assert cfg.quadrature.max_refinements == 3

    def test_overrides_keep_settings(self, test_settings_file):
        """Test that --seed and --replicates do not reset the quadrature."""
        cfg = self._context(test_settings_file, "--seed", "9", "--replicates", "20").run_config("exact")
        assert cfg.seed == 9
        assert cfg.replicates == 20
        assert cfg.quadrature.x_max == 5000.0


@pytest.mark.integration
class TestSamplingCommands:
    """Test exact, telegraph and partial-sums path output."""

    def test_exact(self, run, brownian_config, tmp_path):
        """Test that exact writes one row per replicate and grid point."""
        out = tmp_path / "exact"
        assert run("exact", "--config", brownian_config, "--out", str(out)) == 0
        paths = read_paths_csv(str(out / "paths.csv"))
        assert len(paths) == 10
        assert paths[0].grid.tolist() == [0.0, 0.25, 0.5, 0.75, 1.0]

    def test_exact_seed_reproducible(self, run, brownian_config, tmp_path):
        """Test that the same seed writes the same file."""
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("exact", "--config", brownian_config, "--out", str(a), "--seed", "7") == 0
        assert run("exact", "--config", brownian_config, "--out", str(b), "--seed", "7") == 0
        assert (a / "paths.csv").read_bytes() == (b / "paths.csv").read_bytes()

    def test_seed_range(self, run, brownian_config, tmp_path):
        """Test that a negative seed is a configuration error."""
        assert run("exact", "--config", brownian_config, "--out", str(tmp_path), "--seed", "-1") == 2

    def test_telegraph(self, run, tmp_path):
        """Test the built-in telegraph configuration at a small level."""
        out = tmp_path / "telegraph"
        assert run("telegraph", "--out", str(out), "--replicates", "4", "--levels", "10") == 0
        paths = read_paths_csv(str(out / "paths.csv"))
        assert len(paths) == 4
        assert paths[0].d == 1

    def test_partial_sums(self, run, tmp_path):
        """Test the built-in partial-sum configuration at N = 64."""
        out = tmp_path / "partial"
        assert run("partial-sums", "--out", str(out), "--replicates", "3", "--levels", "64") == 0
        paths = read_paths_csv(str(out / "paths.csv"))
        assert len(paths) == 3
        assert paths[0].d == 2

    def test_scheme_mismatch(self, run, brownian_config, tmp_path):
        """Test that a telegraph run refuses an exact configuration."""
        assert run("telegraph", "--config", brownian_config, "--out", str(tmp_path)) == 2


@pytest.mark.integration
@pytest.mark.slow
class TestVerifyAndPlot:
    """Test verify reports and plots."""

    def test_verify_reproducible(self, run, tmp_path):
        """Test that verify writes a report whose bytes repeat on rerun."""
        a, b = tmp_path / "a", tmp_path / "b"
        argv = ("verify", "--scheme", "partial-sums", "--replicates", "200", "--levels", "64,128")
        code = run(*argv, "--out", str(a))
        assert code in (0, 1)
        assert run(*argv, "--out", str(b)) == code
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()

        report = read_report(str(a / "report.json"))
        assert report["scheme"] == "partial-sums"
        assert report["pass"] is (code == 0)
        assert [level["level"] for level in report["levels"]] == [64, 128]
        assert report["config_echo"]["replicates"] == 200
        assert report["structural"]["en_ratio_error"] <= 1e-9
        assert report["structural"]["antipersistent_residual"] is None

    def test_plot_after_verify(self, run, tmp_path):
        """Test that plot renders both figures from a verify directory."""
        out = tmp_path / "run"
        run("verify", "--scheme", "partial-sums", "--replicates", "50", "--levels", "64,128", "--out", str(out))
        assert run("plot", "--out", str(out)) == 0
        assert (out / "paths.svg").exists()
        assert (out / "errors.svg").exists()
        assert (out / "paths.svg").read_text().lstrip().startswith("<?xml")

    def test_plot_empty_directory(self, run, tmp_path):
        """Test that plot with nothing to draw is an input error."""
        assert run("plot", "--out", str(tmp_path)) == 2

    def test_calibrate(self, run, capsys):
        """Test that exact Brownian runs rarely exceed the z threshold."""
        assert run("calibrate", "--trials", "5", "--replicates", "200", "--seed", "11") == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["trials"] == 5
        assert payload["z_threshold"] == 4.5
        assert payload["exceedance_rate"] == 0.0
        assert payload["pass"] is True

    def test_calibrate_rejects_zero_trials(self, run):
        """Test that calibrate needs at least one trial."""
        assert run("calibrate", "--trials", "0") == 2


@pytest.mark.integration
class TestMetrics:
    """Test the Prometheus text file."""

    def test_metrics_written(self, run, brownian_config, tmp_path):
        """Test that enabled metrics are written after a run."""
        metrics_file = tmp_path / "metrics.prom"
        with patch.dict(os.environ, {'OFBM_METRICS_ENABLED': '1', 'OFBM_METRICS_FILE': str(metrics_file)}):
            assert run("exact", "--config", brownian_config, "--out", str(tmp_path / "out")) == 0
        assert metrics_file.exists()
        assert "ofbm_level_max_z" in metrics_file.read_text()
