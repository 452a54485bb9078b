"""
Unit tests for configuration parsing and the command-line entry point
"""

import json
import math

import numpy as np
import pandas as pd
import pytest

from src.cli import (
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    MANIFEST_NAME,
    METRICS_NAME,
    RUN_LOG_NAME,
    RunManifest,
    build_parser,
    main,
    parse_config,
    parse_config_text,
)
from src.errors import ConfigError
from src.model import DEFAULT_SUBSTRATE_Q, normalized_pump, quality_factor, threshold
from tests.conftest import MINIMAL_INI

SYMMETRIC_INI = """\
[mode_i]
freq_hz = 1.5e6
gamma_hz = 0.15915494309189535

[mode_j]
freq_hz = 1.5e6
gamma_hz = 0.15915494309189535

[substrate]
gamma_hz = 159.15494309189535

[coupling]
threshold_m = 40e-15
"""


def _csvs(path):
    return sorted(p.name for p in path.glob("*.csv"))


class TestParseConfig:
    """INI parsing into SystemConfig"""

    def test_minimal_file(self):
        """Defaults fill the substrate, masses and temperature"""
        config = parse_config_text(MINIMAL_INI)
        assert threshold(config) == pytest.approx(40e-15, rel=1e-12)
        assert config.mode_j.gamma_hz == pytest.approx(0.028)
        assert quality_factor(config.substrate) == pytest.approx(DEFAULT_SUBSTRATE_Q)
        assert config.substrate.omega == pytest.approx(config.mode_i.omega + config.mode_j.omega)
        assert config.temperature == 295.0

    def test_parse_config_reads_file(self, minimal_ini):
        """parse_config reads from disk"""
        assert threshold(parse_config(minimal_ini)) == pytest.approx(40e-15, rel=1e-12)

    def test_missing_file(self, tmp_path):
        """A missing file is a configuration error"""
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "absent.ini")

    def test_pump_section(self):
        """mu and phase_rad set the pump"""
        config = parse_config_text(MINIMAL_INI + "\n[pump]\nmu = 0.3\nphase_rad = 0.5\n")
        assert normalized_pump(config) == pytest.approx(0.3)
        assert config.pump_phase == 0.5

    def test_coupling_given_as_g(self):
        """g may be given directly"""
        text = MINIMAL_INI.replace("threshold_m = 40e-15", "g = 2.5")
        assert parse_config_text(text).g == 2.5

    @pytest.mark.parametrize(
        "text,match",
        [
            (MINIMAL_INI + "\n[env]\nhumidity = 0.4\n", "humidity"),
            (MINIMAL_INI + "\n[laser]\npower_w = 1\n", "laser"),
            (MINIMAL_INI.replace("gamma_hz = 0.1", "gamma_hz = 0.1\ngamma_hz = 0.2"), "duplicate"),
            (MINIMAL_INI.replace("gamma_hz = 0.1", "gamma_hz = fast"), "gamma_hz"),
            (MINIMAL_INI.replace("threshold_m = 40e-15", "threshold_m = 40e-15\ng = 1"), "exactly one"),
            (MINIMAL_INI.replace("[coupling]\nthreshold_m = 40e-15\n", ""), "coupling"),
            (MINIMAL_INI + "\n[substrate]\nfreq_hz = 3.2e6\n", "detuning"),
            (MINIMAL_INI + "\n[pump]\nmu = 0.1\namplitude_m = 1e-15\n", "mutually exclusive"),
            (MINIMAL_INI.replace("gamma_hz = 0.1", "gamma_hz = 0.1\nq = 1e3"), "mode_i"),
        ],
    )
    def test_invalid_input_names_the_problem(self, text, match):
        """Unknown, duplicate, malformed and conflicting keys are rejected"""
        with pytest.raises(ConfigError, match=match):
            parse_config_text(text)


class TestParser:
    """Argument parsing"""

    def test_mode_flags(self):
        """--analytic-only, --sde-only and --both select the mode"""
        parser = build_parser()
        assert parser.parse_args(["gain"]).mode == "both"
        assert parser.parse_args(["gain", "--analytic-only"]).mode == "analytic"
        assert parser.parse_args(["gain", "--sde-only"]).mode == "sde"

    def test_mu_list(self):
        """--mu-list is a comma-separated list of floats"""
        args = build_parser().parse_args(["squeeze", "--mu-list", "0,0.5"])
        assert args.mu_list == [0.0, 0.5]

    def test_bad_mu_list_exits(self):
        """A malformed list is an argparse error"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["squeeze", "--mu-list", "a,b"])


class TestMain:
    """End-to-end runs of the entry point"""

    def test_threshold_analytic_only(self, tmp_path):
        """Threshold tables, manifest, log and metrics are written"""
        out = tmp_path / "threshold"
        assert main(["threshold", "--analytic-only", "--out-dir", str(out)]) == EXIT_OK
        table = pd.read_csv(out / "threshold.csv")
        assert list(table.columns) == ["g", "threshold_m", "xi_i_m", "xi_j_m", "growth_rate_mu1"]
        assert len(table) == 13
        np.testing.assert_allclose(table["threshold_m"] * table["g"], 40e-15 * table["g"][6], rtol=1e-9)
        growth = pd.read_csv(out / "growth.csv")
        assert "growth_rate_sde" not in growth.columns
        manifest = json.loads((out / MANIFEST_NAME).read_text())
        assert manifest["command"] == "threshold"
        assert set(manifest["outputs"]) == {"threshold.csv", "xi_fit.csv", "growth.csv"}
        assert (out / RUN_LOG_NAME).exists()
        assert "paramp_command_seconds" in (out / METRICS_NAME).read_text()

    def test_gain_analytic_only(self, tmp_path):
        """Gain table on the phase grid, deamplified at phi = 0"""
        out = tmp_path / "gain"
        argv = ["gain", "--analytic-only", "--phase-points", "8", "--mu-list", "0.038,0.042"]
        assert main(argv + ["--out-dir", str(out)]) == EXIT_OK
        frame = pd.read_csv(out / "gain_vs_phase.csv")
        assert list(frame.columns) == ["phi_rad", "mu", "G_analytic", "G_idler_analytic"]
        assert len(frame) == 16
        at_zero = frame[frame["phi_rad"] == 0.0].set_index("mu")["G_analytic"]
        assert at_zero[0.042] < 0.1

    def test_ringdown_analytic_only(self, tmp_path):
        """Analytic ring-down table without curves or dissipation fit"""
        out = tmp_path / "ringdown"
        argv = ["ringdown", "--analytic-only", "--hold-fractions", "0,0.5", "--out-dir", str(out)]
        assert main(argv) == EXIT_OK
        assert _csvs(out) == ["ringdown_fit.csv"]
        table = pd.read_csv(out / "ringdown_fit.csv")
        assert list(table.columns) == [
            "x_hold_m", "x_over_xi", "gamma_eff_analytic", "overcoupled", "q_ratio"
        ]
        assert table.loc[0, "q_ratio"] == pytest.approx(1.0)
        assert table.loc[1, "q_ratio"] < 1.0

    def test_spectrum_correlation_sources(self, tmp_path):
        """correlations.csv carries the three routes and they agree"""
        config = tmp_path / "pair.ini"
        config.write_text(SYMMETRIC_INI)
        out = tmp_path / "spectrum"
        argv = ["spectrum", "--config", str(config), "--mu-list", "0.5", "--points", "32"]
        assert main(argv + ["--out-dir", str(out)]) == EXIT_OK
        corr = pd.read_csv(out / "correlations.csv").set_index("source")
        assert set(corr.index) == {"closed_form", "lyapunov", "spectrum"}
        for column in ("C_ii", "C_jj", "C_ij"):
            assert corr.loc["spectrum", column] == pytest.approx(
                corr.loc["closed_form", column], rel=1e-3, abs=1e-9
            )
        assert corr.loc["closed_form", "C_ii"] == pytest.approx(1 / (1 - 0.25), rel=1e-6)
        spectrum = pd.read_csv(out / "spectrum.csv")
        assert len(spectrum) == 32

    def test_squeeze_small_ensemble(self, tmp_path):
        """A short ensemble fills the SDE columns and the phase-space table"""
        config = tmp_path / "pair.ini"
        config.write_text(SYMMETRIC_INI)
        out = tmp_path / "squeeze"
        argv = [
            "squeeze", "--config", str(config), "--mu-list", "0.5", "--ntraj", "4",
            "--duration", "20", "--dt", "0.05", "--out-dir", str(out),
        ]
        assert main(argv) == EXIT_OK
        frame = pd.read_csv(out / "squeeze.csv").set_index("quadrature")
        assert frame.loc["x_b", "std_analytic"] == pytest.approx(math.sqrt(1 / 1.5))
        assert frame.loc["x_b", "squeezing_db"] == pytest.approx(10 * math.log10(1 / 1.5))
        assert np.all(frame["std_sde"] > 0)
        phase_space = pd.read_csv(out / "phase_space.csv")
        assert set(phase_space["pair"]) == {"alpha", "beta", "x", "y"}
        prom = (out / METRICS_NAME).read_text()
        assert "paramp_trajectories_total" in prom
        assert "paramp_integration_steps_total" in prom

    def test_rerun_reproduces_outputs(self, tmp_path):
        """Re-running a manifest gives byte-identical tables"""
        first = tmp_path / "first"
        argv = ["gain", "--analytic-only", "--phase-points", "8", "--out-dir", str(first)]
        assert main(argv) == EXIT_OK
        second = tmp_path / "second"
        assert main(["rerun", str(first / MANIFEST_NAME), "--out-dir", str(second)]) == EXIT_OK
        manifest = RunManifest.load(first / MANIFEST_NAME)
        assert manifest.outputs == ["gain_vs_phase.csv"]
        for name in manifest.outputs:
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_rerun_missing_manifest(self, tmp_path):
        """A missing manifest is a configuration error"""
        assert main(["rerun", str(tmp_path / "nope.json")]) == EXIT_CONFIG

    def test_missing_config_file(self, tmp_path):
        """--config pointing nowhere exits with the configuration code"""
        argv = ["spectrum", "--config", str(tmp_path / "absent.ini"), "--out-dir", str(tmp_path)]
        assert main(argv) == EXIT_CONFIG

    def test_config_error_exit_code(self, tmp_path):
        """An unknown key exits 2 and leaves no tables behind"""
        config = tmp_path / "bad.ini"
        config.write_text(MINIMAL_INI + "\n[env]\nhumidity = 0.4\n")
        out = tmp_path / "bad"
        assert main(["spectrum", "--config", str(config), "--out-dir", str(out)]) == EXIT_CONFIG
        assert _csvs(out) == []
        assert not (out / MANIFEST_NAME).exists()
        assert "humidity" in (out / RUN_LOG_NAME).read_text()
        assert (out / METRICS_NAME).exists()

    @pytest.mark.parametrize(
        "argv, flag",
        [
            (["gain", "--analytic-only", "--phase-points", "0"], "--phase-points"),
            (["gain", "--analytic-only", "--phase-points", "-3"], "--phase-points"),
            (["threshold", "--analytic-only", "--points", "1"], "--points"),
            (["spectrum", "--points", "0"], "--points"),
            (["squeeze", "--ntraj", "4", "--bins", "0"], "--bins"),
            (["squeeze", "--ntraj", "0"], "--ntraj"),
        ],
    )
    def test_bad_counts_are_config_errors(self, tmp_path, argv, flag):
        """Empty or negative grids exit 2 with the flag named in the log"""
        out = tmp_path / "counts"
        assert main(argv + ["--out-dir", str(out)]) == EXIT_CONFIG
        assert _csvs(out) == []
        assert flag in (out / RUN_LOG_NAME).read_text()

    def test_bad_count_in_manifest(self, tmp_path):
        """A hand-edited manifest goes through the same count checks"""
        first = tmp_path / "first"
        argv = ["gain", "--analytic-only", "--phase-points", "8", "--out-dir", str(first)]
        assert main(argv) == EXIT_OK
        manifest = json.loads((first / MANIFEST_NAME).read_text())
        manifest["arguments"]["phase_points"] = 0
        (first / MANIFEST_NAME).write_text(json.dumps(manifest))
        second = tmp_path / "second"
        assert main(["rerun", str(first / MANIFEST_NAME), "--out-dir", str(second)]) == EXIT_CONFIG
        assert _csvs(second) == []

    def test_unexpected_error_removes_outputs(self, tmp_path, mocker):
        """Any other exception exits 3 and removes partial tables"""

        def broken(args, config, outputs):
            outputs.write_csv(pd.DataFrame({"omega_rad_s": [0.0]}), "spectrum.csv")
            raise ValueError("zero-size array to reduction operation")

        mocker.patch.dict("src.cli.COMMANDS", {"spectrum": broken})
        out = tmp_path / "broken"
        assert main(["spectrum", "--out-dir", str(out)]) == EXIT_NUMERIC
        assert _csvs(out) == []
        assert not (out / MANIFEST_NAME).exists()
        assert "zero-size array" in (out / RUN_LOG_NAME).read_text()
        assert "paramp_command_seconds" in (out / METRICS_NAME).read_text()

    def test_fit_missing_column(self, tmp_path):
        """Fit data without the required columns is a configuration error"""
        data = tmp_path / "data.csv"
        pd.DataFrame({"phase": [0.0, 1.0]}).to_csv(data, index=False)
        out = tmp_path / "fit"
        argv = ["fit", "--data", str(data), "--fit-kind", "gain", "--out-dir", str(out)]
        assert main(argv) == EXIT_CONFIG
        assert _csvs(out) == []

    def test_fit_not_converged_is_numerical(self, tmp_path):
        """Flat gain data cannot be fitted and exit 3"""
        data = tmp_path / "data.csv"
        phi = np.linspace(0.0, 2 * math.pi, 12, endpoint=False)
        pd.DataFrame({"phi_rad": phi, "G": np.ones(12)}).to_csv(data, index=False)
        out = tmp_path / "fit"
        argv = ["fit", "--data", str(data), "--fit-kind", "gain", "--out-dir", str(out)]
        assert main(argv) == EXIT_NUMERIC
        assert not (out / "fit.csv").exists()

    def test_fit_gain_data(self, tmp_path):
        """Gain output fed back into fit recovers mu"""
        first = tmp_path / "gain"
        argv = ["gain", "--analytic-only", "--mu-list", "0.038", "--out-dir", str(first)]
        assert main(argv) == EXIT_OK
        data = tmp_path / "data.csv"
        frame = pd.read_csv(first / "gain_vs_phase.csv")
        frame.rename(columns={"G_analytic": "G"})[["phi_rad", "G"]].to_csv(data, index=False)
        out = tmp_path / "fit"
        assert main(["fit", "--data", str(data), "--out-dir", str(out)]) == EXIT_OK
        fit = pd.read_csv(out / "fit.csv").set_index("parameter")
        assert fit.loc["mu", "value"] == pytest.approx(0.038, rel=1e-6)
        assert 'paramp_fits_total{kind="gain"}' in (out / METRICS_NAME).read_text()
