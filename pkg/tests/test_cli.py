"""
Tests for CLI interface.
"""

import json
import os
import tempfile

import pytest
from click.testing import CliRunner

from ballfield.cli import BallFieldCLI, read_manifest
from ballfield.covariance import geometric_spectrum
from ballfield.utils.config import RunConfig

SMALL_RUN = """\
# small grid for fast runs
grid.n_radii = 2
grid.n_theta = 5
grid.n_phi = 8
sampler.n_terms = 50
ensemble.size = 2
cache.enabled = false
"""

ENV_VARS = ("BALLFIELD_SEED", "BALLFIELD_OUTPUT_DIR", "BALLFIELD_CACHE_DIR",
            "BALLFIELD_CACHE_ENABLED", "BALLFIELD_THREADS")


class TestBallFieldCLI:
    """Tests for the BallFieldCLI commands."""

    @pytest.fixture(autouse=True)
    def clean_env(self, monkeypatch):
        """Keep BALLFIELD_* variables of the calling shell out of the runs."""
        for name in ENV_VARS:
            monkeypatch.delenv(name, raising=False)

    def setup_method(self):
        """Set up test environment."""
        self.temp_dir = tempfile.TemporaryDirectory()
        self.runner = CliRunner()
        self.cli = BallFieldCLI().build_cli()
        self.run_file = self._write("run.conf", SMALL_RUN)

    def teardown_method(self):
        """Remove the temporary directory."""
        self.temp_dir.cleanup()

    def _path(self, *parts):
        return os.path.join(self.temp_dir.name, *parts)

    def _write(self, name, text):
        path = self._path(name)
        with open(path, "w") as f:
            f.write(text)
        return path

    def _run_file(self, extra):
        return self._write("extra.conf", SMALL_RUN + extra)

    def _invoke(self, *args):
        return self.runner.invoke(self.cli, list(args))

    def _simulate(self, out, *extra):
        result = self._invoke("simulate", "--config", self.run_file, "--out", self._path(out), "-q", *extra)
        assert result.exit_code == 0, result.output
        with open(self._path(out, "manifest.json")) as f:
            return json.load(f)

    def test_spectrum(self):
        """Test spectrum.csv with an explicit n_max."""
        run_file = self._run_file("model.n_max = 5\n")
        result = self._invoke("spectrum", "--config", run_file, "--out", self._path("out"))

        assert result.exit_code == 0, result.output
        with open(self._path("out", "spectrum.csv")) as f:
            lines = f.read().splitlines()
        assert lines[0] == "n,a_n"
        rows = [line.split(",") for line in lines[1:] if not line.startswith("#")]
        assert [int(n) for n, _ in rows] == list(range(6))
        assert [float(a) for _, a in rows] == list(geometric_spectrum(0.7, 5).coefficients)
        assert lines[-1].startswith("# A=")

    def test_spectrum_single_term(self):
        """Test that n_max = 0 writes one row."""
        run_file = self._run_file("model.n_max = 0\n")
        result = self._invoke("spectrum", "--config", run_file, "--out", self._path("out"))

        assert result.exit_code == 0, result.output
        with open(self._path("out", "spectrum.csv")) as f:
            rows = [line for line in f.read().splitlines()[1:] if not line.startswith("#")]
        assert rows == ["0,1"]

    def test_invalid_rho(self):
        """Test that rho outside (0, 1) is a configuration error."""
        run_file = self._run_file("model.rho = 1.5\n")
        result = self._invoke("spectrum", "--config", run_file, "--out", self._path("out"))

        assert result.exit_code == 2
        assert "model.rho" in result.output

    def test_unknown_key(self):
        """Test that a misspelt run file key is a configuration error."""
        run_file = self._run_file("model.rhoo = 0.5\n")
        result = self._invoke("spectrum", "--config", run_file, "--out", self._path("out"))
        assert result.exit_code == 2

    def test_unknown_preset(self):
        """Test that an unknown preset is a configuration error."""
        result = self._invoke("spectrum", "--preset", "nosuch", "--out", self._path("out"))
        assert result.exit_code == 2

    def test_simulate_is_deterministic(self):
        """Test that reruns and thread counts give identical files."""
        first = self._simulate("a")
        second = self._simulate("b")
        threaded = self._simulate("c", "--threads", "2")

        assert sorted(first["files"]) == ["realization_00000.csv", "realization_00001.csv"]
        assert first["files"] == second["files"]
        assert first["files"] == threaded["files"]
        assert first["seed"] == 20210127
        assert first["radial"]["method"] == "cholesky"
        assert first["radial"]["size"] == 2

    def test_simulate_seed_option(self):
        """Test that --seed changes the realizations."""
        base = self._simulate("a")
        other = self._simulate("b", "--seed", "11")
        assert other["seed"] == 11
        assert other["config"]["sampler.seed"] == 11
        assert base["files"] != other["files"]

    def test_simulate_kl(self):
        """Test the KL method summary and the eigenvalue dump."""
        manifest = self._simulate("kl", "--preset", "kl95")

        assert manifest["radial"]["method"] == "kl"
        assert manifest["radial"]["retained_fraction"] >= 0.95
        assert manifest["radial"]["retained"] <= 2
        assert "eigenvalues.csv" in manifest["files"]
        assert os.path.exists(self._path("kl", "eigenvalues.csv"))

    def test_simulate_binary(self):
        """Test the binary field format."""
        manifest = self._simulate("bin", "--format", "binary")
        assert sorted(manifest["files"]) == ["realization_00000.bin", "realization_00001.bin"]
        with open(self._path("bin", "realization_00000.bin"), "rb") as f:
            assert f.read(6) == b"BALLF1"

    def test_manifest_config_round_trip(self):
        """Test that the manifest config echo parses back."""
        self._simulate("a")
        manifest, run_config = read_manifest(self._path("a", "manifest.json"))

        assert isinstance(run_config, RunConfig)
        assert run_config.grid.n_theta == 5
        assert run_config.sampler.n_terms == 50
        assert run_config.to_flat() == manifest["config"]

    def test_validate_small_ensemble(self):
        """Test that R below 100 is refused."""
        run_file = self._run_file("validation.ensemble_size = 10\n")
        result = self._invoke("validate", "--config", run_file, "--out", self._path("out"), "-q")
        assert result.exit_code == 2

    def test_validate_detects_wrong_oracle(self):
        """Test that a 50% perturbed analytic covariance fails."""
        run_file = self._run_file(
            "sampler.n_terms = 200\nvalidation.ensemble_size = 2000\n"
            "validation.n_samples = 5\nvalidation.analytic_scale = 1.5\n"
        )
        result = self._invoke("validate", "--config", run_file, "--out", self._path("out"), "-q")

        assert result.exit_code == 1
        with open(self._path("out", "report.csv")) as f:
            assert "# passed=false" in f.read()

    def test_validate_passes(self):
        """Test a small passing run and its report table."""
        run_file = self._run_file(
            "sampler.n_terms = 500\nvalidation.ensemble_size = 2000\nvalidation.n_samples = 5\n"
        )
        result = self._invoke("validate", "--config", run_file, "--out", self._path("out"))

        assert result.exit_code == 0, result.output
        assert "0.033412" in result.output
        with open(self._path("out", "report.csv")) as f:
            lines = f.read().splitlines()
        assert lines[0] == "t,estimated,analytic,stderr,pass"
        assert len([line for line in lines[1:] if not line.startswith("#")]) == 5

    def test_render_slices(self):
        """Test rendering of both slice kinds."""
        self._simulate("sim")
        field = self._path("sim", "realization_00000.csv")

        polar = self._invoke("render", field, "--slice", "phi=0", "--out", self._path("polar.ppm"), "-q")
        assert polar.exit_code == 0, polar.output
        with open(self._path("polar.ppm"), "rb") as f:
            assert f.read(15) == b"P6\n512 512\n255\n"

        shell = self._invoke("render", field, "--slice", "r=1", "--out", self._path("shell.ppm"), "-q")
        assert shell.exit_code == 0, shell.output
        with open(self._path("shell.ppm"), "rb") as f:
            data = f.read()
        assert data.startswith(b"P6\n8 5\n255\n")
        assert len(data) == len(b"P6\n8 5\n255\n") + 8 * 5 * 3

    def test_render_default_output(self):
        """Test that the image defaults to the input name with .ppm."""
        self._simulate("sim")
        result = self._invoke("render", self._path("sim", "realization_00001.csv"), "--slice", "r=0.5", "-q")
        assert result.exit_code == 0, result.output
        assert os.path.exists(self._path("sim", "realization_00001.ppm"))

    def test_render_radius_not_on_grid(self):
        """Test that an off-grid shell is a grid error."""
        self._simulate("sim")
        result = self._invoke("render", self._path("sim", "realization_00000.csv"), "--slice", "r=0.3", "-q")
        assert result.exit_code == 2

    def test_render_missing_input(self):
        """Test that a missing field file is an I/O error."""
        result = self._invoke("render", self._path("missing.csv"), "--slice", "phi=0", "-q")
        assert result.exit_code == 3

    def test_render_malformed_input(self):
        """Test that a malformed field file is an I/O error."""
        path = self._write("broken.csv", "# grid M=1 n_theta=2 n_phi=1\nr,phi,theta,value\n1,0,0\n")
        result = self._invoke("render", path, "--slice", "phi=0", "-q")
        assert result.exit_code == 3
