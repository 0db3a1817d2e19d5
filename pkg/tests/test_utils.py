"""
Tests for utility modules.
"""

import io
import json
import logging
import os
import tempfile
import time
from types import SimpleNamespace

import numpy as np
import pytest
from rich.console import Console
from rich.logging import RichHandler

from ballfield.utils.cache import CacheManager
from ballfield.utils.config import (
    ConfigLoader,
    GridSettings,
    ModelSettings,
    OutputSettings,
    RunConfig,
    ValidationSettings,
)
from ballfield.utils.error_handler import (
    ConfigurationError,
    DomainError,
    FieldFormatError,
    GridError,
    IndefiniteMatrixError,
    InsufficientEnsembleError,
    ValidationFailedError,
    exit_code_for,
    handle_exceptions,
)
from ballfield.utils.log import configure_logging


class TestConfigLoader:
    """Tests for the ConfigLoader class."""

    def setup_method(self):
        """Set up a temporary directory for run files."""
        self.temp_dir = tempfile.TemporaryDirectory()

    def teardown_method(self):
        """Clean up after test."""
        self.temp_dir.cleanup()

    def _write(self, name, text):
        path = os.path.join(self.temp_dir.name, name)
        with open(path, "w") as f:
            f.write(text)
        return path

    def test_defaults_match_dataclasses(self):
        """Test that the YAML defaults and the dataclass defaults agree."""
        loader = ConfigLoader(load_env=False)
        assert RunConfig.from_loader(loader) == RunConfig()
        assert loader.threads == 1

    def test_get_nested_config(self):
        """Test getting nested configuration values."""
        loader = ConfigLoader(load_env=False)
        assert loader.get("sampler.seed") == 20210127
        assert loader.get("model.n_max") is None
        assert loader.get("nonexistent") is None
        assert loader.get("nonexistent", "default") == "default"

    def test_set_config(self):
        """Test setting known and unknown keys."""
        loader = ConfigLoader(load_env=False)
        loader.set("model.rho", 0.9)
        assert loader.get("model.rho") == 0.9
        with pytest.raises(ConfigurationError, match="model.rhoo"):
            loader.set("model.rhoo", 0.9)

    def test_missing_defaults_file(self):
        """Test that a missing defaults file is reported."""
        with pytest.raises(ConfigurationError):
            ConfigLoader(os.path.join(self.temp_dir.name, "nope.yaml"), load_env=False)

    def test_flat_run_file(self):
        """Test `key = value` lines parsed as YAML scalars."""
        path = self._write("run.conf", (
            "# comment\n"
            "\n"
            "model.rho = 0.9\n"
            "grid.radii = [0.25, 0.5, 1.0]\n"
            "sampler.radial_method = kl\n"
            "cache.enabled = false\n"
        ))
        run_config = RunConfig.from_loader(ConfigLoader(run_file=path, load_env=False))

        assert run_config.model.rho == 0.9
        assert run_config.grid.radii == (0.25, 0.5, 1.0)
        assert run_config.sampler.radial_method == "kl"
        assert run_config.cache.enabled is False

    def test_yaml_run_file(self):
        """Test a nested YAML run file."""
        path = self._write("run.yaml", "model:\n  sigma: 2.0\nensemble:\n  size: 4\n")
        run_config = RunConfig.from_loader(ConfigLoader(run_file=path, load_env=False))
        assert run_config.model.sigma == 2.0
        assert run_config.ensemble.size == 4

    def test_malformed_line(self):
        """Test that a line without '=' names its line number."""
        path = self._write("run.conf", "model.rho = 0.5\nmodel.sigma 2\n")
        with pytest.raises(ConfigurationError, match=":2:"):
            ConfigLoader(run_file=path, load_env=False)

    def test_missing_run_file(self):
        """Test that a missing run file is a configuration error."""
        with pytest.raises(ConfigurationError):
            ConfigLoader(run_file=os.path.join(self.temp_dir.name, "nope.conf"), load_env=False)

    def test_presets(self):
        """Test that presets overlay the defaults."""
        fine = RunConfig.from_loader(ConfigLoader(preset="fine", load_env=False))
        assert (fine.model.corr_length, fine.model.rho) == (0.05, 0.9)
        kl95 = RunConfig.from_loader(ConfigLoader(preset="kl95", load_env=False))
        assert kl95.sampler.radial_method == "kl"

    def test_run_file_overrides_preset(self):
        """Test precedence of the run file over the preset."""
        path = self._write("run.conf", "model.rho = 0.8\n")
        run_config = RunConfig.from_loader(ConfigLoader(preset="fine", run_file=path, load_env=False))
        assert run_config.model.rho == 0.8
        assert run_config.model.corr_length == 0.05

    def test_unknown_preset(self):
        """Test that an unknown preset lists the available ones."""
        with pytest.raises(ConfigurationError, match="segment"):
            ConfigLoader(preset="nosuch", load_env=False)

    def test_env_override(self, monkeypatch):
        """Test overriding configuration with environment variables."""
        monkeypatch.setenv("BALLFIELD_SEED", "5")
        monkeypatch.setenv("BALLFIELD_OUTPUT_DIR", "/tmp/fields")
        monkeypatch.setenv("BALLFIELD_CACHE_ENABLED", "false")
        monkeypatch.setenv("BALLFIELD_THREADS", "3")
        monkeypatch.delenv("BALLFIELD_CACHE_DIR", raising=False)

        loader = ConfigLoader()

        assert loader.get("sampler.seed") == 5
        assert loader.get("output.directory") == "/tmp/fields"
        assert loader.get("cache.enabled") is False
        assert loader.threads == 3

    def test_env_invalid(self, monkeypatch):
        """Test that a non-integer seed is rejected."""
        monkeypatch.setenv("BALLFIELD_SEED", "abc")
        with pytest.raises(ConfigurationError, match="BALLFIELD_SEED"):
            ConfigLoader()


class TestRunConfig:
    """Tests for the RunConfig dataclasses."""

    def test_invalid_model(self):
        """Test that errors name the dotted field."""
        with pytest.raises(ConfigurationError, match="model.rho"):
            ModelSettings(rho=1.5)
        with pytest.raises(ConfigurationError, match="model.sigma"):
            ModelSettings(sigma=0.0)
        with pytest.raises(ConfigurationError, match="model.n_max"):
            ModelSettings(n_max=-1)

    def test_invalid_grid(self):
        """Test grid checks."""
        with pytest.raises(ConfigurationError, match="grid.radii"):
            GridSettings(radii=(0.5, 0.4))
        with pytest.raises(ConfigurationError, match="grid.n_theta"):
            GridSettings(n_theta=1)

    def test_invalid_output_and_validation(self):
        """Test format and tolerance checks."""
        with pytest.raises(ConfigurationError, match="output.format"):
            OutputSettings(format="hdf5")
        with pytest.raises(ConfigurationError, match="excursion_multiple"):
            ValidationSettings(se_multiple=5.0, excursion_multiple=4.0)

    def test_origin_endpoint(self):
        """Test that a segment endpoint at the origin is refused at load."""
        with pytest.raises(ConfigurationError, match="validation.endpoint_a"):
            ValidationSettings(endpoint_a=(0.0, 0.0, 0.0))
        with pytest.raises(ConfigurationError, match="validation.endpoint_b"):
            RunConfig.from_dict({"validation": {"endpoint_b": [0.0, 1.0, 1.0]}})

    def test_invalid_sampler(self):
        """Test that sampler errors become configuration errors."""
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict({"sampler": {"n_terms": 0}})

    def test_unknown_section_or_key(self):
        """Test that unknown names are rejected."""
        with pytest.raises(ConfigurationError):
            RunConfig.from_dict({"modle": {}})
        with pytest.raises(ConfigurationError, match="grid.n_r"):
            RunConfig.from_dict({"grid": {"n_r": 3}})

    def test_flat_round_trip(self):
        """Test to_flat and from_flat through JSON."""
        run_config = RunConfig(
            model=ModelSettings(rho=0.9, n_max=40),
            grid=GridSettings(radii=(0.25, 1.0)),
        )
        flat = json.loads(json.dumps(run_config.to_flat()))
        assert flat["grid.radii"] == [0.25, 1.0]
        assert flat["validation.endpoint_a"][0] == 0.5
        assert RunConfig.from_flat(flat) == run_config

    def test_model_builders(self):
        """Test spectrum truncation and normalization."""
        assert ModelSettings(n_max=5).spectrum().n_max == 5
        default = ModelSettings().spectrum()
        assert 0.7 ** default.n_max / 0.3 < 1e-8
        assert ModelSettings(normalize_angular=True).spectrum().total_mass == pytest.approx(1.0)

    def test_grid_builders(self):
        """Test the grids built from the settings."""
        assert GridSettings().ball_grid().shape == (32, 33, 64)
        grid = GridSettings(radii=(0.25, 1.0), n_theta=3, n_phi=4).ball_grid()
        assert grid.shape == (2, 3, 4)
        np.testing.assert_array_equal(grid.radii, [0.25, 1.0])

    def test_segment_spec(self):
        """Test the default segment endpoints."""
        spec = ValidationSettings().segment_spec()
        assert spec.endpoint_a.r == 0.5
        assert spec.endpoint_b.r == 1.0
        assert spec.n_samples == 21


class TestCacheManager:
    """Tests for the CacheManager class."""

    def setup_method(self):
        """Set up test environment."""
        # Create a temporary directory for cache
        self.temp_dir = tempfile.TemporaryDirectory()
        self.settings = SimpleNamespace(enabled=True, location=self.temp_dir.name, duration_days=7)
        self.cache_manager = CacheManager(self.settings)
        self.arrays = {"L": np.array([[1.0, 0.0], [0.5, 0.75]]), "jitter": np.array(0.0)}

    def teardown_method(self):
        """Clean up after test."""
        self.temp_dir.cleanup()

    def test_set_get(self):
        """Test that arrays come back bit-identical."""
        self.cache_manager.set("factor", self.arrays)
        cached = self.cache_manager.get("factor")

        assert set(cached) == {"L", "jitter"}
        np.testing.assert_array_equal(cached["L"], self.arrays["L"])

    def test_is_valid_and_invalidate(self):
        """Test validity before and after invalidation."""
        assert not self.cache_manager.is_valid("factor")
        self.cache_manager.set("factor", self.arrays)
        assert self.cache_manager.is_valid("factor")
        self.cache_manager.invalidate("factor")
        assert not self.cache_manager.is_valid("factor")

    def test_clear(self):
        """Test clearing all cache."""
        keys = ["key1", "key2", "key3"]
        for key in keys:
            self.cache_manager.set(key, self.arrays)

        self.cache_manager.clear()

        for key in keys:
            assert not self.cache_manager.is_valid(key)

    def test_expiration(self, monkeypatch):
        """Test cache expiration."""
        monkeypatch.setattr(time, "time", lambda: 1000)
        self.cache_manager.set("factor", self.arrays)
        assert self.cache_manager.is_valid("factor")

        # Advance time by 8 days (duration is 7 days)
        monkeypatch.setattr(time, "time", lambda: 1000 + 8 * 24 * 60 * 60)

        assert not self.cache_manager.is_valid("factor")
        assert self.cache_manager.get("factor") is None

    def test_corrupted_entry(self):
        """Test that an unreadable entry is dropped."""
        path = self.cache_manager._get_cache_path("factor")
        path.write_bytes(b"not an archive")

        assert self.cache_manager.get("factor") is None
        assert not path.exists()

    def test_disabled(self):
        """Test that a disabled cache stores nothing."""
        location = os.path.join(self.temp_dir.name, "off")
        cache = CacheManager(SimpleNamespace(enabled=False, location=location, duration_days=7))
        cache.set("factor", self.arrays)
        assert cache.get("factor") is None
        assert not os.path.exists(location)


class TestErrorHandling:
    """Tests for exit codes and the exception decorator."""

    @pytest.mark.parametrize("error, code", [
        (ValidationFailedError("x"), 1),
        (ConfigurationError("x"), 2),
        (DomainError("x"), 2),
        (GridError("x"), 2),
        (InsufficientEnsembleError("x"), 2),
        (IndefiniteMatrixError("x"), 2),
        (FieldFormatError("x"), 3),
        (FileNotFoundError("x"), 3),
        (RuntimeError("x"), 1),
    ])
    def test_exit_code_for(self, error, code):
        """Test the exit code contract."""
        assert exit_code_for(error) == code

    def test_handle_exceptions(self):
        """Test that errors become messages and exit codes."""
        output = io.StringIO()
        console = Console(file=output, width=200)

        @handle_exceptions(console=console)
        def fail(error):
            raise error

        with pytest.raises(SystemExit) as exc_info:
            fail(GridError("Radius 0.3 is not on the radial grid"))
        assert exc_info.value.code == 2
        assert "Radius 0.3 is not on the radial grid" in output.getvalue()

        with pytest.raises(SystemExit) as exc_info:
            fail(PermissionError("denied"))
        assert exc_info.value.code == 3

        with pytest.raises(SystemExit) as exc_info:
            fail(KeyError("boom"))
        assert exc_info.value.code == 1

    def test_handle_exceptions_passes_result(self):
        """Test that successful calls return their value."""
        @handle_exceptions
        def succeed():
            return 42

        assert succeed() == 42


class TestLogging:
    """Tests for configure_logging."""

    def test_levels(self):
        """Test the verbose and quiet levels."""
        assert configure_logging(verbose=True).level == logging.DEBUG
        assert configure_logging(quiet=True).level == logging.WARNING
        assert configure_logging().level == logging.INFO

    def test_single_handler(self):
        """Test that repeated setup does not stack handlers."""
        configure_logging()
        logger = configure_logging()
        assert sum(isinstance(h, RichHandler) for h in logger.handlers) == 1
