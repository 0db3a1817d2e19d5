"""
Configuration loading for ballfield.

Layers, lowest precedence first: YAML defaults, a named preset, a run file,
environment variables, then whatever the CLI sets explicitly.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Tuple

import yaml
from dotenv import load_dotenv

from ballfield.covariance import (
    DEFAULT_TAIL_TOLERANCE,
    BallPoint,
    ProductCovariance,
    RadialCovarianceModel,
    default_n_max,
    geometric_spectrum,
)
from ballfield.grids import BallGrid, SphereGrid
from ballfield.radial_factorization import RadialGrid
from ballfield.sampler import SamplerConfig
from ballfield.special_functions import N_MAX_CAP
from ballfield.utils.error_handler import ConfigurationError, DomainError
from ballfield.validation import SegmentSpec

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("csv", "binary", "vtk")
PRESETS_KEY = "presets"


def _flatten(tree, prefix=""):
    flat = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{path}."))
        else:
            flat[path] = value
    return flat


def _nest(flat):
    tree = {}
    for path, value in flat.items():
        current = tree
        keys = path.split(".")
        for key in keys[:-1]:
            current = current.setdefault(key, {})
        current[keys[-1]] = value
    return tree


class ConfigLoader:
    """Configuration loader for ballfield.

    Loads the YAML defaults and overlays a preset, a run file and
    environment variables. Only keys present in the defaults are accepted.
    """

    def __init__(self, config_path=None, preset=None, run_file=None, load_env=True):
        """Initialize the ConfigLoader.

        Args:
            config_path (str, optional): Path to the defaults YAML file.
                If None, config/config.yaml at the repository root is used.
            preset (str, optional): Name of a preset from the defaults file.
            run_file (str, optional): Flat `key = value` or YAML run file.
            load_env (bool): Apply BALLFIELD_* environment overrides.
        """
        # Default config path is in the config directory
        if config_path is None:
            base_dir = Path(__file__).resolve().parent.parent.parent
            config_path = base_dir / "config" / "config.yaml"

        self.config_path = config_path
        self.config = {}
        self.presets = {}
        self.threads = 1

        self._load_config()
        self._known_keys = frozenset(_flatten(self.config))

        if preset:
            self.apply_preset(preset)
        if run_file:
            self.load_run_file(run_file)
        if load_env:
            load_dotenv()
            self._override_with_env()

    def _load_config(self):
        """Load the defaults from the YAML file."""
        try:
            with open(self.config_path, 'r') as file:
                self.config = yaml.safe_load(file) or {}
        except FileNotFoundError:
            raise ConfigurationError(f"Config file not found: {self.config_path}")
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Error parsing config file: {e}")
        self.presets = self.config.pop(PRESETS_KEY, None) or {}

    def apply_preset(self, name):
        """Overlay a named preset."""
        if name not in self.presets:
            available = ", ".join(sorted(self.presets)) or "none"
            raise ConfigurationError(f"Unknown preset {name!r} (available: {available})")
        logger.debug("Applying preset %s", name)
        for key, value in _flatten(self.presets[name]).items():
            self.set(key, value)

    def load_run_file(self, path):
        """Overlay a run file.

        Files ending in .yaml or .yml are read as nested YAML. Anything else
        is read as flat `section.key = value` lines, each value parsed as a
        YAML scalar or flow collection.
        """
        path = Path(path)
        try:
            text = path.read_text()
        except FileNotFoundError:
            raise ConfigurationError(f"Run file not found: {path}")

        if path.suffix in (".yaml", ".yml"):
            try:
                tree = yaml.safe_load(text) or {}
            except yaml.YAMLError as e:
                raise ConfigurationError(f"Error parsing run file {path}: {e}")
            if not isinstance(tree, dict):
                raise ConfigurationError(f"Run file {path} must contain a mapping")
            for key, value in _flatten(tree).items():
                self.set(key, value)
            return

        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep or not key.strip():
                raise ConfigurationError(f"{path}:{number}: expected 'key = value'")
            try:
                parsed = yaml.safe_load(value.strip()) if value.strip() else None
            except yaml.YAMLError:
                raise ConfigurationError(f"{path}:{number}: cannot parse value {value.strip()!r}")
            self.set(key.strip(), parsed)

    def _env_value(self, name, convert):
        raw = os.getenv(name)
        if raw is None or raw == "":
            return None
        try:
            return convert(raw)
        except (ValueError, yaml.YAMLError):
            raise ConfigurationError(f"Environment variable {name} has an invalid value {raw!r}")

    def _override_with_env(self):
        """Override configuration with environment variables."""
        seed = self._env_value("BALLFIELD_SEED", int)
        if seed is not None:
            self.set("sampler.seed", seed)

        output_dir = self._env_value("BALLFIELD_OUTPUT_DIR", str)
        if output_dir is not None:
            self.set("output.directory", output_dir)

        cache_dir = self._env_value("BALLFIELD_CACHE_DIR", str)
        if cache_dir is not None:
            self.set("cache.location", cache_dir)

        cache_enabled = self._env_value("BALLFIELD_CACHE_ENABLED", yaml.safe_load)
        if cache_enabled is not None:
            self.set("cache.enabled", cache_enabled)

        threads = self._env_value("BALLFIELD_THREADS", int)
        if threads is not None:
            self.threads = threads

    def get(self, key_path, default=None):
        """Get a configuration value by its key path.

        Args:
            key_path (str): Dot-separated path to the config value.
            default: Value to return if the key is not found.

        Returns:
            The configuration value, or default if not found.
        """
        keys = key_path.split('.')
        value = self.config

        for key in keys:
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default

        return value

    def set(self, key_path, value):
        """Set a configuration value by its key path.

        Args:
            key_path (str): Dot-separated path to the config value.
            value: Value to set.

        Raises:
            ConfigurationError: If the key is not a known setting.
        """
        if key_path not in self._known_keys:
            raise ConfigurationError(f"Unknown configuration key: {key_path}")

        keys = key_path.split('.')
        current = self.config

        # Navigate to the right depth
        for key in keys[:-1]:
            current = current.setdefault(key, {})

        current[keys[-1]] = value


def _as_float(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigurationError(f"{name} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise ConfigurationError(f"{name} must be finite, got {value!r}")
    return float(value)


def _as_int(name, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigurationError(f"{name} must be >= {minimum}, got {value}")
    return value


def _as_bool(name, value):
    if not isinstance(value, bool):
        raise ConfigurationError(f"{name} must be true or false, got {value!r}")
    return value


def _as_point(name, value):
    """Segment endpoint [r, phi, theta]; the origin has no direction and is refused."""
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigurationError(f"{name} must be a list [r, phi, theta], got {value!r}")
    r, phi, theta = (_as_float(name, v) for v in value)
    if not 0.0 < r <= 1.0:
        raise ConfigurationError(f"{name} radius must lie in (0, 1], got {r}")
    if not 0.0 <= theta <= math.pi:
        raise ConfigurationError(f"{name} colatitude must lie in [0, π], got {theta}")
    return (r, phi, theta)


@dataclass(frozen=True)
class ModelSettings:
    sigma: float = 1.0
    corr_length: float = 0.15
    rho: float = 0.7
    n_max: Optional[int] = None
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE
    normalize_angular: bool = False
    exact_series: bool = False

    def __post_init__(self):
        sigma = _as_float("model.sigma", self.sigma)
        if sigma <= 0:
            raise ConfigurationError(f"model.sigma must be positive, got {sigma}")
        corr_length = _as_float("model.corr_length", self.corr_length)
        if corr_length <= 0:
            raise ConfigurationError(f"model.corr_length must be positive, got {corr_length}")
        rho = _as_float("model.rho", self.rho)
        if not 0.0 < rho < 1.0:
            raise ConfigurationError(f"model.rho must lie in (0, 1), got {rho}")
        if self.n_max is not None:
            _as_int("model.n_max", self.n_max, minimum=0)
            if self.n_max > N_MAX_CAP:
                raise ConfigurationError(f"model.n_max must be <= {N_MAX_CAP}, got {self.n_max}")
        tail = _as_float("model.tail_tolerance", self.tail_tolerance)
        if not 0.0 < tail < 1.0:
            raise ConfigurationError(f"model.tail_tolerance must lie in (0, 1), got {tail}")
        _as_bool("model.normalize_angular", self.normalize_angular)
        _as_bool("model.exact_series", self.exact_series)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "corr_length", corr_length)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "tail_tolerance", tail)

    def radial_model(self):
        return RadialCovarianceModel(self.sigma, self.corr_length)

    def spectrum(self):
        """Geometric spectrum, truncated at n_max or by the tail tolerance."""
        n_max = self.n_max if self.n_max is not None else default_n_max(self.rho, self.tail_tolerance)
        spectrum = geometric_spectrum(self.rho, n_max)
        return spectrum.normalized() if self.normalize_angular else spectrum

    def covariance(self):
        return ProductCovariance(self.radial_model(), self.spectrum(), self.exact_series)


@dataclass(frozen=True)
class GridSettings:
    n_radii: int = 32
    radii: Optional[Tuple[float, ...]] = None
    n_theta: int = 33
    n_phi: int = 64

    def __post_init__(self):
        _as_int("grid.n_radii", self.n_radii, minimum=1)
        _as_int("grid.n_theta", self.n_theta, minimum=2)
        _as_int("grid.n_phi", self.n_phi, minimum=1)
        if self.radii is not None:
            if not isinstance(self.radii, (list, tuple)) or not self.radii:
                raise ConfigurationError(f"grid.radii must be a non-empty list, got {self.radii!r}")
            radii = tuple(_as_float("grid.radii", r) for r in self.radii)
            try:
                RadialGrid(radii)
            except DomainError as e:
                raise ConfigurationError(f"grid.radii: {e}")
            object.__setattr__(self, "radii", radii)

    def radial_grid(self):
        """Explicit radii when given, otherwise i/M for i = 1..n_radii."""
        if self.radii is not None:
            return RadialGrid(self.radii)
        return RadialGrid.uniform(self.n_radii)

    def sphere_grid(self):
        return SphereGrid.from_counts(self.n_phi, self.n_theta)

    def ball_grid(self):
        return BallGrid(self.radial_grid(), self.sphere_grid())


@dataclass(frozen=True)
class EnsembleSettings:
    size: int = 1

    def __post_init__(self):
        _as_int("ensemble.size", self.size, minimum=1)


@dataclass(frozen=True)
class OutputSettings:
    format: str = "csv"
    directory: str = "output"
    dump_eigenvalues: bool = False

    def __post_init__(self):
        if self.format not in OUTPUT_FORMATS:
            raise ConfigurationError(f"output.format must be one of {OUTPUT_FORMATS}, got {self.format!r}")
        if not isinstance(self.directory, str) or not self.directory:
            raise ConfigurationError(f"output.directory must be a path, got {self.directory!r}")
        _as_bool("output.dump_eigenvalues", self.dump_eigenvalues)


@dataclass(frozen=True)
class ValidationSettings:
    endpoint_a: Tuple[float, float, float] = (0.5, math.pi / 6, math.pi / 6)
    endpoint_b: Tuple[float, float, float] = (1.0, math.pi / 2, math.pi / 2)
    n_samples: int = 21
    ensemble_size: int = 20000
    se_multiple: float = 4.0
    excursion_multiple: float = 6.0
    analytic_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "endpoint_a", _as_point("validation.endpoint_a", self.endpoint_a))
        object.__setattr__(self, "endpoint_b", _as_point("validation.endpoint_b", self.endpoint_b))
        _as_int("validation.n_samples", self.n_samples, minimum=2)
        _as_int("validation.ensemble_size", self.ensemble_size, minimum=1)
        for name in ("se_multiple", "excursion_multiple", "analytic_scale"):
            value = _as_float(f"validation.{name}", getattr(self, name))
            if name != "analytic_scale" and value <= 0:
                raise ConfigurationError(f"validation.{name} must be positive, got {value}")
            object.__setattr__(self, name, value)
        if self.excursion_multiple < self.se_multiple:
            raise ConfigurationError("validation.excursion_multiple must be >= validation.se_multiple")

    def segment_spec(self):
        return SegmentSpec(
            BallPoint.from_spherical(*self.endpoint_a),
            BallPoint.from_spherical(*self.endpoint_b),
            self.n_samples,
        )


@dataclass(frozen=True)
class RenderSettings:
    colormap: str = "RdBu_r"
    symmetric: bool = True
    canvas_size: int = 512

    def __post_init__(self):
        if not isinstance(self.colormap, str):
            raise ConfigurationError(f"render.colormap must be a name, got {self.colormap!r}")
        _as_bool("render.symmetric", self.symmetric)
        _as_int("render.canvas_size", self.canvas_size, minimum=1)


@dataclass(frozen=True)
class CacheSettings:
    enabled: bool = True
    duration_days: float = 7
    location: str = ".cache"

    def __post_init__(self):
        _as_bool("cache.enabled", self.enabled)
        if _as_float("cache.duration_days", self.duration_days) < 0:
            raise ConfigurationError("cache.duration_days must be non-negative")
        if not isinstance(self.location, str) or not self.location:
            raise ConfigurationError(f"cache.location must be a path, got {self.location!r}")


_SECTIONS = {
    "model": ModelSettings,
    "grid": GridSettings,
    "sampler": SamplerConfig,
    "ensemble": EnsembleSettings,
    "output": OutputSettings,
    "validation": ValidationSettings,
    "render": RenderSettings,
    "cache": CacheSettings,
}


def _build_section(name, cls, values):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigurationError(f"Section {name} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown configuration key: {name}.{unknown[0]}")
    try:
        return cls(**values)
    except ConfigurationError:
        raise
    except (DomainError, TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid {name} setting: {e}")


@dataclass(frozen=True)
class RunConfig:
    """Validated settings of one run, one frozen dataclass per section."""

    model: ModelSettings = field(default_factory=ModelSettings)
    grid: GridSettings = field(default_factory=GridSettings)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)
    output: OutputSettings = field(default_factory=OutputSettings)
    validation: ValidationSettings = field(default_factory=ValidationSettings)
    render: RenderSettings = field(default_factory=RenderSettings)
    cache: CacheSettings = field(default_factory=CacheSettings)

    @classmethod
    def from_dict(cls, tree):
        """Build from a nested mapping; unknown sections or keys are rejected."""
        unknown = sorted(set(tree) - set(_SECTIONS))
        if unknown:
            raise ConfigurationError(f"Unknown configuration section: {unknown[0]}")
        return cls(**{name: _build_section(name, section, tree.get(name)) for name, section in _SECTIONS.items()})

    @classmethod
    def from_loader(cls, loader):
        return cls.from_dict(loader.config)

    @classmethod
    def from_flat(cls, flat):
        """Inverse of to_flat."""
        return cls.from_dict(_nest(flat))

    def to_flat(self):
        """Dotted key to plain value mapping (tuples become lists)."""
        flat = {}
        for name in _SECTIONS:
            for key, value in asdict(getattr(self, name)).items():
                flat[f"{name}.{key}"] = list(value) if isinstance(value, tuple) else value
        return flat
