"""
Command Line Interface for ballfield.
"""

import functools
import hashlib
import json
import logging
from contextlib import contextmanager
from pathlib import Path

import click
from rich.console import Console
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn
from rich.table import Table

from ballfield.covariance import product_cov, write_spectrum_csv
from ballfield.grids_io import (
    SliceSpec,
    extract_slice,
    read_field,
    render_slice,
    write_field_binary,
    write_field_csv,
    write_vtk_ball,
)
from ballfield.radial_factorization import (
    KL,
    KLFactor,
    build_factor,
    build_radial_matrix,
    eigendecompose,
    write_eigenvalues_csv,
)
from ballfield.sampler import generate_ensemble
from ballfield.utils.cache import CacheManager
from ballfield.utils.config import ConfigLoader, RunConfig
from ballfield.utils.error_handler import ConfigurationError, ValidationFailedError, handle_exceptions
from ballfield.utils.log import configure_logging
from ballfield.validation import validate_segment, write_report_csv

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
FIELD_SUFFIXES = {"csv": ".csv", "binary": ".bin", "vtk": ".vtk"}
FIELD_WRITERS = {"csv": write_field_csv, "binary": write_field_binary, "vtk": write_vtk_ball}


def sha256_of(path):
    """Hex sha256 digest of a file."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def radial_summary(factor):
    """Manifest description of a radial factor."""
    if isinstance(factor, KLFactor):
        return {
            "method": KL,
            "size": factor.size,
            "retained": factor.retained,
            "retained_fraction": factor.trace_fraction,
            "jitter_applied": 0.0,
        }
    return {
        "method": "cholesky",
        "size": factor.size,
        "retained": factor.size,
        "retained_fraction": 1.0,
        "jitter_applied": factor.jitter_applied,
    }


def write_manifest(directory, run_config, factor, files):
    """Write manifest.json: config echo, seed, radial factor and checksums.

    Args:
        directory (Path): Output directory.
        run_config (RunConfig): Configuration of the run.
        factor: Radial factor used by the run.
        files (list): Paths of the files to checksum.

    Returns:
        Path: The manifest path.
    """
    manifest = {
        "config": run_config.to_flat(),
        "seed": run_config.sampler.seed,
        "radial": radial_summary(factor),
        "files": {Path(p).name: sha256_of(p) for p in files},
    }
    path = Path(directory) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def read_manifest(path):
    """Load a manifest and re-parse its config echo."""
    manifest = json.loads(Path(path).read_text())
    return manifest, RunConfig.from_flat(manifest["config"])


def _common_options(func):
    """Options shared by the spectrum, simulate and validate commands."""
    options = [
        click.option("--config", "config_file", type=click.Path(), help="Run configuration file."),
        click.option("--preset", help="Named parameter preset (e.g. segment)."),
        click.option("--seed", type=int, help="Master random seed."),
        click.option("--threads", type=int, help="Worker threads for ensemble generation."),
        click.option("--out", "out_dir", type=click.Path(), help="Output directory."),
        click.option("--verbose", "-v", is_flag=True, help="Enable verbose output."),
        click.option("--quiet", "-q", is_flag=True, help="Suppress non-error output."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


class BallFieldCLI:
    """Command Line Interface for ballfield."""

    def __init__(self, config_path=None, console=None):
        """Initialize the CLI.

        Args:
            config_path (str, optional): Defaults YAML file; the repository
                config/config.yaml when None.
            console (Console, optional): Console for regular output.
        """
        self.config_path = config_path
        self.console = console or Console()
        self.quiet = False

    @contextmanager
    def progress_indicator(self, message, total=None, disable=False):
        """Display a progress indicator during a long-running operation.

        Args:
            message (str): Message to display.
            total (int, optional): Number of steps; a spinner when None.
            disable (bool): Whether to disable the indicator.

        Yields:
            callable: Advances the indicator by one step.
        """
        columns = [SpinnerColumn(), TextColumn(f"[bold blue]{message}")]
        if total is not None:
            columns += [BarColumn(), MofNCompleteColumn()]
        with Progress(*columns, console=self.console, transient=True, disable=disable) as progress:
            task = progress.add_task("Working...", total=total)
            yield functools.partial(progress.advance, task)

    def _say(self, message):
        if not self.quiet:
            self.console.print(message)

    def load_config(self, config_file=None, preset=None, seed=None, out_dir=None):
        """Build the RunConfig from all configuration layers.

        Returns:
            tuple: (RunConfig, ConfigLoader).
        """
        loader = ConfigLoader(self.config_path, preset=preset, run_file=config_file)
        if seed is not None:
            loader.set("sampler.seed", seed)
        if out_dir is not None:
            loader.set("output.directory", str(out_dir))
        return RunConfig.from_loader(loader), loader

    def _threads(self, loader, threads):
        threads = loader.threads if threads is None else threads
        if threads < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {threads}")
        return threads

    def _setup(self, verbose, quiet):
        self.quiet = quiet
        configure_logging(verbose=verbose, quiet=quiet)

    def build_cli(self):
        """Create the click command group."""
        cli = click.Group(help="Gaussian random fields in the unit ball.")

        @cli.command("spectrum")
        @_common_options
        @handle_exceptions
        def spectrum_command(config_file, preset, seed, threads, out_dir, verbose, quiet):
            """Write the angular spectrum a_n as CSV."""
            self._setup(verbose, quiet)
            run_config, _ = self.load_config(config_file, preset, seed, out_dir)
            self.cmd_spectrum(run_config)

        @cli.command("simulate")
        @_common_options
        @click.option("--format", "field_format", type=click.Choice(sorted(FIELD_SUFFIXES)),
                      help="Realization file format.")
        @handle_exceptions
        def simulate_command(config_file, preset, seed, threads, out_dir, verbose, quiet, field_format):
            """Simulate an ensemble of realizations on the ball grid."""
            self._setup(verbose, quiet)
            run_config, loader = self.load_config(config_file, preset, seed, out_dir)
            if field_format is not None:
                loader.set("output.format", field_format)
                run_config = RunConfig.from_loader(loader)
            self.cmd_simulate(run_config, self._threads(loader, threads))

        @cli.command("validate")
        @_common_options
        @handle_exceptions
        def validate_command(config_file, preset, seed, threads, out_dir, verbose, quiet):
            """Compare ensemble and analytic covariance along a segment."""
            self._setup(verbose, quiet)
            run_config, loader = self.load_config(config_file, preset, seed, out_dir)
            self.cmd_validate(run_config, self._threads(loader, threads))

        @cli.command("render")
        @click.argument("input_path", type=click.Path())
        @click.option("--slice", "slice_text", required=True, help="'phi=<radians>' or 'r=<radius>'.")
        @click.option("--out", "out_path", type=click.Path(), help="Output PPM image.")
        @click.option("--config", "config_file", type=click.Path(), help="Run configuration file.")
        @click.option("--preset", help="Named parameter preset.")
        @click.option("--verbose", "-v", is_flag=True, help="Enable verbose output.")
        @click.option("--quiet", "-q", is_flag=True, help="Suppress non-error output.")
        @handle_exceptions
        def render_command(input_path, slice_text, out_path, config_file, preset, verbose, quiet):
            """Render a slice of a realization file to a PPM image."""
            self._setup(verbose, quiet)
            run_config, _ = self.load_config(config_file, preset)
            if out_path is None:
                out_path = Path(input_path).with_suffix(".ppm")
            self.cmd_render(run_config, input_path, SliceSpec.parse(slice_text), out_path)

        return cli

    def run(self, args=None):
        """Run the CLI."""
        self.build_cli()(args=args, obj={})

    def cmd_spectrum(self, run_config):
        """Write spectrum.csv into the output directory.

        Returns:
            Path: The written file.
        """
        spectrum = run_config.model.spectrum()
        path = write_spectrum_csv(spectrum, Path(run_config.output.directory) / "spectrum.csv")
        self._say(f"Spectrum with n_max={spectrum.n_max}, A={spectrum.total_mass:.10g} written to {path}")
        return path

    def cmd_simulate(self, run_config, threads=1):
        """Simulate R realizations and write them with a manifest.

        Returns:
            Path: The manifest path.
        """
        directory = Path(run_config.output.directory)
        directory.mkdir(parents=True, exist_ok=True)
        model = run_config.model
        sampler = run_config.sampler
        grid = run_config.grid.ball_grid()
        spectrum = model.spectrum()
        radial_model = model.radial_model()
        cache = CacheManager(run_config.cache)

        factor = build_factor(grid.radial, radial_model, sampler.radial_method, sampler.kl_fraction, cache=cache)
        count = run_config.ensemble.size
        logger.info("Simulating %d realization(s) on %d nodes (n_max=%d, N=%d)",
                    count, grid.size, spectrum.n_max, sampler.n_terms)
        with self.progress_indicator("Simulating...", total=count, disable=self.quiet) as advance:
            ensemble = generate_ensemble(sampler, spectrum, factor, grid, count, threads=threads, progress=advance)

        output_format = run_config.output.format
        writer = FIELD_WRITERS[output_format]
        files = []
        for realization in ensemble:
            name = f"realization_{realization.realization_index:05d}{FIELD_SUFFIXES[output_format]}"
            files.append(writer(realization, directory / name))

        if isinstance(factor, KLFactor) or run_config.output.dump_eigenvalues:
            eigen = factor if isinstance(factor, KLFactor) else eigendecompose(build_radial_matrix(grid.radial, radial_model))
            files.append(write_eigenvalues_csv(eigen, directory / "eigenvalues.csv"))

        manifest = write_manifest(directory, run_config, factor, files)
        self._say(f"Wrote {count} realization(s) and {manifest}")
        return manifest

    def cmd_validate(self, run_config, threads=1):
        """Run the segment covariance check and write report.csv.

        Returns:
            CovarianceReport: The report.

        Raises:
            ValidationFailedError: If the report does not pass.
        """
        settings = run_config.validation
        covariance = run_config.model.covariance()
        spec = settings.segment_spec()
        size = settings.ensemble_size

        logger.info("Validating on %d segment points with R=%d, N=%d",
                    spec.n_samples, size, run_config.sampler.n_terms)
        with self.progress_indicator("Simulating ensemble...", total=size, disable=self.quiet) as advance:
            report, _ = validate_segment(
                covariance,
                run_config.sampler,
                spec,
                size,
                threads=threads,
                progress=advance,
                se_multiple=settings.se_multiple,
                excursion_multiple=settings.excursion_multiple,
                analytic_scale=settings.analytic_scale,
                cache=CacheManager(run_config.cache),
            )
        path = write_report_csv(report, Path(run_config.output.directory) / "report.csv")

        if not self.quiet:
            self.console.print(self._report_table(report))
            endpoint = product_cov(covariance, spec.endpoint_a, spec.endpoint_b)
            self.console.print(f"Analytic covariance at t=1: {endpoint:.6f}")
            self.console.print(f"Report written to {path}")

        if not report.passed:
            raise ValidationFailedError(
                f"Covariance check failed: {report.excursions} point(s) beyond "
                f"{report.se_multiple:g} SE, max deviation {report.max_abs_dev_in_se:.2f} SE"
            )
        self._say(f"[green]Passed[/green]: max deviation {report.max_abs_dev_in_se:.2f} SE")
        return report

    def _report_table(self, report):
        table = Table(title="Segment covariance")
        for column in ("t", "estimated", "analytic", "stderr", "dev/SE", "pass"):
            table.add_column(column, justify="right")
        for row in report.rows:
            table.add_row(
                f"{row.t:.3f}", f"{row.estimated:.5f}", f"{row.analytic:.5f}",
                f"{row.stderr:.5f}", f"{row.deviation:.2f}",
                "[green]yes[/green]" if row.passed else "[red]no[/red]",
            )
        return table

    def cmd_render(self, run_config, input_path, spec, out_path):
        """Render one slice of a realization file.

        Returns:
            Path: The written image.
        """
        realization = read_field(input_path)
        slice_ = extract_slice(realization, spec)
        render = run_config.render
        path = render_slice(slice_, out_path, render.colormap, render.symmetric, render.canvas_size)
        self._say(f"Rendered {spec.kind}={spec.value:g} slice {slice_.shape} to {path}")
        return path
