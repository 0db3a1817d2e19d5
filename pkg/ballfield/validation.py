"""
Monte Carlo checks of simulated ensembles against the analytic model.

The segment experiment estimates Ĉ(t) = (1/R) Σ_j f_j(x_a)·f_j(x(t)) along
the straight chord x(t) = (1-t)·x_a + t·x_b and compares it with the product
covariance. No mean is subtracted: the model is zero-mean.
"""

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Tuple

import numpy as np
from scipy import stats

from ballfield.covariance import BallPoint, product_cov
from ballfield.grids import PointSet
from ballfield.radial_factorization import build_factor
from ballfield.sampler import generate_ensemble, realization_streams, sample_degree
from ballfield.special_functions import spherical_from_cartesian
from ballfield.utils.error_handler import (
    DomainError,
    FieldFormatError,
    GridError,
    InsufficientEnsembleError,
)

logger = logging.getLogger(__name__)

MIN_ENSEMBLE = 100
MIN_FREQUENCY_DRAWS = 100_000
MIN_EXPECTED_COUNT = 10.0
CHI2_QUANTILE = 0.999
# One excursion beyond se_multiple is tolerated per this many points
POINTS_PER_EXCURSION = 21


@dataclass(frozen=True)
class SegmentSpec:
    """Straight segment between two ball points, sampled at equal steps of t."""

    endpoint_a: BallPoint
    endpoint_b: BallPoint
    n_samples: int = 21

    def __post_init__(self):
        if int(self.n_samples) != self.n_samples or self.n_samples < 2:
            raise DomainError(f"n_samples must be an integer >= 2, got {self.n_samples}")


@dataclass(frozen=True, eq=False)
class SegmentPoints:
    """Sampled segment: parameters t, ball points and their point set."""

    t: np.ndarray
    points: Tuple[BallPoint, ...]
    point_set: PointSet

    @property
    def radii(self):
        """Distinct radii, for the radial grid."""
        return self.point_set.radial.radii


@dataclass(frozen=True)
class ReportRow:
    t: float
    estimated: float
    analytic: float
    stderr: float
    passed: bool

    @property
    def deviation(self):
        """|estimated - analytic| in standard errors."""
        diff = abs(self.estimated - self.analytic)
        if self.stderr > 0:
            return diff / self.stderr
        return 0.0 if diff == 0 else math.inf


@dataclass(frozen=True)
class CovarianceReport:
    """Per-point comparison of estimated and analytic covariance."""

    rows: Tuple[ReportRow, ...]
    se_multiple: float = 4.0
    excursion_multiple: float = 6.0

    @property
    def max_abs_dev_in_se(self):
        return max(row.deviation for row in self.rows)

    @property
    def allowed_excursions(self):
        return len(self.rows) // POINTS_PER_EXCURSION

    @property
    def excursions(self):
        return sum(1 for row in self.rows if not row.passed)

    @property
    def passed(self):
        return (self.excursions <= self.allowed_excursions
                and self.max_abs_dev_in_se <= self.excursion_multiple)


@dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float
    degenerate: bool = False


@dataclass(frozen=True)
class ChiSquareResult:
    statistic: float
    dof: int
    threshold: float

    @property
    def passed(self):
        return self.statistic <= self.threshold


def segment_points(spec):
    """Equally spaced points on the chord between the two endpoints.

    Args:
        spec (SegmentSpec): Segment definition.

    Returns:
        SegmentPoints: t values, ball points and the grouped point set.
    """
    t = np.linspace(0.0, 1.0, spec.n_samples)
    x_a = spec.endpoint_a.cartesian()
    x_b = spec.endpoint_b.cartesian()

    points = []
    for t_i in t:
        if t_i == 0.0:
            points.append(spec.endpoint_a)
            continue
        if t_i == 1.0:
            points.append(spec.endpoint_b)
            continue
        r, phi, theta = spherical_from_cartesian((1.0 - t_i) * x_a + t_i * x_b)
        # Convexity keeps the chord inside the ball up to rounding
        if r > 1.0 + 1e-12:
            raise GridError(f"Segment point at t={t_i} lies outside the unit ball (r={r})")
        points.append(BallPoint.from_spherical(min(r, 1.0), phi, theta))

    return SegmentPoints(t, tuple(points), PointSet.from_ball_points(points))


def estimate_segment_covariance(values, segment, covariance, se_multiple=4.0,
                                excursion_multiple=6.0, analytic_scale=1.0):
    """Compare the ensemble covariance with the analytic model along a segment.

    Args:
        values: Ensemble or array of shape (R, n_samples); column 0 is x_a.
        segment (SegmentPoints): Sampled segment matching the columns.
        covariance (ProductCovariance): Analytic model.
        se_multiple (float): Per-point tolerance in standard errors.
        excursion_multiple (float): Hard bound for tolerated excursions.
        analytic_scale (float): Multiplier of the analytic values.

    Returns:
        CovarianceReport: One row per segment point.

    Raises:
        InsufficientEnsembleError: If R < 100.
    """
    values = np.asarray(getattr(values, "values", values), dtype=float)
    if values.ndim != 2 or values.shape[1] != len(segment.points):
        raise DomainError("Ensemble values must have one column per segment point")
    r_count = values.shape[0]
    if r_count < MIN_ENSEMBLE:
        raise InsufficientEnsembleError(
            f"Ensemble size {r_count} is below {MIN_ENSEMBLE}; standard errors would be meaningless"
        )

    products = values[:, :1] * values
    estimated = products.mean(axis=0)
    stderr = products.std(axis=0, ddof=1) / math.sqrt(r_count)

    anchor = segment.points[0]
    rows = []
    for i, point in enumerate(segment.points):
        analytic = analytic_scale * product_cov(covariance, anchor, point)
        row = ReportRow(float(segment.t[i]), float(estimated[i]), float(analytic), float(stderr[i]), True)
        rows.append(replace(row, passed=row.deviation <= se_multiple))

    report = CovarianceReport(tuple(rows), se_multiple, excursion_multiple)
    logger.info("Segment covariance: max deviation %.2f SE, %d excursion(s)",
                report.max_abs_dev_in_se, report.excursions)
    return report


def validate_segment(covariance, sampler_config, spec, ensemble_size, threads=1,
                     progress=None, se_multiple=4.0, excursion_multiple=6.0,
                     analytic_scale=1.0, cache=None):
    """Run the full segment experiment: factor, simulate, estimate.

    Returns:
        tuple: (CovarianceReport, radial factor).
    """
    if ensemble_size < MIN_ENSEMBLE:
        raise InsufficientEnsembleError(
            f"Ensemble size {ensemble_size} is below {MIN_ENSEMBLE}; standard errors would be meaningless"
        )
    segment = segment_points(spec)
    factor = build_factor(
        segment.point_set.radial,
        covariance.radial,
        sampler_config.radial_method,
        sampler_config.kl_fraction,
        cache=cache,
    )
    ensemble = generate_ensemble(
        sampler_config, covariance.angular, factor, segment.point_set,
        ensemble_size, threads=threads, progress=progress,
    )
    report = estimate_segment_covariance(
        ensemble, segment, covariance, se_multiple, excursion_multiple, analytic_scale,
    )
    return report, factor


def empirical_moments(ensemble, point=None):
    """Sample mean, variance, skewness and excess kurtosis at one node.

    Unbiased estimators: variance with ddof=1, skewness and kurtosis with
    scipy's bias correction. Constant samples give NaN skewness/kurtosis
    and degenerate=True.

    Args:
        ensemble: Ensemble, (R, nodes) array, or 1-D sample.
        point (int, optional): Node index; required unless 1-D.

    Returns:
        Moments: The four moments.
    """
    values = np.asarray(getattr(ensemble, "values", ensemble), dtype=float)
    if values.ndim == 2:
        if point is None:
            raise DomainError("A node index is required for ensemble moments")
        values = values[:, point]
    if values.size < MIN_ENSEMBLE:
        raise InsufficientEnsembleError(f"Need at least {MIN_ENSEMBLE} samples, got {values.size}")

    # var() of a constant sample can leave rounding residue
    if np.ptp(values) == 0.0:
        return Moments(float(values[0]), 0.0, math.nan, math.nan, degenerate=True)
    mean = float(values.mean())
    variance = float(values.var(ddof=1))
    skewness = float(stats.skew(values, bias=False))
    kurtosis = float(stats.kurtosis(values, fisher=True, bias=False))
    return Moments(mean, variance, skewness, kurtosis)


def spectrum_frequency_test(spectrum, draws=1_000_000, rng=None, sampler=sample_degree, seed=0):
    """Chi-square goodness of fit of sampled degrees against aₙ/A.

    Bins with expected count below 10 are pooled into one tail bin; a tail
    that is still too small joins the smallest regular bin.

    Args:
        spectrum (AngularSpectrum): Spectrum under test.
        draws (int): Number of degree draws, >= 1e5.
        rng (np.random.Generator, optional): Stream; the degree stream of
            (seed, 0) when omitted.
        sampler (callable): Degree sampler with the sample_degree signature.
        seed (int): Seed used when rng is omitted.

    Returns:
        ChiSquareResult: Statistic, degrees of freedom and 0.999 threshold.
    """
    if draws < MIN_FREQUENCY_DRAWS:
        raise DomainError(f"Need at least {MIN_FREQUENCY_DRAWS} draws, got {draws}")
    if rng is None:
        rng = realization_streams(seed, 0).degree

    degrees = np.asarray(sampler(spectrum, rng, size=draws))
    observed = np.bincount(degrees, minlength=spectrum.n_max + 1).astype(float)
    if observed.size > spectrum.n_max + 1:
        # Draws outside the support can never be expected
        return ChiSquareResult(math.inf, 0, 0.0)
    expected = draws * spectrum.probabilities

    regular = expected >= MIN_EXPECTED_COUNT
    obs_bins = list(observed[regular])
    exp_bins = list(expected[regular])
    tail_obs = observed[~regular].sum()
    tail_exp = expected[~regular].sum()
    if tail_exp > 0 or tail_obs > 0:
        if tail_exp >= MIN_EXPECTED_COUNT or not exp_bins:
            obs_bins.append(tail_obs)
            exp_bins.append(tail_exp)
        else:
            smallest = int(np.argmin(exp_bins))
            obs_bins[smallest] += tail_obs
            exp_bins[smallest] += tail_exp

    obs_bins = np.array(obs_bins)
    exp_bins = np.array(exp_bins)
    dof = obs_bins.size - 1
    if dof == 0:
        return ChiSquareResult(0.0, 0, 0.0)
    if np.any((exp_bins == 0) & (obs_bins > 0)):
        return ChiSquareResult(math.inf, dof, float(stats.chi2.ppf(CHI2_QUANTILE, dof)))

    # Rescale so that both totals agree exactly, as scipy requires
    exp_bins = exp_bins * (obs_bins.sum() / exp_bins.sum())
    statistic = float(stats.chisquare(obs_bins, exp_bins).statistic)
    threshold = float(stats.chi2.ppf(CHI2_QUANTILE, dof))
    return ChiSquareResult(statistic, dof, threshold)


def write_report_csv(report, path):
    """Write `t,estimated,analytic,stderr,pass` rows plus summary comments."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", "estimated", "analytic", "stderr", "pass"])
        for row in report.rows:
            writer.writerow([
                f"{row.t:.17g}", f"{row.estimated:.17g}", f"{row.analytic:.17g}",
                f"{row.stderr:.17g}", "true" if row.passed else "false",
            ])
        f.write(f"# max_abs_dev_in_se={report.max_abs_dev_in_se:.17g}\n")
        f.write(f"# se_multiple={report.se_multiple:.17g}\n")
        f.write(f"# excursion_multiple={report.excursion_multiple:.17g}\n")
        f.write(f"# passed={'true' if report.passed else 'false'}\n")
    return path


def read_report_csv(path):
    """Read a report written by write_report_csv.

    Raises:
        FieldFormatError: If the file is malformed.
    """
    settings = {}
    rows = []
    with open(path, newline="") as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != "t,estimated,analytic,stderr,pass":
        raise FieldFormatError(f"{path}: missing report header")
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            settings[key.strip()] = value.strip()
            continue
        fields = line.split(",")
        if len(fields) != 5 or fields[4] not in ("true", "false"):
            raise FieldFormatError(f"{path}:{number}: malformed report row")
        try:
            t, estimated, analytic, stderr = (float(v) for v in fields[:4])
        except ValueError:
            raise FieldFormatError(f"{path}:{number}: non-numeric report value")
        rows.append(ReportRow(t, estimated, analytic, stderr, fields[4] == "true"))
    if not rows:
        raise FieldFormatError(f"{path}: report has no rows")
    try:
        return CovarianceReport(
            tuple(rows),
            float(settings.get("se_multiple", 4.0)),
            float(settings.get("excursion_multiple", 6.0)),
        )
    except ValueError:
        raise FieldFormatError(f"{path}: malformed summary line")
