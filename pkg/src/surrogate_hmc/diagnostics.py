"""Chain diagnostics and posterior summaries.

Autocorrelation and effective sample size for judging mixing, equal-tailed
1-D credible intervals, highest-density 2-D credible regions from
histograms, and posterior-predictive flux bands from the surrogate.
"""

import csv
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import as_vector
from .exceptions import DegenerateIntervalError, DimensionError
from .oracle import rigidity_grid
from .posterior import FIXED_INDEX, SAMPLED_INDEX, SAMPLED_NAMES

CI_1D_MASS = 0.683
REGION_2D_MASS = 0.954
BAND_MASSES = (0.68, 0.95)


@dataclass
class AcfSeries:
    lags: np.ndarray
    values: np.ndarray

    def __getitem__(self, lag):
        return self.values[lag]


def _centered(series):
    x = as_vector(series, name="series")
    if x.shape[0] < 2:
        raise ValueError("series needs at least two values")
    xc = x - x.mean()
    if not np.any(xc):
        raise ValueError("autocorrelation of a constant series is undefined")
    return xc


def _acf_full(xc):
    n = xc.shape[0]
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    rho = acov / acov[0]
    rho[0] = 1.0
    return np.clip(rho, -1.0, 1.0)


def autocorrelation(series, max_lag):
    """Biased-normalization sample ACF for lags ``0..max_lag``."""
    xc = _centered(series)
    if xc.shape[0] <= max_lag + 1:
        raise ValueError(f"series of length {xc.shape[0]} is too short for max_lag={max_lag}")
    rho = _acf_full(xc)[: max_lag + 1]
    assert np.all(np.abs(rho) <= 1.0)
    return AcfSeries(np.arange(max_lag + 1), rho)


def effective_sample_size(series):
    """``N / tau`` with ``tau`` from Geyer's initial positive sequence.

    Autocorrelations are summed in adjacent pairs until the first pair
    whose sum is not positive. The result is clamped to ``(0, N]``.
    """
    xc = _centered(series)
    n = xc.shape[0]
    rho = _acf_full(xc)
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    stop = np.flatnonzero(pairs <= 0)
    k = stop[0] if stop.size else n_pairs
    tau = -1.0 + 2.0 * float(pairs[:k].sum())
    if tau <= 0:
        return float(n)
    return float(min(n / tau, n))


def credible_interval_1d(samples, mass=CI_1D_MASS):
    """Equal-tailed interval holding ``mass`` of the samples.

    Raises
    ------
    ValueError
        Fewer than 100 samples or ``mass`` outside (0, 1).
    DegenerateIntervalError
        The interval has zero width (e.g. an almost-constant sample).
    """
    x = as_vector(samples, name="samples")
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must lie in (0, 1)")
    if x.shape[0] < 100:
        raise ValueError(f"need at least 100 samples, got {x.shape[0]}")
    tail = 0.5 * (1.0 - mass)
    lo, hi = np.quantile(x, [tail, 1.0 - tail])
    if not hi > lo:
        raise DegenerateIntervalError(f"{mass:.3g} interval has zero width at {lo!r}")
    return float(lo), float(hi)


@dataclass
class Region2D:
    """Histogram-based highest-density region.

    ``inside[i, j]`` marks bins whose count is at least ``threshold``;
    together they hold ``mass_contained`` of the samples.
    """

    counts: np.ndarray
    x_edges: np.ndarray
    y_edges: np.ndarray
    threshold: float
    mass_contained: float

    @property
    def inside(self):
        return self.counts >= self.threshold

    @property
    def area(self):
        cell = np.outer(np.diff(self.x_edges), np.diff(self.y_edges))
        return float(cell[self.inside].sum())


def credible_region_2d(x, y, mass=REGION_2D_MASS, bins=50):
    """Highest-density region of a 2-D histogram.

    The threshold is the largest bin count whose super-level set contains
    at least ``mass`` of the samples.
    """
    x = as_vector(x, name="x")
    y = as_vector(y, name="y")
    if x.shape != y.shape:
        raise DimensionError(f"x and y lengths differ: {x.shape[0]} vs {y.shape[0]}")
    if bins < 10:
        raise ValueError("bins must be at least 10")
    if not 0.0 < mass < 1.0:
        raise ValueError("mass must lie in (0, 1)")
    counts, xe, ye = np.histogram2d(x, y, bins=bins)
    flat = np.sort(counts.ravel())[::-1]
    cum = np.cumsum(flat)
    k = int(np.searchsorted(cum, mass * x.shape[0] - 1e-9 * x.shape[0]))
    threshold = float(flat[min(k, flat.size - 1)])
    contained = float(counts[counts >= threshold].sum() / x.shape[0])
    return Region2D(counts, xe, ye, threshold, contained)


def marginal_maximum(samples, bins=100):
    """Center of the fullest bin of a 1-D histogram."""
    x = as_vector(samples, name="samples")
    if np.ptp(x) == 0:
        return float(x[0])
    counts, edges = np.histogram(x, bins=bins)
    i = int(np.argmax(counts))
    return float(0.5 * (edges[i] + edges[i + 1]))


@dataclass
class PredictiveBands:
    rigidity: np.ndarray
    lo68: np.ndarray
    hi68: np.ndarray
    lo95: np.ndarray
    hi95: np.ndarray
    map_flux: np.ndarray


def _samples_to_inputs(samples, ctx):
    x = np.empty((samples.shape[0], len(SAMPLED_INDEX) + len(FIXED_INDEX)))
    x[:, SAMPLED_INDEX] = samples
    x[:, FIXED_INDEX] = ctx.fixed_values
    return x


def posterior_predictive(chain, surrogate, ctx):
    """Per-bin equal-tailed 68% and 95% flux bands plus the flux at the MAP sample.

    ``chain`` must hold samples in physical parameter units.
    """
    samples = np.atleast_2d(chain.samples)
    if samples.shape[0] == 0:
        raise ValueError("chain is empty")
    flux = surrogate.flux(_samples_to_inputs(samples, ctx))
    bands = {}
    for mass in BAND_MASSES:
        tail = 0.5 * (1.0 - mass)
        bands[mass] = np.quantile(flux, [tail, 1.0 - tail], axis=0)
    map_flux = flux[int(np.argmax(chain.log_targets))]
    return PredictiveBands(rigidity_grid(), bands[0.68][0], bands[0.68][1],
                           bands[0.95][0], bands[0.95][1], map_flux)


@dataclass
class PosteriorSummary:
    names: tuple
    map_point: np.ndarray
    map_log_target: float
    means: np.ndarray
    marginal_maxima: np.ndarray
    ci_1d: np.ndarray
    ess: np.ndarray
    region_2d: dict
    predictive: PredictiveBands


def summarize(chain, surrogate, ctx, names=SAMPLED_NAMES, bins_2d=50, bins_1d=100):
    """Assemble the full posterior summary of a chain in physical units.

    Intervals are ``(nan, nan)`` for a parameter whose samples are too few or
    collapse to a point; everything else is always filled in.
    """
    samples = np.atleast_2d(chain.samples)
    if samples.shape[0] == 0:
        raise ValueError("chain is empty")
    d = samples.shape[1]
    best = int(np.argmax(chain.log_targets))
    ci = np.full((d, 2), np.nan)
    ess = np.full(d, np.nan)
    for i in range(d):
        try:
            ci[i] = credible_interval_1d(samples[:, i], CI_1D_MASS)
        except (ValueError, DegenerateIntervalError):
            pass
        try:
            ess[i] = effective_sample_size(samples[:, i])
        except ValueError:
            pass
    regions = {}
    for i, j in itertools.combinations(range(d), 2):
        regions[(names[i], names[j])] = credible_region_2d(
            samples[:, i], samples[:, j], REGION_2D_MASS, bins_2d)
    return PosteriorSummary(
        names=tuple(names),
        map_point=samples[best].copy(),
        map_log_target=float(chain.log_targets[best]),
        means=samples.mean(axis=0),
        marginal_maxima=np.array([marginal_maximum(samples[:, i], bins_1d) for i in range(d)]),
        ci_1d=ci,
        ess=ess,
        region_2d=regions,
        predictive=posterior_predictive(chain, surrogate, ctx),
    )


def _fmt(v):
    return repr(float(v))


def write_summary(summary, out_dir, observed=None, acf_max_lag=200, samples=None):
    """Write plot-ready CSV tables into ``out_dir``; returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "summary.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "map", "mean", "marginal_max", "ci68_lo", "ci68_hi", "ess"])
        for k, name in enumerate(summary.names):
            w.writerow([name, _fmt(summary.map_point[k]), _fmt(summary.means[k]),
                        _fmt(summary.marginal_maxima[k]), _fmt(summary.ci_1d[k, 0]),
                        _fmt(summary.ci_1d[k, 1]), _fmt(summary.ess[k])])
    written.append(path)

    p = summary.predictive
    path = out / "predictive_bands.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rigidity", "lo68", "hi68", "lo95", "hi95", "map_flux", "observed", "sigma"])
        for i in range(p.rigidity.shape[0]):
            obs = "" if observed is None else _fmt(observed.flux[i])
            sig = "" if observed is None or observed.sigma is None else _fmt(observed.sigma[i])
            w.writerow([_fmt(p.rigidity[i]), _fmt(p.lo68[i]), _fmt(p.hi68[i]), _fmt(p.lo95[i]),
                        _fmt(p.hi95[i]), _fmt(p.map_flux[i]), obs, sig])
    written.append(path)

    for (a, b), region in summary.region_2d.items():
        path = out / f"hist2d_{a}__{b}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"# threshold={region.threshold!r} mass_contained={region.mass_contained!r}"])
            w.writerow([f"{a}_lo", f"{a}_hi", f"{b}_lo", f"{b}_hi", "count", "inside"])
            for i in range(region.counts.shape[0]):
                for j in range(region.counts.shape[1]):
                    w.writerow([_fmt(region.x_edges[i]), _fmt(region.x_edges[i + 1]),
                                _fmt(region.y_edges[j]), _fmt(region.y_edges[j + 1]),
                                int(region.counts[i, j]), int(region.inside[i, j])])
        written.append(path)

    if samples is not None:
        samples = np.atleast_2d(samples)
        for k, name in enumerate(summary.names):
            counts, edges = np.histogram(samples[:, k], bins=100)
            path = out / f"hist1d_{name}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["lo", "hi", "count"])
                for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                    w.writerow([_fmt(lo), _fmt(hi), int(c)])
            written.append(path)
        max_lag = min(acf_max_lag, samples.shape[0] - 2)
        if max_lag >= 1:
            columns = []
            for k in range(samples.shape[1]):
                try:
                    columns.append(autocorrelation(samples[:, k], max_lag).values)
                except ValueError:
                    columns.append(np.full(max_lag + 1, np.nan))
            path = out / "acf.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["lag", *summary.names])
                for lag in range(max_lag + 1):
                    w.writerow([lag, *(_fmt(c[lag]) for c in columns)])
            written.append(path)
    return written
