"""Surrogate log-posterior over the five diffusion parameters.

Three of the eight surrogate inputs (tilt angle, HMF intensity, solar wind
speed) are fixed per observation interval; the other five are sampled.
The likelihood is ``exp(-chi2 / 2)`` between the observed fluxes and the
surrogate's prediction, and the prior is flat over the training box with a
one-sided quadratic fall-off outside it, so samplers are pulled back into
the region where the surrogate can be trusted.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_vector
from .oracle import N_BINS, PARAM_NAMES, DomainBox, FluxSpectrum

SAMPLED_NAMES = ("k0_par", "a_par", "b_par", "a_perp", "b_perp")
FIXED_NAMES = ("alpha", "i_hmf", "v_sw")
SAMPLED_INDEX = np.array([PARAM_NAMES.index(n) for n in SAMPLED_NAMES])
FIXED_INDEX = np.array([PARAM_NAMES.index(n) for n in FIXED_NAMES])
N_SAMPLED = len(SAMPLED_NAMES)

PLATEAU_LOG_VALUE = float(np.log(1e6))


@dataclass(frozen=True)
class SampledParams:
    k0_par: float
    a_par: float
    b_par: float
    a_perp: float
    b_perp: float

    def to_array(self):
        return np.array([getattr(self, n) for n in SAMPLED_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values):
        return cls(*(float(v) for v in as_vector(values, N_SAMPLED, "sampled parameters")))


@dataclass(frozen=True)
class FixedContext:
    """Per-interval fixed inputs and the observed spectrum (with sigma)."""

    alpha: float
    i_hmf: float
    v_sw: float
    observed: FluxSpectrum

    def __post_init__(self):
        if self.observed.sigma is None:
            raise ValueError("observed spectrum needs per-bin sigma for the chi-squared")

    @property
    def fixed_values(self):
        return np.array([self.alpha, self.i_hmf, self.v_sw], dtype=np.float64)


@dataclass(frozen=True)
class PriorBox:
    """Flat-topped prior: ``plateau_log_value`` inside, quadratic decay outside.

    ``decay_scale`` defaults to 2% of the box width per dimension.
    """

    lower: np.ndarray
    upper: np.ndarray
    plateau_log_value: float = PLATEAU_LOG_VALUE
    decay_scale: np.ndarray = None

    def __post_init__(self):
        lower = as_vector(self.lower, N_SAMPLED, "prior lower bound")
        upper = as_vector(self.upper, N_SAMPLED, "prior upper bound")
        if np.any(upper <= lower):
            raise ValueError("prior box needs lower < upper in every dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.decay_scale is None:
            scale = 0.02 * (upper - lower)
        else:
            scale = as_vector(self.decay_scale, N_SAMPLED, "decay_scale")
        if np.any(scale <= 0):
            raise ValueError("decay_scale must be positive")
        object.__setattr__(self, "decay_scale", scale)

    @classmethod
    def from_domain_box(cls, box, **kwargs):
        return cls(box.lower[SAMPLED_INDEX], box.upper[SAMPLED_INDEX], **kwargs)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def halfwidth(self):
        return 0.5 * (self.upper - self.lower)


def embed(z, ctx):
    """Place the sampled and fixed parameters in surrogate input order."""
    x = np.empty(len(PARAM_NAMES))
    x[SAMPLED_INDEX] = as_vector(z, N_SAMPLED, "sampled parameters")
    x[FIXED_INDEX] = ctx.fixed_values
    return x


def extract(x):
    """Inverse of :func:`embed` on the sampled coordinates."""
    return as_vector(x, len(PARAM_NAMES), "parameter vector")[SAMPLED_INDEX].copy()


def chi_squared(observed, predicted):
    """Sum over the 32 bins of ``((obs - pred) / sigma)**2``."""
    if observed.sigma is None:
        raise ValueError("chi-squared needs per-bin sigma")
    pred = as_vector(predicted, N_BINS, "prediction")
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError("prediction contains non-finite values")
    r = (observed.flux - pred) / observed.sigma
    return float(r @ r)


def log_likelihood(z, ctx, surrogate):
    with np.errstate(over="ignore", invalid="ignore"):
        pred = surrogate.flux(embed(z, ctx))
        return -0.5 * chi_squared(ctx.observed, pred)


def _box_excess(z, box):
    below = np.maximum(box.lower - z, 0.0)
    above = np.maximum(z - box.upper, 0.0)
    return below, above


def log_prior(z, box):
    z = as_vector(z, N_SAMPLED, "sampled parameters")
    below, above = _box_excess(z, box)
    d = (below + above) / box.decay_scale
    return box.plateau_log_value - float(d @ d)


def log_prior_grad(z, box):
    z = as_vector(z, N_SAMPLED, "sampled parameters")
    below, above = _box_excess(z, box)
    return 2.0 * (below - above) / box.decay_scale**2


def log_posterior_and_grad(z, ctx, surrogate, box):
    """Unnormalized log-posterior at ``z`` and its exact gradient."""
    z = as_vector(z, N_SAMPLED, "sampled parameters")
    obs, sigma = ctx.observed.flux, ctx.observed.sigma
    # far outside the training box the surrogate can overflow; samplers treat
    # the resulting FloatingPointError as a divergence
    with np.errstate(over="ignore", invalid="ignore"):
        pred, vjp = surrogate.flux_and_vjp(embed(z, ctx))
        if not np.all(np.isfinite(pred)):
            raise FloatingPointError(f"surrogate returned non-finite flux at {z.tolist()}")
        r = (obs - pred) / sigma
        value = -0.5 * float(r @ r) + log_prior(z, box)
        grad = vjp(r / sigma)[SAMPLED_INDEX] + log_prior_grad(z, box)
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise FloatingPointError(f"non-finite log-posterior or gradient at {z.tolist()}")
    return value, grad


class SurrogatePosterior:
    """Log-posterior bound to one interval, with a box-standardized view.

    Samplers work in unit coordinates ``u = (z - center) / halfwidth`` so
    that an identity mass matrix and a single proposal scale are sensible
    for all five parameters. The map is affine, so it adds only a constant
    to the log-density.

    Attributes
    ----------
    n_evaluations : int
        Number of value-and-gradient evaluations made so far.
    n_value_evaluations : int
        Number of value-only evaluations (used by gradient-free samplers).
    """

    def __init__(self, ctx, surrogate, box):
        self.ctx = ctx
        self.surrogate = surrogate
        self.box = box
        self.n_evaluations = 0
        self.n_value_evaluations = 0

    def __call__(self, z):
        self.n_evaluations += 1
        return log_posterior_and_grad(z, self.ctx, self.surrogate, self.box)

    def to_unit(self, z):
        return (np.asarray(z, dtype=np.float64) - self.box.center) / self.box.halfwidth

    def from_unit(self, u):
        return self.box.center + np.asarray(u, dtype=np.float64) * self.box.halfwidth

    def unit_target(self, u):
        value, grad = self(self.from_unit(u))
        return value, grad * self.box.halfwidth

    def unit_log_density(self, u):
        """Value-only log-posterior in unit coordinates."""
        self.n_value_evaluations += 1
        z = self.from_unit(u)
        return log_likelihood(z, self.ctx, self.surrogate) + log_prior(z, self.box)

    def log_likelihood(self, z):
        return log_likelihood(z, self.ctx, self.surrogate)

    def predicted_flux(self, samples):
        """Surrogate flux for each row of ``samples`` (shape ``(n, 5)``)."""
        samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        x = np.empty((samples.shape[0], len(PARAM_NAMES)))
        x[:, SAMPLED_INDEX] = samples
        x[:, FIXED_INDEX] = self.ctx.fixed_values
        return self.surrogate.flux(x)


def synthetic_observation(params, rng, relative_sigma=0.03, flux_fn=None):
    """Noisy observation of the oracle flux at ``params``.

    ``sigma = relative_sigma * true_flux`` per bin and the observed flux is
    ``true + sigma * N(0, 1)``.

    Returns
    -------
    observed : FluxSpectrum
    truth : ndarray
        The noise-free flux.
    """
    from .oracle import modulated_flux

    x = as_vector(params, len(PARAM_NAMES), "parameter vector")
    truth = (flux_fn or (lambda p: modulated_flux(p)[0]))(x)
    sigma = relative_sigma * truth
    observed = truth + sigma * rng.standard_normal(N_BINS)
    if np.any(observed <= 0):
        raise ValueError("noise draw produced a non-positive flux; lower relative_sigma")
    return FluxSpectrum(observed, sigma), truth


def default_prior(box=None):
    return PriorBox.from_domain_box(DomainBox() if box is None else box)
