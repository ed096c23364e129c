"""Fast numerical invariant suite behind ``surrogate-hmc selftest``.

Each check returns a :class:`CheckResult`; :func:`run_selftest` runs them
all and never raises, so a broken build reports every failing invariant at
once. The whole suite runs in well under a minute on one core.
"""

import math
import time
from dataclasses import dataclass

import numpy as np

from . import nn
from .diagnostics import autocorrelation, effective_sample_size
from .oracle import DomainBox, FluxSpectrum, rigidity_grid
from .posterior import (FixedContext, PriorBox, chi_squared, embed, log_posterior_and_grad,
                        log_prior)
from .samplers import ChainConfig, PhaseState, leapfrog, run_chain
from .surrogate import Surrogate


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def _gaussian(variances):
    variances = np.asarray(variances, dtype=float)

    def target(x):
        return -0.5 * float(x @ (x / variances)), -x / variances

    return target


def _demo_problem(surrogate=None, seed=0):
    """A posterior over a random (or supplied) surrogate with a matching observation."""
    box = DomainBox()
    if surrogate is None:
        net = nn.MLP.initialize((8, 32, 32, 32), np.random.default_rng(seed))
        mean = np.log10(1.8e4 * rigidity_grid() ** -2.7) - 0.3
        surrogate = Surrogate(net, box.lower, box.upper, mean, np.full(32, 0.2))
    prior = PriorBox.from_domain_box(box)
    z0 = prior.center + 0.2 * prior.halfwidth
    ctx0 = FixedContext(30.0, 5.0, 400.0, FluxSpectrum(np.ones(32), np.ones(32)))
    flux = surrogate.flux(embed(z0, ctx0))
    noise = np.random.default_rng(seed + 1).standard_normal(32)
    ctx = FixedContext(30.0, 5.0, 400.0, FluxSpectrum(flux * (1 + 0.03 * noise), 0.03 * flux))
    return surrogate, ctx, prior


def gradient_relative_errors(surrogate, ctx, prior, points, h=1e-5):
    """Per-component ``|g - fd| / |fd|`` of the log-posterior gradient.

    ``fd`` is a central difference with step ``h`` times the box half-width
    of each coordinate.
    """
    errors = np.empty_like(points)
    for n, z in enumerate(points):
        _, g = log_posterior_and_grad(z, ctx, surrogate, prior)
        for i in range(z.shape[0]):
            e = np.zeros_like(z)
            e[i] = h * prior.halfwidth[i]
            up = log_posterior_and_grad(z + e, ctx, surrogate, prior)[0]
            down = log_posterior_and_grad(z - e, ctx, surrogate, prior)[0]
            fd = (up - down) / (2 * e[i])
            errors[n, i] = abs(g[i] - fd) / max(abs(fd), 1e-300)
    return errors


def check_gradient(surrogate=None, n_points=100, seed=0):
    surrogate, ctx, prior = _demo_problem(surrogate, seed)
    rng = np.random.default_rng(seed + 2)
    points = prior.lower + rng.random((n_points, 5)) * (prior.upper - prior.lower)
    worst = float(gradient_relative_errors(surrogate, ctx, prior, points).max())
    return CheckResult("gradient vs finite differences", worst < 1e-3,
                       f"max relative error {worst:.2e} over {n_points} points (limit 1e-3)")


def check_leapfrog_reversibility(n_trials=100, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_trials):
        target = _gaussian(rng.uniform(0.2, 25.0, 5))
        q, p = rng.standard_normal(5), rng.standard_normal(5)
        step = rng.uniform(0.01, 0.5)
        v, g = target(q)
        s1 = leapfrog(PhaseState(q, p, v, g), step, target)
        s2 = leapfrog(PhaseState(s1.position, -s1.momentum, s1.log_target, s1.grad), step, target)
        worst = max(worst, np.abs(s2.position - q).max(), np.abs(-s2.momentum - p).max())
    return CheckResult("leapfrog reversibility", worst <= 1e-10,
                       f"max round-trip error {worst:.1e} over {n_trials} triples (limit 1e-10)")


def energy_error_ratio(seed=0, length=1.0, step=0.1):
    target = _gaussian([1.0, 4.0, 9.0, 16.0, 25.0])
    rng = np.random.default_rng(seed)
    q0, p0 = rng.standard_normal(5), rng.standard_normal(5)

    def worst_error(eps):
        v, g = target(q0)
        s = PhaseState(q0, p0, v, g)
        h0 = s.hamiltonian
        worst = 0.0
        for _ in range(int(round(length / eps))):
            s = leapfrog(s, eps, target)
            worst = max(worst, abs(s.hamiltonian - h0))
        return worst

    return worst_error(step) / worst_error(step / 2)


def check_energy_scaling():
    ratios = [energy_error_ratio(seed) for seed in range(5)]
    ok = all(3.0 <= r <= 5.0 for r in ratios)
    return CheckResult("energy error step-halving", ok,
                       "ratios " + ", ".join(f"{r:.2f}" for r in ratios) + " (allowed [3, 5])")


def check_acf_ess(seed=0):
    rng = np.random.default_rng(seed)
    problems = []
    for n in (50, 1000, 20_000):
        for phi in (-0.5, 0.0, 0.9):
            e = rng.standard_normal(n)
            x = np.empty(n)
            x[0] = e[0]
            for t in range(1, n):
                x[t] = phi * x[t - 1] + e[t]
            if autocorrelation(x, min(20, n - 2))[0] != 1.0:
                problems.append(f"ACF(0) != 1 at n={n}, phi={phi}")
            ess = effective_sample_size(x)
            if not 0.0 < ess <= n:
                problems.append(f"ESS {ess} outside (0, {n}]")
    return CheckResult("ACF(0) = 1 and ESS in (0, N]", not problems,
                       "; ".join(problems) or "9 series checked")


def check_chi2_scaling(seed=0):
    rng = np.random.default_rng(seed)
    flux, sigma, pred = rng.uniform(1, 10, 32), rng.uniform(0.1, 1, 32), rng.uniform(1, 10, 32)
    base = chi_squared(FluxSpectrum(flux, sigma), pred)
    # powers of two scale floats exactly, so equality must be bitwise
    exact = all(chi_squared(FluxSpectrum(flux, c * sigma), pred) == base / c**2
                for c in (0.25, 0.5, 2.0, 8.0))
    general = max(abs(chi_squared(FluxSpectrum(flux, c * sigma), pred) * c**2 / base - 1)
                  for c in (0.3, 1.7, 3.0))
    ok = exact and general <= 1e-14
    return CheckResult("chi-squared sigma scaling", ok,
                       f"exact for powers of two: {exact}; max relative error {general:.1e} otherwise")


def check_prior_continuity():
    prior = PriorBox.from_domain_box(DomainBox())
    worst = 0.0
    for k in range(5):
        for face, sign in ((prior.lower, -1.0), (prior.upper, 1.0)):
            z = prior.center.copy()
            z[k] = face[k]
            on_face = log_prior(z, prior)
            z[k] = face[k] + sign * 1e-12
            worst = max(worst, abs(log_prior(z, prior) - on_face))
    return CheckResult("prior continuity at faces", worst <= 1e-12,
                       f"max jump {worst:.1e} across 10 faces (limit 1e-12)")


def check_gaussian_samplers(seed=0):
    variances = np.array([1.0, 4.0, 9.0, 16.0, 25.0])
    target = _gaussian(variances)
    problems = []
    nuts = run_chain(ChainConfig(n_samples=4000, burn_in=500, thin=1, seed=seed),
                     target, np.zeros(5))
    rwmh = run_chain(ChainConfig(n_samples=40_000, burn_in=4000, thin=1, seed=seed,
                                 sampler="rwmh", rwmh_scale=1.0, tune_rwmh_scale=True),
                     _gaussian([1.0, 1.0]), np.zeros(2))
    for label, chain, var in (("NUTS", nuts, variances), ("RWMH", rwmh, np.ones(2))):
        for k in range(var.shape[0]):
            x = chain.samples[:, k]
            ess = effective_sample_size(x)
            se_mean = x.std() / math.sqrt(ess)
            if abs(x.mean()) > 4 * se_mean:
                problems.append(f"{label} mean[{k}] = {x.mean():.3f} beyond 4 SE")
            # variance of a Gaussian sample variance is 2 var^2 / ESS
            se_var = var[k] * math.sqrt(2.0 / ess)
            if abs(x.var() - var[k]) > 4 * se_var:
                problems.append(f"{label} var[{k}] = {x.var():.3f} vs {var[k]} beyond 4 SE")
    if not 0.15 <= rwmh.acceptance_rate <= 0.35:
        problems.append(f"RWMH acceptance {rwmh.acceptance_rate:.3f} outside [0.15, 0.35]")
    return CheckResult("Gaussian sampler suite", not problems,
                       "; ".join(problems) or
                       f"NUTS accept {nuts.acceptance_rate:.2f}, RWMH accept {rwmh.acceptance_rate:.2f}")


def run_selftest(surrogate=None, log=print):
    """Run every check; returns the list of results (printing one line each)."""
    checks = [
        lambda: check_gradient(surrogate),
        check_leapfrog_reversibility,
        check_energy_scaling,
        check_acf_ess,
        check_chi2_scaling,
        check_prior_continuity,
        check_gaussian_samplers,
    ]
    results = []
    for check in checks:
        start = time.perf_counter()
        try:
            result = check()
        except Exception as exc:  # report, keep going
            result = CheckResult(getattr(check, "__name__", "check"), False,
                                 f"raised {type(exc).__name__}: {exc}")
        result.seconds = time.perf_counter() - start
        results.append(result)
        if log is not None:
            log(result.line())
    return results
