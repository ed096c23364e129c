"""MCMC kernels: leapfrog, NUTS with dual-averaging adaptation, and RWMH.

Every kernel takes a ``target_fn(x) -> (log_density, gradient)`` over a flat
float vector and an explicit :class:`numpy.random.Generator`; the module
holds no global random state. NUTS uses multinomial sampling over the
trajectory with biased progressive sampling at the top level and the
generalized U-turn check (including the checks across merged subtrees),
with an identity mass matrix.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_vector

logger = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0


@dataclass
class PhaseState:
    position: np.ndarray
    momentum: np.ndarray
    log_target: float
    grad: np.ndarray

    @property
    def potential(self):
        return -self.log_target

    @property
    def kinetic(self):
        # huge trial steps can overflow; inf energy is handled as a divergence
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * float(self.momentum @ self.momentum)

    @property
    def hamiltonian(self):
        h = self.kinetic - self.log_target
        return h if math.isfinite(h) else math.inf

    @property
    def divergent(self):
        return not (math.isfinite(self.log_target) and np.all(np.isfinite(self.grad)))


def _evaluate(target_fn, position):
    try:
        value, grad = target_fn(position)
    except (FloatingPointError, OverflowError):
        return -math.inf, np.full(position.shape, np.nan)
    value = float(value)
    grad = np.asarray(grad, dtype=np.float64)
    if math.isnan(value):
        value = -math.inf
    return value, grad


def leapfrog(state, step, target_fn):
    """Half-kick, drift, half-kick. Returns a new state with fresh value and gradient.

    A non-finite target or gradient at the new position is reported through
    :attr:`PhaseState.divergent` rather than raised.
    """
    if not step > 0 and not step < 0:
        raise ValueError("step must be non-zero")
    p_half = state.momentum + 0.5 * step * state.grad
    q = state.position + step * p_half
    value, grad = _evaluate(target_fn, q)
    p = p_half + 0.5 * step * grad
    return PhaseState(q, p, value, grad)


@dataclass
class NutsStats:
    accept_stat: float
    n_leapfrog: int
    tree_depth: int
    divergent: bool
    energy: float


class _Tree:
    """Scratch space for one NUTS transition."""

    def __init__(self, step, target_fn, rng, h0):
        self.step = step
        self.target_fn = target_fn
        self.rng = rng
        self.h0 = h0
        self.n_leapfrog = 0
        self.sum_metro_prob = 0.0
        self.divergent = False

    def build(self, depth, edge, direction):
        """Extend the trajectory by ``2**depth`` steps from ``edge``.

        Returns ``(valid, proposal, log_weight, rho, first, last)`` where
        ``first`` and ``last`` are the states at the near and far ends of the
        new subtree and ``rho`` is the sum of its momenta.
        """
        if depth == 0:
            new = leapfrog(edge, direction * self.step, self.target_fn)
            self.n_leapfrog += 1
            h = new.hamiltonian
            delta = self.h0 - h
            if -delta > MAX_DELTA_H or new.divergent:
                self.divergent = True
                self.sum_metro_prob += 0.0 if not math.isfinite(delta) else min(1.0, math.exp(delta))
                return False, None, -math.inf, None, new, new
            self.sum_metro_prob += 1.0 if delta > 0 else math.exp(delta)
            return True, new, delta, new.momentum.copy(), new, new

        valid, prop_a, lw_a, rho_a, first, end_a = self.build(depth - 1, edge, direction)
        if not valid:
            return False, None, -math.inf, None, first, end_a
        valid, prop_b, lw_b, rho_b, begin_b, last = self.build(depth - 1, end_a, direction)
        if not valid:
            return False, None, -math.inf, None, first, last

        log_weight = np.logaddexp(lw_a, lw_b)
        proposal = prop_a
        if self.rng.random() < math.exp(lw_b - log_weight):
            proposal = prop_b
        rho = rho_a + rho_b
        ok = _no_uturn(first.momentum, last.momentum, rho)
        ok = ok and _no_uturn(first.momentum, begin_b.momentum, rho_a + begin_b.momentum)
        ok = ok and _no_uturn(end_a.momentum, last.momentum, rho_b + end_a.momentum)
        return ok, proposal, log_weight, rho, first, last


def _no_uturn(p_start, p_end, rho):
    return float(p_start @ rho) > 0.0 and float(p_end @ rho) > 0.0


def nuts_step(current, step, target_fn, rng, max_tree_depth=10, current_value=None):
    """One No-U-Turn transition from ``current``.

    Parameters
    ----------
    current : ndarray
    step : float
        Leapfrog step size, positive.
    target_fn : callable
        ``x -> (log_density, gradient)``.
    rng : numpy.random.Generator
    max_tree_depth : int
    current_value : tuple, optional
        Cached ``(log_density, gradient)`` at ``current``.

    Returns
    -------
    next_position : ndarray
    next_value : tuple
        ``(log_density, gradient)`` at the returned position.
    stats : NutsStats
    """
    if not step > 0:
        raise ValueError("step must be positive")
    q = as_vector(current, name="position")
    value, grad = current_value if current_value is not None else _evaluate(target_fn, q)
    if not math.isfinite(value):
        raise ValueError(f"initial log-density is not finite at {q.tolist()}")
    p0 = rng.standard_normal(q.shape[0])
    start = PhaseState(q, p0, value, np.asarray(grad, dtype=np.float64))
    h0 = start.hamiltonian
    tree = _Tree(step, target_fn, rng, h0)

    sample = start
    log_weight = 0.0
    rho = p0.copy()
    bck_end = fwd_end = start
    depth = 0
    while depth < max_tree_depth:
        direction = 1 if rng.random() > 0.5 else -1
        old_edge = fwd_end if direction == 1 else bck_end
        valid, proposal, lw_sub, rho_sub, near, far = tree.build(depth, old_edge, direction)
        depth += 1
        if not valid:
            break
        if direction == 1:
            fwd_end = far
        else:
            bck_end = far
        # biased progressive sampling favours the new subtree
        if lw_sub > log_weight or rng.random() < math.exp(lw_sub - log_weight):
            sample = proposal
        log_weight = np.logaddexp(log_weight, lw_sub)
        rho_old = rho
        rho = rho_old + rho_sub
        ok = _no_uturn(bck_end.momentum, fwd_end.momentum, rho)
        # old trajectory plus the first new state, and new subtree plus the old edge
        ok = ok and _no_uturn(near.momentum, (bck_end if direction == 1 else fwd_end).momentum,
                              rho_old + near.momentum)
        ok = ok and _no_uturn(old_edge.momentum, far.momentum, rho_sub + old_edge.momentum)
        if not ok:
            break

    n = max(tree.n_leapfrog, 1)
    stats = NutsStats(tree.sum_metro_prob / n, tree.n_leapfrog, depth, tree.divergent, h0)
    return sample.position, (sample.log_target, sample.grad), stats


@dataclass
class DualAvgState:
    """Dual-averaging step-size adaptation (Nesterov-style, as used by NUTS).

    ``log_step`` is the step used during adaptation; ``log_step_avg`` is the
    iterate average that is frozen in once adaptation ends.
    """

    mu: float
    log_step: float
    log_step_avg: float = 0.0
    h_avg: float = 0.0
    iteration: int = 0
    target_accept: float = 0.8
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75

    @classmethod
    def start(cls, initial_step, target_accept=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        if not initial_step > 0:
            raise ValueError("initial step must be positive")
        if not 0.0 < target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        return cls(mu=math.log(10.0 * initial_step), log_step=math.log(initial_step),
                   target_accept=target_accept, gamma=gamma, t0=t0, kappa=kappa)

    @property
    def step_size(self):
        return math.exp(self.log_step)

    @property
    def final_step_size(self):
        return math.exp(self.log_step_avg)


def dual_avg_update(state, accept_stat):
    """Advance the adaptation by one iteration; returns a new state."""
    if not 0.0 <= accept_stat <= 1.0:
        raise ValueError(f"accept_stat must lie in [0, 1], got {accept_stat}")
    m = state.iteration + 1
    eta = 1.0 / (m + state.t0)
    h_avg = (1.0 - eta) * state.h_avg + eta * (state.target_accept - accept_stat)
    log_step = state.mu - math.sqrt(m) / state.gamma * h_avg
    weight = m ** (-state.kappa)
    log_step_avg = weight * log_step + (1.0 - weight) * state.log_step_avg
    return DualAvgState(state.mu, log_step, log_step_avg, h_avg, m, state.target_accept,
                        state.gamma, state.t0, state.kappa)


def find_reasonable_step(position, target_fn, rng, initial=1.0, value=None):
    """Heuristic initial step: double or halve until the one-step acceptance crosses 1/2."""
    q = as_vector(position, name="position")
    lp, grad = value if value is not None else _evaluate(target_fn, q)
    p = rng.standard_normal(q.shape[0])
    start = PhaseState(q, p, lp, grad)
    step = initial

    def log_ratio(eps):
        new = leapfrog(start, eps, target_fn)
        h = new.hamiltonian
        return -math.inf if not math.isfinite(h) else start.hamiltonian - h

    ratio = log_ratio(step)
    direction = 1.0 if ratio > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * ratio <= direction * math.log(0.5):
            break
        step *= 2.0**direction
        ratio = log_ratio(step)
    return step


def rwmh_step(current, scale, target_fn, rng, current_value=None):
    """Random-walk Metropolis step with an isotropic Gaussian proposal.

    ``target_fn`` may return either a float or a ``(value, gradient)`` pair;
    the gradient is ignored.

    Returns
    -------
    next_position : ndarray
    next_value : float
    accepted : bool
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    q = as_vector(current, name="position")
    lp = current_value if current_value is not None else _log_density(target_fn, q)
    proposal = q + scale * rng.standard_normal(q.shape[0])
    lp_new = _log_density(target_fn, proposal)
    delta = lp_new - lp
    if delta >= 0 or rng.random() < math.exp(delta):
        return proposal, lp_new, True
    return q, lp, False


def _log_density(fn, x):
    try:
        out = fn(x)
    except (FloatingPointError, OverflowError):
        return -math.inf
    value = float(out[0] if isinstance(out, tuple) else out)
    return -math.inf if math.isnan(value) else value


SAMPLERS = ("nuts", "rwmh")


@dataclass(frozen=True)
class ChainConfig:
    """Run-length and kernel settings for :func:`run_chain`.

    ``n_samples`` counts stored rows; ``n_samples * thin`` raw transitions
    follow the ``burn_in`` raw transitions. RWMH defaults to ``thin=1``.
    """

    n_samples: int = 1000
    burn_in: int = 5000
    thin: int = 10
    seed: int = 0
    sampler: str = "nuts"
    rwmh_scale: float = 1e-2
    tune_rwmh_scale: bool = False
    max_tree_depth: int = 10
    target_accept: float = 0.8
    initial_step: float = None

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if not self.rwmh_scale > 0:
            raise ValueError("rwmh_scale must be positive")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.initial_step is not None and not self.initial_step > 0:
            raise ValueError("initial_step must be positive")

    @property
    def n_raw_steps(self):
        return self.burn_in + self.n_samples * self.thin


@dataclass
class Chain:
    """Stored draws plus the bookkeeping needed to audit a run.

    ``samples`` are in the coordinates ``target_fn`` was defined on.
    ``accept_stats`` holds one value per post-burn-in raw transition (the
    NUTS mean Metropolis probability, or the RWMH accept flag).
    """

    samples: np.ndarray
    log_targets: np.ndarray
    raw_step_index: np.ndarray
    accept_stats: np.ndarray
    config: ChainConfig
    step_size: float = None
    proposal_scale: float = None
    tree_depths: np.ndarray = None
    n_leapfrog: np.ndarray = None
    n_divergent: int = 0
    n_target_evaluations: int = 0
    n_gradient_evaluations: int = 0
    adaptation_trace: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accept_stats))

    @property
    def n_raw_steps(self):
        return self.config.n_raw_steps


class SamplerError(RuntimeError):
    pass


def run_chain(config, target_fn, init, log_density_fn=None):
    """Burn in (adapting), then run and store every ``thin``-th transition.

    Parameters
    ----------
    config : ChainConfig
    target_fn : callable
        ``x -> (log_density, gradient)``.
    init : array_like
        Starting point; must have a finite log-density.
    log_density_fn : callable, optional
        Value-only density for RWMH, to avoid computing unused gradients.

    Returns
    -------
    Chain
    """
    x = as_vector(init, name="init").copy()
    rng = np.random.default_rng(config.seed)
    if config.sampler == "nuts":
        return _run_nuts(config, target_fn, x, rng)
    return _run_rwmh(config, log_density_fn or target_fn, x, rng)


def _run_nuts(config, target_fn, x, rng):
    n_grad = 0
    value = _evaluate(target_fn, x)
    n_grad += 1
    if not math.isfinite(value[0]):
        raise ValueError(f"initial log-density is not finite at {x.tolist()}")
    step = config.initial_step
    if step is None:
        counter = _Counted(target_fn)
        step = find_reasonable_step(x, counter, rng, value=value)
        n_grad += counter.calls
    adapt = DualAvgState.start(step, config.target_accept)
    trace = np.empty(config.burn_in)
    n_div_burn = 0
    for i in range(config.burn_in):
        x, value, stats = nuts_step(x, adapt.step_size, target_fn, rng,
                                    config.max_tree_depth, value)
        n_grad += stats.n_leapfrog
        n_div_burn += stats.divergent
        adapt = dual_avg_update(adapt, stats.accept_stat)
        trace[i] = adapt.step_size
    if config.burn_in and n_div_burn == config.burn_in:
        raise SamplerError(
            f"every one of {config.burn_in} adaptation transitions diverged; "
            f"last step size {adapt.step_size:.3g}, position {x.tolist()}"
        )
    final_step = adapt.final_step_size if config.burn_in else step

    n_post = config.n_samples * config.thin
    samples = np.empty((config.n_samples, x.shape[0]))
    log_targets = np.empty(config.n_samples)
    raw_index = np.empty(config.n_samples, dtype=np.int64)
    accept = np.empty(n_post)
    depths = np.empty(n_post, dtype=np.int64)
    n_leap = np.empty(n_post, dtype=np.int64)
    n_div = 0
    for j in range(n_post):
        x, value, stats = nuts_step(x, final_step, target_fn, rng, config.max_tree_depth, value)
        n_grad += stats.n_leapfrog
        n_div += stats.divergent
        accept[j], depths[j], n_leap[j] = stats.accept_stat, stats.tree_depth, stats.n_leapfrog
        if (j + 1) % config.thin == 0:
            k = (j + 1) // config.thin - 1
            samples[k], log_targets[k] = x, value[0]
            raw_index[k] = config.burn_in + j
    logger.info("NUTS: step %.3g, mean accept %.3f, %d divergent, %d gradient evaluations",
                final_step, accept.mean(), n_div, n_grad)
    return Chain(samples, log_targets, raw_index, accept, config, step_size=final_step,
                 tree_depths=depths, n_leapfrog=n_leap, n_divergent=int(n_div),
                 n_target_evaluations=n_grad, n_gradient_evaluations=n_grad,
                 adaptation_trace=trace)


def _run_rwmh(config, log_density_fn, x, rng):
    lp = _log_density(log_density_fn, x)
    n_eval = 1
    if not math.isfinite(lp):
        raise ValueError(f"initial log-density is not finite at {x.tolist()}")
    scale = config.rwmh_scale
    trace = np.empty(config.burn_in)
    log_scale = math.log(scale)
    for i in range(config.burn_in):
        x, lp, accepted = rwmh_step(x, scale, log_density_fn, rng, lp)
        n_eval += 1
        if config.tune_rwmh_scale:
            # Robbins-Monro on log(scale) toward 25% acceptance
            log_scale += (float(accepted) - 0.25) / (i + 1) ** 0.6
            scale = math.exp(log_scale)
        trace[i] = scale

    n_post = config.n_samples * config.thin
    samples = np.empty((config.n_samples, x.shape[0]))
    log_targets = np.empty(config.n_samples)
    raw_index = np.empty(config.n_samples, dtype=np.int64)
    accept = np.empty(n_post)
    for j in range(n_post):
        x, lp, accepted = rwmh_step(x, scale, log_density_fn, rng, lp)
        n_eval += 1
        accept[j] = accepted
        if (j + 1) % config.thin == 0:
            k = (j + 1) // config.thin - 1
            samples[k], log_targets[k] = x, lp
            raw_index[k] = config.burn_in + j
    logger.info("RWMH: scale %.3g, acceptance %.3f", scale, accept.mean())
    return Chain(samples, log_targets, raw_index, accept, config, proposal_scale=scale,
                 n_target_evaluations=n_eval, adaptation_trace=trace)


class _Counted:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)
