"""Glue between the posterior and the samplers, plus chain file I/O.

Chains are run in the box-standardized unit coordinates of
:class:`~surrogate_hmc.posterior.SurrogatePosterior` and mapped back to
physical units before they are returned or written.
"""

import csv
import json
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .posterior import SAMPLED_NAMES, FixedContext, SurrogatePosterior
from .samplers import Chain, ChainConfig, run_chain

CHAIN_COLUMNS = (*SAMPLED_NAMES, "log_target", "raw_step_index")


def chain_seeds(seed, n_chains):
    """Independent per-chain seeds derived from one run seed."""
    if n_chains == 1:
        return [int(seed)]
    children = np.random.SeedSequence(seed).spawn(n_chains)
    return [int(c.generate_state(1)[0]) for c in children]


def sample_posterior(surrogate, observed, context, prior, config, init=None):
    """Run one chain on the surrogate posterior and return it in physical units.

    Parameters
    ----------
    surrogate : Surrogate
    observed : FluxSpectrum
        Must carry per-bin sigma.
    context : mapping or object with ``alpha``, ``i_hmf``, ``v_sw``
    prior : PriorBox
    config : ChainConfig
    init : array_like, optional
        Starting point in physical units; defaults to the prior box center.

    Returns
    -------
    chain : Chain
        ``samples`` in physical units; evaluation counts come from the
        posterior's own counters.
    posterior : SurrogatePosterior
    """
    get = context.get if isinstance(context, dict) else lambda k: getattr(context, k)
    ctx = FixedContext(get("alpha"), get("i_hmf"), get("v_sw"), observed)
    post = SurrogatePosterior(ctx, surrogate, prior)
    u0 = np.zeros(len(SAMPLED_NAMES)) if init is None else post.to_unit(init)
    if config.sampler == "nuts":
        chain = run_chain(config, post.unit_target, u0)
    else:
        chain = run_chain(config, post.unit_target, u0, log_density_fn=post.unit_log_density)
    chain.samples = post.from_unit(chain.samples)
    chain.n_gradient_evaluations = post.n_evaluations
    chain.n_target_evaluations = post.n_evaluations + post.n_value_evaluations
    return chain, post


def _fmt(v):
    return repr(float(v))


def write_chain(chain, path):
    """Chain table plus a ``.meta.json`` sidecar; returns the sidecar path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CHAIN_COLUMNS)
        for x, lp, k in zip(chain.samples, chain.log_targets, chain.raw_step_index):
            w.writerow([*(_fmt(v) for v in x), _fmt(lp), int(k)])
    meta = {
        "config": asdict(chain.config),
        "n_stored_samples": int(len(chain)),
        "n_raw_steps": int(chain.config.n_raw_steps),
        "n_gradient_evaluations": int(chain.n_gradient_evaluations),
        "n_target_evaluations": int(chain.n_target_evaluations),
        "acceptance_rate": chain.acceptance_rate,
        "n_divergent": int(chain.n_divergent),
        "step_size": chain.step_size,
        "proposal_scale": chain.proposal_scale,
        "mean_tree_depth": None if chain.tree_depths is None else float(chain.tree_depths.mean()),
        "adaptation_trace": [float(v) for v in chain.adaptation_trace],
    }
    meta_path = path.with_suffix(".meta.json")
    meta_path.write_text(json.dumps(meta, indent=1))
    return meta_path


def read_chain(path):
    """Inverse of :func:`write_chain`; accept statistics are not stored, so they are empty."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CHAIN_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(CHAIN_COLUMNS)}")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: chain file has no samples")
    d = len(SAMPLED_NAMES)
    samples = np.array([[float(v) for v in r[:d]] for r in body])
    log_targets = np.array([float(r[d]) for r in body])
    raw_index = np.array([int(r[d + 1]) for r in body], dtype=np.int64)
    meta_path = path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    config = ChainConfig(**meta["config"]) if "config" in meta else ChainConfig(
        n_samples=len(body), burn_in=int(raw_index[0]), thin=1)
    chain = Chain(samples, log_targets, raw_index, np.empty(0), config,
                  step_size=meta.get("step_size"), proposal_scale=meta.get("proposal_scale"),
                  n_divergent=meta.get("n_divergent", 0),
                  n_target_evaluations=meta.get("n_target_evaluations", 0),
                  n_gradient_evaluations=meta.get("n_gradient_evaluations", 0))
    return chain, meta


def evaluation_ledger(chain, meta=None):
    """Counts that audit a run: stored rows, raw transitions, gradient evaluations.

    ``consistent`` is true when the stored rows and their raw-step indices
    agree with ``burn_in + n_samples * thin`` from the chain's configuration.
    """
    cfg = chain.config
    expected_index = cfg.burn_in + np.arange(1, cfg.n_samples + 1) * cfg.thin - 1
    consistent = (len(chain) == cfg.n_samples
                  and np.array_equal(chain.raw_step_index, expected_index))
    meta = meta or {}
    return {
        "stored_samples": int(len(chain)),
        "raw_steps": int(cfg.n_raw_steps),
        "burn_in": int(cfg.burn_in),
        "thin": int(cfg.thin),
        "gradient_evaluations": int(meta.get("n_gradient_evaluations",
                                             chain.n_gradient_evaluations)),
        "target_evaluations": int(meta.get("n_target_evaluations", chain.n_target_evaluations)),
        "consistent": bool(consistent),
    }


def with_seed(config, seed):
    return replace(config, seed=int(seed))
