"""``surrogate-hmc`` command-line front end.

Subcommands: gen-data, train, sample, diagnose, predict, selftest. Every
subcommand reads the same run configuration (``--config``, YAML or JSON)
and accepts ``--set section.field=value`` overrides.

Exit codes: 0 success, 1 selftest failure, 2 configuration error,
3 I/O error, 4 numerical failure, 5 parameter outside the validity box.
"""

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config
from .diagnostics import summarize, write_summary
from .exceptions import ConfigError, DomainError, ModelFormatError, TrainingDivergedError
from .oracle import (PARAM_NAMES, check_in_box, generate_dataset, load_dataset, load_spectrum,
                     rigidity_grid, save_dataset)
from .pipeline import (chain_seeds, evaluation_ledger, read_chain, sample_posterior,
                       with_seed, write_chain)
from .posterior import FixedContext
from .samplers import SamplerError
from .selftest import run_selftest
from .surrogate import SurrogateRegressor, load_model, relative_error, save_model

EXIT_OK = 0
EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_DOMAIN = 5



def _out(*args):
    print(*args, flush=True)


def cmd_gen_data(cfg, args):
    path = Path(args.output or cfg.paths.dataset)
    ds = generate_dataset(cfg.data.n_samples, cfg.data.box(), cfg.data.seed,
                          config=cfg.oracle)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, path)
    _out(f"wrote {len(ds)} rows ({ds.metadata['n_failed']} failed solves dropped, "
         f"{int((~ds.is_train).sum())} test rows) to {path}")
    return EXIT_OK


def cmd_train(cfg, args):
    ds = load_dataset(args.dataset or cfg.paths.dataset)
    model_path = Path(args.output or cfg.paths.model)
    box = cfg.data.box()
    t = cfg.train
    reg = SurrogateRegressor(hidden_layer_sizes=tuple(t.hidden_layers),
                             learning_rate_init=t.learning_rate, l2_weight=t.l2_weight,
                             batch_size=t.batch_size, max_epochs=t.max_epochs,
                             patience=t.patience, plateau_patience=t.plateau_patience,
                             plateau_factor=t.plateau_factor, min_lr=t.min_lr,
                             input_bounds=(box.lower, box.upper), random_state=t.seed)
    (Xtr, Ytr), (Xte, Yte) = ds.train, ds.test

    def progress(epoch, history):
        if not args.quiet and (epoch % 10 == 0):
            _out(f"epoch {epoch:4d}  train {history.train_loss[-1]:.4e}  "
                 f"test {history.test_loss[-1]:.4e}  lr {history.learning_rate[-1]:.1e}")

    reg.fit(Xtr, Ytr, Xte, Yte, callback=progress)
    model_path.parent.mkdir(parents=True, exist_ok=True)
    save_model(reg.surrogate_, model_path)
    hist = reg.history_
    hist_path = model_path.with_suffix(".history.csv")
    with hist_path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "test_loss", "learning_rate"])
        for e, row in enumerate(zip(hist.train_loss, hist.test_loss, hist.learning_rate)):
            w.writerow([e, *(repr(float(v)) for v in row)])
    err = relative_error(reg.surrogate_, Xte, Yte).mean(axis=0)
    _out(f"best epoch {hist.best_epoch} of {hist.n_epochs}; model written to {model_path}")
    _out("mean relative test error per rigidity bin (%):")
    for r, e in zip(rigidity_grid(), err):
        _out(f"  {r:10.4f} GV  {100 * e:6.3f}")
    _out(f"worst bin {100 * err.max():.3f}%")
    return EXIT_OK


def cmd_sample(cfg, args):
    surrogate = load_model(args.model or cfg.paths.model)
    observed = load_spectrum(args.observed or cfg.paths.observed)
    out_dir = Path(args.output_dir or cfg.paths.output_dir)
    prior = cfg.prior_box()
    if args.sampler:
        cfg.chain.sampler = args.sampler
    base = cfg.chain.to_chain_config()
    seeds = chain_seeds(base.seed, args.chains)
    for i, seed in enumerate(seeds):
        start = time.perf_counter()
        chain, _ = sample_posterior(surrogate, observed, cfg.context, prior, with_seed(base, seed))
        name = "chain.csv" if args.chains == 1 else f"chain_{i}.csv"
        meta_path = write_chain(chain, out_dir / name)
        meta = json.loads(meta_path.read_text())
        meta["wall_seconds"] = time.perf_counter() - start
        meta["finished_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        meta_path.write_text(json.dumps(meta, indent=1))
        _out(f"{out_dir / name}: {len(chain)} samples, acceptance {chain.acceptance_rate:.3f}, "
             f"{chain.n_divergent} divergent, {chain.n_gradient_evaluations} gradient evaluations")
    return EXIT_OK


def cmd_diagnose(cfg, args):
    out_dir = Path(args.output_dir or cfg.paths.output_dir)
    chain_path = Path(args.chain or out_dir / "chain.csv")
    chain, meta = read_chain(chain_path)
    surrogate = load_model(args.model or cfg.paths.model)
    observed = load_spectrum(args.observed or cfg.paths.observed)
    c = cfg.context
    ctx = FixedContext(c.alpha, c.i_hmf, c.v_sw, observed)
    summary = summarize(chain, surrogate, ctx)
    written = write_summary(summary, out_dir, observed=observed, samples=chain.samples)
    ledger = evaluation_ledger(chain, meta)
    _out("evaluation ledger:")
    _out(f"  stored samples        {ledger['stored_samples']}")
    _out(f"  raw steps             {ledger['raw_steps']} "
         f"(burn-in {ledger['burn_in']}, thin {ledger['thin']})")
    _out(f"  gradient evaluations  {ledger['gradient_evaluations']}")
    _out(f"  target evaluations    {ledger['target_evaluations']}")
    _out(f"  consistent with config: {'yes' if ledger['consistent'] else 'NO'}")
    _out("posterior summary (68.3% equal-tailed intervals):")
    for k, name in enumerate(summary.names):
        lo, hi = summary.ci_1d[k]
        _out(f"  {name:8s} mean {summary.means[k]:.5g}  map {summary.map_point[k]:.5g}  "
             f"[{lo:.5g}, {hi:.5g}]  ess {summary.ess[k]:.0f}")
    _out(f"wrote {len(written)} tables to {out_dir}")
    return EXIT_OK if ledger["consistent"] else EXIT_NUMERICAL


def _parse_params(args):
    values = {}
    if args.x:
        parts = [p for p in args.x.replace(",", " ").split() if p]
        if len(parts) != len(PARAM_NAMES):
            raise ConfigError("--x", f"expected {len(PARAM_NAMES)} comma-separated values, got {len(parts)}")
        values = dict(zip(PARAM_NAMES, parts))
    for item in args.param or ():
        name, sep, value = item.partition("=")
        if not sep or name not in PARAM_NAMES:
            raise ConfigError("--param", f"expected name=value with name in {PARAM_NAMES}, got {item!r}")
        values[name] = value
    missing = [n for n in PARAM_NAMES if n not in values]
    if missing:
        raise ConfigError("--param", f"missing values for: {', '.join(missing)}")
    out = np.empty(len(PARAM_NAMES))
    for i, name in enumerate(PARAM_NAMES):
        try:
            out[i] = float(values[name])
        except ValueError:
            raise ConfigError(f"--param {name}", f"not a number: {values[name]!r}") from None
    return out


def cmd_predict(cfg, args):
    x = _parse_params(args)
    check_in_box(x, cfg.data.box().extended())
    surrogate = load_model(args.model or cfg.paths.model)
    flux = surrogate.flux(x)
    _out("rigidity_gv,flux")
    for r, f in zip(rigidity_grid(), flux):
        _out(f"{float(r)!r},{float(f)!r}")
    return EXIT_OK


def cmd_selftest(cfg, args):
    surrogate = load_model(args.model) if args.model else None
    start = time.perf_counter()
    results = run_selftest(surrogate, log=_out)
    n_fail = sum(not r.passed for r in results)
    _out(f"{len(results) - n_fail}/{len(results)} checks passed in "
         f"{time.perf_counter() - start:.1f}s")
    return EXIT_OK if n_fail == 0 else EXIT_SELFTEST


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "sample": cmd_sample,
    "diagnose": cmd_diagnose,
    "predict": cmd_predict,
    "selftest": cmd_selftest,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="run configuration file (YAML or JSON)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                        help="override one config field; repeatable")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(
        prog="surrogate-hmc",
        description="Surrogate-likelihood MCMC for diffusion parameters of a modulated "
                    "cosmic-ray spectrum.",
        epilog="exit codes: 0 ok, 1 selftest failed, 2 config error, 3 I/O error, "
               "4 numerical failure, 5 parameter outside validity box")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate an oracle dataset")
    p.add_argument("--output", "-o", help="dataset CSV (default: paths.dataset)")

    p = sub.add_parser("train", parents=[common], help="train the surrogate network")
    p.add_argument("--dataset", help="dataset CSV (default: paths.dataset)")
    p.add_argument("--output", "-o", help="model file (default: paths.model)")
    p.add_argument("--quiet", "-q", action="store_true", help="no per-epoch progress lines")

    p = sub.add_parser("sample", parents=[common], help="sample the surrogate posterior")
    p.add_argument("--model", help="model file (default: paths.model)")
    p.add_argument("--observed", help="observed spectrum CSV (default: paths.observed)")
    p.add_argument("--output-dir", help="where chain files go (default: paths.output_dir)")
    p.add_argument("--sampler", choices=["nuts", "rwmh"], help="override chain.sampler")
    p.add_argument("--chains", type=int, default=1,
                   help="number of independent chains (seeds derived from chain.seed)")

    p = sub.add_parser("diagnose", parents=[common], help="summarize a chain")
    p.add_argument("--chain", help="chain CSV (default: OUTPUT_DIR/chain.csv)")
    p.add_argument("--model", help="model file (default: paths.model)")
    p.add_argument("--observed", help="observed spectrum CSV (default: paths.observed)")
    p.add_argument("--output-dir", help="where tables go (default: paths.output_dir)")

    p = sub.add_parser("predict", parents=[common], help="surrogate spectrum at one parameter set")
    p.add_argument("--model", help="model file (default: paths.model)")
    p.add_argument("--x", help="all 8 parameters, comma separated, in order: "
                   + ",".join(PARAM_NAMES))
    p.add_argument("--param", "-p", action="append", metavar="NAME=VALUE",
                   help="one named parameter; repeatable, overrides --x")

    p = sub.add_parser("selftest", parents=[common], help="run the numerical invariant suite")
    p.add_argument("--model", help="also gradient-check this trained model")
    return parser


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "sample" and args.chains < 1:
            raise ConfigError("--chains", "must be at least 1")
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DomainError as exc:
        print(f"domain error ({exc.field}): {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (FileNotFoundError, IsADirectoryError, PermissionError, ModelFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingDivergedError, SamplerError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
