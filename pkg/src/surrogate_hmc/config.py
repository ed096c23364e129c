"""Run configuration: one YAML or JSON file per run, overridable field by field.

Every field has a type and a range check. Errors name the dotted field
path (``chain.thin``, ``train.learning_rate``) so a bad value in a long
campaign of config files can be found without reading a traceback.
"""

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .exceptions import ConfigError
from .nn import TrainConfig
from .oracle import PARAM_NAMES, DomainBox, OracleConfig
from .posterior import SAMPLED_INDEX, PriorBox
from .samplers import SAMPLERS, ChainConfig

_POSITIVE = ("positive", lambda v: v > 0)
_NON_NEGATIVE = ("non-negative", lambda v: v >= 0)
_UNIT_OPEN = ("in (0, 1)", lambda v: 0 < v < 1)
_UNIT_HALF_OPEN = ("in [0, 1)", lambda v: 0 <= v < 1)


@dataclass
class PathsSection:
    dataset: str = "data/dataset.csv"
    model: str = "data/model.shmc"
    observed: str = "data/observed.csv"
    output_dir: str = "out"


@dataclass
class DataSection:
    n_samples: int = 10_000
    seed: int = 0
    lower: list = None
    upper: list = None

    def box(self):
        if self.lower is None and self.upper is None:
            return DomainBox()
        default = DomainBox()
        lower = default.lower if self.lower is None else np.asarray(self.lower, dtype=float)
        upper = default.upper if self.upper is None else np.asarray(self.upper, dtype=float)
        return DomainBox(lower, upper)


@dataclass
class TrainSection:
    hidden_layers: list = field(default_factory=lambda: [256, 256])
    learning_rate: float = 1e-4
    l2_weight: float = 1e-6
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 20
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    min_lr: float = 1e-7
    seed: int = 0

    def to_train_config(self):
        return TrainConfig(hidden_layers=tuple(self.hidden_layers),
                           learning_rate=self.learning_rate, l2_weight=self.l2_weight,
                           batch_size=self.batch_size, max_epochs=self.max_epochs,
                           patience_early_stop=self.patience,
                           plateau_patience=self.plateau_patience,
                           plateau_factor=self.plateau_factor, min_lr=self.min_lr,
                           rng_seed=self.seed)


@dataclass
class ChainSection:
    sampler: str = "nuts"
    n_samples: int = 1000
    burn_in: int = 5000
    thin: int = None
    seed: int = 0
    rwmh_scale: float = 1e-2
    tune_rwmh_scale: bool = False
    max_tree_depth: int = 10
    target_accept: float = 0.8
    initial_step: float = None

    def to_chain_config(self, seed=None):
        thin = self.thin if self.thin is not None else (10 if self.sampler == "nuts" else 1)
        return ChainConfig(n_samples=self.n_samples, burn_in=self.burn_in, thin=thin,
                           seed=self.seed if seed is None else seed, sampler=self.sampler,
                           rwmh_scale=self.rwmh_scale, tune_rwmh_scale=self.tune_rwmh_scale,
                           max_tree_depth=self.max_tree_depth,
                           target_accept=self.target_accept, initial_step=self.initial_step)


@dataclass
class PriorSection:
    plateau_log_value: float = float(math.log(1e6))
    decay_fraction: float = 0.02

    def to_prior(self, box):
        base = PriorBox.from_domain_box(box)
        return PriorBox(base.lower, base.upper, self.plateau_log_value,
                        self.decay_fraction * (base.upper - base.lower))


@dataclass
class ContextSection:
    alpha: float = 30.0
    i_hmf: float = 5.0
    v_sw: float = 400.0


@dataclass
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    data: DataSection = field(default_factory=DataSection)
    train: TrainSection = field(default_factory=TrainSection)
    chain: ChainSection = field(default_factory=ChainSection)
    prior: PriorSection = field(default_factory=PriorSection)
    context: ContextSection = field(default_factory=ContextSection)

    def to_dict(self):
        return asdict(self)

    def prior_box(self):
        return self.prior.to_prior(self.data.box())


# (section, field) -> (kind, optional check). Kinds: int, float, bool, str, int_list, float_list.
_SCHEMA = {
    "paths": {name: ("str", None) for name in ("dataset", "model", "observed", "output_dir")},
    "oracle": {
        "lis_norm": ("float", _POSITIVE),
        "lis_index": ("float", _POSITIVE),
        "proton_mass": ("float", _POSITIVE),
        "break_rigidity": ("float", _POSITIVE),
        "parallel_weight": ("float", ("in [0, 1]", lambda v: 0 <= v <= 1)),
        "phi0": ("float", _NON_NEGATIVE),
        "p_fail": ("float", _UNIT_HALF_OPEN),
    },
    "data": {
        "n_samples": ("int", ("at least 100", lambda v: v >= 100)),
        "seed": ("int", _NON_NEGATIVE),
        "lower": ("float_list", ("of length 8", lambda v: len(v) == len(PARAM_NAMES))),
        "upper": ("float_list", ("of length 8", lambda v: len(v) == len(PARAM_NAMES))),
    },
    "train": {
        "hidden_layers": ("int_list", ("non-empty and positive", lambda v: len(v) > 0 and min(v) > 0)),
        "learning_rate": ("float", _POSITIVE),
        "l2_weight": ("float", _NON_NEGATIVE),
        "batch_size": ("int", _POSITIVE),
        "max_epochs": ("int", _POSITIVE),
        "patience": ("int", _POSITIVE),
        "plateau_patience": ("int", _POSITIVE),
        "plateau_factor": ("float", _UNIT_OPEN),
        "min_lr": ("float", _POSITIVE),
        "seed": ("int", _NON_NEGATIVE),
    },
    "chain": {
        "sampler": ("str", (f"one of {SAMPLERS}", lambda v: v in SAMPLERS)),
        "n_samples": ("int", _POSITIVE),
        "burn_in": ("int", _NON_NEGATIVE),
        "thin": ("int", ("at least 1", lambda v: v >= 1)),
        "seed": ("int", _NON_NEGATIVE),
        "rwmh_scale": ("float", _POSITIVE),
        "tune_rwmh_scale": ("bool", None),
        "max_tree_depth": ("int", ("between 1 and 30", lambda v: 1 <= v <= 30)),
        "target_accept": ("float", _UNIT_OPEN),
        "initial_step": ("float", _POSITIVE),
    },
    "prior": {
        "plateau_log_value": ("float", None),
        "decay_fraction": ("float", _POSITIVE),
    },
    "context": {
        "alpha": ("float", None),
        "i_hmf": ("float", None),
        "v_sw": ("float", None),
    },
}

_SECTIONS = {f.name: f.default_factory for f in fields(RunConfig)}


def _coerce(path, kind, value):
    if kind == "bool":
        if isinstance(value, bool):
            return value
        raise ConfigError(path, f"expected true/false, got {value!r}")
    if kind == "str":
        if isinstance(value, str):
            return value
        raise ConfigError(path, f"expected a string, got {value!r}")
    if kind in ("int", "float") and isinstance(value, str):
        # YAML 1.1 reads exponent literals such as 1e-4 as strings
        try:
            value = float(value)
        except ValueError:
            raise ConfigError(path, f"expected a number, got {value!r}") from None
    if kind == "int":
        if isinstance(value, float) and not math.isfinite(value):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return int(value)
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(path, f"must be finite, got {value!r}")
        return float(value)
    if kind in ("int_list", "float_list"):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {value!r}")
        inner = kind.split("_")[0]
        return [_coerce(f"{path}[{i}]", inner, v) for i, v in enumerate(value)]
    raise AssertionError(kind)


def from_dict(raw):
    """Validate a nested mapping and build a :class:`RunConfig`.

    Raises
    ------
    ConfigError
        Unknown section or field, wrong type, or out-of-range value; the
        message starts with the dotted field path.
    """
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping of sections")
    built = {}
    for section, values in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(section, f"unknown section; expected one of {sorted(_SCHEMA)}")
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(section, "section must be a mapping")
        checked = {}
        for name, value in values.items():
            path = f"{section}.{name}"
            if name not in _SCHEMA[section]:
                raise ConfigError(path, f"unknown field; expected one of {sorted(_SCHEMA[section])}")
            if value is None:
                checked[name] = None
                continue
            kind, check = _SCHEMA[section][name]
            value = _coerce(path, kind, value)
            if check is not None and not check[1](value):
                raise ConfigError(path, f"must be {check[0]}, got {value!r}")
            checked[name] = value
        built[section] = checked

    sections = {}
    for section, factory in _SECTIONS.items():
        base = asdict(factory())
        base.update(built.get(section, {}))
        try:
            sections[section] = type(factory())(**base)
        except (TypeError, ValueError) as exc:
            raise ConfigError(section, str(exc)) from exc
    cfg = RunConfig(**sections)
    _cross_checks(cfg)
    return cfg


def _cross_checks(cfg):
    try:
        box = cfg.data.box()
    except ValueError as exc:
        raise ConfigError("data.lower", str(exc)) from exc
    if cfg.train.min_lr > cfg.train.learning_rate:
        raise ConfigError("train.min_lr", "must not exceed train.learning_rate")
    for name in ("alpha", "i_hmf", "v_sw"):
        k = PARAM_NAMES.index(name)
        value = getattr(cfg.context, name)
        if not box.lower[k] <= value <= box.upper[k]:
            raise ConfigError(f"context.{name}",
                              f"{value!r} lies outside the training range "
                              f"[{box.lower[k]!r}, {box.upper[k]!r}]")
    lower = box.lower[SAMPLED_INDEX]
    if not np.all(np.isfinite(lower)):
        raise ConfigError("data.lower", "must be finite")


def parse_override(text):
    """``section.field=value`` with ``value`` parsed as YAML (numbers, lists, booleans)."""
    key, sep, value = text.partition("=")
    if not sep or "." not in key:
        raise ConfigError(text, "override must look like section.field=value")
    section, name = key.strip().split(".", 1)
    return section, name, yaml.safe_load(value)


def load_config(path=None, overrides=()):
    """Read a YAML/JSON config (or defaults when ``path`` is None) and apply overrides."""
    raw = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        except (json.JSONDecodeError, yaml.YAMLError) as exc:
            raise ConfigError(str(path), f"cannot parse: {exc}") from exc
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping of sections")
    for text in overrides:
        section, name, value = parse_override(text)
        section_values = raw.setdefault(section, {})
        if not isinstance(section_values, dict):
            raise ConfigError(section, "section must be a mapping")
        section_values[name] = value
    return from_dict(raw)


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
