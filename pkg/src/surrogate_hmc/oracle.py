"""Analytic stand-in for the heliospheric transport solver.

The real forward model integrates the Parker transport equation on a
spatial grid, which takes minutes per parameter set and fails on some of
them. This module replaces it with a force-field modulation of a power-law
interstellar spectrum whose modulation potential depends on all eight
heliospheric parameters. The input/output signature is the same as the
solver's (8 parameters in, 32 fluxes on a log-rigidity grid out) and a
configurable fraction of solves raise :class:`InstabilityError` to mimic
the solver's numerical failures.

Units: rigidity in GV, tilt angle in degrees, HMF intensity in nT, solar
wind speed in km/s, ``k0_par`` in oracle units.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ._validation import as_matrix, as_vector
from .exceptions import DomainError, InstabilityError

logger = logging.getLogger(__name__)

PARAM_NAMES = ("alpha", "i_hmf", "v_sw", "k0_par", "a_par", "b_par", "a_perp", "b_perp")
N_PARAMS = len(PARAM_NAMES)
N_BINS = 32
R_MIN = 0.2
R_MAX = 200.0

DEFAULT_LOWER = (10.0, 3.0, 300.0, 0.5, 0.3, 0.3, 0.3, 0.3)
DEFAULT_UPPER = (75.0, 9.0, 700.0, 5.0, 1.5, 2.0, 1.5, 2.0)

# Hard physical limits used to clip the extended validity box.
_PHYSICAL_LOWER = np.array([0.0, 1e-6, 1e-6, 1e-6, -np.inf, -np.inf, -np.inf, -np.inf])
_PHYSICAL_UPPER = np.array([90.0, np.inf, np.inf, np.inf, np.inf, np.inf, np.inf, np.inf])


def rigidity_grid():
    """The 32 log-uniform rigidities from 0.2 to 200 GV.

    ``values[i] = 0.2 * 10**(3 i / 31)``; the two endpoints are pinned to
    their exact decimal values.
    """
    values = R_MIN * 10.0 ** (3.0 * np.arange(N_BINS) / (N_BINS - 1))
    values[0] = R_MIN
    values[-1] = R_MAX
    return values


@dataclass(frozen=True)
class HelioParams:
    """One forward-model input. Field order is the surrogate's input order."""

    alpha: float
    i_hmf: float
    v_sw: float
    k0_par: float
    a_par: float
    b_par: float
    a_perp: float
    b_perp: float

    def to_array(self):
        return np.array([getattr(self, name) for name in PARAM_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, values):
        values = as_vector(values, N_PARAMS, "parameter vector")
        return cls(*(float(v) for v in values))


@dataclass(frozen=True)
class FluxSpectrum:
    """Fluxes on :func:`rigidity_grid`, with optional per-bin uncertainties."""

    flux: np.ndarray
    sigma: np.ndarray = None

    def __post_init__(self):
        flux = as_vector(self.flux, N_BINS, "flux")
        if not np.all(np.isfinite(flux)) or np.any(flux <= 0):
            raise ValueError("flux entries must be positive and finite")
        object.__setattr__(self, "flux", flux)
        if self.sigma is not None:
            sigma = as_vector(self.sigma, N_BINS, "sigma")
            if not np.all(np.isfinite(sigma)) or np.any(sigma <= 0):
                raise ValueError("sigma entries must be positive and finite")
            object.__setattr__(self, "sigma", sigma)

    @property
    def rigidity(self):
        return rigidity_grid()


@dataclass(frozen=True)
class DomainBox:
    """Axis-aligned box over the eight parameters."""

    lower: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_LOWER))
    upper: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_UPPER))

    def __post_init__(self):
        lower = as_vector(self.lower, N_PARAMS, "box lower bound")
        upper = as_vector(self.upper, N_PARAMS, "box upper bound")
        if np.any(~np.isfinite(lower)) or np.any(~np.isfinite(upper)):
            raise ValueError("box bounds must be finite")
        bad = np.flatnonzero(upper <= lower)
        if bad.size:
            names = ", ".join(PARAM_NAMES[i] for i in bad)
            raise ValueError(f"box has non-positive volume along: {names}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def width(self):
        return self.upper - self.lower

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def contains(self, params):
        x = np.asarray(params, dtype=np.float64)
        return bool(np.all((x >= self.lower) & (x <= self.upper)))

    def extended(self, margin=0.5):
        """Widen by ``margin`` box widths per side, clipped to physical limits."""
        lo = np.maximum(self.lower - margin * self.width, _PHYSICAL_LOWER)
        hi = np.minimum(self.upper + margin * self.width, _PHYSICAL_UPPER)
        return DomainBox(lo, hi)

    def to_dict(self):
        return {name: [float(lo), float(hi)]
                for name, lo, hi in zip(PARAM_NAMES, self.lower, self.upper)}

    @classmethod
    def from_dict(cls, data):
        missing = [name for name in PARAM_NAMES if name not in data]
        if missing:
            raise ValueError(f"box is missing entries for: {', '.join(missing)}")
        lower = [float(data[name][0]) for name in PARAM_NAMES]
        upper = [float(data[name][1]) for name in PARAM_NAMES]
        return cls(np.array(lower), np.array(upper))


def check_in_box(params, box, what="parameter"):
    """Raise :class:`DomainError` naming the first coordinate outside ``box``."""
    x = as_vector(params, N_PARAMS, "parameter vector")
    for i, name in enumerate(PARAM_NAMES):
        if not np.isfinite(x[i]) or x[i] < box.lower[i] or x[i] > box.upper[i]:
            raise DomainError(
                f"{what} {name}={float(x[i])!r} outside validity range "
                f"[{box.lower[i]:g}, {box.upper[i]:g}]",
                field=name,
            )


@dataclass(frozen=True)
class OracleConfig:
    """Constants of the stand-in model. All are overridable from a run config."""

    lis_norm: float = 1.8e4
    lis_index: float = 2.7
    proton_mass: float = 0.938272
    break_rigidity: float = 4.0
    parallel_weight: float = 0.2
    phi0: float = 0.35
    p_fail: float = 0.02

    def __post_init__(self):
        if self.lis_norm <= 0 or self.proton_mass <= 0 or self.break_rigidity <= 0:
            raise ValueError("lis_norm, proton_mass and break_rigidity must be positive")
        if not 0.0 <= self.parallel_weight <= 1.0:
            raise ValueError("parallel_weight must lie in [0, 1]")
        if self.phi0 < 0:
            raise ValueError("phi0 must be non-negative")
        if not 0.0 <= self.p_fail < 1.0:
            raise ValueError("p_fail must lie in [0, 1)")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown oracle constants: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


DEFAULT_ORACLE = OracleConfig()


def lis_flux(rigidity, config=DEFAULT_ORACLE):
    """Unmodulated power-law spectrum ``A R^-gamma``."""
    r = np.asarray(rigidity, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("rigidity must be positive")
    return config.lis_norm * r ** (-config.lis_index)


def kinetic_energy(rigidity, config=DEFAULT_ORACLE):
    m = config.proton_mass
    return np.sqrt(rigidity**2 + m**2) - m


def beta(rigidity, config=DEFAULT_ORACLE):
    m = config.proton_mass
    return rigidity / np.sqrt(rigidity**2 + m**2)


def broken_power_law(rigidity, low_slope, high_slope, break_rigidity):
    x = np.asarray(rigidity, dtype=np.float64) / break_rigidity
    return np.where(x <= 1.0, x**low_slope, x**high_slope)


def _effective_dc(params, rigidity, config):
    # params: (N, 8), rigidity: (M,) -> (N, M)
    r = rigidity[None, :]
    k0 = params[:, 3:4]
    s_par = broken_power_law(r, params[:, 4:5], params[:, 5:6], config.break_rigidity)
    s_perp = broken_power_law(r, params[:, 6:7], params[:, 7:8], config.break_rigidity)
    w = config.parallel_weight
    return k0 * beta(r, config) * (w * s_par + (1.0 - w) * s_perp)


def effective_dc(params, rigidity, config=DEFAULT_ORACLE):
    """Weighted parallel/perpendicular diffusion coefficient at ``rigidity``.

    Parameters
    ----------
    params : HelioParams or array_like of shape (8,)
    rigidity : float or array_like
        Rigidities in GV, all positive.

    Returns
    -------
    float or ndarray
        ``k0_par * beta(R) * [w S(R; a_par, b_par) + (1 - w) S(R; a_perp, b_perp)]``
        with ``S`` the broken power law around ``break_rigidity``.
    """
    x = params.to_array() if isinstance(params, HelioParams) else as_vector(params, N_PARAMS)
    r = np.asarray(rigidity, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("rigidity must be positive")
    if x[3] <= 0:
        raise ValueError("k0_par must be positive")
    out = _effective_dc(x[None, :], np.atleast_1d(r), config)[0]
    return float(out[0]) if r.ndim == 0 else out


def modulation_potential(params, rigidity=None, config=DEFAULT_ORACLE):
    """Rigidity-dependent modulation potential in GV, shape (N, n_rigidities)."""
    x = as_matrix(params, N_PARAMS, "parameters")
    r = rigidity_grid() if rigidity is None else np.atleast_1d(np.asarray(rigidity, dtype=float))
    alpha, i_hmf, v_sw = x[:, 0:1], x[:, 1:2], x[:, 2:3]
    strength = config.phi0 * (v_sw / 400.0) * (i_hmf / 5.0) ** 0.8 * (1.0 + alpha / 90.0)
    return strength / _effective_dc(x, r, config)


def modulated_flux(params, config=DEFAULT_ORACLE):
    """Noise-free force-field flux for many parameter rows at once.

    Returns an array of shape (N, 32). No failures are injected here; see
    :func:`solve_flux` for the failure-prone single solve.
    """
    x = as_matrix(params, N_PARAMS, "parameters")
    r = rigidity_grid()[None, :]
    phi = modulation_potential(x, config=config)
    m = config.proton_mass
    t_local = kinetic_energy(r, config)
    t_shift = kinetic_energy(r + phi, config)
    jacobian = (t_local * (t_local + 2 * m)) / (t_shift * (t_shift + 2 * m))
    return lis_flux(r + phi, config) * jacobian


def solve_flux(params, rng, config=DEFAULT_ORACLE, validity_box=None):
    """Run one (stand-in) solve.

    Parameters
    ----------
    params : HelioParams or array_like of shape (8,)
    rng : numpy.random.Generator
        Drives the simulated instability; one uniform draw per call.
    config : OracleConfig
    validity_box : DomainBox, optional
        Defaults to the extended default training box.

    Returns
    -------
    FluxSpectrum

    Raises
    ------
    DomainError
        If ``params`` falls outside ``validity_box``.
    InstabilityError
        With probability ``config.p_fail``.
    """
    x = params.to_array() if isinstance(params, HelioParams) else as_vector(params, N_PARAMS)
    box = validity_box if validity_box is not None else DomainBox().extended()
    check_in_box(x, box)
    if rng.random() < config.p_fail:
        raise InstabilityError(f"solver became numerically unstable at {x.tolist()}")
    return FluxSpectrum(modulated_flux(x, config)[0])


@dataclass
class Dataset:
    """Oracle solutions with a 90/10 train/test split.

    ``targets`` hold log10 fluxes; ``is_train`` marks training rows.
    """

    inputs: np.ndarray
    targets: np.ndarray
    is_train: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def train(self):
        return self.inputs[self.is_train], self.targets[self.is_train]

    @property
    def test(self):
        return self.inputs[~self.is_train], self.targets[~self.is_train]


def split_mask(n_rows, rng, test_fraction=0.1):
    """Boolean train mask from a seeded shuffle; ``round(test_fraction * n)`` test rows."""
    n_test = int(round(test_fraction * n_rows))
    if n_test < 1 or n_rows - n_test < 1:
        raise ValueError(f"{n_rows} rows are too few for a train/test split")
    order = rng.permutation(n_rows)
    mask = np.ones(n_rows, dtype=bool)
    mask[order[:n_test]] = False
    return mask


def generate_dataset(n, box=None, seed=0, p_fail=None, config=DEFAULT_ORACLE):
    """Sample ``n`` parameter rows uniformly in ``box`` and solve each one.

    Failed solves are dropped (and counted in the metadata), the survivors
    are split 90/10 by a seeded shuffle, and targets are stored as log10
    flux. Parameter draws, failure draws and the split come from separate
    child streams of ``seed``, so results do not depend on evaluation order.
    """
    if n < 100:
        raise ValueError(f"n must be at least 100, got {n}")
    box = DomainBox() if box is None else box
    if p_fail is None:
        p_fail = config.p_fail
    if not 0.0 <= p_fail < 1.0:
        raise ValueError("p_fail must lie in [0, 1)")

    param_ss, fail_ss, split_ss = np.random.SeedSequence(seed).spawn(3)
    u = np.random.default_rng(param_ss).random((n, N_PARAMS))
    inputs = box.lower + u * box.width
    failed = np.random.default_rng(fail_ss).random(n) < p_fail
    n_failed = int(failed.sum())
    if n_failed:
        logger.info("dropped %d of %d unstable solutions", n_failed, n)
    inputs = inputs[~failed]

    flux = modulated_flux(inputs, config)
    targets = np.log10(flux)
    if not np.all(np.isfinite(targets)):
        raise FloatingPointError("oracle produced non-finite fluxes")
    is_train = split_mask(inputs.shape[0], np.random.default_rng(split_ss))
    metadata = {
        "seed": int(seed),
        "n_requested": int(n),
        "n_failed": n_failed,
        "p_fail": float(p_fail),
        "box": box.to_dict(),
        "oracle": config.to_dict(),
    }
    return Dataset(inputs, targets, is_train, metadata)


def target_names():
    return tuple(f"log10_flux_{i:02d}" for i in range(N_BINS))


def save_dataset(dataset, path):
    """Write ``path`` (CSV) and ``path`` + ``.meta.json`` (generator metadata).

    Values are written with ``repr`` so a reload is bit-exact.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([*PARAM_NAMES, *target_names(), "split"])
        for x, y, tr in zip(dataset.inputs, dataset.targets, dataset.is_train):
            writer.writerow([*map(repr, x.tolist()), *map(repr, y.tolist()),
                             "train" if tr else "test"])
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(dataset.metadata, indent=2, sort_keys=True) + "\n")


def load_dataset(path):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = [*PARAM_NAMES, *target_names(), "split"]
        if header != expected:
            raise ValueError(f"{path}: unexpected dataset header")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: dataset has no rows")
    values = np.array([[float(v) for v in row[:-1]] for row in rows])
    splits = [row[-1] for row in rows]
    if set(splits) - {"train", "test"}:
        raise ValueError(f"{path}: split column must be 'train' or 'test'")
    meta_path = path.with_name(path.name + ".meta.json")
    metadata = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    return Dataset(values[:, :N_PARAMS], values[:, N_PARAMS:],
                   np.array([s == "train" for s in splits]), metadata)


def save_spectrum(spectrum, path):
    """Observed-spectrum CSV: 32 rows of ``rigidity,flux,sigma``."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rigidity", "flux", "sigma"])
        sigma = spectrum.sigma if spectrum.sigma is not None else [None] * N_BINS
        for r, f, s in zip(rigidity_grid(), spectrum.flux, sigma):
            writer.writerow([repr(float(r)), repr(float(f)), "" if s is None else repr(float(s))])


def load_spectrum(path):
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != N_BINS:
        raise ValueError(f"{path}: expected {N_BINS} rows, found {len(rows)}")
    try:
        rig = np.array([float(r["rigidity"]) for r in rows])
        flux = np.array([float(r["flux"]) for r in rows])
        sig = [r.get("sigma") or "" for r in rows]
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: columns must be rigidity, flux, sigma") from exc
    if not np.allclose(rig, rigidity_grid(), rtol=1e-6):
        raise ValueError(f"{path}: rigidities do not match the 0.2-200 GV grid")
    sigma = None if all(s == "" for s in sig) else np.array([float(s) for s in sig])
    return FluxSpectrum(flux, sigma)
