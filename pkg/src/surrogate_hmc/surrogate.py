"""Trained flux surrogate: network plus the scalings around it.

A :class:`Surrogate` maps raw heliospheric parameters to fluxes:

    x  --(affine to [-1, 1] over the training box)-->  u
    u  --(MLP)-->  v
    v  --(v * output_scale + output_mean)-->  log10 flux
    log10 flux  --(10**)-->  flux

:class:`SurrogateRegressor` wraps training in the scikit-learn estimator
protocol so it can be cloned, grid-searched or dropped into a pipeline.
"""

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import nn
from ._validation import as_vector
from .exceptions import DimensionError, ModelCorruptError, ModelFormatError, ModelVersionError

LN10 = np.log(10.0)


@dataclass
class Surrogate:
    net: nn.MLP
    input_lower: np.ndarray
    input_upper: np.ndarray
    output_mean: np.ndarray
    output_scale: np.ndarray

    def __post_init__(self):
        self.input_lower = as_vector(self.input_lower, self.net.n_inputs, "input_lower")
        self.input_upper = as_vector(self.input_upper, self.net.n_inputs, "input_upper")
        self.output_mean = as_vector(self.output_mean, self.net.n_outputs, "output_mean")
        self.output_scale = as_vector(self.output_scale, self.net.n_outputs, "output_scale")
        if np.any(self.input_upper <= self.input_lower):
            raise ValueError("input_upper must exceed input_lower")
        if np.any(self.output_scale <= 0):
            raise ValueError("output_scale must be positive")

    @classmethod
    def identity(cls, net):
        """Wrap a bare network so that ``log_flux`` equals ``forward``."""
        return cls(net, -np.ones(net.n_inputs), np.ones(net.n_inputs),
                   np.zeros(net.n_outputs), np.ones(net.n_outputs))

    @property
    def input_halfwidth(self):
        return 0.5 * (self.input_upper - self.input_lower)

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.input_lower) / self.input_halfwidth - 1.0

    def log_flux(self, x):
        """log10 flux for one parameter vector or a batch of rows."""
        return nn.forward(self.net, self.standardize(x)) * self.output_scale + self.output_mean

    def flux(self, x):
        return 10.0 ** self.log_flux(x)

    def flux_and_vjp(self, x):
        """Flux at a single ``x`` and a function mapping a flux cotangent to ``d/dx``."""
        out, net_vjp = nn.forward_and_vjp(self.net, self.standardize(as_vector(x)))
        flux = 10.0 ** (out * self.output_scale + self.output_mean)

        def vjp(cotangent):
            g_net = np.asarray(cotangent, dtype=np.float64) * flux * LN10 * self.output_scale
            return net_vjp(g_net) / self.input_halfwidth

        return flux, vjp


# Model file layout (all integers little-endian):
#   8 bytes   magic b"SHMCNET\x00"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON header: format_version, layer_dims, activation,
#             arrays [{name, shape}], payload_bytes, sha256 (hex, of payload)
#   payload   the listed arrays as contiguous little-endian float64, in order
MAGIC = b"SHMCNET\x00"
FORMAT_VERSION = 1


def _named_arrays(surrogate):
    arrays = [("input_lower", surrogate.input_lower), ("input_upper", surrogate.input_upper),
              ("output_mean", surrogate.output_mean), ("output_scale", surrogate.output_scale)]
    for l, (w, b) in enumerate(zip(surrogate.net.weights, surrogate.net.biases)):
        arrays.append((f"W{l}", w))
        arrays.append((f"b{l}", b))
    return arrays


def save_model(model, path):
    """Write a :class:`Surrogate` (or a bare :class:`nn.MLP`) to ``path``."""
    surrogate = Surrogate.identity(model) if isinstance(model, nn.MLP) else model
    arrays = _named_arrays(surrogate)
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "layer_dims": list(surrogate.net.layer_dims),
        "activation": surrogate.net.activation,
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in arrays],
        "payload_bytes": len(payload),
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload)


def load_model(path):
    """Read a model file written by :func:`save_model`.

    Raises
    ------
    ModelVersionError
        The file declares a different format version.
    ModelCorruptError
        Truncated file, bad header or checksum mismatch.
    ModelFormatError
        Not a model file at all.
    """
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        if len(data) < len(MAGIC) and MAGIC.startswith(data):
            raise ModelCorruptError(f"{path}: file truncated inside the magic bytes")
        raise ModelFormatError(f"{path}: not a surrogate model file")
    offset = len(MAGIC)
    if len(data) < offset + 4:
        raise ModelCorruptError(f"{path}: file truncated before the header")
    (header_len,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if len(data) < offset + header_len:
        raise ModelCorruptError(f"{path}: file truncated inside the header")
    try:
        header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelCorruptError(f"{path}: unreadable header") from exc
    offset += header_len
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelVersionError(version, FORMAT_VERSION)
    payload = data[offset:]
    if len(payload) != header.get("payload_bytes"):
        raise ModelCorruptError(
            f"{path}: payload is {len(payload)} bytes, header declares {header.get('payload_bytes')}"
        )
    if hashlib.sha256(payload).hexdigest() != header.get("sha256"):
        raise ModelCorruptError(f"{path}: checksum mismatch")

    arrays = {}
    pos = 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arrays[spec["name"]] = np.frombuffer(payload, dtype="<f8", count=count,
                                             offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    n_layers = len(header["layer_dims"]) - 1
    net = nn.MLP(header["layer_dims"],
                 [arrays[f"W{l}"] for l in range(n_layers)],
                 [arrays[f"b{l}"] for l in range(n_layers)],
                 header["activation"])
    return Surrogate(net, arrays["input_lower"], arrays["input_upper"],
                     arrays["output_mean"], arrays["output_scale"])


def relative_error(surrogate, inputs, log_targets):
    """Per-sample, per-bin ``|flux_pred - flux_true| / flux_true``."""
    pred = surrogate.log_flux(inputs)
    return np.abs(10.0 ** (pred - log_targets) - 1.0)


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """Scikit-learn estimator training a SELU network on log10 fluxes.

    ``fit`` standardizes inputs to [-1, 1] over ``input_bounds`` (default: the
    min/max of the training inputs), centers each target column and divides
    all of them by one common spread, then runs :func:`surrogate_hmc.nn.train`. The held-out set
    used for early stopping is either passed explicitly or carved off with a
    seeded ``validation_fraction`` split.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int, default=(256, 256)
    learning_rate_init : float, default=1e-4
    l2_weight : float, default=1e-6
    batch_size : int, default=128
    max_epochs : int, default=200
    patience : int, default=20
        Early-stopping patience in epochs.
    plateau_patience : int, default=10
    plateau_factor : float, default=0.5
    min_lr : float, default=1e-7
    validation_fraction : float, default=0.1
    input_bounds : tuple of array_like, optional
        ``(lower, upper)`` of the training domain.
    random_state : int, default=0

    Attributes
    ----------
    surrogate_ : Surrogate
    history_ : TrainHistory
    n_features_in_ : int
    """

    def __init__(self, hidden_layer_sizes=(256, 256), learning_rate_init=1e-4, l2_weight=1e-6,
                 batch_size=128, max_epochs=200, patience=20, plateau_patience=10,
                 plateau_factor=0.5, min_lr=1e-7, validation_fraction=0.1, input_bounds=None,
                 random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.learning_rate_init = learning_rate_init
        self.l2_weight = l2_weight
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.patience = patience
        self.plateau_patience = plateau_patience
        self.plateau_factor = plateau_factor
        self.min_lr = min_lr
        self.validation_fraction = validation_fraction
        self.input_bounds = input_bounds
        self.random_state = random_state

    def _train_config(self):
        return nn.TrainConfig(
            hidden_layers=tuple(self.hidden_layer_sizes),
            learning_rate=self.learning_rate_init,
            l2_weight=self.l2_weight,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience_early_stop=self.patience,
            plateau_patience=self.plateau_patience,
            plateau_factor=self.plateau_factor,
            min_lr=self.min_lr,
            rng_seed=self.random_state,
        )

    def fit(self, X, y, X_test=None, y_test=None, callback=None):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        config = self._train_config()
        if X_test is None:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ValueError("validation_fraction must lie in (0, 1)")
            rng = np.random.default_rng([self.random_state, 1])
            n_test = max(1, int(round(self.validation_fraction * X.shape[0])))
            order = rng.permutation(X.shape[0])
            test_idx, train_idx = order[:n_test], order[n_test:]
            X, X_test, y, y_test = X[train_idx], X[test_idx], y[train_idx], y[test_idx]
        else:
            X_test, y_test = check_X_y(X_test, y_test, multi_output=True, dtype=np.float64)
            if y_test.ndim == 1:
                y_test = y_test[:, None]
            if X_test.shape[1] != X.shape[1] or y_test.shape[1] != y.shape[1]:
                raise DimensionError("test set columns do not match the training set")

        if self.input_bounds is None:
            lower, upper = X.min(axis=0), X.max(axis=0)
        else:
            lower = as_vector(self.input_bounds[0], X.shape[1], "input_bounds lower")
            upper = as_vector(self.input_bounds[1], X.shape[1], "input_bounds upper")
        # one common scale keeps the loss proportional to log-space (relative) error
        out_mean = y.mean(axis=0)
        spread = float(np.std(y - out_mean))
        out_scale = np.full(y.shape[1], spread if spread > 0 else 1.0)
        shell = Surrogate(nn.MLP.initialize((X.shape[1], y.shape[1]), np.random.default_rng(0)),
                          lower, upper, out_mean, out_scale)

        def to_std(Xa, ya):
            return shell.standardize(Xa), (ya - out_mean) / out_scale

        net, history = nn.train(*to_std(X, y), *to_std(X_test, y_test), config, callback)
        self.surrogate_ = Surrogate(net, lower, upper, out_mean, out_scale)
        self.history_ = history
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        """Predicted log10 flux, shape ``(n_samples, n_outputs)``."""
        check_is_fitted(self, "surrogate_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise DimensionError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.surrogate_.log_flux(X)

    def predict_flux(self, X):
        return 10.0 ** self.predict(X)
