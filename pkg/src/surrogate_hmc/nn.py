"""Dense SELU network with hand-written backpropagation and its training loop.

The network maps a standardized parameter vector to standardized log10
fluxes. Hidden layers use SELU, the output layer is linear. Two gradients
are exposed: with respect to the parameters (for training on a mean
absolute error loss) and with respect to the input (for Hamiltonian Monte
Carlo on the surrogate posterior).
"""

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from ._validation import as_matrix, as_vector
from .exceptions import DimensionError, TrainingDivergedError

logger = logging.getLogger(__name__)

SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

ACTIVATIONS = ("selu", "identity")


def selu(x):
    """Scaled exponential linear unit, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_derivative(x):
    x = np.asarray(x, dtype=np.float64)
    return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


@dataclass
class MLP:
    """Fully connected network.

    ``weights[l]`` has shape ``(layer_dims[l + 1], layer_dims[l])``.
    ``activation`` applies to hidden layers; the last layer is always linear.
    """

    layer_dims: tuple
    weights: list
    biases: list
    activation: str = "selu"

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2 or any(d < 1 for d in self.layer_dims):
            raise ValueError(f"invalid layer_dims {self.layer_dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        n_layers = len(self.layer_dims) - 1
        if len(self.weights) != n_layers or len(self.biases) != n_layers:
            raise DimensionError("need one weight matrix and bias vector per layer")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != shape or b.shape != (shape[0],):
                raise DimensionError(
                    f"layer {l}: expected weight {shape} and bias ({shape[0]},), "
                    f"got {w.shape} and {b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l} has non-finite parameters")

    @classmethod
    def initialize(cls, layer_dims, rng, activation="selu"):
        """LeCun-normal weights (std ``1/sqrt(fan_in)``) and zero biases."""
        dims = tuple(int(d) for d in layer_dims)
        weights = [rng.normal(0.0, 1.0 / np.sqrt(n_in), size=(n_out, n_in))
                   for n_in, n_out in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(n_out) for n_out in dims[1:]]
        return cls(dims, weights, biases, activation)

    @property
    def n_inputs(self):
        return self.layer_dims[0]

    @property
    def n_outputs(self):
        return self.layer_dims[-1]

    @property
    def n_layers(self):
        return len(self.weights)

    def parameters(self):
        """Flat list ``[W0, b0, W1, b1, ...]`` (references, not copies)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_parameters(self, params):
        return MLP(self.layer_dims, list(params[0::2]), list(params[1::2]), self.activation)

    def copy(self):
        return copy.deepcopy(self)


def _hidden(model, z):
    return selu(z) if model.activation == "selu" else z


def _hidden_derivative(model, z):
    return selu_derivative(z) if model.activation == "selu" else np.ones_like(z)


def _forward_trace(model, X):
    """Batch forward pass that keeps pre-activations and layer inputs."""
    layer_inputs, preacts = [], []
    h = X
    last = model.n_layers - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        layer_inputs.append(h)
        z = h @ w.T + b
        preacts.append(z)
        h = z if l == last else _hidden(model, z)
    return h, layer_inputs, preacts


def _check_input(model, x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1:] != (model.n_inputs,) or arr.ndim > 2:
        raise DimensionError(
            f"input must have trailing dimension {model.n_inputs}, got shape {arr.shape}"
        )
    return arr


def forward(model, x):
    """Evaluate the network on one input vector or a batch of row vectors."""
    arr = _check_input(model, x)
    out, _, _ = _forward_trace(model, np.atleast_2d(arr))
    return out[0] if arr.ndim == 1 else out


def _backward(model, layer_inputs, preacts, grad_out):
    """Reverse pass. Returns (d_input, [dW...], [db...]) for upstream ``grad_out``."""
    last = model.n_layers - 1
    d_w = [None] * model.n_layers
    d_b = [None] * model.n_layers
    g = grad_out
    for l in range(last, -1, -1):
        if l != last:
            g = g * _hidden_derivative(model, preacts[l])
        d_w[l] = g.T @ layer_inputs[l]
        d_b[l] = g.sum(axis=0)
        g = g @ model.weights[l]
    return g, d_w, d_b


def grad_input(model, x, cotangent):
    """Vector-Jacobian product ``d(cotangent . forward(x)) / dx``.

    Accepts a single input with a single cotangent, or matching batches.
    """
    arr = _check_input(model, x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape[-1:] != (model.n_outputs,) or cot.ndim != arr.ndim:
        raise DimensionError(
            f"cotangent must have trailing dimension {model.n_outputs} and match the input batch"
        )
    X = np.atleast_2d(arr)
    _, layer_inputs, preacts = _forward_trace(model, X)
    g = np.atleast_2d(cot)
    last = model.n_layers - 1
    for l in range(last, -1, -1):
        if l != last:
            g = g * _hidden_derivative(model, preacts[l])
        g = g @ model.weights[l]
    return g[0] if arr.ndim == 1 else g


def forward_and_vjp(model, x):
    """Forward pass on one input plus a closure computing input VJPs.

    Saves a second forward pass when value and gradient are both needed.
    """
    X = np.atleast_2d(as_vector(x, model.n_inputs, "input"))
    out, _, preacts = _forward_trace(model, X)
    derivs = [_hidden_derivative(model, z) for z in preacts[:-1]]

    def vjp(cotangent):
        g = np.atleast_2d(as_vector(cotangent, model.n_outputs, "cotangent"))
        g = g @ model.weights[-1]
        for l in range(model.n_layers - 2, -1, -1):
            g = (g * derivs[l]) @ model.weights[l]
        return g[0]

    return out[0], vjp


def mae_loss(model, inputs, targets, l2_weight=0.0):
    """Mean absolute error over batch and outputs plus ``l2_weight * sum(W**2)``."""
    pred = forward(model, as_matrix(inputs, model.n_inputs))
    data = float(np.mean(np.abs(pred - targets)))
    return data + l2_weight * sum(float(np.sum(w * w)) for w in model.weights)


def grad_params(model, inputs, targets, l2_weight=0.0):
    """Loss and its (sub)gradient with respect to every weight and bias.

    The loss is the mean absolute error over the batch and all outputs plus
    ``l2_weight`` times the sum of squared weights (biases are not
    penalized). At a zero residual the subgradient of ``|r|`` is taken as 0.

    Returns
    -------
    loss : float
    grads : list of ndarray
        Ordered like :meth:`MLP.parameters`.
    """
    X = as_matrix(inputs, model.n_inputs, "inputs")
    Y = as_matrix(targets, model.n_outputs, "targets")
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if X.shape[0] != Y.shape[0]:
        raise DimensionError(f"{X.shape[0]} inputs but {Y.shape[0]} targets")
    pred, layer_inputs, preacts = _forward_trace(model, X)
    resid = pred - Y
    loss = float(np.mean(np.abs(resid)))
    grad_out = np.sign(resid) / resid.size
    _, d_w, d_b = _backward(model, layer_inputs, preacts, grad_out)
    if l2_weight:
        loss += l2_weight * sum(float(np.sum(w * w)) for w in model.weights)
        d_w = [dw + 2.0 * l2_weight * w for dw, w in zip(d_w, model.weights)]
    grads = []
    for dw, db in zip(d_w, d_b):
        grads.extend((dw, db))
    return loss, grads


@dataclass
class AdamState:
    """Moment estimates and hyperparameters of the Adam optimizer."""

    first_moment: list
    second_moment: list
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    l2_weight: float = 1e-6
    step: int = 0

    @classmethod
    def zeros_like(cls, model, **kwargs):
        params = model.parameters()
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params], **kwargs)


def adam_step(state, model, grads):
    """One bias-corrected Adam update; returns ``(new_model, new_state)``."""
    params = model.parameters()
    if len(grads) != len(params):
        raise DimensionError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_params.append(p - state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, state.learning_rate, b1, b2, state.epsilon,
                          state.l2_weight, t)
    return model.with_parameters(new_params), new_state


class PlateauSchedule:
    """Reduce the learning rate when the monitored loss stops improving.

    After ``patience`` consecutive calls without a strict improvement over the
    best loss seen so far, the rate is multiplied by ``factor`` (never going
    below ``min_lr``) and the counter restarts.
    """

    def __init__(self, learning_rate, patience=10, factor=0.5, min_lr=1e-7):
        if not 0.0 < factor < 1.0:
            raise ValueError("factor must lie strictly between 0 and 1")
        if patience < 1:
            raise ValueError("patience must be positive")
        self.learning_rate = float(learning_rate)
        self.patience = int(patience)
        self.factor = float(factor)
        self.min_lr = float(min_lr)
        self.best = np.inf
        self.num_bad = 0

    def update(self, loss):
        if loss < self.best:
            self.best = loss
            self.num_bad = 0
        else:
            self.num_bad += 1
            if self.num_bad >= self.patience:
                self.learning_rate = max(self.learning_rate * self.factor, self.min_lr)
                self.num_bad = 0
        return self.learning_rate


def plateau_update(schedule, observed_test_loss):
    return schedule.update(observed_test_loss)


@dataclass(frozen=True)
class TrainConfig:
    hidden_layers: tuple = (256, 256)
    learning_rate: float = 1e-4
    l2_weight: float = 1e-6
    batch_size: int = 128
    max_epochs: int = 200
    patience_early_stop: int = 20
    plateau_patience: int = 10
    plateau_factor: float = 0.5
    min_lr: float = 1e-7
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if any(h < 1 for h in self.hidden_layers):
            raise ValueError("hidden layer sizes must be positive")
        for name in ("batch_size", "max_epochs", "patience_early_stop", "plateau_patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError("plateau_factor must lie strictly between 0 and 1")
        if self.learning_rate <= 0 or self.min_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be non-negative")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def n_epochs(self):
        return len(self.test_loss)


def train(train_inputs, train_targets, test_inputs, test_targets, config=TrainConfig(),
          callback=None):
    """Fit a fresh network with Adam, a plateau schedule and early stopping.

    Inputs and targets are expected to be standardized already. The network
    returned is the snapshot with the lowest test MAE.

    Parameters
    ----------
    train_inputs, train_targets, test_inputs, test_targets : ndarray
        2-D arrays; the layer widths come from their column counts and
        ``config.hidden_layers``.
    config : TrainConfig
    callback : callable, optional
        Called as ``callback(epoch, history)`` after every epoch.

    Returns
    -------
    model : MLP
    history : TrainHistory
    """
    Xtr = as_matrix(train_inputs, name="train inputs")
    Ytr = as_matrix(train_targets, name="train targets")
    Xte = as_matrix(test_inputs, Xtr.shape[1], "test inputs")
    Yte = as_matrix(test_targets, Ytr.shape[1], "test targets")
    if Xtr.shape[0] == 0 or Xte.shape[0] == 0:
        raise ValueError("training and test sets must be non-empty")
    if Xtr.shape[0] != Ytr.shape[0] or Xte.shape[0] != Yte.shape[0]:
        raise DimensionError("inputs and targets have different row counts")

    rng = np.random.default_rng(config.rng_seed)
    dims = (Xtr.shape[1], *config.hidden_layers, Ytr.shape[1])
    model = MLP.initialize(dims, rng)
    state = AdamState.zeros_like(model, learning_rate=config.learning_rate,
                                 l2_weight=config.l2_weight)
    schedule = PlateauSchedule(config.learning_rate, config.plateau_patience,
                               config.plateau_factor, config.min_lr)
    history = TrainHistory()
    best_model, best_loss = model, np.inf
    n = Xtr.shape[0]
    bs = config.batch_size

    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = grad_params(model, Xtr[idx], Ytr[idx], config.l2_weight)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}, batch starting {start} "
                    f"(learning rate {state.learning_rate:g})"
                )
            model, state = adam_step(state, model, grads)
            batch_losses.append(loss)
        test_loss = float(np.mean(np.abs(forward(model, Xte) - Yte)))
        if not np.isfinite(test_loss):
            raise TrainingDivergedError(f"non-finite test loss at epoch {epoch}")
        history.train_loss.append(float(np.mean(batch_losses)))
        history.test_loss.append(test_loss)
        history.learning_rate.append(state.learning_rate)
        if test_loss < best_loss:
            best_loss, best_model = test_loss, model
            history.best_epoch = epoch
        state.learning_rate = schedule.update(test_loss)
        logger.debug("epoch %d train %.3e test %.3e lr %.1e", epoch,
                     history.train_loss[-1], test_loss, history.learning_rate[-1])
        if callback is not None:
            callback(epoch, history)
        if epoch - history.best_epoch >= config.patience_early_stop:
            logger.info("early stop at epoch %d (best %d)", epoch, history.best_epoch)
            break
    return best_model, history
