"""Dense networks with analytic input derivatives.

A DenseNet is the standard affine/activation chain

    z_l = b_l + W_l a_{l-1},   a_l = g(z_l),   Y = b_out + W_out a_n

optionally preceded by an input-transform layer (for shifting, scaling,
or symmetry enforcement: squaring an input makes the output exactly even
in it). The derivative view of the same parameters (the integrable
network) evaluates dY/dX_k through the forward-mode chain

    da_l/dX_k = g'(z_l) * (W_l da_{l-1}/dX_k)

and the input Hessian through one more differentiation of that chain.
Both views share parameter storage, so the antiderivative of a trained
derivative network is just the forward chain itself.

Training minimizes a weighted sum of mean-square errors on up to three
data channels: function values against Y, gradients against dY/dX, and
Hessians against d2Y/dX2. Parameter gradients for the derivative
channels are hand-derived reverse-mode sweeps over the combined
primal/tangent computation (finite differences gate them in the tests).
Evaluation never mutates a net; training updates parameters in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (CapabilityError, ConfigurationError, DataError,
                     ShapeError, TrainingError)
from .util import fmt, rng_for

OPTIMIZERS = ("sgd", "rmsprop")
RMSPROP_RHO = 0.9
RMSPROP_EPS = 1e-7


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """g with as many derivatives as the use site needs.

    g2 is required for input Hessians, g3 for training on Hessian data;
    either may be None for activations that do not supply them.
    """

    name: str
    g: Callable[[np.ndarray], np.ndarray]
    g1: Callable[[np.ndarray], np.ndarray]
    g2: Callable[[np.ndarray], np.ndarray] | None = None
    g3: Callable[[np.ndarray], np.ndarray] | None = None


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_g2(z):
    s = expit(z)
    return s * (1.0 - s)


def _softplus_g3(z):
    s = expit(z)
    return s * (1.0 - s) * (1.0 - 2.0 * s)


def _tanh_g1(z):
    return 1.0 - np.tanh(z) ** 2


def _tanh_g2(z):
    t = np.tanh(z)
    return -2.0 * t * (1.0 - t ** 2)


def _tanh_g3(z):
    t = np.tanh(z)
    return (1.0 - t ** 2) * (6.0 * t ** 2 - 2.0)


ACTIVATIONS = {
    "softplus": Activation("softplus", _softplus, expit, _softplus_g2, _softplus_g3),
    "tanh": Activation("tanh", np.tanh, _tanh_g1, _tanh_g2, _tanh_g3),
    "linear": Activation("linear", lambda z: z, lambda z: np.ones_like(z),
                         lambda z: np.zeros_like(z), lambda z: np.zeros_like(z)),
}


def get_activation(spec: str | Activation) -> Activation:
    if isinstance(spec, Activation):
        return spec
    try:
        return ACTIVATIONS[spec]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation '{spec}'; choose from {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# input transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputTransform:
    """One transformed feature with its first and second input derivatives.

    value maps (n, d) inputs to (n,) features; grad to (n, d); hess to
    (n, d, d) and must be exactly symmetric. `spec` names reconstructible
    built-ins for serialization.
    """

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    spec: str | None = None


def take(index: int) -> InputTransform:
    """The coordinate itself."""
    def grad(x):
        out = np.zeros_like(x)
        out[:, index] = 1.0
        return out

    return InputTransform(
        value=lambda x: x[:, index],
        grad=grad,
        hess=lambda x: np.zeros((x.shape[0], x.shape[1], x.shape[1])),
        spec=f"take:{index}")


def square(index: int) -> InputTransform:
    """The squared coordinate; makes the net exactly even in it."""
    def grad(x):
        out = np.zeros_like(x)
        out[:, index] = 2.0 * x[:, index]
        return out

    def hess(x):
        out = np.zeros((x.shape[0], x.shape[1], x.shape[1]))
        out[:, index, index] = 2.0
        return out

    return InputTransform(value=lambda x: x[:, index] * x[:, index],
                          grad=grad, hess=hess, spec=f"square:{index}")


def transform_from_spec(spec: str) -> InputTransform:
    kind, _, arg = spec.partition(":")
    if kind == "take":
        return take(int(arg))
    if kind == "square":
        return square(int(arg))
    raise ConfigurationError(f"unknown transform spec '{spec}'")


def transform_layer(transforms: Sequence[InputTransform], x: np.ndarray) -> np.ndarray:
    """Apply the transforms, one output column per transform."""
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    out = np.column_stack([t.value(x) for t in transforms])
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@dataclass
class DenseNet:
    """Affine/activation chain with an optional input-transform layer.

    weights[l] has shape (width_{l+1}, width_l) over the post-transform
    sizes; the last pair maps to the scalar output. Parameters are
    mutable (training updates in place); everything else is fixed.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: Activation
    input_dim: int
    transforms: tuple[InputTransform, ...] | None = None

    def __post_init__(self):
        if not self.weights or len(self.weights) != len(self.biases):
            raise ConfigurationError("need matching weight and bias lists")
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        first = self.n_features
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {l}: weight {w.shape} and bias {b.shape}")
            if w.shape[1] != first:
                raise ShapeError(
                    f"layer {l} expects {w.shape[1]} inputs, previous layer "
                    f"gives {first}")
            first = w.shape[0]
        if self.weights[-1].shape[0] != 1:
            raise ShapeError("output layer must produce a single value")
        if self.transforms is not None:
            self.transforms = tuple(self.transforms)

    @property
    def n_features(self) -> int:
        """Width entering the first dense layer."""
        if self.transforms is None:
            return self.input_dim
        return len(self.transforms)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.n_features,) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_hidden(self) -> int:
        return len(self.weights) - 1

    def parameters(self) -> list[np.ndarray]:
        return list(self.weights) + list(self.biases)


@dataclass
class IDNN:
    """Derivative view of a DenseNet; both views share parameter storage."""

    net: DenseNet


def make_idnn(input_dim: int, hidden: Sequence[int],
              activation: str | Activation = "softplus",
              transforms: Sequence[InputTransform] | None = None,
              seed: int = 0) -> IDNN:
    """Seeded scaled-uniform (fan-in/fan-out) initialization."""
    if input_dim < 1 or any(h < 1 for h in hidden):
        raise ConfigurationError("input_dim and hidden widths must be >= 1")
    act = get_activation(activation)
    n_features = input_dim if transforms is None else len(transforms)
    sizes = [n_features, *hidden, 1]
    rng = rng_for(seed, 6)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    net = DenseNet(weights, biases, act, input_dim,
                   None if transforms is None else tuple(transforms))
    return IDNN(net)


def _unwrap(model: DenseNet | IDNN) -> DenseNet:
    return model.net if isinstance(model, IDNN) else model


def _as_batch(net: DenseNet, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(
            f"inputs must have {net.input_dim} columns, got shape {x.shape}")
    return x, False


def _features(net: DenseNet, x: np.ndarray):
    """Transformed inputs with their Jacobian/Hessian stacks."""
    n, d = x.shape
    if net.transforms is None:
        jac = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        hess = np.zeros((n, d, d, d))
        return x, jac, hess
    feats = np.column_stack([t.value(x) for t in net.transforms])
    jac = np.stack([t.grad(x) for t in net.transforms], axis=1)
    hess = np.stack([t.hess(x) for t in net.transforms], axis=1)
    return feats, jac, hess


def _forward_chain(net: DenseNet, a0: np.ndarray):
    """All pre-activations and activations, ending with the scalar output."""
    zs, activations = [], [a0]
    a = a0
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ w.T + b
        zs.append(z)
        a = net.activation.g(z)
        activations.append(a)
    y = a @ net.weights[-1].T + net.biases[-1]
    return zs, activations, y[:, 0]


def forward(model: DenseNet | IDNN, x) -> np.ndarray | float:
    """Evaluate the scalar output."""
    net = _unwrap(model)
    xb, squeeze = _as_batch(net, x)
    feats = xb if net.transforms is None else transform_layer(net.transforms, xb)
    _, _, y = _forward_chain(net, feats)
    return float(y[0]) if squeeze else y


def gradient_out(model: DenseNet | IDNN, x) -> np.ndarray:
    """dY/dX via the forward-mode tangent chain."""
    net = _unwrap(model)
    xb, squeeze = _as_batch(net, x)
    feats, jac, _ = _features(net, xb)
    zs, _, _ = _forward_chain(net, feats)
    u = jac
    for z, w in zip(zs, net.weights[:-1]):
        v = np.einsum("ij,njd->nid", w, u)
        u = net.activation.g1(z)[:, :, None] * v
    dy = np.einsum("j,njd->nd", net.weights[-1][0], u)
    return dy[0] if squeeze else dy


def hessian_out(model: DenseNet | IDNN, x) -> np.ndarray:
    """d2Y/dX2; exactly symmetric by construction."""
    net = _unwrap(model)
    if net.activation.g2 is None:
        raise CapabilityError(
            f"activation '{net.activation.name}' does not supply a second "
            f"derivative, required for Hessians")
    xb, squeeze = _as_batch(net, x)
    feats, jac, hess0 = _features(net, xb)
    zs, _, _ = _forward_chain(net, feats)
    u, s = jac, hess0
    for z, w in zip(zs, net.weights[:-1]):
        v = np.einsum("ij,njd->nid", w, u)
        p = np.einsum("ij,njde->nide", w, s)
        g1 = net.activation.g1(z)
        g2 = net.activation.g2(z)
        u = g1[:, :, None] * v
        s = g2[:, :, None, None] * (v[:, :, :, None] * v[:, :, None, :]) \
            + g1[:, :, None, None] * p
    out = np.einsum("j,njde->nde", net.weights[-1][0], s)
    return out[0] if squeeze else out


def antiderivative(idnn: IDNN) -> DenseNet:
    """The forward view; modifying either view modifies both."""
    return idnn.net


def is_convex(model: DenseNet | IDNN, points) -> np.ndarray | bool:
    """Positive-definiteness of the input Hessian at each point
    (Cholesky test; indefinite or singular counts as not convex)."""
    net = _unwrap(model)
    pts = np.asarray(points, dtype=float)
    squeeze = pts.ndim == 1
    hess = hessian_out(net, pts)
    if squeeze:
        hess = hess[None]
    flags = np.zeros(hess.shape[0], dtype=bool)
    for i, h in enumerate(hess):
        try:
            np.linalg.cholesky(h)
            flags[i] = True
        except np.linalg.LinAlgError:
            flags[i] = False
    return bool(flags[0]) if squeeze else flags


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 1000
    batch_size: int = 20
    optimizer: str = "rmsprop"
    seed: int = 0
    function_weight: float = 1.0
    gradient_weight: float = 1.0
    hessian_weight: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(
                f"optimizer '{self.optimizer}' not in {OPTIMIZERS}")
        for name in ("function_weight", "gradient_weight", "hessian_weight"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class TrainingData:
    """Per-sample inputs with any combination of value/gradient/Hessian labels."""

    inputs: np.ndarray
    values: np.ndarray | None = None
    gradients: np.ndarray | None = None
    hessians: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise DataError("inputs must be a non-empty (samples, dim) array")
        object.__setattr__(self, "inputs", x)
        n, d = x.shape
        shapes = {"values": (n,), "gradients": (n, d), "hessians": (n, d, d)}
        present = 0
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=float)
            if arr.shape != want:
                raise ShapeError(f"{name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} contain non-finite entries")
            object.__setattr__(self, name, arr)
            present += 1
        if not np.all(np.isfinite(x)):
            raise DataError("inputs contain non-finite entries")
        if present == 0:
            raise DataError("at least one data channel is required")

    @property
    def n_samples(self) -> int:
        return self.inputs.shape[0]


def _loss_and_param_grads(net: DenseNet, batch: TrainingData, config: TrainConfig):
    """Weighted channel losses and dL/d(W, b).

    One reverse sweep over the combined primal/tangent/second-tangent
    chains; the tangent adjoints feed g'' (and g''' for the Hessian
    channel) terms back into the pre-activation adjoint.
    """
    act = net.activation
    x = batch.inputs
    n = x.shape[0]
    feats, jac, hess0 = _features(net, x)
    need_grad = batch.gradients is not None and config.gradient_weight > 0
    need_hess = batch.hessians is not None and config.hessian_weight > 0
    need_value = batch.values is not None and config.function_weight > 0
    if need_hess and act.g3 is None:
        raise CapabilityError(
            f"activation '{act.name}' does not supply a third derivative, "
            f"required to train on Hessian data")

    zs, activations, y = _forward_chain(net, feats)
    us, vs = [jac], []
    ss, ps = [hess0], []
    for z, w in zip(zs, net.weights[:-1]):
        v = np.einsum("ij,njd->nid", w, us[-1])
        vs.append(v)
        us.append(act.g1(z)[:, :, None] * v)
        if need_hess:
            p = np.einsum("ij,njde->nide", w, ss[-1])
            ps.append(p)
            ss.append(act.g2(z)[:, :, None, None]
                      * (v[:, :, :, None] * v[:, :, None, :])
                      + act.g1(z)[:, :, None, None] * p)
    w_out = net.weights[-1][0]

    loss = 0.0
    grads_w = [np.zeros_like(w) for w in net.weights]
    grads_b = [np.zeros_like(b) for b in net.biases]

    a_bar = np.zeros_like(activations[-1])
    u_bar = None
    s_bar = None

    if need_value:
        r = y - batch.values
        loss += config.function_weight * float(np.mean(r * r))
        y_bar = (2.0 * config.function_weight / n) * r
        grads_w[-1] += np.einsum("n,nj->j", y_bar, activations[-1])[None, :]
        grads_b[-1] += np.array([np.sum(y_bar)])
        a_bar += y_bar[:, None] * w_out[None, :]

    if need_grad:
        dy = np.einsum("j,njd->nd", w_out, us[-1])
        r = dy - batch.gradients
        loss += config.gradient_weight * float(np.mean(np.sum(r * r, axis=1)))
        r_bar = (2.0 * config.gradient_weight / n) * r
        grads_w[-1] += np.einsum("nd,njd->j", r_bar, us[-1])[None, :]
        u_bar = r_bar[:, None, :] * w_out[None, :, None]

    if need_hess:
        d2y = np.einsum("j,njde->nde", w_out, ss[-1])
        r = d2y - batch.hessians
        loss += config.hessian_weight * float(np.mean(np.sum(r * r, axis=(1, 2))))
        r_bar = (2.0 * config.hessian_weight / n) * r
        grads_w[-1] += np.einsum("nde,njde->j", r_bar, ss[-1])[None, :]
        s_bar = r_bar[:, None, :, :] * w_out[None, :, None, None]

    for l in range(net.n_hidden - 1, -1, -1):
        z = zs[l]
        g1 = act.g1(z)
        z_bar = a_bar * g1
        if u_bar is not None:
            g2 = act.g2(z)
            v = vs[l]
            z_bar += g2 * np.einsum("nid,nid->ni", u_bar, v)
            v_bar = u_bar * g1[:, :, None]
        if s_bar is not None:
            g2 = act.g2(z)
            g3 = act.g3(z)
            v = vs[l]
            p = ps[l]
            vv = v[:, :, :, None] * v[:, :, None, :]
            z_bar += g3 * np.einsum("nide,nide->ni", s_bar, vv)
            z_bar += g2 * np.einsum("nide,nide->ni", s_bar, p)
            sv = np.einsum("nide,nie->nid", s_bar, v) \
                + np.einsum("nied,nie->nid", s_bar, v)
            if u_bar is not None:
                v_bar += g2[:, :, None] * sv
            else:
                v_bar = g2[:, :, None] * sv
            p_bar = s_bar * g1[:, :, None, None]
        grads_w[l] += np.einsum("ni,nj->ij", z_bar, activations[l])
        grads_b[l] += np.sum(z_bar, axis=0)
        a_bar = z_bar @ net.weights[l]
        if u_bar is not None or s_bar is not None:
            grads_w[l] += np.einsum("nid,njd->ij", v_bar, us[l])
            new_u_bar = np.einsum("nid,ij->njd", v_bar, net.weights[l])
            u_bar = new_u_bar
        if s_bar is not None:
            grads_w[l] += np.einsum("nide,njde->ij", p_bar, ss[l])
            s_bar = np.einsum("nide,ij->njde", p_bar, net.weights[l])

    return loss, grads_w + grads_b


def train_idnn(idnn: IDNN, data: TrainingData,
               config: TrainConfig) -> tuple[IDNN, list[float]]:
    """Mini-batch training on the weighted data channels, in place.

    Returns the trained model and the per-epoch mean loss history.
    """
    net = _unwrap(idnn)
    rng = rng_for(config.seed, 5)
    params = net.parameters()
    accum = [np.zeros_like(p) for p in params]
    history = []
    n = data.n_samples
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            batch = TrainingData(
                data.inputs[rows],
                None if data.values is None else data.values[rows],
                None if data.gradients is None else data.gradients[rows],
                None if data.hessians is None else data.hessians[rows])
            # divergence shows up as a non-finite loss below; the overflow
            # warnings on the way there carry no extra information
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = _loss_and_param_grads(net, batch, config)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"loss became non-finite at epoch {epoch}, batch "
                    f"{start // config.batch_size}")
            epoch_loss += loss * len(rows)
            if config.optimizer == "sgd":
                for p, g in zip(params, grads):
                    p -= config.learning_rate * g
            else:
                for p, g, acc in zip(params, grads, accum):
                    acc *= RMSPROP_RHO
                    acc += (1.0 - RMSPROP_RHO) * g * g
                    p -= config.learning_rate * g / (np.sqrt(acc) + RMSPROP_EPS)
        history.append(epoch_loss / n)
    return idnn, history


def multi_resolution_fit(base: DenseNet | IDNN, data: TrainingData,
                         config: TrainConfig, penalty_beta: float = 0.0,
                         reference_gradients: np.ndarray | None = None,
                         hidden: Sequence[int] | None = None
                         ) -> tuple[IDNN, list[float]]:
    """Second-stage fit of the residual left by a trained base net.

    The detail net trains on labels (values - base(values' inputs)); with
    penalty_beta > 0 the loss adds beta * |gradient of (base + detail) -
    reference gradients|^2 per sample, which reduces to a gradient channel
    on the detail net with targets (reference - base gradient).
    """
    base_net = _unwrap(base)
    if data.values is None:
        raise ConfigurationError("multi-resolution fitting needs value data")
    if penalty_beta < 0:
        raise ConfigurationError("penalty_beta must be >= 0")
    if penalty_beta > 0 and reference_gradients is None:
        raise ConfigurationError(
            "penalty_beta > 0 requires reference gradients")
    residual = data.values - forward(base_net, data.inputs)
    grad_targets = None
    if penalty_beta > 0:
        ref = np.asarray(reference_gradients, dtype=float)
        if ref.shape != data.inputs.shape:
            raise ShapeError(
                f"reference gradients must have shape {data.inputs.shape}")
        grad_targets = ref - gradient_out(base_net, data.inputs)
    if hidden is None:
        hidden = base_net.layer_sizes[1:-1]
    detail = make_idnn(base_net.input_dim, hidden, base_net.activation,
                       base_net.transforms, seed=config.seed)
    detail_config = replace(config, gradient_weight=penalty_beta)
    detail_data = TrainingData(data.inputs, values=residual,
                               gradients=grad_targets)
    return train_idnn(detail, detail_data, detail_config)


def stacked_forward(base: DenseNet | IDNN, detail: DenseNet | IDNN, x):
    """base + detail prediction of the two-stage model."""
    return forward(base, x) + forward(detail, x)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

NET_FORMAT_VERSION = 1


def save_net(model: DenseNet | IDNN, path) -> Path:
    """Versioned CSV: header lines, then one line per weight row / bias."""
    net = _unwrap(model)
    transforms = "-"
    if net.transforms is not None:
        specs = [t.spec for t in net.transforms]
        if any(s is None for s in specs):
            raise CapabilityError(
                "only named transforms (take/square) can be serialized")
        transforms = ";".join(specs)
    lines = [f"fieldlearn-net,{NET_FORMAT_VERSION}",
             f"activation,{net.activation.name}",
             f"input_dim,{net.input_dim}",
             f"transforms,{transforms}",
             "layer_sizes," + ",".join(str(s) for s in net.layer_sizes)]
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        for i, row in enumerate(w):
            lines.append(f"W{l},{i}," + ",".join(fmt(v) for v in row))
        lines.append(f"b{l}," + ",".join(fmt(v) for v in b))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_net(path) -> DenseNet:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"net file not found: {path}")
    lines = path.read_text().splitlines()
    fields = [line.split(",") for line in lines if line.strip()]
    if not fields or fields[0][0] != "fieldlearn-net":
        raise DataError(f"{path} is not a serialized net")
    if int(fields[0][1]) != NET_FORMAT_VERSION:
        raise DataError(f"unsupported net format version {fields[0][1]}")
    header = {row[0]: row[1:] for row in fields[1:5]}
    activation = get_activation(header["activation"][0])
    input_dim = int(header["input_dim"][0])
    transforms = None
    if header["transforms"][0] != "-":
        transforms = tuple(transform_from_spec(s)
                           for s in header["transforms"][0].split(";"))
    sizes = [int(s) for s in header["layer_sizes"]]
    rows = {}
    biases = {}
    for row in fields[5:]:
        key = row[0]
        if key.startswith("W"):
            rows.setdefault(int(key[1:]), {})[int(row[1])] = \
                [float(v) for v in row[2:]]
        elif key.startswith("b"):
            biases[int(key[1:])] = [float(v) for v in row[1:]]
        else:
            raise DataError(f"unexpected line '{key}' in {path}")
    weights = []
    bias_list = []
    for l in range(len(sizes) - 1):
        if l not in rows or l not in biases:
            raise DataError(f"layer {l} missing from {path}")
        w = np.array([rows[l][i] for i in range(sizes[l + 1])])
        weights.append(w)
        bias_list.append(np.array(biases[l]))
    return DenseNet(weights, bias_list, activation, input_dim, transforms)
