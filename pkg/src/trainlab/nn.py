"""Dense MLP with explicit forward/backward passes.

All gradients are computed by hand (no autodiff framework): the batch
gradient comes from one reverse sweep, per-sample gradients from a batched
reverse sweep that keeps the sample axis alive.  Per-sample gradients are the
oracle for gradient-noise estimation, so their mean must reproduce the batch
gradient exactly up to floating accumulation order.

Conventions:
  - weights are stored ``(out, in)``; a layer computes ``x @ W.T + b``;
  - the configured activation is applied after every layer except the last;
  - loss is mean softmax cross-entropy (log-sum-exp stabilized) plus the
    configured regularizer penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError

ACTIVATION_KINDS = ("relu", "leaky_relu", "crelu", "linear")
REGULARIZER_KINDS = ("none", "l2", "wasserstein")


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Layer:
    layer_id: str
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


@dataclass
class ParamSet:
    """Ordered per-layer weight/bias arrays with stable layer ids.

    Also used as the container for anything parameter-shaped: gradients,
    optimizer moments, probe directions.
    """

    layers: list[Layer]

    def __post_init__(self):
        ids = [lay.layer_id for lay in self.layers]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate layer ids: {ids}")

    def layer_ids(self) -> list[str]:
        return [lay.layer_id for lay in self.layers]

    def layer(self, layer_id: str) -> Layer:
        for lay in self.layers:
            if lay.layer_id == layer_id:
                return lay
        raise ConfigError(f"unknown layer id {layer_id!r}")

    def arrays(self):
        for lay in self.layers:
            yield lay.weights
            yield lay.bias

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())

    def copy(self) -> "ParamSet":
        return ParamSet(
            [Layer(l.layer_id, l.weights.copy(), l.bias.copy()) for l in self.layers]
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def from_vector(self, vec: np.ndarray) -> "ParamSet":
        """A new ParamSet with this one's shapes filled from a flat vector."""
        if vec.size != self.n_params:
            raise ConfigError(f"vector size {vec.size} != parameter count {self.n_params}")
        out = []
        k = 0
        for lay in self.layers:
            w = vec[k : k + lay.weights.size].reshape(lay.weights.shape).copy()
            k += lay.weights.size
            b = vec[k : k + lay.bias.size].copy()
            k += lay.bias.size
            out.append(Layer(lay.layer_id, w, b))
        return ParamSet(out)


def zeros_like(ps: ParamSet) -> ParamSet:
    return ParamSet(
        [Layer(l.layer_id, np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in ps.layers]
    )


def add_scaled(a: ParamSet, b: ParamSet, scale: float) -> ParamSet:
    """a + scale * b, as a new ParamSet (ids taken from ``a``)."""
    return ParamSet(
        [
            Layer(la.layer_id, la.weights + scale * lb.weights, la.bias + scale * lb.bias)
            for la, lb in zip(a.layers, b.layers)
        ]
    )


def param_dot(a: ParamSet, b: ParamSet) -> float:
    return float(sum(np.vdot(x, y) for x, y in zip(a.arrays(), b.arrays())))


def param_norm(ps: ParamSet) -> float:
    return float(np.sqrt(sum(np.vdot(a, a) for a in ps.arrays())))


def mean_params(grads: list[ParamSet]) -> ParamSet:
    """Arithmetic mean of a list of ParamSet-shaped values."""
    if not grads:
        raise ValueError("empty gradient list")
    out = zeros_like(grads[0])
    for g in grads:
        for acc, a in zip(out.arrays(), g.arrays()):
            acc += a
    inv = 1.0 / len(grads)
    for acc in out.arrays():
        acc *= inv
    return out


# ---------------------------------------------------------------------------
# activations


@dataclass(frozen=True)
class Activation:
    kind: str
    slope: float = 0.0  # leaky_relu negative-side slope

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ConfigError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0.0 <= self.slope <= 1.0:
            raise ConfigError(f"leaky_relu slope must be in [0, 1], got {self.slope}")


def crelu_apply(x: np.ndarray) -> np.ndarray:
    """Concatenate the positive and negative halves: [max(x,0), max(-x,0)].

    Output width is exactly twice the input width; the positive half minus
    the negative half reconstructs the input.
    """
    x = np.asarray(x)
    return np.concatenate([np.maximum(x, 0.0), np.maximum(-x, 0.0)], axis=-1)


def activation_width(act: Activation, width: int) -> int:
    return 2 * width if act.kind == "crelu" else width


def _act_forward(act: Activation, z: np.ndarray) -> np.ndarray:
    if act.kind == "relu":
        return np.maximum(z, 0.0)
    if act.kind == "leaky_relu":
        return np.where(z > 0.0, z, act.slope * z)
    if act.kind == "crelu":
        return crelu_apply(z)
    return z  # linear


def _act_backward(act: Activation, z: np.ndarray, dh: np.ndarray) -> np.ndarray:
    if act.kind == "relu":
        return dh * (z > 0.0)
    if act.kind == "leaky_relu":
        return dh * np.where(z > 0.0, 1.0, act.slope)
    if act.kind == "crelu":
        n = z.shape[-1]
        return dh[..., :n] * (z > 0.0) - dh[..., n:] * (z < 0.0)
    return dh


# ---------------------------------------------------------------------------
# regularizers


@dataclass
class Regularizer:
    kind: str = "none"
    lam: float = 0.0
    init_snapshot: ParamSet | None = None

    def __post_init__(self):
        if self.kind not in REGULARIZER_KINDS:
            raise ConfigError(f"unknown regularizer {self.kind!r}")
        if self.lam < 0.0:
            raise ConfigError(f"regularizer coefficient must be >= 0, got {self.lam}")
        if self.kind == "wasserstein" and self.init_snapshot is None:
            raise ConfigError("wasserstein regularizer requires an init snapshot")


def wasserstein_penalty(current: np.ndarray, init: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared 1-D Wasserstein-2 distance between the entries of two arrays.

    value = (1/n) * sum_k (sort(current)_k - sort(init)_k)^2, gradient routed
    back through the sorting permutation of ``current``.  Zero iff the two
    multisets of entries coincide.
    """
    if current.shape != init.shape:
        raise ConfigError(f"shape mismatch {current.shape} vs {init.shape}")
    flat = current.ravel()
    n = flat.size
    order = np.argsort(flat, kind="stable")
    diffs = flat[order] - np.sort(init.ravel(), kind="stable")
    value = float(np.mean(diffs**2))
    grad_flat = np.zeros_like(flat)
    grad_flat[order] = (2.0 / n) * diffs
    return value, grad_flat.reshape(current.shape)


def regularizer_penalty(params: ParamSet, reg: Regularizer) -> tuple[float, ParamSet]:
    """Penalty value and its exact gradient (weights only; biases unpenalized)."""
    grads = zeros_like(params)
    if reg.kind == "none" or reg.lam == 0.0:
        return 0.0, grads
    value = 0.0
    if reg.kind == "l2":
        for lay, g in zip(params.layers, grads.layers):
            value += reg.lam * float(np.sum(lay.weights**2))
            g.weights += 2.0 * reg.lam * lay.weights
        return value, grads
    # wasserstein
    snap = reg.init_snapshot
    if snap.layer_ids() != params.layer_ids():
        raise ConfigError("wasserstein snapshot layers do not match current parameters")
    for lay, ref, g in zip(params.layers, snap.layers, grads.layers):
        v, gw = wasserstein_penalty(lay.weights, ref.weights)
        value += reg.lam * v
        g.weights += reg.lam * gw
    return value, grads


# ---------------------------------------------------------------------------
# data batches


@dataclass
class Batch:
    inputs: np.ndarray  # (B, d)
    labels: np.ndarray  # (B,) integer class indices

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.inputs.ndim != 2:
            raise ConfigError(f"batch inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ConfigError("labels must be one class index per input row")
        if self.inputs.shape[0] < 1:
            raise ConfigError("batch must contain at least one sample")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


# ---------------------------------------------------------------------------
# initialization


def init_mlp(
    in_dim: int,
    hidden_widths: list[int],
    n_classes: int,
    act: Activation,
    rng: np.random.Generator,
) -> ParamSet:
    """Kaiming-uniform fan-in weights, zero biases.

    Layers fed by a CReLU see a doubled input width; the init bound uses the
    pre-concatenation fan-in.
    """
    layers = []
    in_actual = in_dim
    fan_in = in_dim
    widths = list(hidden_widths) + [n_classes]
    for i, width in enumerate(widths):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(width, in_actual))
        layers.append(Layer(f"fc{i + 1}", w, np.zeros(width)))
        if i < len(hidden_widths):
            in_actual = activation_width(act, width)
            fan_in = width
    return ParamSet(layers)


# ---------------------------------------------------------------------------
# forward / loss / gradients


@dataclass
class ForwardResult:
    logits: np.ndarray  # (B, C)
    hidden_preacts: list[np.ndarray]  # one (B, width) per hidden layer


def _check_shapes(params: ParamSet, act: Activation, in_dim: int) -> None:
    expect = in_dim
    for i, lay in enumerate(params.layers):
        out, inp = lay.weights.shape
        if inp != expect:
            raise ConfigError(
                f"layer {lay.layer_id!r} expects input width {inp}, got {expect}"
            )
        if lay.bias.shape != (out,):
            raise ConfigError(f"layer {lay.layer_id!r} bias shape {lay.bias.shape} != ({out},)")
        expect = out if i == len(params.layers) - 1 else activation_width(act, out)


def _forward(params: ParamSet, act: Activation, inputs: np.ndarray):
    """Returns (logits, hidden preacts, per-layer inputs) for backprop reuse."""
    _check_shapes(params, act, inputs.shape[1])
    x = inputs
    preacts: list[np.ndarray] = []
    layer_inputs: list[np.ndarray] = []
    last = len(params.layers) - 1
    for i, lay in enumerate(params.layers):
        layer_inputs.append(x)
        z = x @ lay.weights.T + lay.bias
        if i == last:
            return z, preacts, layer_inputs
        preacts.append(z)
        x = _act_forward(act, z)
    raise ConfigError("network has no layers")


def forward(params: ParamSet, act: Activation, batch: Batch) -> ForwardResult:
    logits, preacts, _ = _forward(params, act, batch.inputs)
    return ForwardResult(logits, preacts)


def _softmax_stats(logits: np.ndarray, labels: np.ndarray):
    """Per-sample cross-entropy and softmax probabilities, max-shifted."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    expz = np.exp(shifted)
    denom = expz.sum(axis=1, keepdims=True)
    log_denom = np.log(denom[:, 0])
    rows = np.arange(logits.shape[0])
    losses = log_denom - shifted[rows, labels]
    return losses, expz / denom


def _first_nonfinite_layer(params: ParamSet, preacts, logits) -> str:
    for lay, z in zip(params.layers, preacts):
        if not np.all(np.isfinite(z)):
            return lay.layer_id
    return params.layers[-1].layer_id


@dataclass
class LossGrad:
    loss: float
    grads: ParamSet
    logits: np.ndarray


def _backward(params: ParamSet, act: Activation, preacts, layer_inputs, dlogits) -> ParamSet:
    grads = zeros_like(params)
    d = dlogits
    for i in range(len(params.layers) - 1, -1, -1):
        lay = params.layers[i]
        g = grads.layers[i]
        g.weights += d.T @ layer_inputs[i]
        g.bias += d.sum(axis=0)
        if i > 0:
            dx = d @ lay.weights
            d = _act_backward(act, preacts[i - 1], dx)
    return grads


def loss_grad(params: ParamSet, act: Activation, batch: Batch, reg: Regularizer) -> LossGrad:
    """Mean cross-entropy plus regularizer penalty, with its exact gradient."""
    logits, preacts, layer_inputs = _forward(params, act, batch.inputs)
    losses, probs = _softmax_stats(logits, batch.labels)
    reg_value, reg_grads = regularizer_penalty(params, reg)
    loss = float(np.mean(losses)) + reg_value
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite loss {loss}", layer_id=_first_nonfinite_layer(params, preacts, logits)
        )
    B = batch.size
    dlogits = probs.copy()
    dlogits[np.arange(B), batch.labels] -= 1.0
    dlogits /= B
    grads = _backward(params, act, preacts, layer_inputs, dlogits)
    for g, r in zip(grads.arrays(), reg_grads.arrays()):
        g += r
    return LossGrad(loss, grads, logits)


def per_sample_grads(
    params: ParamSet, act: Activation, batch: Batch, reg: Regularizer
) -> list[ParamSet]:
    """Gradient of each sample's own loss, in sample order.

    The full regularizer gradient is added to every per-sample gradient (the
    penalty is deterministic, so splitting it would corrupt spread-based
    noise estimates).  The mean over the list equals the batch gradient up to
    floating accumulation order.  Memory is O(B * n_params).
    """
    logits, preacts, layer_inputs = _forward(params, act, batch.inputs)
    losses, probs = _softmax_stats(logits, batch.labels)
    reg_value, reg_grads = regularizer_penalty(params, reg)
    if not np.isfinite(float(np.mean(losses)) + reg_value):
        raise NumericError(
            "non-finite loss", layer_id=_first_nonfinite_layer(params, preacts, logits)
        )
    B = batch.size
    d = probs.copy()
    d[np.arange(B), batch.labels] -= 1.0  # per-sample dlogits, no 1/B

    n_layers = len(params.layers)
    w_grads: list[np.ndarray] = [None] * n_layers  # (B, out, in) each
    b_grads: list[np.ndarray] = [None] * n_layers  # (B, out) each
    for i in range(n_layers - 1, -1, -1):
        w_grads[i] = np.einsum("bo,bi->boi", d, layer_inputs[i])
        b_grads[i] = d
        if i > 0:
            dx = d @ params.layers[i].weights
            d = _act_backward(act, preacts[i - 1], dx)

    out: list[ParamSet] = []
    for s in range(B):
        layers = []
        for i, lay in enumerate(params.layers):
            rg = reg_grads.layers[i]
            layers.append(
                Layer(lay.layer_id, w_grads[i][s] + rg.weights, b_grads[i][s] + rg.bias)
            )
        out.append(ParamSet(layers))
    return out
