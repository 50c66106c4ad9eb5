"""Dense feedforward networks with hand-rolled reverse-mode gradients.

Arrays are plain float64 numpy ndarrays (row-major, explicit shapes, no
broadcasting tricks) so finite-difference oracles compare exactly.  The
module provides the forward pass with an activation cache, backpropagation
for all weights/biases plus the input, a bias-corrected Adam optimizer, and
a versioned binary container for model files.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "tanh", "identity")

CONTAINER_MAGIC = "shapeuq-nn"
CONTAINER_VERSION = 1


class DimensionError(ValueError):
    """Shape mismatch between a model and its input or gradients."""


def as_f64(x) -> np.ndarray:
    a = np.ascontiguousarray(x, dtype=np.float64)
    return a


def _check_finite(a: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {what}")


@dataclass
class MlpModel:
    """Fully connected network: weights[l] has shape (dims[l+1], dims[l])."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        n = len(self.layer_dims) - 1
        if not (len(self.weights) == len(self.biases) == len(self.activations) == n):
            raise DimensionError("inconsistent layer counts")
        for l in range(n):
            out_d, in_d = self.layer_dims[l + 1], self.layer_dims[l]
            if self.weights[l].shape != (out_d, in_d):
                raise DimensionError(
                    f"layer {l}: weight shape {self.weights[l].shape} != ({out_d}, {in_d})")
            if self.biases[l].shape != (out_d,):
                raise DimensionError(f"layer {l}: bias shape {self.biases[l].shape}")
            if self.activations[l] not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activations[l]!r}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


def init_mlp(layer_dims, activations, seed: int) -> MlpModel:
    """Glorot-uniform initialization, bounds +-sqrt(6/(fan_in+fan_out))."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for l in range(len(layer_dims) - 1):
        fan_in, fan_out = layer_dims[l], layer_dims[l + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), weights, biases, list(activations))


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    # z = pre-activation, a = activation output (saves a tanh re-eval)
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


@dataclass
class ForwardCache:
    """Per-layer tensors retained for backward()."""

    inputs: list[np.ndarray]       # input to each layer, (N, dims[l])
    pre_acts: list[np.ndarray]     # z = x W^T + b
    outputs: list[np.ndarray]      # activation(z)
    squeezed: bool                 # original input was 1-D


def forward(model: MlpModel, x) -> tuple[np.ndarray, ForwardCache]:
    """Run the network; returns (output, cache for backward).

    Accepts a single vector (in_dim,) or a batch (N, in_dim); the output
    matches (out_dim,) or (N, out_dim) accordingly.
    """
    x = as_f64(x)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise DimensionError(f"input width {x.shape} incompatible with {model.in_dim}")

    inputs, pre_acts, outputs = [], [], []
    h = x
    for l in range(model.n_layers):
        inputs.append(h)
        z = h @ model.weights[l].T + model.biases[l]
        a = _apply_activation(model.activations[l], z)
        pre_acts.append(z)
        outputs.append(a)
        h = a
    _check_finite(h, "forward output")
    out = h[0] if squeezed else h
    return out, ForwardCache(inputs, pre_acts, outputs, squeezed)


def forward_infer(model: MlpModel, x) -> np.ndarray:
    """Forward pass without the activation cache (inference hot path).

    Identical arithmetic to forward(); use whenever gradients are not
    needed, e.g. batched SDF decoding over grids.
    """
    x = as_f64(x)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.in_dim:
        raise DimensionError(f"input width {x.shape} incompatible with {model.in_dim}")
    h = x
    for l in range(model.n_layers):
        z = h @ model.weights[l].T
        z += model.biases[l]
        name = model.activations[l]
        if name == "relu":
            np.maximum(z, 0.0, out=z)
        elif name == "tanh":
            np.tanh(z, out=z)
        h = z
    _check_finite(h, "forward output")
    return h[0] if squeezed else h


@dataclass
class Gradients:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_input: np.ndarray


def backward(model: MlpModel, cache: ForwardCache, output_grad) -> Gradients:
    """Reverse-mode gradients for every weight/bias and the input.

    ``output_grad`` must match the forward output shape; batch gradients
    are summed into the parameter gradients.
    """
    if len(cache.inputs) != model.n_layers:
        raise ValueError("activation cache does not match this model")
    g = as_f64(output_grad)
    if cache.squeezed:
        g = g[None, :]
    if g.shape != cache.outputs[-1].shape:
        raise DimensionError(
            f"output_grad shape {g.shape} != {cache.outputs[-1].shape}")

    d_weights = [None] * model.n_layers
    d_biases = [None] * model.n_layers
    for l in range(model.n_layers - 1, -1, -1):
        dz = g * _activation_grad(model.activations[l], cache.pre_acts[l],
                                  cache.outputs[l])
        d_weights[l] = dz.T @ cache.inputs[l]
        d_biases[l] = dz.sum(axis=0)
        g = dz @ model.weights[l]
    d_input = g[0] if cache.squeezed else g
    return Gradients(d_weights, d_biases, d_input)


@dataclass
class AdamState:
    """First/second moment buffers matching a model's parameter list."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m_weights: list[np.ndarray] = field(default_factory=list)
    v_weights: list[np.ndarray] = field(default_factory=list)
    m_biases: list[np.ndarray] = field(default_factory=list)
    v_biases: list[np.ndarray] = field(default_factory=list)


def adam_init(model: MlpModel, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
    state.m_weights = [np.zeros_like(w) for w in model.weights]
    state.v_weights = [np.zeros_like(w) for w in model.weights]
    state.m_biases = [np.zeros_like(b) for b in model.biases]
    state.v_biases = [np.zeros_like(b) for b in model.biases]
    return state


def _adam_update(p, g, m, v, state: AdamState, t: int) -> None:
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    p -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def adam_step(model: MlpModel, grads: Gradients, state: AdamState) -> None:
    """One in-place bias-corrected Adam update on all model parameters."""
    for l in range(model.n_layers):
        if grads.d_weights[l].shape != model.weights[l].shape:
            raise DimensionError(f"layer {l}: gradient shape mismatch")
    state.step_count += 1
    t = state.step_count
    for l in range(model.n_layers):
        _adam_update(model.weights[l], grads.d_weights[l],
                     state.m_weights[l], state.v_weights[l], state, t)
        _adam_update(model.biases[l], grads.d_biases[l],
                     state.m_biases[l], state.v_biases[l], state, t)


class VectorAdam:
    """Adam for a single free vector (latent codes during auto-decoding)."""

    def __init__(self, size: int, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = np.zeros(size)
        self.v = np.zeros(size)

    def step(self, param: np.ndarray, grad: np.ndarray) -> None:
        self.step_count += 1
        t = self.step_count
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** t)
        v_hat = self.v / (1.0 - self.beta2 ** t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


# ---------------------------------------------------------------------------
# Model container format
#
# Text header (utf-8, one field per line), then raw little-endian float64
# payload: weights and biases in layer order, then any declared extra arrays.
#
#   shapeuq-nn 1
#   layer_dims 11 128 128 128 128 1
#   activations relu relu relu relu tanh
#   seed 42
#   meta <key> <value>          (zero or more)
#   array <name> <d0> <d1> ...  (zero or more)
#   end_header
#   <payload bytes>
# ---------------------------------------------------------------------------


@dataclass
class ModelContainer:
    model: MlpModel
    seed: int
    meta: dict[str, str] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def save_model(path, model: MlpModel, seed: int, meta: dict | None = None,
               arrays: dict[str, np.ndarray] | None = None) -> None:
    meta = meta or {}
    arrays = arrays or {}
    header = io.StringIO()
    header.write(f"{CONTAINER_MAGIC} {CONTAINER_VERSION}\n")
    header.write("layer_dims " + " ".join(str(d) for d in model.layer_dims) + "\n")
    header.write("activations " + " ".join(model.activations) + "\n")
    header.write(f"seed {seed}\n")
    for k in sorted(meta):
        header.write(f"meta {k} {meta[k]}\n")
    for name in sorted(arrays):
        dims = " ".join(str(d) for d in arrays[name].shape)
        header.write(f"array {name} {dims}\n")
    header.write("end_header\n")
    with open(path, "wb") as f:
        f.write(header.getvalue().encode("utf-8"))
        for w, b in zip(model.weights, model.biases):
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
        for name in sorted(arrays):
            f.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())


def load_model(path) -> ModelContainer:
    with open(path, "rb") as f:
        blob = f.read()
    end = blob.find(b"end_header\n")
    if end < 0:
        raise ValueError(f"{path}: missing container header terminator")
    lines = blob[:end].decode("utf-8").splitlines()
    payload = blob[end + len(b"end_header\n"):]

    magic, version = lines[0].split()
    if magic != CONTAINER_MAGIC:
        raise ValueError(f"{path}: not a model container (magic {magic!r})")
    if int(version) != CONTAINER_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")

    layer_dims: list[int] = []
    activations: list[str] = []
    seed = -1
    meta: dict[str, str] = {}
    array_decls: list[tuple[str, tuple[int, ...]]] = []
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "layer_dims":
            layer_dims = [int(v) for v in rest.split()]
        elif key == "activations":
            activations = rest.split()
        elif key == "seed":
            seed = int(rest)
        elif key == "meta":
            mk, _, mv = rest.partition(" ")
            meta[mk] = mv
        elif key == "array":
            parts = rest.split()
            array_decls.append((parts[0], tuple(int(v) for v in parts[1:])))
        else:
            raise ValueError(f"{path}: unknown header field {key!r}")

    offset = 0

    def take(shape):
        nonlocal offset
        n = int(np.prod(shape)) if shape else 1
        if offset + n * 8 > len(payload):
            raise ValueError(f"{path}: payload truncated")
        a = np.frombuffer(payload, dtype="<f8", count=n, offset=offset)
        offset += n * 8
        return a.reshape(shape).astype(np.float64)

    weights, biases = [], []
    for l in range(len(layer_dims) - 1):
        weights.append(take((layer_dims[l + 1], layer_dims[l])))
        biases.append(take((layer_dims[l + 1],)))
    arrays = {name: take(shape) for name, shape in array_decls}
    if offset != len(payload):
        raise ValueError(f"{path}: payload size mismatch "
                         f"({len(payload)} bytes, consumed {offset})")
    model = MlpModel(layer_dims, weights, biases, activations)
    return ModelContainer(model=model, seed=seed, meta=meta, arrays=arrays)
