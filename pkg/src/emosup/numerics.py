"""Dense linear algebra primitives: cosine similarity, small MLPs with
analytic gradients, SGD updates, and the PSD square-root trace term used
by Frechet-style distances.

Everything here is a pure function of its inputs and operates on float64
numpy arrays. Vectors are 1-D arrays, matrices 2-D row-major arrays.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateVectorWarning, NumericalError

EPS_NORM = 1e-12

RELU = "relu"
IDENTITY = "identity"
_ACTIVATIONS = (RELU, IDENTITY)


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    """Validate and return ``x`` as a finite float64 1-D array."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ContractError(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ContractError(f"{name} contains non-finite entries")
    if dim is not None and v.shape[0] != dim:
        raise ContractError(f"{name} has dim {v.shape[0]}, expected {dim}")
    return v


def as_matrix(x, shape: tuple[int, int] | None = None, name: str = "matrix") -> np.ndarray:
    """Validate and return ``x`` as a finite float64 2-D array."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2 or m.size == 0:
        raise ContractError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ContractError(f"{name} contains non-finite entries")
    if shape is not None and m.shape != shape:
        raise ContractError(f"{name} has shape {m.shape}, expected {shape}")
    return m


def cosine_with_flag(a, b) -> tuple[float, bool]:
    """Cosine similarity with a degeneracy flag.

    Returns ``(sim, degenerate)``. If either vector has norm below
    ``EPS_NORM`` the similarity is 0 and the flag is set; this keeps
    training loops total instead of emitting NaN.
    """
    a = as_vector(a, name="a")
    b = as_vector(b, dim=a.shape[0], name="b")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < EPS_NORM or nb < EPS_NORM:
        return 0.0, True
    return float(np.dot(a, b) / (na * nb)), False


def cosine_similarity(a, b) -> float:
    """Cosine similarity in [-1, 1]; degenerate inputs yield 0 plus a warning."""
    sim, degenerate = cosine_with_flag(a, b)
    if degenerate:
        warnings.warn("zero-norm vector in cosine similarity, returning 0",
                      DegenerateVectorWarning, stacklevel=2)
    return sim


def cosine_grads(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of cosine(a, b) w.r.t. a and b (zeros for degenerate inputs)."""
    a = as_vector(a, name="a")
    b = as_vector(b, dim=a.shape[0], name="b")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < EPS_NORM or nb < EPS_NORM:
        return np.zeros_like(a), np.zeros_like(b)
    cos = float(np.dot(a, b) / (na * nb))
    da = b / (na * nb) - cos * a / (na * na)
    db = a / (na * nb) - cos * b / (nb * nb)
    return da, db


@dataclass
class DenseLayer:
    """One affine layer: ``act(weights @ x + bias)``, weights shaped out x in."""

    weights: np.ndarray
    bias: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        self.weights = as_matrix(self.weights, name="weights")
        self.bias = as_vector(self.bias, name="bias")
        if self.bias.shape[0] != self.weights.shape[0]:
            raise ContractError(
                f"bias dim {self.bias.shape[0]} != weight rows {self.weights.shape[0]}")
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass
class MlpParams:
    """Chain of dense layers; the final layer must have identity activation."""

    layers: list[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ContractError("MLP needs at least one layer")
        for i in range(len(self.layers) - 1):
            if self.layers[i].out_dim != self.layers[i + 1].in_dim:
                raise ContractError(
                    f"layer {i} outputs {self.layers[i].out_dim} but layer {i + 1} "
                    f"expects {self.layers[i + 1].in_dim}")
        if self.layers[-1].activation != IDENTITY:
            raise ContractError("last layer activation must be identity")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def copy(self) -> "MlpParams":
        return MlpParams([DenseLayer(l.weights.copy(), l.bias.copy(), l.activation)
                          for l in self.layers])

    def set_writeable(self, flag: bool) -> None:
        for l in self.layers:
            l.weights.flags.writeable = flag
            l.bias.flags.writeable = flag

    def n_params(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)


def init_mlp(dims: list[int], rng: np.random.Generator,
             hidden_activation: str = RELU) -> MlpParams:
    """He-style fan-in uniform init for the layer chain ``dims[0] -> ... -> dims[-1]``.

    Hidden layers use ``hidden_activation``; the output layer is linear.
    """
    if len(dims) < 2:
        raise ContractError("need at least input and output dims")
    layers = []
    for i in range(len(dims) - 1):
        fan_in = dims[i]
        limit = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(dims[i + 1], dims[i]))
        b = np.zeros(dims[i + 1])
        act = hidden_activation if i < len(dims) - 2 else IDENTITY
        layers.append(DenseLayer(w, b, act))
    return MlpParams(layers)


def identity_mlp(dim: int, depth: int = 1, activation: str = IDENTITY) -> MlpParams:
    """Square identity-weight MLP (passthrough for identity activation, or for
    nonnegative inputs under relu hidden layers)."""
    layers = []
    for i in range(depth):
        act = activation if i < depth - 1 else IDENTITY
        layers.append(DenseLayer(np.eye(dim), np.zeros(dim), act))
    return MlpParams(layers)


@dataclass
class MlpCache:
    """Forward-pass intermediates needed by the backward pass."""

    params: MlpParams
    inputs: list[np.ndarray]          # input to each layer
    preactivations: list[np.ndarray]  # z = W x + b per layer


@dataclass
class MlpGrads:
    """Per-layer (dW, db) plus the gradient w.r.t. the network input."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]
    input_grad: np.ndarray

    def scale(self, factor: float) -> "MlpGrads":
        return MlpGrads([w * factor for w in self.weight_grads],
                        [b * factor for b in self.bias_grads],
                        self.input_grad * factor)

    def add_(self, other: "MlpGrads") -> None:
        for mine, theirs in zip(self.weight_grads, other.weight_grads):
            mine += theirs
        for mine, theirs in zip(self.bias_grads, other.bias_grads):
            mine += theirs
        self.input_grad += other.input_grad


def grads_zeros_like(p: MlpParams) -> MlpGrads:
    return MlpGrads([np.zeros_like(l.weights) for l in p.layers],
                    [np.zeros_like(l.bias) for l in p.layers],
                    np.zeros(p.in_dim))


def _apply_activation(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(z, 0.0)
    return z


def mlp_forward(p: MlpParams, x) -> tuple[np.ndarray, MlpCache]:
    """Forward pass returning the output and a cache for ``mlp_backward``."""
    h = as_vector(x, dim=p.in_dim, name="mlp input")
    inputs, preacts = [], []
    for layer in p.layers:
        inputs.append(h)
        z = layer.weights @ h + layer.bias
        preacts.append(z)
        h = _apply_activation(z, layer.activation)
    return h, MlpCache(p, inputs, preacts)


def mlp_backward(p: MlpParams, cache: MlpCache, upstream_grad) -> MlpGrads:
    """Analytic gradients of ``dot(output, upstream_grad)`` w.r.t. all
    weights, biases, and the input.

    The cache must come from a forward call on the same parameter object.
    """
    if cache.params is not p:
        raise ContractError("stale cache: produced by a different parameter set")
    u = as_vector(upstream_grad, dim=p.out_dim, name="upstream grad")
    weight_grads: list[np.ndarray] = [None] * len(p.layers)
    bias_grads: list[np.ndarray] = [None] * len(p.layers)
    for i in range(len(p.layers) - 1, -1, -1):
        layer = p.layers[i]
        dz = u if layer.activation == IDENTITY else u * (cache.preactivations[i] > 0.0)
        weight_grads[i] = np.outer(dz, cache.inputs[i])
        bias_grads[i] = dz.copy()
        u = layer.weights.T @ dz
    return MlpGrads(weight_grads, bias_grads, u)


def sgd_step(p: MlpParams, grads: MlpGrads, lr: float) -> MlpParams:
    """Plain SGD update ``param <- param - lr * grad`` on a fresh copy.

    lr may be 0, in which case the parameters come back unchanged.
    """
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    for g in grads.weight_grads + grads.bias_grads:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient, aborting SGD step")
    layers = []
    for layer, dw, db in zip(p.layers, grads.weight_grads, grads.bias_grads):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ContractError("gradient shape does not match parameters")
        layers.append(DenseLayer(layer.weights - lr * dw, layer.bias - lr * db,
                                 layer.activation))
    return MlpParams(layers)


def _clamped_sqrt_eigvals(m: np.ndarray, context: str) -> np.ndarray:
    vals = np.linalg.eigvalsh(m)
    neg_mass = float(-vals[vals < 0].sum())
    trace = float(np.trace(m))
    if trace > 0 and neg_mass > 1e-6 * trace:
        warnings.warn(f"{context}: clamped negative eigenvalue mass {neg_mass:.3g} "
                      f"exceeds 1e-6 of trace {trace:.3g}", stacklevel=3)
    return np.sqrt(np.clip(vals, 0.0, None))


def psd_sqrt_trace(a, b) -> float:
    """``Tr((a^{1/2} b a^{1/2})^{1/2})`` for symmetric PSD a, b.

    Computed through symmetric eigendecompositions with negative eigenvalues
    clamped to zero; mathematically equal to ``Tr((a b)^{1/2})`` but avoids
    the non-symmetric matrix square root.
    """
    a = as_matrix(a, name="a")
    b = as_matrix(b, shape=a.shape, name="b")
    if a.shape[0] != a.shape[1]:
        raise ContractError(f"a must be square, got {a.shape}")
    for name, m in (("a", a), ("b", b)):
        if np.max(np.abs(m - m.T)) > 1e-8:
            raise ContractError(f"{name} is not symmetric within 1e-8")
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    sqrt_vals = np.sqrt(np.clip(vals, 0.0, None))
    a_half = (vecs * sqrt_vals) @ vecs.T
    inner = a_half @ ((b + b.T) / 2.0) @ a_half
    inner = (inner + inner.T) / 2.0
    return float(_clamped_sqrt_eigvals(inner, "psd_sqrt_trace").sum())
