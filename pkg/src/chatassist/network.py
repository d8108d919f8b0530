"""From-scratch feedforward classifiers with randomly drawn architectures.

These are the ensemble members: plain numpy ReLU networks with a softmax
head, trained by mini-batch gradient descent on cross-entropy.  Everything is
deterministic given the seeds, and models serialize to JSON bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimMismatchError,
    DivergenceDetectedError,
    EmptyDatasetError,
    InvalidDimsError,
)

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    """Bounds for architecture sampling: depth and per-layer width ranges."""

    max_depth: int = 4
    min_width: int = 16
    max_width: int = 128

    def __post_init__(self) -> None:
        if self.max_depth < 1 or self.min_width < 1 or self.max_width < self.min_width:
            raise ValueError(f"invalid architecture bounds {self}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32

    def __post_init__(self) -> None:
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size <= 0:
            raise ValueError(f"invalid training hyperparameters {self}")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    output_dim: int
    hidden_layers: tuple[int, ...]
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.input_dim <= 0 or self.output_dim <= 0:
            raise InvalidDimsError(
                f"dims must be positive, got {self.input_dim}x{self.output_dim}"
            )
        if not self.hidden_layers or any(w <= 0 for w in self.hidden_layers):
            raise ValueError("hidden_layers must be non-empty positive widths")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")


@dataclass
class Network:
    """A feedforward net: ReLU hidden layers, softmax output."""

    spec: NetworkSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "Network":
        return Network(
            spec=self.spec,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    @property
    def layer_dims(self) -> list[int]:
        return [self.spec.input_dim, *self.spec.hidden_layers, self.spec.output_dim]


@dataclass(frozen=True)
class LabeledDataset:
    """Encoded feature rows with integer class targets over ``n_classes``."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        if self.X.ndim != 2 or self.y.ndim != 1 or len(self.X) != len(self.y):
            raise ValueError("X must be (rows, dim) and y (rows,)")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise ValueError("class indices outside [0, n_classes)")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        return LabeledDataset(X=self.X[indices], y=self.y[indices],
                              n_classes=self.n_classes)


def generate_random_network(rng_seed: int, input_dim: int, output_dim: int,
                            arch: ArchConfig | None = None) -> Network:
    """Draw depth and widths uniformly within the configured bounds.

    The same seed always yields byte-identical parameters.
    """
    arch = arch or ArchConfig()
    if input_dim <= 0 or output_dim <= 0:
        raise InvalidDimsError(f"dims must be positive, got {input_dim}x{output_dim}")
    rng = np.random.default_rng(rng_seed)
    depth = int(rng.integers(1, arch.max_depth + 1))
    widths = tuple(int(rng.integers(arch.min_width, arch.max_width + 1))
                   for _ in range(depth))
    spec = NetworkSpec(input_dim=input_dim, output_dim=output_dim,
                       hidden_layers=widths, seed=rng_seed)
    return _initialize(spec, rng)


def _initialize(spec: NetworkSpec, rng: np.random.Generator) -> Network:
    dims = [spec.input_dim, *spec.hidden_layers, spec.output_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(spec=spec, weights=weights, biases=biases)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(net: Network, X: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Returns pre-activations per hidden layer and the output probabilities."""
    pre: list[np.ndarray] = []
    a = X
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = a @ W + b
        pre.append(z)
        a = np.maximum(z, 0.0)
    logits = a @ net.weights[-1] + net.biases[-1]
    return pre, _softmax(logits)


def predict_proba(net: Network, X: np.ndarray) -> np.ndarray:
    """Class probabilities for one row ``(dim,)`` or a batch ``(rows, dim)``."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != net.spec.input_dim:
        raise DimMismatchError(
            f"input has {X.shape[1]} features, network expects {net.spec.input_dim}"
        )
    _, probs = _forward(net, X)
    return probs[0] if single else probs


def predicted_class(net: Network, x: np.ndarray) -> int:
    """Argmax class; ties resolve to the lowest class index."""
    return int(np.argmax(predict_proba(net, x)))


def cross_entropy(net: Network, data: LabeledDataset) -> float:
    _, probs = _forward(net, data.X)
    picked = probs[np.arange(len(data)), data.y]
    return float(-np.mean(np.log(np.clip(picked, 1e-12, None))))


def loss_and_gradients(
    net: Network, X: np.ndarray, y: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy over the batch plus gradients for every parameter."""
    rows = len(X)
    pre, probs = _forward(net, X)
    picked = probs[np.arange(rows), y]
    loss = float(-np.mean(np.log(np.clip(picked, 1e-12, None))))

    activations = [X] + [np.maximum(z, 0.0) for z in pre]
    delta = probs.copy()
    delta[np.arange(rows), y] -= 1.0
    delta /= rows

    grad_w: list[np.ndarray] = [np.empty(0)] * len(net.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(net.biases)
    for layer in range(len(net.weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ net.weights[layer].T) * (pre[layer - 1] > 0)
    return loss, grad_w, grad_b


def train(net: Network, data: LabeledDataset,
          hyper: TrainConfig | None = None) -> Network:
    """Mini-batch gradient descent on cross-entropy.

    Batch order reshuffles each epoch from the network's own seed, so training
    is deterministic given the seed and the row order of ``data``.  The
    returned parameters are the epoch snapshot with the lowest full-train-set
    loss (epoch zero included), so the result never scores worse than the
    input.  The input network is left untouched.
    """
    hyper = hyper or TrainConfig()
    if len(data) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    if data.X.shape[1] != net.spec.input_dim or data.n_classes != net.spec.output_dim:
        raise DimMismatchError(
            f"dataset is {data.X.shape[1]}d/{data.n_classes} classes, network is "
            f"{net.spec.input_dim}d/{net.spec.output_dim} classes"
        )

    current = net.copy()
    best = current.copy()
    best_loss = cross_entropy(current, data)
    rng = np.random.default_rng(net.spec.seed)
    for _ in range(hyper.epochs):
        order = rng.permutation(len(data))
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            loss, grad_w, grad_b = loss_and_gradients(current, data.X[batch],
                                                      data.y[batch])
            if not np.isfinite(loss):
                raise DivergenceDetectedError(f"non-finite loss {loss}")
            for layer in range(len(current.weights)):
                current.weights[layer] -= hyper.learning_rate * grad_w[layer]
                current.biases[layer] -= hyper.learning_rate * grad_b[layer]
        epoch_loss = cross_entropy(current, data)
        if not np.isfinite(epoch_loss):
            raise DivergenceDetectedError(f"non-finite loss {epoch_loss}")
        if epoch_loss < best_loss:
            best_loss = epoch_loss
            best = current.copy()
    return best


def top_k_accuracy(net: Network, data: LabeledDataset, k: int = 1) -> float:
    """Fraction of rows whose true class ranks within the ``k`` most probable.

    Probability ties rank lower class indices first.
    """
    if len(data) == 0:
        raise EmptyDatasetError("cannot score an empty dataset")
    if k <= 0:
        raise ValueError("k must be positive")
    probs = predict_proba(net, data.X)
    # stable sort on -prob keeps lower class indices ahead on ties
    ranked = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    hits = (ranked == data.y[:, None]).any(axis=1)
    return float(hits.mean())


# --- serialization ---------------------------------------------------------


def network_to_dict(net: Network) -> dict:
    return {
        "version": MODEL_FORMAT_VERSION,
        "spec": {
            "input_dim": net.spec.input_dim,
            "output_dim": net.spec.output_dim,
            "hidden_layers": list(net.spec.hidden_layers),
            "activation": net.spec.activation,
            "seed": net.spec.seed,
        },
        "layer_dims": net.layer_dims,
        "weights": [w.reshape(-1).tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def network_from_dict(payload: Mapping) -> Network:
    if payload.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model version {payload.get('version')!r}")
    raw = payload["spec"]
    spec = NetworkSpec(
        input_dim=raw["input_dim"],
        output_dim=raw["output_dim"],
        hidden_layers=tuple(raw["hidden_layers"]),
        activation=raw["activation"],
        seed=raw["seed"],
    )
    dims = [spec.input_dim, *spec.hidden_layers, spec.output_dim]
    weights = [
        np.asarray(flat, dtype=np.float64).reshape(fan_in, fan_out)
        for flat, fan_in, fan_out in zip(payload["weights"], dims[:-1], dims[1:])
    ]
    biases = [np.asarray(b, dtype=np.float64) for b in payload["biases"]]
    return Network(spec=spec, weights=weights, biases=biases)
