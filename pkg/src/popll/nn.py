"""Dense feed-forward scoring models with analytic gradients and momentum SGD.

Models are stacks of affine layers with optional ReLU, followed by a softmax
link. Everything is plain numpy; the loss zoo supplies gradients w.r.t. the
logits and this module backpropagates them into the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

ACTIVATIONS = ("relu", "none")
LOG_CLAMP = np.log(1e-12)

# A loss functional maps (logits, probs) of a batch to per-example losses and
# the gradient of the *mean* loss w.r.t. the logits.
LossFunctional = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


class NumericError(FloatingPointError):
    """A loss or gradient went non-finite during training."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Row-wise argmax; np.argmax already returns the first maximal index."""
    return np.argmax(scores, axis=1)


@dataclass
class Layer:
    weight: np.ndarray  # [fan_out, fan_in]
    bias: np.ndarray  # [fan_out]
    activation: str = "none"


class ScoringModel:
    """Linear or MLP classifier producing points on the probability simplex.

    The layer sizes and activations are fixed at construction; only the
    parameter arrays are updated (in place) by the optimizer.
    """

    def __init__(self, layers: Sequence[Layer]):
        if not layers:
            raise ValueError("a model needs at least one layer")
        for k, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"layer {k}: unknown activation {layer.activation!r}")
            if layer.weight.ndim != 2 or layer.bias.shape != (layer.weight.shape[0],):
                raise ValueError(f"layer {k}: weight/bias shapes disagree")
            if k and layer.weight.shape[1] != layers[k - 1].weight.shape[0]:
                raise ValueError(f"layer {k}: fan-in does not match previous fan-out")
        if layers[-1].activation != "none":
            raise ValueError("the output layer must be affine (activation 'none')")
        self._layers = tuple(layers)

    @classmethod
    def build(
        cls,
        n_features: int,
        n_classes: int,
        hidden: Sequence[int] = (),
        rng: Optional[np.random.Generator] = None,
    ) -> "ScoringModel":
        """Glorot-uniform initialised model; ``hidden=()`` gives a linear model."""
        rng = np.random.default_rng(0) if rng is None else rng
        sizes = [n_features, *hidden, n_classes]
        layers = []
        for k in range(len(sizes) - 1):
            fan_in, fan_out = sizes[k], sizes[k + 1]
            s = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-s, s, size=(fan_out, fan_in))
            act = "relu" if k < len(sizes) - 2 else "none"
            layers.append(Layer(w, np.zeros(fan_out), act))
        return cls(layers)

    @property
    def layers(self) -> Tuple[Layer, ...]:
        return self._layers

    @property
    def n_features(self) -> int:
        return self._layers[0].weight.shape[1]

    @property
    def n_classes(self) -> int:
        return self._layers[-1].weight.shape[0]

    @property
    def params(self) -> List[np.ndarray]:
        out = []
        for layer in self._layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "ScoringModel":
        return ScoringModel(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self._layers]
        )

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"input shape {X.shape} incompatible with model fan-in {self.n_features}"
            )
        return X

    def _forward_cached(self, X):
        acts = [X]
        pre = []
        h = X
        for layer in self._layers:
            z = h @ layer.weight.T + layer.bias
            pre.append(z)
            h = np.maximum(z, 0.0) if layer.activation == "relu" else z
            acts.append(h)
        return pre, acts

    def logits(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        return self._forward_cached(X)[1][-1]

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Class-probability rows for each input row."""
        return softmax(self.logits(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return argmax_lowest(self.logits(X))

    def loss_and_grad(
        self, X: np.ndarray, loss: LossFunctional
    ) -> Tuple[float, List[np.ndarray]]:
        """Mean loss over the batch and its gradient for every parameter array.

        Raises NumericError naming the first example whose loss, or whose
        logit gradient, is not finite.
        """
        X = self._check(X)
        pre, acts = self._forward_cached(X)
        logits = acts[-1]
        per_example, dlogits = loss(logits, softmax(logits))
        per_example = np.asarray(per_example, dtype=np.float64)
        bad = ~np.isfinite(per_example) | ~np.isfinite(dlogits).all(axis=1)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NumericError(f"non-finite loss or gradient at example {i}", index=i)

        grads: List[np.ndarray] = [None] * (2 * len(self._layers))
        delta = dlogits
        for k in range(len(self._layers) - 1, -1, -1):
            layer = self._layers[k]
            if layer.activation == "relu":
                delta = delta * (pre[k] > 0)
            grads[2 * k] = delta.T @ acts[k]
            grads[2 * k + 1] = delta.sum(axis=0)
            if k:
                delta = delta @ layer.weight
        return float(per_example.mean()), grads


@dataclass
class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    velocity: Optional[List[np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("learning rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if not self.weight_decay >= 0:
            raise ValueError("weight decay must be non-negative")

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ValueError("parameter and gradient lists differ in length")
        if self.momentum > 0 and self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        for k, (p, g) in enumerate(zip(params, grads)):
            if p.shape != g.shape:
                raise ValueError(f"gradient {k} has shape {g.shape}, expected {p.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p
            if self.momentum > 0:
                v = self.velocity[k]
                v *= self.momentum
                v += g
                g = v
            p -= self.lr * g


def sgd_step(params, grads, opt: SGD):
    """Functional wrapper around :meth:`SGD.step` returning the same list."""
    opt.step(params, grads)
    return params


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def cross_entropy(labels: np.ndarray) -> LossFunctional:
    """Plain supervised cross-entropy to integer labels."""

    def fn(logits, probs):
        rows = np.arange(len(labels))
        per = -np.maximum(log_softmax(logits), LOG_CLAMP)[rows, labels]
        onehot = np.zeros_like(probs)
        onehot[rows, labels] = 1.0
        return per, (probs - onehot) / len(labels)

    return fn


def train_supervised(
    model: ScoringModel,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    opt: SGD,
    rng: np.random.Generator,
    batch_size: int = 256,
) -> List[float]:
    """Cross-entropy training; returns the per-epoch mean batch loss."""
    trace = []
    for _ in range(epochs):
        losses = []
        for idx in minibatches(len(X), batch_size, rng):
            value, grads = model.loss_and_grad(X[idx], cross_entropy(y[idx]))
            opt.step(model.params, grads)
            losses.append(value)
        trace.append(float(np.mean(losses)))
    return trace
