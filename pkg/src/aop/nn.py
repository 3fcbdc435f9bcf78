"""Small float64 MLPs with hand-rolled backprop, Adam, and flat-array checkpoints.

Everything here is deliberately framework-free: the networks used by the value
ensemble and the policy priors are tiny, and exact float64 arithmetic makes the
finite-difference oracles in the test suite unambiguous.

Concurrency contract: inference (`forward`) is pure and safe to call from many
threads on a frozen network; anything that mutates parameters (`adam_step`,
the training helpers) requires exclusive access.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DimensionError",
    "Mlp",
    "AdamState",
    "adam_step",
    "regression_step",
]


class DimensionError(ValueError):
    """An input, target, or gradient does not match the network's shape."""

    def __init__(self, what: str, expected, actual):
        self.what = what
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what} size mismatch: expected {expected}, got {actual}")


class Mlp:
    """Fully connected net: tanh on hidden layers, identity on the output layer.

    ``weights[i]`` has shape ``(n_i, n_{i+1})`` and ``biases[i]`` shape
    ``(n_{i+1},)``. Weights are drawn uniformly from
    ``[-1/sqrt(fan_in), +1/sqrt(fan_in)]`` and biases start at zero; passing
    ``rng=None`` gives an all-zero network (useful for constant heads and
    tests). All parameters are float64.
    """

    def __init__(self, layer_sizes, rng: np.random.Generator | None):
        sizes = [int(n) for n in layer_sizes]
        if len(sizes) < 2 or any(n <= 0 for n in sizes):
            raise ValueError(f"layer_sizes must be >=2 positive ints, got {layer_sizes}")
        self.layer_sizes = sizes
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))

    # ---------------------------------------------------------------- shape

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def param_count(self) -> int:
        return sum((a + 1) * b for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def param_arrays(self) -> list[np.ndarray]:
        """Live parameter arrays in the canonical [W0, b0, W1, b1, ...] order."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    # ------------------------------------------------------------- forward

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            if x.shape[0] != self.in_dim:
                raise DimensionError("input", self.in_dim, x.shape[0])
        elif x.ndim == 2:
            if x.shape[1] != self.in_dim:
                raise DimensionError("input", self.in_dim, x.shape[1])
        else:
            raise DimensionError("input ndim", "1 or 2", x.ndim)
        return x

    def forward(self, x) -> np.ndarray:
        """Pure forward pass. Accepts one vector (d,) or a row-major batch (B, d)."""
        x = self._check_input(x)
        single = x.ndim == 1
        h = x[None, :] if single else x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        return h[0] if single else h

    def forward_with_cache(self, x):
        """Forward pass keeping per-layer inputs for `backward`.

        Returns ``(output (B, n_out), cache)``; the input is promoted to a
        batch internally, so the output is always 2-D.
        """
        x = self._check_input(x)
        h = x[None, :] if x.ndim == 1 else x
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            cache.append(h)
        return h, cache

    # ------------------------------------------------------------ backward

    def backward_full(self, cache, upstream):
        """Backprop an upstream gradient dL/d(output) of shape (B, n_out).

        Returns ``(grads, input_grad)`` where grads parallels
        `param_arrays()` and input_grad has shape (B, n_in). The upstream
        gradient carries any batch-reduction factor (e.g. 1/B for mean loss).
        """
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.ndim == 1:
            upstream = upstream[None, :]
        batch = cache[0].shape[0]
        if upstream.shape != (batch, self.out_dim):
            raise DimensionError("upstream gradient", (batch, self.out_dim), upstream.shape)
        grads: list[np.ndarray | None] = [None] * (2 * len(self.weights))
        g = upstream
        for i in range(len(self.weights) - 1, -1, -1):
            a_in = cache[i]
            grads[2 * i] = a_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                # cache[i] is the tanh output of layer i-1, so tanh' = 1 - a^2
                g = g * (1.0 - a_in * a_in)
        return grads, g

    def backward(self, cache, upstream) -> list[np.ndarray]:
        """Parameter gradients only; see `backward_full`."""
        grads, _ = self.backward_full(cache, upstream)
        return grads

    # -------------------------------------------------------- serialization

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.param_arrays()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise DimensionError("flat parameters", self.param_count, flat.shape)
        off = 0
        for p in self.param_arrays():
            n = p.size
            p[...] = flat[off : off + n].reshape(p.shape)
            off += n

    def copy(self) -> "Mlp":
        clone = Mlp(self.layer_sizes, rng=None)
        clone.set_flat(self.get_flat())
        return clone

    def to_json(self) -> str:
        """Checkpoint format: layer-size header plus one flat parameter array."""
        return json.dumps(
            {"layer_sizes": self.layer_sizes, "params": self.get_flat().tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "Mlp":
        doc = json.loads(text)
        net = cls(doc["layer_sizes"], rng=None)
        net.set_flat(np.asarray(doc["params"], dtype=np.float64))
        return net

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass
class AdamState:
    """Adam moment accumulators, shape-congruent with one parameter list."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: list[np.ndarray], learning_rate: float = 1e-3) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> AdamState:
    """One in-place Adam update with bias-corrected moments.

    Raises on non-finite gradients (the caller treats that as training
    divergence) and on any shape mismatch.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("gradient list", len(params), len(grads))
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise DimensionError("gradient", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient passed to adam_step")
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


def regression_step(net: Mlp, state: AdamState, x: np.ndarray, y: np.ndarray) -> float:
    """One mean-squared-error gradient step of `net` toward targets `y`.

    Loss is the mean over all output elements. Returns the loss; raises if it
    is non-finite.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    pred, cache = net.forward_with_cache(x)
    if pred.shape != y.shape:
        raise DimensionError("regression target", pred.shape, y.shape)
    err = pred - y
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise ValueError(f"non-finite regression loss: {loss}")
    upstream = (2.0 / err.size) * err
    grads = net.backward(cache, upstream)
    adam_step(net.param_arrays(), grads, state)
    return loss
