"""Small fully connected networks with hand-rolled reverse-mode gradients.

Weights are float32; every forward/backward runs in float64 after an exact
upcast so gradient checks are not polluted by accumulation precision.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MLPConfig:
    hidden_layers: int
    hidden_width: int
    out_dim: int

    def __post_init__(self):
        if self.hidden_layers < 0:
            raise ValueError("hidden_layers must be >= 0")
        if self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")
        if self.out_dim < 1:
            raise ValueError("out_dim must be >= 1")


class MLP:
    """ReLU hidden layers, linear output. Layout: weights[i] is (out, in)."""

    def __init__(self, in_dim: int, config: MLPConfig, rng: np.random.Generator):
        self.in_dim = in_dim
        self.config = config
        dims = [in_dim] + [config.hidden_width] * config.hidden_layers + [config.out_dim]
        self.weights = []
        self.biases = []
        for i in range(len(dims) - 1):
            fan_in = dims[i]
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(dims[i + 1], dims[i]))
            self.weights.append(w.astype(np.float32))
            self.biases.append(np.zeros(dims[i + 1], dtype=np.float32))

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def forward(self, x: np.ndarray):
        """x: (n, in_dim) -> (out (n, out_dim), ctx for backward)."""
        acts = [np.asarray(x, dtype=np.float64)]
        h = acts[0]
        n_layers = len(self.weights)
        for i in range(n_layers):
            z = h @ self.weights[i].astype(np.float64).T + self.biases[i].astype(np.float64)
            if i < n_layers - 1:
                h = np.maximum(z, 0.0)
                acts.append(h)
            else:
                h = z
        return h, acts

    def backward(self, ctx, grad_out: np.ndarray):
        """Returns (grad_weights, grad_biases, grad_x), all float64."""
        acts = ctx
        n_layers = len(self.weights)
        grad_w = [None] * n_layers
        grad_b = [None] * n_layers
        g = np.asarray(grad_out, dtype=np.float64)
        for i in range(n_layers - 1, -1, -1):
            grad_w[i] = g.T @ acts[i]
            grad_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].astype(np.float64)
            if i > 0:
                g = g * (acts[i] > 0.0)
        return grad_w, grad_b, g
