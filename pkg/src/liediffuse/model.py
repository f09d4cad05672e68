"""Feed-forward score approximator with hand-rolled reverse-mode gradients.

Float64 end to end so gradients can be validated against central finite
differences.  The network maps (state, sinusoidal time embedding) to one
coefficient per group generator; the same architecture serves the score
and flow-matching objectives.  The output head is zero-initialized.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParams

def _sigmoid(z):
    # overflow-free: exp of a non-positive argument only
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _silu_prime(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


ACTIVATIONS = {
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
    "silu": (lambda z: z * _sigmoid(z), _silu_prime),
}


class ScoreNetwork:
    """MLP s_theta(x, t) -> R^{dim_g} with a sinusoidal time embedding."""

    def __init__(
        self,
        dim_x: int,
        dim_g: int,
        hidden=(128, 128, 128),
        time_dim: int = 32,
        activation: str = "silu",
        seed: int = 0,
    ):
        if activation not in ACTIVATIONS:
            raise InvalidParams(f"unknown activation {activation!r}")
        if time_dim % 2 != 0:
            raise InvalidParams("time_dim must be even")
        self.dim_x = dim_x
        self.dim_g = dim_g
        self.time_dim = time_dim
        self.activation = activation
        self.layer_sizes = [dim_x + time_dim] + list(hidden) + [dim_g]
        half = time_dim // 2
        self.freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in))
            self.biases.append(np.zeros(fan_out))
        self.weights[-1][:] = 0.0  # zero head: initial scores vanish

    # -- forward / backward --------------------------------------------------

    def embed_time(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ang = t[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)

    def forward(self, x: np.ndarray, t, cache: bool = False):
        """Evaluate the network on a batch; optionally keep the tape."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.atleast_1d(np.asarray(t, dtype=float)), (x.shape[0],))
        act, _ = ACTIVATIONS[self.activation]
        h = np.concatenate([x, self.embed_time(t)], axis=1)
        pre, post = [], [h]
        n_layers = len(self.weights)
        for layer in range(n_layers):
            z = post[-1] @ self.weights[layer] + self.biases[layer]
            pre.append(z)
            post.append(act(z) if layer < n_layers - 1 else z)
        out = post[-1]
        if cache:
            return out, (pre, post)
        return out

    def backward(self, tape, dout: np.ndarray):
        """Gradients of sum(dout * output) w.r.t. every parameter."""
        pre, post = tape
        _, dact = ACTIVATIONS[self.activation]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = np.asarray(dout, dtype=float)
        for layer in range(len(self.weights) - 1, -1, -1):
            grads_w[layer] = post[layer].T @ delta
            grads_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer].T) * dact(pre[layer - 1])
        return grads_w, grads_b

    # -- parameter plumbing ---------------------------------------------------

    def get_params(self) -> np.ndarray:
        return np.concatenate(
            [w.ravel() for w in self.weights] + [b.ravel() for b in self.biases]
        )

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        expected = sum(w.size for w in self.weights) + sum(b.size for b in self.biases)
        if flat.size != expected:
            raise InvalidParams(
                f"parameter vector has {flat.size} entries, expected {expected}"
            )
        pos = 0
        for w in self.weights:
            w[:] = flat[pos : pos + w.size].reshape(w.shape)
            pos += w.size
        for b in self.biases:
            b[:] = flat[pos : pos + b.size].reshape(b.shape)
            pos += b.size

    def flatten_grads(self, grads_w, grads_b) -> np.ndarray:
        return np.concatenate(
            [g.ravel() for g in grads_w] + [g.ravel() for g in grads_b]
        )


def net_forward(net: ScoreNetwork, x: np.ndarray, t_index) -> np.ndarray:
    """Generalized scores for a batch of states at timestep t."""
    return net.forward(x, t_index)


@dataclass
class Adam:
    """Adam optimizer over a flat parameter vector."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    step_count: int = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1 - self.beta2) * grads**2
        mhat = self.m / (1 - self.beta1**self.step_count)
        vhat = self.v / (1 - self.beta2**self.step_count)
        return params - self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainConfig:
    batch_size: int = 256
    steps: int = 20000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    loss_kind: str = "score_matching"
    log_every: int = 100
    ema_decay: float = 0.999  # final weights are the parameter EMA
    grad_clip: float = 100.0  # global-norm clip; 0 disables

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidParams("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidParams("learning_rate must be positive")
        if self.loss_kind not in ("score_matching", "flow_matching"):
            raise InvalidParams(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class TrainReport:
    loss_curve: list = field(default_factory=list)  # (step, loss) pairs
    final_loss: float = float("nan")
    wall_time: float = 0.0
    seed: int = 0
