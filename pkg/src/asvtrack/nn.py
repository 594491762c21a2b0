"""Small numpy neural-network toolkit for DDPG.

Fully connected nets with ReLU hidden layers and analytic backprop, an Adam
optimizer, a ring replay buffer and Ornstein-Uhlenbeck exploration noise.
Everything is float64 and every random draw comes from an injected
``numpy.random.Generator``.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("identity", "tanh", "relu")


class Mlp:
    """Multilayer perceptron operating on row batches ``(batch, features)``.

    Weights are stored ``(fan_in, fan_out)`` so a layer is ``x @ W + b``.
    Hidden layers use ReLU; the output activation is ``tanh`` (actor) or
    ``identity`` (critic).
    """

    def __init__(self, sizes, output_activation="tanh", rng=None, final_scale=3e-3):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        if output_activation not in ("identity", "tanh"):
            raise ValueError(f"unsupported output activation {output_activation!r}")
        self._allocate(sizes, output_activation)
        rng = np.random.default_rng(0) if rng is None else rng
        n_layers = len(sizes) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            bound = final_scale if i == n_layers - 1 else 1.0 / np.sqrt(w.shape[0])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
            b[...] = rng.uniform(-bound, bound, size=b.shape)

    def _allocate(self, sizes, output_activation):
        self.sizes = list(sizes)
        self.output_activation = output_activation
        n_params = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
        # one contiguous vector; weights/biases are views into it
        self.flat = np.zeros(n_params)
        self.weights, self.biases = self.split(self.flat)
        self._cache = None

    def split(self, flat):
        """Per-layer ``(weights, biases)`` views of a flat parameter-shaped vector."""
        weights, biases = [], []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            weights.append(flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out))
            offset += fan_in * fan_out
            biases.append(flat[offset:offset + fan_out])
            offset += fan_out
        return weights, biases

    @property
    def n_params(self) -> int:
        return self.flat.size

    @property
    def params(self) -> list[np.ndarray]:
        """Per-layer parameter views in a fixed order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        twin = Mlp.__new__(Mlp)
        twin._allocate(self.sizes, self.output_activation)
        twin.flat[:] = self.flat
        return twin

    def forward(self, x, cache=True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected {self.sizes[0]} inputs, got {x.shape[1]}")
        inputs = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output_activation == "tanh":
                h = np.tanh(z)
            else:
                h = z
            inputs.append(h)
        if cache:
            self._cache = (inputs, pre)
        return h[0] if single else h

    __call__ = forward

    def backward(self, grad_out, param_grads=True):
        """Backpropagate ``dL/d(output)`` through the cached forward pass.

        Returns ``(flat_grad, grad_input)``. ``flat_grad`` is laid out like
        :attr:`flat` (use :meth:`split` for per-layer views); it is ``None``
        when ``param_grads`` is false, which skips the weight-gradient products.
        """
        if self._cache is None:
            raise RuntimeError("backward() called without a cached forward pass")
        inputs, pre = self._cache
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        if self.output_activation == "tanh":
            g = g * (1.0 - inputs[-1] ** 2)
        flat_grad = np.empty_like(self.flat) if param_grads else None
        if param_grads:
            dw, db = self.split(flat_grad)
        for i in range(len(self.weights) - 1, -1, -1):
            if param_grads:
                np.matmul(inputs[i].T, g, out=dw[i])
                np.sum(g, axis=0, out=db[i])
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (pre[i - 1] > 0.0)
        return flat_grad, g

    def soft_update(self, source: "Mlp", tau: float) -> None:
        """In place: ``theta <- tau * source + (1 - tau) * theta``."""
        self.flat *= 1.0 - tau
        self.flat += tau * source.flat

    def distance(self, other: "Mlp") -> float:
        return float(np.linalg.norm(self.flat - other.flat))


class Adam:
    """Bias-corrected adaptive moment estimation on a flat parameter vector (in place)."""

    def __init__(self, params: np.ndarray, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros_like(params)
        self.v = np.zeros_like(params)
        self.t = 0
        self._buf = np.empty_like(params)

    def step(self, grad: np.ndarray) -> None:
        if grad.shape != self.params.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {self.params.shape}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        self.m += (1.0 - b1) * grad
        self.v *= b2
        np.multiply(grad, grad, out=self._buf)
        self._buf *= 1.0 - b2
        self.v += self._buf
        step_size = self.lr * np.sqrt(1.0 - b2 ** self.t) / (1.0 - b1 ** self.t)
        # folded form: identical to m_hat / (sqrt(v_hat) + eps)
        eps_hat = self.eps * np.sqrt(1.0 - b2 ** self.t)
        np.sqrt(self.v, out=self._buf)
        self._buf += eps_hat
        np.divide(self.m, self._buf, out=self._buf)
        self._buf *= step_size
        self.params -= self._buf


@dataclass
class OuNoise:
    """Ornstein-Uhlenbeck process ``dx = -theta x dt + sigma dW`` per action dim."""

    size: int
    theta: float = 0.2
    sigma: float = 0.15
    dt: float = 0.1
    state: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.theta <= 0 or self.sigma < 0:
            raise ValueError("OU noise needs theta > 0 and sigma >= 0")
        if self.state is None:
            self.state = np.zeros(self.size)

    def reset(self) -> None:
        self.state = np.zeros(self.size)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        xi = rng.standard_normal(self.size)
        self.state = self.state - self.theta * self.state * self.dt + self.sigma * np.sqrt(self.dt) * xi
        return self.state.copy()

    @property
    def stationary_std(self) -> float:
        return self.sigma / np.sqrt(2.0 * self.theta)


class ReplayBuffer:
    """Fixed-capacity ring buffer of (obs, action, reward, next_obs, done)."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((self.capacity, obs_dim))
        self.act = np.zeros((self.capacity, act_dim))
        self.rew = np.zeros(self.capacity)
        self.next_obs = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.size = 0
        self._next = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, act, rew, next_obs, done) -> None:
        i = self._next
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n > self.size:
            raise ValueError(f"cannot sample {n} transitions from a buffer of {self.size}")
        return rng.choice(self.size, size=n, replace=False)

    def sample(self, n: int, rng: np.random.Generator):
        idx = self.sample_indices(n, rng)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx], self.done[idx]

    def contents(self):
        """Stored transitions, oldest first."""
        if self.size < self.capacity:
            order = np.arange(self.size)
        else:
            order = (np.arange(self.capacity) + self._next) % self.capacity
        return self.obs[order], self.act[order], self.rew[order], self.next_obs[order], self.done[order]


# Checkpoint layout (all integers little-endian):
#   magic  b"ASVMLP"             6 bytes
#   version uint16               currently 1
#   n      uint32                number of layer sizes
#   sizes  uint32[n]
#   out_act uint8                index into ACTIVATIONS
#   per layer: W float64[fan_in * fan_out] row-major, b float64[fan_out]
#   meta_len uint32, meta UTF-8 JSON (may be empty object)
MAGIC = b"ASVMLP"
FORMAT_VERSION = 1


def save_mlp(net: Mlp, path, metadata: dict | None = None) -> None:
    """Write ``net`` atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(net.sizes))]
    chunks.append(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
    chunks.append(struct.pack("<B", ACTIVATIONS.index(net.output_activation)))
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    chunks.append(struct.pack("<I", len(meta)) + meta)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_mlp(path) -> tuple[Mlp, dict]:
    blob = Path(path).read_bytes()
    if blob[:6] != MAGIC:
        raise ValueError(f"{path}: not an ASVMLP checkpoint")
    version, n = struct.unpack_from("<HI", blob, 6)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    sizes = list(struct.unpack_from(f"<{n}I", blob, offset))
    offset += 4 * n
    (act,) = struct.unpack_from("<B", blob, offset)
    offset += 1
    net = Mlp.__new__(Mlp)
    net._allocate(sizes, ACTIVATIONS[act])
    for w, b in zip(net.weights, net.biases):
        w[...] = np.frombuffer(blob, dtype="<f8", count=w.size, offset=offset).reshape(w.shape)
        offset += 8 * w.size
        b[...] = np.frombuffer(blob, dtype="<f8", count=b.size, offset=offset)
        offset += 8 * b.size
    (meta_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    meta = json.loads(blob[offset:offset + meta_len].decode()) if meta_len else {}
    return net, meta
