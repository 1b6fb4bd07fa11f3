"""Small dense networks with hand-written reverse mode and first-order optimizers.

Parameter file format (JSON, version 1)::

    {"format": "zcmes-mlp", "version": 1, "widths": [...], "activation": "relu",
     "params": [[W0 rows...], [b0...], [W1 rows...], [b1...], ...]}

``W`` has shape ``(fan_in, fan_out)`` and the layer computes ``x @ W + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT = "zcmes-mlp"
VERSION = 1
ACTIVATIONS = ("relu", "tanh")


class TapeError(RuntimeError):
    pass


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0).astype(z.dtype) if name == "relu" else 1.0 - a * a


@dataclass
class GradTape:
    """Inputs and pre-activations of one forward pass; consumed by one backward."""

    inputs: list
    preacts: list
    acts: list
    squeeze: bool = False
    used: bool = False


@dataclass
class Mlp:
    widths: tuple
    activation: str
    params: list = field(default_factory=list)

    @classmethod
    def init(cls, widths, activation: str = "relu", seed=0) -> "Mlp":
        """Fan-in scaled uniform init: ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"need at least two widths, all >= 1: {widths}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        params = []
        for fi, fo in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fi)
            params.append(rng.uniform(-bound, bound, (fi, fo)))
            params.append(rng.uniform(-bound, bound, fo))
        return cls(widths, activation, params)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x):
        """Return ``(y, tape)``; ``x`` is ``(in,)`` or ``(batch, in)``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.widths[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.widths[0]}")
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        inputs, pre, acts = [], [], []
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(h)
            z = h @ W + b
            if i < n_layers - 1:
                a = _act(self.activation, z)
                pre.append(z)
                acts.append(a)
                h = a
            else:
                h = z
        tape = GradTape(inputs, pre, acts, squeeze)
        return (h[0] if squeeze else h), tape

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape: GradTape, dy):
        """Gradients of a scalar loss given ``dy = dL/dy``.

        Returns ``(grads, dx)`` with ``grads`` aligned to ``params``.
        """
        if tape.used:
            raise TapeError("gradient tape already consumed")
        tape.used = True
        g = np.asarray(dy, dtype=float)
        if tape.squeeze:
            g = g[None, :]
        n_layers = len(self.params) // 2
        grads = [None] * len(self.params)
        for i in reversed(range(n_layers)):
            if i < n_layers - 1:
                g = g * _act_grad(self.activation, tape.preacts[i], tape.acts[i])
            grads[2 * i] = tape.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        dx = g[0] if tape.squeeze else g
        return grads, dx

    def clone(self) -> "Mlp":
        return Mlp(self.widths, self.activation, [p.copy() for p in self.params])

    def soft_update(self, src: "Mlp", m: float) -> None:
        """``self <- m * src + (1 - m) * self`` in place."""
        for p, q in zip(self.params, src.params):
            p *= 1.0 - m
            p += m * q

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, v) -> None:
        i = 0
        for p in self.params:
            p[...] = np.reshape(v[i:i + p.size], p.shape)
            i += p.size

    def to_dict(self) -> dict:
        return {"format": FORMAT, "version": VERSION, "widths": list(self.widths), "activation": self.activation,
                "params": [p.tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError("not a zcmes-mlp v1 parameter document")
        widths = tuple(d["widths"])
        params = [np.array(p, dtype=float) for p in d["params"]]
        net = cls(widths, d["activation"], params)
        expect = Mlp.init(widths, d["activation"], 0)
        if [p.shape for p in params] != [p.shape for p in expect.params]:
            raise ValueError("parameter shapes do not match widths")
        return net

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Mlp":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class Adam:
    """Adam with bias correction; moments kept per parameter array."""

    def __init__(self, params, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, lr, state: Adam | None = None) -> Adam:
    """Functional wrapper: one Adam update in place, returns the optimizer state."""
    if state is None:
        state = Adam(params, lr)
    state.lr = lr
    state.step(params, grads)
    return state


class Sgd:
    def __init__(self, params, lr=1e-2):
        self.lr = lr

    def step(self, params, grads) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g
