"""Dense feedforward networks with hand-written reverse-mode gradients.

Every parameterised function in the package is one of the two nets defined
here. Parameters are exposed as a flat list of numpy arrays (``params()``);
gradients are returned as a list aligned with it, so a single optimizer
implementation (:func:`opt_step`) serves every trainer.

Inputs may be a single vector of shape ``(in,)`` or a batch ``(B, in)``.
For batches, parameter gradients are summed over the batch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATIONS = ("identity", "tanh", "relu")
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(a)
    if name == "relu":
        return np.maximum(a, 0.0)
    return a


def _act_grad(name: str, a: np.ndarray, h: np.ndarray) -> np.ndarray:
    # derivative of the activation given pre-activation a and output h
    if name == "tanh":
        return 1.0 - h * h
    if name == "relu":
        return (a > 0.0).astype(a.dtype)
    return np.ones_like(a)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return scale * rng.uniform(-a, a, size=(fan_out, fan_in))


@dataclass
class Dense:
    """Affine map ``act(W x + b)`` with ``W`` of shape (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if self.weight.ndim != 2 or self.bias.shape[0] != self.weight.shape[0]:
            raise ValueError(
                f"inconsistent layer shapes: weight {self.weight.shape}, bias {self.bias.shape}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "Dense":
        return Dense(self.weight.copy(), self.bias.copy(), self.activation)


def _as_batch(x, dim: int, what: str = "input") -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != dim:
        raise ValueError(f"{what} has shape {x.shape}, expected (..., {dim})")
    return xb, single


class DenseNet:
    """Chain of :class:`Dense` layers."""

    def __init__(self, layers: Sequence[Dense]):
        layers = list(layers)
        if not layers:
            raise ValueError("DenseNet needs at least one layer")
        for i in range(len(layers) - 1):
            if layers[i].out_dim != layers[i + 1].in_dim:
                raise ValueError(
                    f"layer {i} outputs {layers[i].out_dim} but layer {i + 1} expects {layers[i + 1].in_dim}"
                )
        self.layers = layers

    @classmethod
    def init(
        cls,
        sizes: Sequence[int],
        rng: np.random.Generator,
        hidden_activation: str = "tanh",
        output_activation: str = "identity",
        scale: float = 1.0,
    ) -> "DenseNet":
        """Glorot-uniform weights (multiplied by ``scale``) and zero biases."""
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"bad layer sizes {list(sizes)}")
        layers = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            act = output_activation if i == len(sizes) - 2 else hidden_activation
            layers.append(Dense(glorot_uniform(n_in, n_out, rng, scale), np.zeros(n_out), act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> "DenseNet":
        return DenseNet([layer.copy() for layer in self.layers])

    def forward(self, x) -> np.ndarray:
        xb, single = _as_batch(x, self.input_dim)
        h = xb
        for layer in self.layers:
            h = _act(layer.activation, h @ layer.weight.T + layer.bias)
        return h[0] if single else h

    __call__ = forward

    def _trace(self, xb: np.ndarray):
        pre, post = [], [xb]
        h = xb
        for layer in self.layers:
            a = h @ layer.weight.T + layer.bias
            h = _act(layer.activation, a)
            pre.append(a)
            post.append(h)
        return pre, post

    def backward(self, x, output_grad) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(output_grad * forward(x))``.

        Returns ``(param_grads, input_grad)``; ``param_grads`` is aligned with
        :meth:`params`. Raises ``FloatingPointError`` naming the layer when a
        gradient is not finite.
        """
        xb, single = _as_batch(x, self.input_dim)
        g, _ = _as_batch(output_grad, self.output_dim, "output_grad")
        if g.shape[0] != xb.shape[0]:
            raise ValueError(f"batch mismatch: input {xb.shape}, output_grad {g.shape}")
        pre, post = self._trace(xb)
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))  # type: ignore[list-item]
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = g * _act_grad(layer.activation, pre[i], post[i + 1])
            gw = g.T @ post[i]
            gb = g.sum(axis=0)
            if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
                raise FloatingPointError(f"non-finite gradient in layer {i}")
            grads[2 * i], grads[2 * i + 1] = gw, gb
            g = g @ layer.weight
        return grads, (g[0] if single else g)


class TwoHeadPolicyNet:
    """Policy mean network with separate state and latent input heads.

    ``mean(s, z) = trunk(act(Ws s + bs + Wz z + bz))``; a global, learnable
    ``log_std`` (clamped to [-5, 2]) completes the Gaussian policy.
    """

    def __init__(
        self,
        state_head: Dense,
        latent_head: Dense,
        trunk: DenseNet,
        log_std,
        head_activation: str = "tanh",
    ):
        if state_head.out_dim != latent_head.out_dim:
            raise ValueError(
                f"head widths differ: state {state_head.out_dim}, latent {latent_head.out_dim}"
            )
        if trunk.input_dim != state_head.out_dim:
            raise ValueError(f"trunk expects {trunk.input_dim}, heads give {state_head.out_dim}")
        if state_head.activation != "identity" or latent_head.activation != "identity":
            raise ValueError("heads must be affine; the activation is applied after the sum")
        self.state_head = state_head
        self.latent_head = latent_head
        self.trunk = trunk
        self.head_activation = head_activation
        self.log_std = np.asarray(log_std, dtype=np.float64).reshape(-1).copy()
        if self.log_std.shape[0] != trunk.output_dim:
            raise ValueError("log_std length must equal the action dimension")
        self.clamp_log_std()

    @classmethod
    def init(
        cls,
        state_dim: int,
        latent_dim: int,
        action_dim: int,
        hidden: Sequence[int],
        rng: np.random.Generator,
        log_std: float = -1.0,
    ) -> "TwoHeadPolicyNet":
        width = hidden[0]
        sh = Dense(glorot_uniform(state_dim, width, rng), np.zeros(width))
        lh = Dense(glorot_uniform(latent_dim, width, rng), np.zeros(width))
        trunk = DenseNet.init([width, *hidden[1:], action_dim], rng)
        return cls(sh, lh, trunk, np.full(action_dim, log_std))

    @property
    def state_dim(self) -> int:
        return self.state_head.in_dim

    @property
    def latent_dim(self) -> int:
        return self.latent_head.in_dim

    @property
    def action_dim(self) -> int:
        return self.trunk.output_dim

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def params(self) -> list[np.ndarray]:
        return [
            self.state_head.weight,
            self.state_head.bias,
            self.latent_head.weight,
            self.latent_head.bias,
            *self.trunk.params(),
            self.log_std,
        ]

    def copy(self) -> "TwoHeadPolicyNet":
        return TwoHeadPolicyNet(
            self.state_head.copy(),
            self.latent_head.copy(),
            self.trunk.copy(),
            self.log_std.copy(),
            self.head_activation,
        )

    def _hidden(self, sb, zb):
        a = (
            sb @ self.state_head.weight.T
            + self.state_head.bias
            + zb @ self.latent_head.weight.T
            + self.latent_head.bias
        )
        return a, _act(self.head_activation, a)

    def forward(self, states, latents) -> np.ndarray:
        sb, single = _as_batch(states, self.state_dim, "states")
        zb, _ = _as_batch(latents, self.latent_dim, "latents")
        if zb.shape[0] != sb.shape[0]:
            zb = np.broadcast_to(zb, (sb.shape[0], zb.shape[1]))
        _, h = self._hidden(sb, zb)
        out = self.trunk.forward(h)
        return out[0] if single else out

    __call__ = forward

    def backward(self, states, latents, mean_grad):
        """Gradients of ``sum(mean_grad * forward(s, z))``.

        Returns ``(param_grads, (state_grad, latent_grad))``. The entry for
        ``log_std`` is zero: the mean does not depend on it.
        """
        sb, single = _as_batch(states, self.state_dim, "states")
        zb, _ = _as_batch(latents, self.latent_dim, "latents")
        if zb.shape[0] != sb.shape[0]:
            zb = np.broadcast_to(zb, (sb.shape[0], zb.shape[1]))
        a, h = self._hidden(sb, zb)
        trunk_grads, gh = self.trunk.backward(h, mean_grad if not single else np.atleast_2d(mean_grad))
        ga = gh * _act_grad(self.head_activation, a, h)
        grads = [ga.T @ sb, ga.sum(0), ga.T @ zb, ga.sum(0), *trunk_grads, np.zeros_like(self.log_std)]
        for i, gr in enumerate(grads[:4]):
            if not np.all(np.isfinite(gr)):
                raise FloatingPointError(f"non-finite gradient in head parameter {i}")
        gs, gz = ga @ self.state_head.weight, ga @ self.latent_head.weight
        if single:
            gs, gz = gs[0], gz[0]
        return grads, (gs, gz)

    def log_prob(self, states, latents, actions) -> np.ndarray:
        mean = self.forward(states, latents)
        std = np.exp(self.log_std)
        diff = (np.asarray(actions) - mean) / std
        return -0.5 * np.sum(diff * diff, axis=-1) - np.sum(self.log_std) - 0.5 * self.action_dim * math.log(2 * math.pi)

    def entropy(self) -> float:
        """Per-step differential entropy of the Gaussian action distribution."""
        return float(np.sum(self.log_std + 0.5 * math.log(2 * math.pi * math.e)))


# --------------------------------------------------------------------------
# optimisation


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


def opt_step(state: OptimizerState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Apply one descent step in place and return ``params``."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} parameters but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ValueError(f"parameter {i} has shape {np.shape(p)}, gradient {np.shape(g)}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {i}")
    state.step += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p, g in zip(params, grads):
            p -= lr * g
        return params
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    b1, b2, t = state.beta1, state.beta2, state.step
    c1, c2 = 1 - b1**t, 1 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# --------------------------------------------------------------------------
# gradient checking


def squared_loss_grads(net: DenseNet, x, target) -> tuple[float, list[np.ndarray]]:
    y = net.forward(x)
    r = y - np.asarray(target, dtype=np.float64)
    grads, _ = net.backward(x, 2.0 * r)
    return float(np.sum(r * r)), grads


def grad_check(net: DenseNet, x, target, eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences of ``||f(x) - t||^2``.

    Relative error is ``|analytic - numeric| / max(1, |numeric|)``. Inputs
    where a relu pre-activation is exactly zero are not differentiable and
    should not be passed.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError("eps must lie in (0, 1e-2]")
    _, analytic = squared_loss_grads(net, x, target)
    t = np.asarray(target, dtype=np.float64)

    def loss() -> float:
        r = net.forward(x) - t
        return float(np.sum(r * r))

    worst = 0.0
    for p, ga in zip(net.params(), analytic):
        flat, gflat = p.reshape(-1), ga.reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            lp = loss()
            flat[j] = old - eps
            lm = loss()
            flat[j] = old
            num = (lp - lm) / (2 * eps)
            err = abs(gflat[j] - num) / max(1.0, abs(num))
            if not np.isfinite(err):
                return float("nan")
            worst = max(worst, err)
    return worst
