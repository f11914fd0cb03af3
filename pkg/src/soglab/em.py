"""Soft and hard EM baselines for the discrete-latent model, and the toy comparison.

Both EM variants use the same :class:`~soglab.latent.ConditionalModel` as
SOG. The M step is a single gradient step (generalised EM). The step is
taken on the responsibility-weighted squared error

    J(theta) = sum_ik r_ik ||f(k, x_i) - y_i||^2,

which is the expected negative log-likelihood multiplied by ``2 sigma^2``
(minus theta-independent terms). Scaling out ``sigma`` keeps one learning
rate meaningful across every ``sigma`` in a sweep.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .io import csv_text
from .latent import (
    ConditionalModel,
    DiscretePrior,
    PairDataset,
    SogConfig,
    one_hot,
    sog_minibatch_step,
    squared_error_step,
)
from .nn import DenseNet, OptimizerState, opt_step

DEFAULT_OFFSETS = ((3.0, 0.0), (-1.5, 2.6), (-1.5, -2.6))


@dataclass
class ToySpec:
    """``x ~ N(0, I2)``, ``y = x + w_z + eps``, ``eps ~ N(0, noise_std^2 I2)``."""

    n: int = 3000
    offsets: tuple = DEFAULT_OFFSETS
    noise_std: float = 0.01
    masses: tuple = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0

    def __post_init__(self):
        w = np.asarray(self.offsets, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != len(self.masses):
            raise ValueError("need one offset per mode")
        if len({tuple(r) for r in w.tolist()}) != w.shape[0]:
            raise ValueError("offsets must be pairwise distinct")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @property
    def k(self) -> int:
        return len(self.masses)


def gen_toy_dataset(spec: ToySpec, rng: np.random.Generator | None = None) -> PairDataset:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    w = np.asarray(spec.offsets, dtype=np.float64)
    p = np.asarray(spec.masses, dtype=np.float64)
    labels = rng.choice(spec.k, size=spec.n, p=p / p.sum())
    xs = rng.standard_normal((spec.n, w.shape[1]))
    ys = xs + w[labels] + spec.noise_std * rng.standard_normal((spec.n, w.shape[1]))
    return PairDataset(xs, ys, labels)


def toy_model(
    k: int,
    x_dim: int,
    y_dim: int,
    rng: np.random.Generator,
    init_scale: float = 1.0,
    sigma: float = 1.0,
    code_init: str = "spread",
) -> ConditionalModel:
    """Linear model ``f(z, x) = W [one_hot(z); x] + b``.

    ``code_init="spread"`` places the K code columns of ``W`` at radius
    ``init_scale`` on a randomly rotated circle in a random 2-plane of the
    output space (evenly spaced angles). With a tiny ``init_scale`` every code
    starts nearly identical yet none is shadowed by the others, which would
    otherwise leave it with no data. ``"glorot"`` keeps the plain scaled
    Glorot draw.
    """
    net = DenseNet.init([k + x_dim, y_dim], rng, output_activation="identity", scale=init_scale)
    if code_init == "spread":
        ang = rng.uniform(0.0, 2 * np.pi) + 2 * np.pi * np.arange(k) / k
        if y_dim == 1:
            cols = np.cos(ang)[None, :]
        else:
            basis, _ = np.linalg.qr(rng.standard_normal((y_dim, 2)))
            cols = basis @ np.stack([np.cos(ang), np.sin(ang)])
        net.layers[0].weight[:, :k] = init_scale * cols
    elif code_init != "glorot":
        raise ValueError(f"unknown code_init {code_init!r}")
    return ConditionalModel(net, code_dim=k, sigma=sigma)


# --------------------------------------------------------------------------
# E and M steps


def code_losses(model: ConditionalModel, k: int, data: PairDataset) -> np.ndarray:
    """``E[i, k] = ||f(k, x_i) - y_i||^2`` as an (N, K) matrix."""
    n = len(data)
    cols = [model.sq_errors(np.broadcast_to(one_hot(j, k), (n, k)), data.xs, data.ys) for j in range(k)]
    return np.stack(cols, axis=1)


def responsibilities(errors: np.ndarray, prior, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    pi = np.asarray(prior, dtype=np.float64)
    with np.errstate(divide="ignore"):
        logits = -errors / (2.0 * sigma * sigma) + np.log(pi)
    r = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
    if not np.all(np.isfinite(r)):
        raise FloatingPointError("posterior contains NaN")
    return r


def posterior(model: ConditionalModel, prior, data: PairDataset, sigma: float | None = None) -> np.ndarray:
    """Responsibilities ``r_ik`` proportional to ``exp(-E_ik / (2 sigma^2)) pi_k``."""
    pi = np.asarray(prior, dtype=np.float64)
    return responsibilities(code_losses(model, pi.size, data), pi, model.sigma if sigma is None else sigma)


def prior_update(resp: np.ndarray) -> np.ndarray:
    return resp.sum(axis=0) / resp.sum()


def hard_assign(resp: np.ndarray) -> np.ndarray:
    """Row-wise argmax (lowest index on ties) as an index vector."""
    return np.argmax(resp, axis=1)


def onehotness(resp: np.ndarray) -> float:
    return float(np.mean(np.max(resp, axis=1)))


def weighted_loss(errors: np.ndarray, resp: np.ndarray) -> float:
    """Mean over data of ``sum_k r_ik E_ik``."""
    return float(np.sum(resp * errors) / errors.shape[0])


def expected_nll(errors: np.ndarray, resp: np.ndarray, prior, sigma: float) -> float:
    """Mean of ``sum_k r_ik (E_ik / (2 sigma^2) - log pi_k)``, dropping theta-free constants."""
    with np.errstate(divide="ignore", invalid="ignore"):
        logpi = np.where(resp > 0, np.log(np.asarray(prior)), 0.0)
    per = np.sum(resp * (errors / (2 * sigma * sigma) - logpi), axis=1)
    return float(per.mean())


class EMStep(NamedTuple):
    loss: float
    prior: np.ndarray
    resp: np.ndarray


def _weighted_grads(model: ConditionalModel, data: PairDataset, resp: np.ndarray):
    n, k = resp.shape
    total = None
    for j in range(k):
        codes = np.broadcast_to(one_hot(j, k), (n, k))
        r = model.predict(codes, data.xs) - data.ys
        g, _ = model.backward(codes, data.xs, 2.0 * resp[:, j : j + 1] * r)
        total = g if total is None else [a + b for a, b in zip(total, g)]
    return total


def soft_em_step(
    model: ConditionalModel,
    prior,
    data: PairDataset,
    sigma: float,
    opt: OptimizerState,
    update_prior: bool = True,
    reduction: str = "mean",
) -> EMStep:
    """One E step and one gradient M step.

    ``loss`` is the pre-step mean responsibility-weighted squared error (the
    quantity SOG reports when the responsibilities are one-hot).
    """
    pi = np.asarray(prior, dtype=np.float64)
    errors = code_losses(model, pi.size, data)
    resp = responsibilities(errors, pi, sigma)
    loss = weighted_loss(errors, resp)
    if not np.isfinite(loss) or loss > 1e12:
        raise FloatingPointError(f"soft EM diverged (loss={loss})")
    grads = _weighted_grads(model, data, resp)
    if reduction == "mean":
        grads = [g / len(data) for g in grads]
    opt_step(opt, model.params(), grads)
    return EMStep(loss, prior_update(resp) if update_prior else pi.copy(), resp)


def hard_em_step(model: ConditionalModel, k: int, data: PairDataset, opt: OptimizerState, reduction: str = "mean") -> float:
    """Uniform-prior hard E step (argmin error) then one step on the summed squared error."""
    errors = code_losses(model, k, data)
    codes = one_hot(np.argmin(errors, axis=1), k)
    loss = squared_error_step(model, codes, data.xs, data.ys, opt, reduction)
    if loss > 1e12:
        raise FloatingPointError(f"hard EM diverged (loss={loss})")
    return loss


# --------------------------------------------------------------------------
# evaluation


def permutation_accuracy(pred, labels, k: int) -> float:
    """Best agreement between predicted codes and labels over all K! relabellings."""
    pred, labels = np.asarray(pred), np.asarray(labels)
    best = 0.0
    for perm in itertools.permutations(range(k)):
        best = max(best, float(np.mean(np.asarray(perm)[pred] == labels)))
    return best


@dataclass
class ComparisonReport:
    rows: list = field(default_factory=list)  # (method, sigma, epoch, loss, onehotness, accuracy)

    HEADER = ("method", "sigma", "epoch", "loss", "onehotness", "accuracy")

    def curve(self, method: str, sigma: float | None = None, column: str = "loss") -> np.ndarray:
        j = self.HEADER.index(column)
        return np.array(
            [r[j] for r in self.rows if r[0] == method and (sigma is None or r[1] == sigma)]
        )

    def final(self, method: str, sigma: float | None = None, column: str = "loss") -> float:
        return float(self.curve(method, sigma, column)[-1])

    def to_csv(self) -> str:
        rows = [(r[0], "" if r[1] is None else r[1], *r[2:]) for r in self.rows]
        return csv_text(self.HEADER, rows)


def compare_em_sog(
    toy: ToySpec,
    sigmas=(1.0, 0.01),
    epochs: int = 200,
    learning_rate: float = 0.1,
    init_scale: float = 1e-9,
    model_seed: int | None = None,
    update_prior: bool = True,
    code_init: str = "spread",
) -> ComparisonReport:
    """Soft EM at each sigma, hard EM and SOG from one shared dataset and initial model.

    Every method is full batch with plain SGD; row values are pre-step.
    """
    data = gen_toy_dataset(toy)
    k = toy.k
    seed = toy.seed if model_seed is None else model_seed
    base = toy_model(k, data.xs.shape[1], data.ys.shape[1], np.random.default_rng(seed + 1), init_scale, code_init=code_init)
    report = ComparisonReport()

    for sigma in sigmas:
        model = ConditionalModel(base.net.copy(), k, sigma)
        opt = OptimizerState("sgd", learning_rate)
        pi = np.full(k, 1.0 / k)
        for ep in range(1, epochs + 1):
            step = soft_em_step(model, pi, data, sigma, opt, update_prior)
            pi = step.prior
            acc = permutation_accuracy(hard_assign(step.resp), data.labels, k)
            report.rows.append(("soft-em", float(sigma), ep, step.loss, onehotness(step.resp), acc))

    model = ConditionalModel(base.net.copy(), k)
    opt = OptimizerState("sgd", learning_rate)
    for ep in range(1, epochs + 1):
        idx = np.argmin(code_losses(model, k, data), axis=1)
        loss = hard_em_step(model, k, data, opt) / len(data)
        report.rows.append(("hard-em", None, ep, loss, 1.0, permutation_accuracy(idx, data.labels, k)))

    model = ConditionalModel(base.net.copy(), k)
    cfg = SogConfig(optimizer="sgd", learning_rate=learning_rate, epochs=epochs, seed=toy.seed)
    opt = cfg.make_optimizer()
    prior = DiscretePrior.uniform(k)
    rng = np.random.default_rng(cfg.seed)
    for ep in range(1, epochs + 1):
        loss, codes = sog_minibatch_step(model, data.xs, data.ys, prior, cfg, opt, rng)
        acc = permutation_accuracy(np.argmax(codes, axis=1), data.labels, k)
        report.rows.append(("sog", None, ep, loss / len(data), 1.0, acc))
    return report
